"""Lower bounds on the probability that a single-neuron attack succeeds.

Notation: ``phi`` is the cosine of the widest angle at which a validation
latent can still wake the attack neuron,

    phi(gamma, delta, alpha) = cos(arccos(gamma (1 - alpha) delta) + arccos(sqrt(1 - alpha^2))),

and the per-point failure probability is the normalised area of the
spherical cap of half-angle ``arccos(phi)``.  A validation set of at most M
points then fails with probability at most M times that area.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict
from typing import Optional

QUAD_TOL = 1e-12
QUAD_RTOL = 1e-10


class HypothesisError(ValueError):
    """Raised when bound hypotheses (phi > 0, gamma*delta < 1/2, ...) fail."""


def phi(gamma: float, delta: float, alpha: float) -> float:
    if not 0.0 < gamma < 1.0:
        raise HypothesisError(f"gamma must be in (0, 1), got {gamma}")
    if not 0.0 < delta <= 1.0:
        raise HypothesisError(f"delta must be in (0, 1], got {delta}")
    if not 0.0 <= alpha < 1.0:
        raise HypothesisError(f"alpha must be in [0, 1), got {alpha}")
    c = gamma * (1.0 - alpha) * delta
    # cos(A + B) expanded; exact at alpha = 0
    value = c * math.sqrt(1.0 - alpha * alpha) - alpha * math.sqrt(1.0 - c * c)
    if value <= 0.0:
        raise HypothesisError(
            f"phi(gamma={gamma}, delta={delta}, alpha={alpha}) = {value:.6g} <= 0"
        )
    return value


def log_gamma_ratio(a: float, b: float) -> float:
    """log(Gamma(a) / Gamma(b))."""
    return math.lgamma(a) - math.lgamma(b)


def _simpson(f, a, fa, m, fm, b, fb):
    return (b - a) / 6.0 * (fa + 4.0 * fm + fb)


def _adaptive_simpson_abs(f, a, b, tol, max_depth, initial_panels, noise_rel=0.0):
    total, err = 0.0, 0.0
    edges = [a + (b - a) * i / initial_panels for i in range(initial_panels + 1)]
    edges[-1] = b
    stack = []
    for lo, hi in zip(edges[:-1], edges[1:]):
        mid = 0.5 * (lo + hi)
        flo, fmid, fhi = f(lo), f(mid), f(hi)
        stack.append((lo, flo, mid, fmid, hi, fhi, _simpson(f, lo, flo, mid, fmid, hi, fhi),
                      tol / initial_panels, 0))
    while stack:
        lo, flo, mid, fmid, hi, fhi, whole, eps, depth = stack.pop()
        lm, rm = 0.5 * (lo + mid), 0.5 * (mid + hi)
        flm, frm = f(lm), f(rm)
        left = _simpson(f, lo, flo, lm, flm, mid, fmid)
        right = _simpson(f, mid, fmid, rm, frm, hi, fhi)
        diff = left + right - whole
        # noise_rel: relative rounding level of f, below which refinement is pointless
        if abs(diff) <= 15.0 * max(eps, noise_rel * abs(left + right)):
            total += left + right + diff / 15.0
            err += abs(diff) / 15.0
        elif depth >= max_depth:
            raise ArithmeticError("adaptive quadrature did not converge")
        else:
            stack.append((lo, flo, lm, flm, mid, fmid, left, 0.5 * eps, depth + 1))
            stack.append((mid, fmid, rm, frm, hi, fhi, right, 0.5 * eps, depth + 1))
    return total, err


def adaptive_simpson(f, a: float, b: float, tol: float = QUAD_TOL, rtol: float = QUAD_RTOL,
                     max_depth: int = 50, initial_panels: int = 16, noise_rel: float = 0.0):
    """Integrate f over [a, b]; returns (value, error estimate).

    Iterative adaptive Simpson with Richardson extrapolation on accepted
    panels; the error estimate is the sum of |S2 - S1| / 15 over panels.
    The absolute tolerance ``tol`` is tightened to ``rtol * |value|`` when
    the integral is small, so tiny cap areas keep relative accuracy.
    """
    if b == a:
        return 0.0, 0.0
    value, err = _adaptive_simpson_abs(f, a, b, tol, max_depth, initial_panels, noise_rel)
    tight = rtol * abs(value)
    if 0.0 < tight < tol:
        value, err = _adaptive_simpson_abs(f, a, b, tight, max_depth, initial_panels, noise_rel)
    return value, err


def log_gamma_half_step(x: float) -> float:
    """log(Gamma(x + 1/2) / Gamma(x)), accurate for large x where lgamma cancels."""
    if x < 20.0:
        return log_gamma_ratio(x + 0.5, x)
    return 0.5 * math.log(x) - 1 / (8 * x) + 1 / (192 * x**3) - 1 / (640 * x**5) + 17 / (14336 * x**7)


def cap_coefficient_log(n: int) -> float:
    """log of pi^(-1/2) Gamma(n/2) / Gamma((n-1)/2)."""
    return log_gamma_half_step((n - 1) / 2.0) - 0.5 * math.log(math.pi)


def cap_term_integral(n: int, theta_max: float, tol: float = QUAD_TOL):
    """Normalised area of a spherical cap of half-angle ``theta_max`` on S^{n-1}.

    Returns ``(value, error_estimate)`` where
    value = pi^(-1/2) Gamma(n/2)/Gamma((n-1)/2) * int_0^theta_max sin^(n-2).
    ``tol`` is the absolute tolerance on the returned value.
    """
    if n < 2:
        raise ValueError(f"n must be >= 2, got {n}")
    if not 0.0 <= theta_max < math.pi / 2:
        raise ValueError(f"theta_max must be in [0, pi/2), got {theta_max}")
    if theta_max == 0.0:
        return 0.0, 0.0
    log_c = cap_coefficient_log(n)
    k = n - 2

    # fold the coefficient into the integrand so the tolerance is absolute on P
    def f(t):
        if t <= 0.0:
            return math.exp(log_c) if k == 0 else 0.0
        if t < 0.25 * math.pi:
            log_sin = math.log(math.sin(t))
        else:
            c = math.cos(t)
            log_sin = 0.5 * math.log1p(-c * c)
        return math.exp(log_c + k * log_sin)

    # rounding in k*log(sin t) grows like sqrt(k) ulps near the peak
    noise = 16.0 * 2.0 ** -52 * (1.0 + math.sqrt(k))
    value, err = adaptive_simpson(f, 0.0, theta_max, tol, noise_rel=noise)
    return min(max(value, 0.0), 1.0), err


def cap_term_closed(n: int, phi_val: float) -> float:
    """Closed-form upper estimate of the cap area:

    (1 / (2 sqrt(pi))) Gamma(n/2)/Gamma(n/2 + 1/2) (1/phi) (1 - phi^2)^((n-1)/2).
    """
    if n < 2:
        raise ValueError(f"n must be >= 2, got {n}")
    if phi_val <= 0.0:
        raise HypothesisError(f"phi must be positive, got {phi_val}")
    if phi_val >= 1.0:
        return 0.0
    log_v = (
        -log_gamma_half_step(n / 2.0)
        - math.log(2.0 * math.sqrt(math.pi))
        - math.log(phi_val)
        + 0.5 * (n - 1) * math.log1p(-phi_val * phi_val)
    )
    return math.exp(log_v)


@dataclass
class BoundQuery:
    M: float
    n: int
    gamma: float
    delta: float
    alpha: float = 0.0
    n_p: Optional[int] = None
    eps_collapse: float = 0.0
    C: Optional[float] = None

    @property
    def dim(self) -> int:
        return self.n if self.n_p is None else self.n_p

    def check(self) -> None:
        if self.M < 0:
            raise ValueError("M must be non-negative")
        if self.n < 2 or self.dim < 2:
            raise ValueError("dimensions must be >= 2")
        if self.n_p is not None and self.n_p > self.n:
            raise ValueError("n_p cannot exceed n")


@dataclass
class BoundReport:
    phi: float
    p1_integral: float
    p1_closed: float
    bound_integral: float
    bound_closed: float
    bound_alpha0: float
    bound_collapse: Optional[float]
    quadrature_error_estimate: float
    n_used: int

    def to_dict(self) -> dict:
        return asdict(self)


def collapse_terms(q: BoundQuery) -> tuple:
    """The three subtracted terms of the concentrational-collapse bound.

    (C (1 - 2 eps)^n,  M (C/2) [2 sqrt(1/4 - (1/2 - eps - gamma delta)^2)]^n,  P1(n_p)).
    Powers are evaluated in log space.
    """
    q.check()
    gd = q.gamma * q.delta
    if gd >= 0.5:
        raise HypothesisError(f"gamma*delta = {gd} must be < 1/2")
    eps = q.eps_collapse
    if not 0.0 <= eps <= gd:
        raise HypothesisError(f"eps must lie in [0, gamma*delta = {gd}], got {eps}")
    C = 0.0 if q.C is None else float(q.C)
    if C < 0:
        raise ValueError("C must be non-negative")
    t1 = C * math.exp(q.n * math.log1p(-2.0 * eps))
    half_chord = 0.25 - (0.5 - eps - gd) ** 2
    t2 = q.M * C / 2.0 * math.exp(q.n * (math.log(2.0) + 0.5 * math.log(half_chord))) if half_chord > 0 else 0.0
    t3, _ = cap_term_integral(q.dim, math.acos(phi(q.gamma, q.delta, q.alpha)))
    return t1, t2, t3


def collapse_bound(q: BoundQuery) -> float:
    t1, t2, t3 = collapse_terms(q)
    return 1.0 - t1 - t2 - t3


def success_bound(q: BoundQuery) -> BoundReport:
    q.check()
    n = q.dim
    ph = phi(q.gamma, q.delta, q.alpha)
    p_int, err = cap_term_integral(n, math.acos(ph))
    p_closed = cap_term_closed(n, ph)
    p_alpha0 = cap_term_closed(n, q.gamma * q.delta)
    collapse = None
    if q.C is not None:
        collapse = collapse_bound(q)
    return BoundReport(
        phi=ph,
        p1_integral=p_int,
        p1_closed=p_closed,
        bound_integral=1.0 - q.M * p_int,
        bound_closed=1.0 - q.M * p_closed,
        bound_alpha0=1.0 - q.M * p_alpha0,
        bound_collapse=collapse,
        quadrature_error_estimate=err,
        n_used=n,
    )
