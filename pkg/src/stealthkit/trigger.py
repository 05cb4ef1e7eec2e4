"""Trigger search: projected gradient descent on a penalised latent-matching loss.

For a target displacement ``x`` (a point on the radius-delta sphere) the
search minimises over the input box

    L(u) = ||d - x||^2 + lam1 * max(gamma ||d|| - 1, 0)^p1 + lam2 * max(||d - x|| - delta, 0)^p2,
    d    = (Phi(u) - Phi(u*)) / R          (d = Phi(u) / R without a target)

with steps u <- clip(u - step0 / (1 + decay * k) * dL/du).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict
from typing import Optional

import numpy as np

from .geometry import SphereSample, alpha_of, make_rng
from .model import LatentSplit, Network, latent, latent_vjp


class TriggerSearchError(RuntimeError):
    pass


@dataclass(frozen=True)
class TriggerSearchConfig:
    lambda1: float = 10.0
    lambda2: float = 10.0
    p1: float = 2.0
    p2: float = 2.0
    max_iters: int = 100_000
    step0: Optional[float] = None  # None -> 0.01 * mean box width
    step_decay: float = 1e-3
    alpha_target: Optional[float] = None
    patience: Optional[int] = None  # stop after this many steps without a better alpha
    round_inputs: bool = False
    seed: int = 0

    def __post_init__(self):
        if min(self.lambda1, self.lambda2) < 0:
            raise ValueError("penalty weights must be non-negative")
        if min(self.p1, self.p2) <= 0:
            raise ValueError("penalty exponents must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be positive")
        if self.step0 is not None and self.step0 <= 0:
            raise ValueError("step0 must be positive")
        if self.step_decay < 0:
            raise ValueError("step_decay must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)

    def resolved_step0(self, net: Network) -> float:
        if self.step0 is not None:
            return self.step0
        width = float(np.mean(net.input_upper - net.input_lower))
        return 0.01 * width if width > 0 else 0.01


@dataclass(eq=False)
class TriggerResult:
    u_prime: np.ndarray
    x: SphereSample
    x_prime: np.ndarray
    alpha: float
    feasible: bool
    R: float
    gamma: float
    iterations: int
    loss_trace: list = field(default_factory=list)
    best_alpha_trace: list = field(default_factory=list)
    u_star: Optional[np.ndarray] = None
    config: Optional[TriggerSearchConfig] = None

    def to_dict(self) -> dict:
        return {
            "u_prime": self.u_prime,
            "x": self.x.to_dict(),
            "x_prime": self.x_prime,
            "alpha": self.alpha,
            "feasible": self.feasible,
            "R": self.R,
            "gamma": self.gamma,
            "iterations": self.iterations,
            "loss_trace": list(self.loss_trace),
            "best_alpha_trace": list(self.best_alpha_trace),
            "u_star": None if self.u_star is None else self.u_star,
            "seed": None if self.config is None else self.config.seed,
            "config": None if self.config is None else self.config.to_dict(),
        }

    @classmethod
    def from_dict(cls, d) -> "TriggerResult":
        cfg = d.get("config")
        return cls(
            u_prime=np.asarray(d["u_prime"], dtype=np.float64),
            x=SphereSample.from_dict(d["x"]),
            x_prime=np.asarray(d["x_prime"], dtype=np.float64),
            alpha=float(d["alpha"]),
            feasible=bool(d["feasible"]),
            R=float(d["R"]),
            gamma=float(d["gamma"]),
            iterations=int(d["iterations"]),
            loss_trace=list(d.get("loss_trace", [])),
            best_alpha_trace=list(d.get("best_alpha_trace", [])),
            u_star=None if d.get("u_star") is None else np.asarray(d["u_star"], dtype=np.float64),
            config=None if cfg is None else TriggerSearchConfig(**cfg),
        )


def project_box(u, lower, upper) -> np.ndarray:
    """Coordinate-wise clamp onto [lower, upper]."""
    return np.minimum(np.maximum(np.asarray(u, dtype=np.float64), lower), upper)


def is_feasible(x: SphereSample, x_prime, gamma: float) -> bool:
    xp = np.asarray(x_prime)
    return bool(gamma * np.linalg.norm(xp) <= 1.0 and np.linalg.norm(xp - x.x) < x.delta)


def _loss_terms(d, x, gamma, delta, cfg):
    """Loss value and its gradient with respect to the scaled displacement d."""
    r = d - x
    nr = float(np.linalg.norm(r))
    nd = float(np.linalg.norm(d))
    value = nr * nr
    grad = 2.0 * r
    e1 = gamma * nd - 1.0
    if e1 > 0.0 and cfg.lambda1 > 0.0:
        value += cfg.lambda1 * e1 ** cfg.p1
        grad = grad + cfg.lambda1 * cfg.p1 * e1 ** (cfg.p1 - 1.0) * gamma * d / nd
    e2 = nr - delta
    if e2 > 0.0 and cfg.lambda2 > 0.0:
        value += cfg.lambda2 * e2 ** cfg.p2
        grad = grad + cfg.lambda2 * cfg.p2 * e2 ** (cfg.p2 - 1.0) * r / nr
    return value, grad


def trigger_loss(net: Network, split: LatentSplit, u, u_star, x: SphereSample, R: float,
                 gamma: float, delta: float, cfg: TriggerSearchConfig, phi_star=None):
    """Penalised loss at ``u`` and its gradient with respect to ``u``.

    Without ``u_star`` (plain attack) the reference latent is 0.
    ``phi_star`` may be passed to skip recomputing Phi(u*).
    """
    if R <= 0:
        raise ValueError(f"R must be positive, got {R}")
    u = np.asarray(u, dtype=np.float64)
    if phi_star is None:
        phi_star = 0.0 if u_star is None else latent(net, split, u_star)
    z = latent(net, split, u)
    if z.shape != x.x.shape:
        raise ValueError(f"latent dim {z.shape} does not match direction dim {x.x.shape}")
    d = (z - phi_star) / R
    value, g_d = _loss_terms(d, x.x, gamma, delta, cfg)
    grad_u = latent_vjp(net, split, u, g_d / R)
    return value, grad_u


def _evaluate(net, split, u, phi_star, R, x):
    with np.errstate(all="ignore"):
        xp = (latent(net, split, u) - phi_star) / R
    return xp, alpha_of(x, xp)


def search_trigger(net: Network, split: LatentSplit, x: SphereSample, u_star, R: float,
                   gamma: float, cfg: TriggerSearchConfig = TriggerSearchConfig()) -> TriggerResult:
    """Projected gradient search for an input whose scaled latent displacement approximates ``x``.

    Starts from ``u_star`` (targeted) or from a seeded uniform draw in the box
    (plain).  Returns the best feasible iterate by alpha, or the best
    infeasible one flagged ``feasible=False``.
    """
    if R <= 0:
        raise ValueError(f"R must be positive, got {R}")
    delta = x.delta
    lo, hi = net.input_lower, net.input_upper
    if u_star is None:
        u = make_rng(cfg.seed).uniform(lo, hi)
        phi_star = np.zeros(split.latent_dim(net))
    else:
        u_star = np.asarray(u_star, dtype=np.float64)
        u = project_box(u_star, lo, hi)
        phi_star = latent(net, split, u_star)
    step0 = cfg.resolved_step0(net)

    best = {True: (math.inf, None), False: (math.inf, None)}
    best_alpha = math.inf
    loss_trace, alpha_trace = [], []
    stale = 0
    k = 0
    for k in range(cfg.max_iters + 1):
        z = latent(net, split, u)
        d = (z - phi_star) / R
        value, g_d = _loss_terms(d, x.x, gamma, delta, cfg)
        if not math.isfinite(value):
            raise TriggerSearchError(f"non-finite loss at iteration {k}; step size too large?")
        a = alpha_of(x, d)
        feas = is_feasible(x, d, gamma)
        if a < best[feas][0]:
            best[feas] = (a, u.copy())
        if a < best_alpha:
            best_alpha, stale = a, 0
        else:
            stale += 1
        loss_trace.append(value)
        alpha_trace.append(best_alpha)
        if cfg.alpha_target is not None and feas and a <= cfg.alpha_target:
            break
        if cfg.patience is not None and stale >= cfg.patience:
            break
        if k == cfg.max_iters:
            break
        grad = latent_vjp(net, split, u, g_d / R)
        u = project_box(u - step0 / (1.0 + cfg.step_decay * k) * grad, lo, hi)

    feasible = best[True][1] is not None
    u_best = best[True][1] if feasible else best[False][1]
    if cfg.round_inputs:
        u_best = project_box(np.rint(u_best), lo, hi)
    xp, a = _evaluate(net, split, u_best, phi_star, R, x)
    return TriggerResult(
        u_prime=u_best,
        x=x,
        x_prime=xp,
        alpha=a,
        feasible=is_feasible(x, xp, gamma),
        R=float(R),
        gamma=float(gamma),
        iterations=k,
        loss_trace=loss_trace,
        best_alpha_trace=alpha_trace,
        u_star=None if u_star is None else np.asarray(u_star),
        config=cfg,
    )
