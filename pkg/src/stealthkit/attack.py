"""Construction of the single attack neuron D * g(<z, w> - b).

For a latent displacement x' (already scaled by 1/R) the neuron uses

    w = kappa * x' / R,    b = kappa * (1 + gamma) / 2 * ||x'||^2

so that any latent z with <x', z/R> <= gamma ||x'||^2 sits at least
kappa (1 - gamma) ||x'||^2 / 2 below the threshold, while the trigger latent
R x' sits exactly that far above it.  The targeted variant shifts the bias by
kappa <Phi(u*), x'> / R so the same picture holds around Phi(u*).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import sigmoid

# relative headroom on the ReLU kappa so floating-point rounding in the
# network cannot pull the trigger response below Delta
RELU_HEADROOM = 1e-10


class AttackError(ValueError):
    pass


@dataclass(frozen=True)
class AttackParams:
    gamma: float = 0.9
    delta: float = 1.0 / 3.0
    Delta: float = 50.0
    eps: float = 0.0
    g_kind: str = "relu"
    sign: int = 1
    kappa_margin: float = math.log(10.0)
    M: int = 1

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise AttackError(f"gamma must be in (0, 1), got {self.gamma}")
        if not 0.0 < self.delta <= 1.0:
            raise AttackError(f"delta must be in (0, 1], got {self.delta}")
        if self.Delta < 0 or self.eps < 0:
            raise AttackError("Delta and eps must be non-negative")
        if self.g_kind not in ("relu", "sigmoid"):
            raise AttackError(f"g_kind must be 'relu' or 'sigmoid', got {self.g_kind!r}")
        if self.sign not in (1, -1):
            raise AttackError("sign must be +1 or -1")
        if self.kappa_margin <= 0:
            raise AttackError("kappa_margin must be positive")
        if self.g_kind == "sigmoid" and self.eps == 0:
            raise AttackError("a sigmoid neuron cannot reach eps = 0")

    def to_dict(self) -> dict:
        return dict(
            gamma=self.gamma, delta=self.delta, Delta=self.Delta, eps=self.eps,
            g_kind=self.g_kind, sign=self.sign, kappa_margin=self.kappa_margin, M=self.M,
        )


@dataclass(frozen=True, eq=False)
class AttackNeuron:
    w: np.ndarray
    b: float
    D: float
    kappa: float
    g_kind: str
    x_prime: np.ndarray
    R: float

    def to_dict(self) -> dict:
        return {
            "w": self.w, "b": self.b, "D": self.D, "kappa": self.kappa,
            "g_kind": self.g_kind, "x_prime": self.x_prime, "R": self.R,
        }

    @classmethod
    def from_dict(cls, d) -> "AttackNeuron":
        return cls(
            w=np.asarray(d["w"], dtype=np.float64),
            b=float(d["b"]),
            D=float(d["D"]),
            kappa=float(d["kappa"]),
            g_kind=str(d["g_kind"]),
            x_prime=np.asarray(d["x_prime"], dtype=np.float64),
            R=float(d["R"]),
        )

    @property
    def dim(self) -> int:
        return self.w.shape[0]


def choose_kappa_D(g_kind, gamma, xprime_norm_sq, eps, Delta, kappa_margin=math.log(10.0), sign=1):
    """Pick (kappa, D) so that |D| g(-kappa z) <= eps and |D| g(kappa z) >= Delta.

    Here z = (1 - gamma) ||x'||^2 / 2.  ReLU: kappa = Delta / z and |D| = 1,
    giving a response of exactly Delta (up to a 1e-10 relative headroom) and
    an exact zero below threshold.  Sigmoid: kappa = (ln(Delta/eps) + margin) / z
    and |D| = Delta / sigma(kappa z).
    """
    if xprime_norm_sq <= 0:
        raise AttackError("||x'||^2 must be positive")
    if not 0.0 < gamma < 1.0:
        raise AttackError(f"gamma must be in (0, 1), got {gamma}")
    z = 0.5 * (1.0 - gamma) * xprime_norm_sq
    if g_kind == "relu":
        if Delta <= 0:
            raise AttackError("a ReLU attack with Delta = 0 does nothing")
        kappa = Delta / z * (1.0 + RELU_HEADROOM)
        return kappa, float(sign)
    if g_kind == "sigmoid":
        if eps <= 0:
            raise AttackError("a sigmoid neuron cannot reach eps = 0")
        if Delta <= 0:
            raise AttackError("Delta must be positive")
        kappa = (math.log(Delta / eps) + kappa_margin) / z
        kappa = max(kappa, kappa_margin / z)
        mag = Delta / float(sigmoid(np.array([kappa * z]))[0])
        return kappa, sign * mag
    raise AttackError(f"unknown activation {g_kind!r}")


def _plan(params: AttackParams, x_prime, R, shift=0.0) -> AttackNeuron:
    xp = np.asarray(x_prime, dtype=np.float64)
    if R <= 0:
        raise AttackError(f"R must be positive, got {R}")
    norm_sq = float(xp @ xp)
    if params.gamma * math.sqrt(norm_sq) > 1.0:
        raise AttackError(
            f"gamma * ||x'|| = {params.gamma * math.sqrt(norm_sq):.6g} exceeds 1"
        )
    kappa, D = choose_kappa_D(
        params.g_kind, params.gamma, norm_sq, params.eps, params.Delta,
        params.kappa_margin, params.sign,
    )
    w = kappa * xp / R
    b = 0.5 * kappa * (1.0 + params.gamma) * norm_sq + shift * kappa
    return AttackNeuron(w=w, b=b, D=D, kappa=kappa, g_kind=params.g_kind, x_prime=xp.copy(), R=float(R))


def plan_plain_attack(params: AttackParams, x_prime, R) -> AttackNeuron:
    return _plan(params, x_prime, R)


def plan_targeted_attack(params: AttackParams, x_prime, R, phi_star) -> AttackNeuron:
    xp = np.asarray(x_prime, dtype=np.float64)
    ps = np.asarray(phi_star, dtype=np.float64)
    if ps.shape != xp.shape:
        raise AttackError(f"phi_star has shape {ps.shape}, x' has {xp.shape}")
    if R <= 0:
        raise AttackError(f"R must be positive, got {R}")
    return _plan(params, xp, R, shift=float(ps @ xp) / R)


def pre_activation(neuron: AttackNeuron, z) -> np.ndarray | float:
    z = np.asarray(z, dtype=np.float64)
    if z.shape[-1] != neuron.dim:
        raise AttackError(f"latent has length {z.shape[-1]}, neuron expects {neuron.dim}")
    s = z @ neuron.w - neuron.b
    return float(s) if np.ndim(s) == 0 else s


def realize_effect(neuron: AttackNeuron, z) -> np.ndarray | float:
    """D * g(<z, w> - b) for one latent or a batch of latents."""
    s = np.asarray(pre_activation(neuron, z))
    g = np.maximum(s, 0.0) if neuron.g_kind == "relu" else sigmoid(np.atleast_1d(s)).reshape(s.shape)
    out = neuron.D * g
    return float(out) if out.ndim == 0 else out
