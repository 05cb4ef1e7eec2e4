"""Random directions on (sub)spheres, latent radius estimates, attack accuracy.

All randomness comes from numpy's ``Generator`` driven by the Philox4x32-10
counter-based bit generator, so a seed reproduces the same draws on every
platform running the same numpy release.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

RNG_ALGORITHM = f"Philox4x32-10 (numpy.random.Generator, numpy {np.__version__})"


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(int(seed)))


@dataclass(frozen=True, eq=False)
class SphereSample:
    x: np.ndarray
    delta: float
    seed: int
    support: Optional[tuple] = None

    @property
    def dim(self) -> int:
        return self.x.shape[0]

    @property
    def n_effective(self) -> int:
        """Dimension of the sphere the sample was drawn from."""
        return self.dim if self.support is None else len(self.support)

    def to_dict(self) -> dict:
        return {
            "x": self.x,
            "delta": self.delta,
            "seed": self.seed,
            "support": None if self.support is None else list(self.support),
        }

    @classmethod
    def from_dict(cls, d) -> "SphereSample":
        sup = d.get("support")
        return cls(
            x=np.asarray(d["x"], dtype=np.float64),
            delta=float(d["delta"]),
            seed=int(d["seed"]),
            support=None if sup is None else tuple(int(i) for i in sup),
        )


def _check_delta(delta: float) -> float:
    delta = float(delta)
    if not 0.0 < delta <= 1.0:
        raise ValueError(f"delta must lie in (0, 1], got {delta}")
    return delta


def _unit_gaussian_direction(rng: np.random.Generator, k: int) -> np.ndarray:
    while True:
        z = rng.standard_normal(k)
        nz = np.linalg.norm(z)
        if nz > 0.0:
            return z / nz


def sample_sphere(n: int, delta: float, seed: int) -> SphereSample:
    """Uniform draw from the sphere of radius ``delta`` in R^n.

    A standard Gaussian vector is normalised and rescaled.
    """
    if n < 2:
        raise ValueError(f"sphere dimension must be >= 2, got {n}")
    delta = _check_delta(delta)
    x = delta * _unit_gaussian_direction(make_rng(seed), int(n))
    return SphereSample(x=x, delta=delta, seed=int(seed))


def sample_subsphere(n: int, support: Sequence[int], delta: float, seed: int) -> SphereSample:
    """Uniform draw on the radius-``delta`` sphere of the coordinate subspace ``support``.

    Coordinates outside ``support`` are exactly zero.  With the full index
    set as support the draw coincides with :func:`sample_sphere`.
    """
    delta = _check_delta(delta)
    sup = sorted(int(i) for i in support)
    if len(sup) < 2:
        raise ValueError("support must contain at least 2 coordinates")
    if len(set(sup)) != len(sup) or sup[0] < 0 or sup[-1] >= n:
        raise ValueError(f"support indices must be distinct and inside 0..{n - 1}")
    x = np.zeros(int(n))
    x[sup] = delta * _unit_gaussian_direction(make_rng(seed), len(sup))
    return SphereSample(x=x, delta=delta, seed=int(seed), support=tuple(sup))


def positive_support(phi_star) -> list:
    """Coordinates where a latent vector is strictly positive."""
    return [int(i) for i in np.flatnonzero(np.asarray(phi_star) > 0.0)]


def estimate_radius(latents, center=None, safety_factor: float = 1.0) -> float:
    """Largest distance from ``center`` (default: origin) to any latent, times ``safety_factor``."""
    pts = np.atleast_2d(np.asarray(latents, dtype=np.float64))
    if pts.size == 0 or pts.shape[0] == 0:
        raise ValueError("cannot estimate a radius from an empty set")
    if center is not None:
        c = np.asarray(center, dtype=np.float64)
        if c.shape != (pts.shape[1],):
            raise ValueError(f"center has shape {c.shape}, latents have dim {pts.shape[1]}")
        pts = pts - c
    return float(np.max(np.linalg.norm(pts, axis=1))) * float(safety_factor)


def alpha_of(x: SphereSample, x_prime) -> float:
    """Accuracy ||x' - x|| / delta."""
    xp = np.asarray(x_prime, dtype=np.float64)
    if xp.shape != x.x.shape:
        raise ValueError(f"x' has shape {xp.shape}, x has {x.x.shape}")
    return float(np.linalg.norm(xp - x.x)) / x.delta
