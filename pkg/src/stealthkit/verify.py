"""Checking planted networks and Monte Carlo probing of the success event.

The geometric success event for a latent displacement x' and validation
latents x_i (all scaled into the unit ball) is

    gamma <x', x'> >= <x', x_i>   for every i,

i.e. every validation latent leaves the attack neuron at or below threshold.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, asdict
from typing import Optional

import numpy as np

from .attack import AttackNeuron, pre_activation
from .bounds import cap_term_integral, phi
from .model import LatentSplit, Network, head_output, latent, logits

LATENT_MODELS = ("uniform-ball", "fixed-list", "adversarial-shell")
WILSON_Z = 1.959963984540054


@dataclass
class StealthReport:
    max_validation_deviation: float
    trigger_deviation: float
    eps_ok: bool
    delta_ok: bool
    n_validation: int
    silent_count: Optional[int] = None
    histogram_edges: Optional[list] = None
    histogram_counts: Optional[list] = None

    @property
    def ok(self) -> bool:
        return self.eps_ok and self.delta_ok

    def to_dict(self) -> dict:
        return asdict(self)


def _head_values(net: Network, split: LatentSplit, data, as_latents: bool) -> np.ndarray:
    if as_latents:
        return np.atleast_1d(head_output(net, split, data))
    return logits(net, data)[..., split.head_output_index]


def verify_stealth(original: Network, planted: Network, split: LatentSplit, validation, trigger,
                   eps: float, Delta: float, neuron: Optional[AttackNeuron] = None,
                   as_latents: bool = False, bins: int = 50) -> StealthReport:
    """Compare original and planted heads on the validation set and the trigger.

    ``validation``/``trigger`` are raw inputs, or latents when ``as_latents``.
    With ``neuron`` given, the report also carries the silent count and a
    histogram of the neuron's pre-activations on the validation set.
    """
    if original.input_dim != planted.input_dim:
        raise ValueError("networks disagree on input dimension")
    V = np.atleast_2d(np.asarray(validation, dtype=np.float64))
    t = np.atleast_2d(np.asarray(trigger, dtype=np.float64))
    dev = np.abs(_head_values(original, split, V, as_latents) - _head_values(planted, split, V, as_latents))
    tdev = float(np.abs(_head_values(original, split, t, as_latents) - _head_values(planted, split, t, as_latents))[0])
    max_dev = float(np.max(dev)) if dev.size else 0.0
    report = StealthReport(
        max_validation_deviation=max_dev,
        trigger_deviation=tdev,
        eps_ok=max_dev <= eps,
        delta_ok=tdev >= Delta,
        n_validation=int(V.shape[0]),
    )
    if neuron is not None:
        Z = V if as_latents else latent(original, split, V)
        edges, counts, pre = activation_histogram(neuron, Z, bins)
        report.silent_count = int(np.sum(pre <= 0.0))
        report.histogram_edges = edges.tolist()
        report.histogram_counts = counts.tolist()
    return report


def activation_histogram(neuron: AttackNeuron, latents, bins: int = 50):
    """Histogram of <z, w> - b over latents; returns (edges, counts, values)."""
    if bins < 1:
        raise ValueError("bins must be >= 1")
    vals = np.atleast_1d(pre_activation(neuron, np.atleast_2d(latents)))
    counts, edges = np.histogram(vals, bins=bins)
    return edges, counts, vals


def wilson_interval(successes: int, trials: int, z: float = WILSON_Z):
    if trials <= 0:
        raise ValueError("trials must be positive")
    p = successes / trials
    denom = 1.0 + z * z / trials
    centre = (p + z * z / (2 * trials)) / denom
    half = z * math.sqrt(p * (1 - p) / trials + z * z / (4 * trials * trials)) / denom
    return max(0.0, centre - half), min(1.0, centre + half)


@dataclass
class MCReport:
    trials: int
    failures: int
    failure_frequency: float
    success_frequency: float
    ci_low: float
    ci_high: float
    bound_failure: float  # M * cap area, the union-bound failure ceiling
    n: int
    n_p: int
    M: int
    gamma: float
    delta: float
    alpha: float
    latent_model: str
    displacement: str
    seed: int
    chunk_size: int

    def to_dict(self) -> dict:
        return asdict(self)


def _unit_rows(rng, k, dim):
    z = rng.standard_normal((k, dim))
    return z / np.linalg.norm(z, axis=1, keepdims=True)


def validation_latents(latent_model: str, n: int, n_p: int, M: int, rng,
                       fixed_latents=None, shell_angle: float = math.pi / 2) -> np.ndarray:
    """M latents inside the unit ball of R^n according to ``latent_model``.

    ``adversarial-shell`` puts every point on the unit sphere of the first
    n_p coordinates, inside a cap of half-angle ``shell_angle`` around e_0:
    the layout where each point's failure cap is as large as it can be.
    """
    if latent_model == "uniform-ball":
        dirs = _unit_rows(rng, M, n)
        return dirs * rng.uniform(size=(M, 1)) ** (1.0 / n)
    if latent_model == "fixed-list":
        if fixed_latents is None:
            raise ValueError("fixed-list model needs fixed_latents")
        X = np.atleast_2d(np.asarray(fixed_latents, dtype=np.float64))
        if X.size and X.shape[1] != n:
            raise ValueError(f"fixed latents have dim {X.shape[1]}, expected {n}")
        return X.reshape(-1, n)
    if latent_model == "adversarial-shell":
        X = np.zeros((M, n))
        dirs = _unit_rows(rng, M, n_p)
        cos_lim = math.cos(shell_angle)
        for i in range(M):
            d = dirs[i]
            while d[0] < cos_lim:
                d = _unit_rows(rng, 1, n_p)[0]
            X[i, :n_p] = d
        return X
    raise ValueError(f"unknown latent model {latent_model!r}; choose from {LATENT_MODELS}")


def _mc_chunk(args):
    (n, n_p, gamma, delta, alpha, X, trials, seed, index, displacement) = args
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(index,))))
    x = np.zeros((trials, n))
    x[:, :n_p] = delta * _unit_rows(rng, trials, n_p)
    if alpha > 0.0:
        if displacement == "random":
            step = _unit_rows(rng, trials, n)
        elif displacement == "worst":
            # push each x straight toward its most aligned validation latent
            norms = np.linalg.norm(X, axis=1)
            safe = np.where(norms > 0, norms, 1.0)
            cos = (x @ X.T) / safe
            step = X[np.argmax(cos, axis=1)] / safe[np.argmax(cos, axis=1), None]
        else:
            raise ValueError(f"unknown displacement mode {displacement!r}")
        x = x + alpha * delta * step
    if X.shape[0] == 0:
        return 0
    lhs = x @ X.T
    rhs = gamma * np.einsum("ij,ij->i", x, x)
    fail = np.any(lhs > rhs[:, None], axis=1)
    return int(np.sum(fail))


def mc_event_probability(n: int, n_p: Optional[int], gamma: float, delta: float, alpha: float,
                         latent_model: str, M: int, trials: int, seed: int = 0,
                         fixed_latents=None, displacement: str = "random",
                         chunk_size: int = 20_000, workers: int = 1,
                         shell_angle: float = math.pi / 2) -> MCReport:
    """Empirical frequency of the success event over random directions x.

    The validation latents are drawn once (seeded) and held fixed; each trial
    draws x uniformly on the radius-delta sphere of the first n_p coordinates
    and displaces it by exactly alpha*delta.  Trials are processed in chunks
    with independent seed streams, so the result depends only on
    (seed, chunk_size) and not on ``workers``.
    """
    n_p = n if n_p is None else n_p
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if trials > 10**10:
        raise OverflowError("too many trials")
    if not 2 <= n_p <= n:
        raise ValueError("need 2 <= n_p <= n")
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(2**31,))))
    X = validation_latents(latent_model, n, n_p, M if latent_model != "fixed-list" else 0, rng,
                           fixed_latents, shell_angle)
    m_eff = X.shape[0]
    n_chunks = -(-trials // chunk_size)
    jobs = [
        (n, n_p, gamma, delta, alpha, X, min(chunk_size, trials - i * chunk_size), seed, i, displacement)
        for i in range(n_chunks)
    ]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            failures = sum(pool.map(_mc_chunk, jobs))
    else:
        failures = sum(map(_mc_chunk, jobs))
    lo, hi = wilson_interval(failures, trials)
    try:
        p1, _ = cap_term_integral(n_p, math.acos(phi(gamma, delta, alpha)))
        bound = m_eff * p1
    except ValueError:
        bound = float("nan")
    return MCReport(
        trials=trials, failures=failures,
        failure_frequency=failures / trials, success_frequency=1.0 - failures / trials,
        ci_low=lo, ci_high=hi, bound_failure=bound,
        n=n, n_p=n_p, M=m_eff, gamma=gamma, delta=delta, alpha=alpha,
        latent_model=latent_model, displacement=displacement, seed=seed, chunk_size=chunk_size,
    )
