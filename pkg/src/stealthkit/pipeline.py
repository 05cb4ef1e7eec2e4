"""End-to-end attack planning: radius estimate, direction draw, trigger search, neuron."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .attack import AttackNeuron, AttackParams, plan_plain_attack, plan_targeted_attack
from .bounds import BoundQuery, BoundReport, HypothesisError, success_bound
from .geometry import estimate_radius, positive_support, sample_sphere, sample_subsphere
from .model import LatentSplit, Network, latent
from .trigger import TriggerResult, TriggerSearchConfig, search_trigger


@dataclass(eq=False)
class AttackOutcome:
    trigger: TriggerResult
    neuron: Optional[AttackNeuron]
    R: float
    bound: Optional[BoundReport]
    bound_error: Optional[str] = None
    restart_alphas: tuple = ()

    def summary(self) -> dict:
        return {
            "alpha": self.trigger.alpha,
            "feasible": self.trigger.feasible,
            "R": self.R,
            "n_p": self.trigger.x.n_effective,
            "iterations": self.trigger.iterations,
            "bound_integral": None if self.bound is None else self.bound.bound_integral,
            "bound_error": self.bound_error,
            "restart_alphas": list(self.restart_alphas),
        }


def _one_search(net, split, params, u_star, reference, R, cfg, seed, subspace):
    dim = split.latent_dim(net)
    if u_star is None:
        x = sample_sphere(dim, params.delta, seed)
    else:
        phi_star = latent(net, split, u_star)
        support = positive_support(phi_star) if subspace else list(range(dim))
        if len(support) < 2:
            support = list(range(dim))
        x = sample_subsphere(dim, support, params.delta, seed)
    return search_trigger(net, split, x, u_star, R, params.gamma, cfg)


def run_attack(net: Network, split: LatentSplit, params: AttackParams, reference_inputs,
               u_star=None, cfg: TriggerSearchConfig = TriggerSearchConfig(),
               seed: int = 0, subspace: bool = True, safety_factor: float = 1.0,
               extra_targets: Sequence = ()) -> AttackOutcome:
    """Plan a single-neuron attack on ``net``.

    ``reference_inputs`` are the inputs the attacker can see; R is their
    largest latent distance from Phi(u*) (or from 0 without a target).
    Additional targets in ``extra_targets`` are tried as restarts and the
    trigger with the smallest alpha wins; a neuron is planned only when the
    winning trigger is feasible.
    """
    split.check(net)
    ref = np.atleast_2d(np.asarray(reference_inputs, dtype=np.float64))
    ref_latents = latent(net, split, ref)
    targets = [u_star] + [np.asarray(t, dtype=np.float64) for t in extra_targets]
    best: Optional[TriggerResult] = None
    best_R = math.nan
    alphas = []
    for i, target in enumerate(targets):
        center = None if target is None else latent(net, split, target)
        R = estimate_radius(ref_latents, center, safety_factor)
        if R <= 0:
            raise ValueError("reference latents give R = 0")
        run_cfg = cfg if i == 0 else TriggerSearchConfig(**{**cfg.to_dict(), "seed": cfg.seed + i})
        res = _one_search(net, split, params, target, ref, R, run_cfg, seed + i, subspace)
        alphas.append(res.alpha)
        if best is None or (res.feasible, -res.alpha) > (best.feasible, -best.alpha):
            best, best_R = res, R
    assert best is not None
    neuron = None
    if best.feasible:
        if best.u_star is None:
            neuron = plan_plain_attack(params, best.x_prime, best_R)
        else:
            neuron = plan_targeted_attack(params, best.x_prime, best_R, latent(net, split, best.u_star))
    bound, err = None, None
    try:
        bound = success_bound(BoundQuery(
            M=params.M, n=split.latent_dim(net), n_p=best.x.n_effective,
            gamma=params.gamma, delta=params.delta, alpha=min(best.alpha, 1.0 - 1e-16),
        ))
    except HypothesisError as exc:
        err = str(exc)
    return AttackOutcome(trigger=best, neuron=neuron, R=best_R, bound=bound, bound_error=err,
                         restart_alphas=tuple(alphas))
