"""Seeded synthetic fixtures: dense classifiers and clustered input sets.

The generated networks stand in for trained classifiers: He-initialised
ReLU layers feeding a softmax output, with inputs in the unit box.  Inputs
are drawn as noisy copies of a handful of class prototypes so the latent
cloud has the clustered shape real data tends to have.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .geometry import make_rng
from .model import DenseLayer, Network

DEFAULT_WIDTHS = (400, 200, 100, 10)


def make_network(input_dim: int = 256, widths: Sequence[int] = DEFAULT_WIDTHS, seed: int = 0,
                 hidden_activation: str = "relu", name: str = "synthetic") -> Network:
    """He-initialised dense network: ``hidden_activation`` layers then a softmax output."""
    if input_dim < 1 or not widths or min(widths) < 1:
        raise ValueError("dimensions must be positive")
    rng = make_rng(seed)
    layers = []
    fan_in = input_dim
    for k, width in enumerate(widths):
        w = rng.standard_normal((width, fan_in)) * np.sqrt(2.0 / fan_in)
        b = rng.uniform(-0.05, 0.05, size=width)
        act = "softmax" if k == len(widths) - 1 else hidden_activation
        layers.append(DenseLayer(w, b, act))
        fan_in = width
    return Network(
        layers=layers,
        input_lower=np.zeros(input_dim),
        input_upper=np.ones(input_dim),
        metadata={"name": name, "generator": "stealthkit.synth", "seed": str(seed)},
    )


def make_inputs(net: Network, count: int, seed: int = 0, n_prototypes: int = 10,
                noise: float = 0.15) -> np.ndarray:
    """``count`` inputs scattered around seeded prototypes, clipped to the box."""
    if count < 0:
        raise ValueError("count must be non-negative")
    rng = make_rng(seed)
    lo, hi = net.input_lower, net.input_upper
    protos = rng.uniform(lo, hi, size=(n_prototypes, net.input_dim))
    labels = rng.integers(0, n_prototypes, size=count)
    u = protos[labels] + noise * (hi - lo) * rng.standard_normal((count, net.input_dim))
    return np.clip(u, lo, hi)
