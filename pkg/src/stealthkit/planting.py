"""Network surgery: wiring an attack neuron into an existing network.

Three layouts are supported:

1. a skip neuron reading the latent layer whose gain-D output is added to
   the head logit (stored as a :class:`~stealthkit.model.SideUnit`);
2. the same neuron placed in layer ``cut+1`` with a chain of weight-1 ReLU
   relay neurons carrying its (non-negative) output up to the head, where
   the final connection carries the gain D;
3. a one-neuron attack that overwrites an existing neuron of the layer
   reading the latent and rewires its outgoing weights.

Every function returns a new :class:`Network`; inputs are never mutated.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .attack import AttackNeuron
from .geometry import make_rng
from .model import DenseLayer, LatentSplit, Network, SideUnit, forward, logits


class PlantingError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class SusceptibilityRanking:
    layer: int
    order: np.ndarray
    norms: np.ndarray
    tie_seed: int

    def rank_of(self, neuron: int) -> int:
        """1-based susceptibility rank of ``neuron``."""
        return int(np.flatnonzero(self.order == neuron)[0]) + 1

    def to_dict(self) -> dict:
        return {"layer": self.layer, "order": self.order, "norms": self.norms, "tie_seed": self.tie_seed}


def outgoing_l1_norms(net: Network, layer: int) -> np.ndarray:
    if not 0 <= layer < net.n_layers - 1:
        raise PlantingError(f"layer {layer} has no next layer to read output weights from")
    return np.sum(np.abs(net.layers[layer + 1].weights), axis=0)


def rank_neurons(net: Network, layer: int, tie_seed: int = 0) -> SusceptibilityRanking:
    """Order a layer's neurons by ascending L1 norm of their outgoing weights.

    Neurons with equal norms are ordered by a seeded random permutation.
    """
    norms = outgoing_l1_norms(net, layer)
    jitter = make_rng(tie_seed).permutation(norms.shape[0])
    order = np.lexsort((jitter, norms))
    return SusceptibilityRanking(layer=layer, order=order, norms=norms[order], tie_seed=int(tie_seed))


def _check_neuron(net: Network, split: LatentSplit, neuron: AttackNeuron) -> None:
    split.check(net)
    if neuron.dim != split.latent_dim(net):
        raise PlantingError(
            f"attack neuron reads {neuron.dim} latents, the cut layer has {split.latent_dim(net)}"
        )


def _tag(net: Network, **kv) -> dict:
    meta = dict(net.metadata)
    meta.update({k: str(v) for k, v in kv.items()})
    return meta


def plant_scenario1(net: Network, split: LatentSplit, neuron: AttackNeuron) -> Network:
    """Add the attack neuron as a skip unit feeding the head logit directly."""
    _check_neuron(net, split, neuron)
    if split.cut == net.n_layers - 1:
        raise PlantingError("the cut must leave at least one head layer")
    unit = SideUnit(
        source=split.cut,
        target=net.n_layers - 1,
        target_index=split.head_output_index,
        w=neuron.w,
        b=neuron.b,
        gain=neuron.D,
        activation=neuron.g_kind,
    )
    return net.replace(side_units=net.side_units + (unit,), metadata=_tag(net, planted="scenario1"))


def _append_neuron(layer: DenseLayer, row, bias) -> DenseLayer:
    w = np.vstack([layer.weights, np.asarray(row, dtype=np.float64)[None, :]])
    b = np.append(layer.biases, bias)
    return DenseLayer(w, b, layer.activation)


def _append_input(layer: DenseLayer, column) -> DenseLayer:
    w = np.hstack([layer.weights, np.asarray(column, dtype=np.float64)[:, None]])
    return DenseLayer(w, layer.biases.copy(), layer.activation)


def plant_scenario2(net: Network, split: LatentSplit, neuron: AttackNeuron) -> Network:
    """Place the attack neuron in layer cut+1 and relay it through every later hidden layer.

    The attack neuron's own layer must use the neuron's activation; every
    relay layer must be ReLU.  The gain D (of either sign) sits on the last
    connection into the head layer, so relays only ever carry g(.) >= 0.
    """
    _check_neuron(net, split, neuron)
    host = split.cut + 1
    last = net.n_layers - 1
    if host >= last:
        raise PlantingError("layered planting needs at least one hidden layer between cut and head")
    if net.layers[host].activation != neuron.g_kind:
        raise PlantingError(
            f"layer {host} uses {net.layers[host].activation}, the attack neuron needs {neuron.g_kind}"
        )
    for k in range(host + 1, last):
        if net.layers[k].activation != "relu":
            raise PlantingError(f"relay layer {k} uses {net.layers[k].activation}, not relu")
    layers = list(net.layers)
    layers[host] = _append_neuron(layers[host], neuron.w, -neuron.b)
    for k in range(host + 1, last):
        widened = _append_input(layers[k], np.zeros(layers[k].out_dim))
        relay = np.zeros(widened.in_dim)
        relay[-1] = 1.0
        layers[k] = _append_neuron(widened, relay, 0.0)
    col = np.zeros(layers[last].out_dim)
    col[split.head_output_index] = neuron.D
    layers[last] = _append_input(layers[last], col)
    return net.replace(layers=layers, metadata=_tag(net, planted="scenario2"))


def plant_scenario3(net: Network, layer: int, victim_index: int, neuron: AttackNeuron,
                    head_index: int = 0) -> Network:
    """Overwrite neuron ``victim_index`` of ``layer`` with the attack neuron.

    Its incoming weights/bias become (w, -b) and its outgoing weights are all
    zeroed except the one into ``head_index``, which is set to D.
    """
    if not 0 <= layer < net.n_layers - 1:
        raise PlantingError(f"layer {layer} must have a following layer")
    host = net.layers[layer]
    if not 0 <= victim_index < host.out_dim:
        raise PlantingError(f"victim {victim_index} out of range for layer of width {host.out_dim}")
    if neuron.dim != host.in_dim:
        raise PlantingError(f"attack neuron reads {neuron.dim} inputs, layer {layer} has {host.in_dim}")
    if host.activation != neuron.g_kind:
        raise PlantingError(f"layer {layer} uses {host.activation}, the attack neuron needs {neuron.g_kind}")
    nxt = net.layers[layer + 1]
    if not 0 <= head_index < nxt.out_dim:
        raise PlantingError(f"head_index {head_index} out of range")
    w = host.weights.copy()
    b = host.biases.copy()
    w[victim_index] = neuron.w
    b[victim_index] = -neuron.b
    w2 = nxt.weights.copy()
    w2[:, victim_index] = 0.0
    w2[head_index, victim_index] = neuron.D
    layers = list(net.layers)
    layers[layer] = DenseLayer(w, b, host.activation)
    layers[layer + 1] = DenseLayer(w2, nxt.biases.copy(), nxt.activation)
    return net.replace(layers=layers, metadata=_tag(net, planted="scenario3", victim=f"{layer}:{victim_index}"))


def silence_neuron(net: Network, layer: int, victim_index: int) -> Network:
    """Copy of ``net`` with the victim's outgoing weights zeroed."""
    if not 0 <= layer < net.n_layers - 1:
        raise PlantingError(f"layer {layer} must have a following layer")
    if not 0 <= victim_index < net.layers[layer].out_dim:
        raise PlantingError(f"victim {victim_index} out of range")
    nxt = net.layers[layer + 1]
    w2 = nxt.weights.copy()
    w2[:, victim_index] = 0.0
    layers = list(net.layers)
    layers[layer + 1] = DenseLayer(w2, nxt.biases.copy(), nxt.activation)
    return net.replace(layers=layers)


@dataclass(frozen=True)
class RemovalImpact:
    changed_fraction: float
    max_deviation: float
    n_inputs: int


def removal_impact(net: Network, layer: int, victim_index: int, inputs) -> RemovalImpact:
    """Effect of zeroing a neuron's outgoing weights on predicted classes.

    Deviation is measured on the final pre-activation (logit) vector.
    """
    u = np.atleast_2d(np.asarray(inputs, dtype=np.float64))
    if u.shape[0] == 0:
        raise PlantingError("need at least one input")
    before = logits(net, u)
    after = logits(silence_neuron(net, layer, victim_index), u)
    changed = np.argmax(before, axis=1) != np.argmax(after, axis=1)
    return RemovalImpact(
        changed_fraction=float(np.mean(changed)),
        max_deviation=float(np.max(np.abs(before - after))),
        n_inputs=int(u.shape[0]),
    )


def victim_contribution(net: Network, layer: int, victim_index: int, head_index: int, inputs) -> np.ndarray:
    """Former contribution of a neuron to logit ``head_index`` (layer+1 must be the head layer)."""
    if layer + 1 != net.n_layers - 1:
        raise PlantingError("contribution is only defined for neurons feeding the head layer")
    u = np.atleast_2d(np.asarray(inputs, dtype=np.float64))
    h = forward(net, u)[layer][:, victim_index]
    return h * net.layers[layer + 1].weights[head_index, victim_index]
