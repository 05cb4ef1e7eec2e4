"""Dense feed-forward networks: representation, evaluation and serialization.

A :class:`Network` is an immutable stack of :class:`DenseLayer` objects plus
an admissible input box.  A :class:`LatentSplit` cuts it into a feature map
(layers ``0..cut``) and a decision head (layers ``cut+1..end``).  The head
value tracked by the attack tooling is one coordinate of the final layer's
*pre-activation* vector, i.e. a logit read before any softmax.

Networks may also carry *side units*: single neurons that read the
post-activation output of one layer and add ``gain * g(<h, w> - b)`` to a
pre-activation coordinate of a later layer.  They are how an attack neuron
wired straight into the head is represented without disturbing the layered
weights.
"""

from __future__ import annotations

import hashlib
import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

ACTIVATIONS = ("relu", "sigmoid", "softmax", "identity")


class ModelError(ValueError):
    """Base class for malformed model files or invalid network structure."""


class ModelParseError(ModelError):
    pass


class ModelShapeError(ModelError):
    pass


class ModelDomainError(ModelError):
    pass


def _frozen(a: Any, ndim: int) -> np.ndarray:
    arr = np.array(a, dtype=np.float64)
    if arr.ndim != ndim:
        raise ModelShapeError(f"expected a {ndim}-d array, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


def sigmoid(s):
    s = np.asarray(s, dtype=np.float64)
    # split by sign so exp never overflows
    out = np.empty_like(s)
    pos = s >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-s[pos]))
    e = np.exp(s[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def activate(kind: str, s: np.ndarray) -> np.ndarray:
    if kind == "relu":
        return np.maximum(s, 0.0)
    if kind == "sigmoid":
        return sigmoid(s)
    if kind == "identity":
        return s
    if kind == "softmax":
        z = s - np.max(s, axis=-1, keepdims=True)
        e = np.exp(z)
        return e / np.sum(e, axis=-1, keepdims=True)
    raise ModelDomainError(f"unknown activation {kind!r}")


def activation_vjp(kind: str, pre: np.ndarray, post: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Pull a cotangent on a layer's output back to its pre-activation."""
    if kind == "relu":
        # subgradient at exactly 0 is 0
        return np.where(pre > 0.0, g, 0.0)
    if kind == "sigmoid":
        return g * post * (1.0 - post)
    if kind == "identity":
        return g
    if kind == "softmax":
        return post * (g - np.sum(g * post, axis=-1, keepdims=True))
    raise ModelDomainError(f"unknown activation {kind!r}")


@dataclass(frozen=True, eq=False)
class DenseLayer:
    weights: np.ndarray  # (out_dim, in_dim)
    biases: np.ndarray  # (out_dim,)
    activation: str = "relu"

    def __post_init__(self):
        w = _frozen(self.weights, 2)
        b = _frozen(self.biases, 1)
        if w.shape[0] != b.shape[0]:
            raise ModelShapeError(
                f"weights have {w.shape[0]} rows but biases have {b.shape[0]} entries"
            )
        if w.shape[0] < 1 or w.shape[1] < 1:
            raise ModelShapeError(f"degenerate layer shape {w.shape}")
        if self.activation not in ACTIVATIONS:
            raise ModelDomainError(f"unknown activation {self.activation!r}")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise ModelDomainError("non-finite weight or bias")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "biases", b)

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]


@dataclass(frozen=True, eq=False)
class SideUnit:
    """A skip neuron: reads layer ``source``'s output, feeds layer ``target``.

    Contributes ``gain * g(<h_source, w> - b)`` to pre-activation coordinate
    ``target_index`` of layer ``target``.  ``source = -1`` reads the raw input.
    """

    source: int
    target: int
    target_index: int
    w: np.ndarray
    b: float
    gain: float
    activation: str = "relu"

    def __post_init__(self):
        object.__setattr__(self, "w", _frozen(self.w, 1))
        object.__setattr__(self, "b", float(self.b))
        object.__setattr__(self, "gain", float(self.gain))
        if self.activation not in ("relu", "sigmoid", "identity"):
            raise ModelDomainError(f"side unit activation {self.activation!r} not supported")
        if not (np.all(np.isfinite(self.w)) and math.isfinite(self.b) and math.isfinite(self.gain)):
            raise ModelDomainError("non-finite side unit parameter")

    def pre(self, h: np.ndarray) -> np.ndarray:
        return h @ self.w - self.b

    def value(self, h: np.ndarray) -> np.ndarray:
        return self.gain * activate(self.activation, self.pre(h))


@dataclass(frozen=True, eq=False)
class Network:
    layers: tuple
    input_lower: np.ndarray
    input_upper: np.ndarray
    metadata: Mapping[str, str] = field(default_factory=dict)
    side_units: tuple = ()

    def __post_init__(self):
        layers = tuple(self.layers)
        if not layers:
            raise ModelShapeError("network has no layers")
        object.__setattr__(self, "layers", layers)
        object.__setattr__(self, "side_units", tuple(self.side_units))
        lo = _frozen(self.input_lower, 1)
        hi = _frozen(self.input_upper, 1)
        object.__setattr__(self, "input_lower", lo)
        object.__setattr__(self, "input_upper", hi)
        object.__setattr__(self, "metadata", dict(self.metadata))
        if lo.shape != hi.shape or lo.shape[0] != layers[0].in_dim:
            raise ModelShapeError(
                f"input box of size {lo.shape[0]}/{hi.shape[0]} does not match "
                f"input_dim {layers[0].in_dim}"
            )
        if np.any(lo > hi):
            raise ModelDomainError("input_box lower exceeds upper")
        for k in range(len(layers) - 1):
            if layers[k].out_dim != layers[k + 1].in_dim:
                raise ModelShapeError(
                    f"layer {k} out_dim {layers[k].out_dim} != layer {k + 1} in_dim "
                    f"{layers[k + 1].in_dim}"
                )
            if layers[k].activation == "softmax":
                raise ModelShapeError("softmax is only allowed on the final layer")
        for s in self.side_units:
            if not (-1 <= s.source < s.target < len(layers)):
                raise ModelShapeError(f"side unit wiring {s.source}->{s.target} invalid")
            src_dim = self.input_dim if s.source < 0 else layers[s.source].out_dim
            if s.w.shape[0] != src_dim:
                raise ModelShapeError("side unit weight length does not match its source")
            if not 0 <= s.target_index < layers[s.target].out_dim:
                raise ModelShapeError("side unit target_index out of range")

    @property
    def input_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def output_dim(self) -> int:
        return self.layers[-1].out_dim

    @property
    def n_layers(self) -> int:
        return len(self.layers)

    def parameter_count(self) -> int:
        n = sum(l.weights.size + l.biases.size for l in self.layers)
        return n + sum(s.w.size + 2 for s in self.side_units)

    def replace(self, layers=None, side_units=None, metadata=None) -> "Network":
        return Network(
            layers=self.layers if layers is None else layers,
            input_lower=self.input_lower,
            input_upper=self.input_upper,
            metadata=self.metadata if metadata is None else metadata,
            side_units=self.side_units if side_units is None else side_units,
        )


@dataclass(frozen=True)
class LatentSplit:
    cut: int
    head_output_index: int = 0

    def check(self, net: Network) -> None:
        if not 0 <= self.cut < net.n_layers:
            raise ModelShapeError(f"cut {self.cut} outside 0..{net.n_layers - 1}")
        if not 0 <= self.head_output_index < net.output_dim:
            raise ModelShapeError(
                f"head_output_index {self.head_output_index} >= output dim {net.output_dim}"
            )

    def latent_dim(self, net: Network) -> int:
        return net.layers[self.cut].out_dim


# ---------------------------------------------------------------- evaluation


def _as_input(net: Network, u) -> np.ndarray:
    u = np.asarray(u, dtype=np.float64)
    if u.shape[-1] != net.input_dim or u.ndim > 2:
        raise ModelShapeError(f"input has shape {u.shape}, expected (..., {net.input_dim})")
    if np.any(u < net.input_lower) or np.any(u > net.input_upper):
        warnings.warn("input lies outside the network's input box", stacklevel=3)
    return u


def _run(net: Network, h: np.ndarray, start: int, stop: int, known: dict):
    """Evaluate layers ``start..stop-1`` from ``h`` (output of layer start-1).

    ``known`` maps layer index -> post-activation for side-unit sources; it is
    extended in place.  Returns (pre, post) lists for the evaluated layers.
    """
    pres, posts = [], []
    for k in range(start, stop):
        layer = net.layers[k]
        pre = h @ layer.weights.T + layer.biases
        for s in net.side_units:
            if s.target != k:
                continue
            if s.source not in known:
                raise ModelShapeError(
                    f"side unit reads layer {s.source}, which is not available here"
                )
            pre[..., s.target_index] += s.value(known[s.source])
        h = activate(layer.activation, pre)
        known[k] = h
        pres.append(pre)
        posts.append(h)
    return pres, posts


def forward_trace(net: Network, u):
    """Return (pre-activations, post-activations), one entry per layer."""
    u = _as_input(net, u)
    return _run(net, u, 0, net.n_layers, {-1: u})


def forward(net: Network, u) -> list:
    """Post-activation output of every layer; the last entry is the network output.

    ``u`` may be a single input vector or a batch of shape (N, input_dim).
    """
    return forward_trace(net, u)[1]


def logits(net: Network, u) -> np.ndarray:
    """Final layer pre-activation (pre-softmax) vector(s)."""
    return forward_trace(net, u)[0][-1]


def latent(net: Network, split: LatentSplit, u) -> np.ndarray:
    split.check(net)
    u = _as_input(net, u)
    _, posts = _run(net, u, 0, split.cut + 1, {-1: u})
    return posts[-1]


def head_output(net: Network, split: LatentSplit, z) -> np.ndarray | float:
    """F(z): the tracked pre-activation coordinate of the final layer given latent z."""
    split.check(net)
    z = np.asarray(z, dtype=np.float64)
    if z.shape[-1] != split.latent_dim(net):
        raise ModelShapeError(f"latent has length {z.shape[-1]}, expected {split.latent_dim(net)}")
    if split.cut == net.n_layers - 1:
        if net.layers[-1].activation not in ("identity",):
            raise ModelShapeError("cannot recover pre-activation head from a post-activation cut")
        out = z[..., split.head_output_index]
    else:
        pres, _ = _run(net, z, split.cut + 1, net.n_layers, {split.cut: z})
        out = pres[-1][..., split.head_output_index]
    return float(out) if np.ndim(out) == 0 else out


def latent_vjp(net: Network, split: LatentSplit, u, v) -> np.ndarray:
    """Gradient of <v, Phi(u)> with respect to u (single input vector)."""
    split.check(net)
    u = _as_input(net, u)
    if u.ndim != 1:
        raise ModelShapeError("latent_vjp takes a single input vector")
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (split.latent_dim(net),):
        raise ModelShapeError(f"cotangent has shape {v.shape}, expected ({split.latent_dim(net)},)")
    known = {-1: u}
    pres, posts = _run(net, u, 0, split.cut + 1, known)
    cot = {split.cut: v.copy()}
    for k in range(split.cut, -1, -1):
        g_post = cot.pop(k, None)
        if g_post is None:
            continue
        layer = net.layers[k]
        g_pre = activation_vjp(layer.activation, pres[k], posts[k], g_post)
        below = k - 1
        cot[below] = cot.get(below, 0.0) + layer.weights.T @ g_pre
        for s in net.side_units:
            if s.target != k or g_pre[s.target_index] == 0.0:
                continue
            h = known[s.source]
            sp = s.pre(h)
            if s.activation == "relu":
                d = 1.0 if sp > 0.0 else 0.0
            elif s.activation == "sigmoid":
                sg = float(sigmoid(np.array([sp]))[0])
                d = sg * (1.0 - sg)
            else:
                d = 1.0
            cot[s.source] = cot.get(s.source, 0.0) + g_pre[s.target_index] * s.gain * d * s.w
    return np.asarray(cot.get(-1, np.zeros(net.input_dim)), dtype=np.float64)


# ------------------------------------------------------------- serialization


def _fmt_number(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if not math.isfinite(x):
        raise ModelDomainError("cannot serialize a non-finite number")
    return format(x, ".17g")


def canonical_dumps(obj: Any) -> str:
    """Sorted keys, no whitespace, floats written with 17 significant digits."""
    if obj is None:
        return "null"
    if isinstance(obj, str):
        return json.dumps(obj, ensure_ascii=False)
    if isinstance(obj, (bool, np.bool_, int, float, np.integer, np.floating)):
        return _fmt_number(obj)
    if isinstance(obj, np.ndarray):
        return canonical_dumps(obj.tolist())
    if isinstance(obj, Mapping):
        items = sorted((str(k), v) for k, v in obj.items())
        return "{" + ",".join(json.dumps(k, ensure_ascii=False) + ":" + canonical_dumps(v) for k, v in items) + "}"
    if isinstance(obj, (list, tuple)):
        return "[" + ",".join(canonical_dumps(v) for v in obj) + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def canonical_bytes(obj: Any) -> bytes:
    return canonical_dumps(obj).encode("utf-8")


def network_to_dict(net: Network) -> dict:
    d = {
        "input_dim": net.input_dim,
        "input_box": {"lower": net.input_lower, "upper": net.input_upper},
        "layers": [
            {
                "in_dim": l.in_dim,
                "out_dim": l.out_dim,
                "activation": l.activation,
                "weights": l.weights,
                "biases": l.biases,
            }
            for l in net.layers
        ],
        "metadata": dict(net.metadata),
    }
    if net.side_units:
        d["side_units"] = [
            {
                "source": s.source,
                "target": s.target,
                "target_index": s.target_index,
                "activation": s.activation,
                "w": s.w,
                "b": s.b,
                "gain": s.gain,
            }
            for s in net.side_units
        ]
    return d


def _req(d: Mapping, key: str, where: str):
    try:
        return d[key]
    except (KeyError, TypeError):
        raise ModelParseError(f"missing {key!r} in {where}") from None


def network_from_dict(d: Mapping) -> Network:
    if not isinstance(d, Mapping):
        raise ModelParseError("model must be a JSON object")
    input_dim = _req(d, "input_dim", "model")
    box = _req(d, "input_box", "model")
    raw_layers = _req(d, "layers", "model")
    if not isinstance(raw_layers, list) or not raw_layers:
        raise ModelParseError("'layers' must be a non-empty list")
    layers = []
    for k, rl in enumerate(raw_layers):
        where = f"layer {k}"
        try:
            w = np.array(_req(rl, "weights", where), dtype=np.float64)
            b = np.array(_req(rl, "biases", where), dtype=np.float64)
        except (ValueError, TypeError) as exc:
            raise ModelParseError(f"{where}: ragged or non-numeric weights") from exc
        in_dim, out_dim = _req(rl, "in_dim", where), _req(rl, "out_dim", where)
        if w.ndim != 2 or w.shape != (out_dim, in_dim) or b.shape != (out_dim,):
            raise ModelShapeError(
                f"{where}: declared {out_dim}x{in_dim} but weights {w.shape}, biases {b.shape}"
            )
        layers.append(DenseLayer(w, b, _req(rl, "activation", where)))
    if layers[0].in_dim != input_dim:
        raise ModelShapeError(f"input_dim {input_dim} != first layer in_dim {layers[0].in_dim}")
    side = []
    for s in d.get("side_units", []):
        side.append(
            SideUnit(
                source=int(_req(s, "source", "side unit")),
                target=int(_req(s, "target", "side unit")),
                target_index=int(_req(s, "target_index", "side unit")),
                w=np.array(_req(s, "w", "side unit"), dtype=np.float64),
                b=_req(s, "b", "side unit"),
                gain=_req(s, "gain", "side unit"),
                activation=s.get("activation", "relu"),
            )
        )
    meta = d.get("metadata", {}) or {}
    return Network(
        layers=layers,
        input_lower=np.array(_req(box, "lower", "input_box"), dtype=np.float64),
        input_upper=np.array(_req(box, "upper", "input_box"), dtype=np.float64),
        metadata={str(k): str(v) for k, v in meta.items()},
        side_units=side,
    )


def _read_json(path) -> Any:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ModelParseError(f"{path}: {exc}") from exc


def load_model(path) -> Network:
    return network_from_dict(_read_json(path))


def save_model(net: Network, path) -> None:
    Path(path).write_bytes(canonical_bytes(network_to_dict(net)))


def model_digest(net: Network) -> str:
    """SHA-256 hex digest of the canonical serialization."""
    return hashlib.sha256(canonical_bytes(network_to_dict(net))).hexdigest()


def load_vectors(path) -> np.ndarray:
    """Read a ``{"dim": n, "vectors": [[...], ...]}`` file as an (N, n) array."""
    d = _read_json(path)
    if not isinstance(d, Mapping):
        raise ModelParseError(f"{path}: expected an object with 'dim' and 'vectors'")
    dim = _req(d, "dim", str(path))
    try:
        arr = np.array(_req(d, "vectors", str(path)), dtype=np.float64)
    except (ValueError, TypeError) as exc:
        raise ModelParseError(f"{path}: ragged vectors") from exc
    if arr.ndim == 1 and arr.size == 0:
        arr = arr.reshape(0, dim)
    if arr.ndim != 2 or arr.shape[1] != dim:
        raise ModelShapeError(f"{path}: vectors have shape {arr.shape}, declared dim {dim}")
    if not np.all(np.isfinite(arr)):
        raise ModelDomainError(f"{path}: non-finite entry")
    return arr


def save_vectors(vectors, path, **extra) -> None:
    arr = np.atleast_2d(np.asarray(vectors, dtype=np.float64))
    d = {"dim": int(arr.shape[1]), "vectors": arr}
    d.update(extra)
    Path(path).write_bytes(canonical_bytes(d))
