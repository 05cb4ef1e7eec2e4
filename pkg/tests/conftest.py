import numpy as np
import pytest

from stealthkit.model import DenseLayer, LatentSplit, Network


def random_net(seed, dims=(6, 8, 7, 5, 3), acts=None, box=(-1.0, 1.0)):
    rng = np.random.default_rng(seed)
    acts = acts or ["relu"] * (len(dims) - 2) + ["softmax"]
    layers = [
        DenseLayer(rng.normal(size=(o, i)) / np.sqrt(i), rng.normal(scale=0.1, size=o), a)
        for i, o, a in zip(dims[:-1], dims[1:], acts)
    ]
    return Network(layers, np.full(dims[0], box[0]), np.full(dims[0], box[1]), {"name": f"rand{seed}"})


def identity_net(n, head_acts=("identity",), box=10.0):
    """n -> n identity feature layer followed by identity head layers."""
    eye = np.eye(n)
    layers = [DenseLayer(eye, np.zeros(n), "identity")]
    layers += [DenseLayer(eye, np.zeros(n), a) for a in head_acts]
    return Network(layers, np.full(n, -box), np.full(n, box))


def naive_forward(net, u):
    """Independent loop-based evaluator: returns final pre-activation and output."""
    h = [float(v) for v in u]
    pre = None
    for layer in net.layers:
        W, b = layer.weights, layer.biases
        pre = [sum(W[i, j] * h[j] for j in range(len(h))) + b[i] for i in range(len(b))]
        if layer.activation == "relu":
            h = [max(p, 0.0) for p in pre]
        elif layer.activation == "sigmoid":
            h = [1.0 / (1.0 + np.exp(-p)) for p in pre]
        elif layer.activation == "softmax":
            m = max(pre)
            e = [np.exp(p - m) for p in pre]
            h = [v / sum(e) for v in e]
        else:
            h = list(pre)
    return np.array(pre), np.array(h)


@pytest.fixture
def small_net():
    return random_net(0)


@pytest.fixture
def small_split():
    return LatentSplit(cut=1, head_output_index=0)


_CRITERIA_KEY = pytest.StashKey[dict]()


@pytest.fixture
def record_criterion(request):
    """Record one acceptance line: record_criterion(number, ok, detail)."""
    store = request.config.stash.setdefault(_CRITERIA_KEY, {})

    def record(number, ok, detail):
        store[number] = (bool(ok), detail)
        print(f"criterion {number}: {'PASS' if ok else 'FAIL'} {detail}")

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    store = config.stash.get(_CRITERIA_KEY, {})
    if not store:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(store):
        ok, detail = store[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}")
