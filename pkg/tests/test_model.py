import json
import warnings

import numpy as np
import pytest

from conftest import naive_forward, random_net
from stealthkit.model import (
    DenseLayer, LatentSplit, ModelDomainError, ModelParseError, ModelShapeError, Network,
    canonical_dumps, forward, head_output, latent, latent_vjp, load_model, load_vectors, logits,
    model_digest, network_from_dict, network_to_dict, save_model, save_vectors,
)


def _two_layer_identity_dict():
    eye = np.eye(3).tolist()
    return {
        "input_dim": 3,
        "input_box": {"lower": [0, 0, 0], "upper": [1, 1, 1]},
        "layers": [
            {"in_dim": 3, "out_dim": 3, "activation": "relu", "weights": eye, "biases": [0, 0, 0]},
            {"in_dim": 3, "out_dim": 3, "activation": "softmax", "weights": eye, "biases": [0, 0, 0]},
        ],
        "metadata": {"name": "id"},
    }


def test_load_identity_model_reproduces_basis_vector(tmp_path):
    p = tmp_path / "m.json"
    p.write_text(json.dumps(_two_layer_identity_dict()))
    net = load_model(p)
    assert net.n_layers == 2
    np.testing.assert_array_equal(logits(net, [1.0, 0.0, 0.0]), [1.0, 0.0, 0.0])


def test_dimension_chain_violation_is_shape_error():
    d = _two_layer_identity_dict()
    d["input_dim"] = 3
    d["layers"] = [
        {"in_dim": 3, "out_dim": 4, "activation": "relu", "weights": np.ones((4, 3)).tolist(), "biases": [0] * 4},
        {"in_dim": 5, "out_dim": 2, "activation": "identity", "weights": np.ones((2, 5)).tolist(), "biases": [0] * 2},
    ]
    with pytest.raises(ModelShapeError):
        network_from_dict(d)


def test_non_finite_weight_is_domain_error():
    d = _two_layer_identity_dict()
    d["layers"][0]["weights"][0][0] = float("nan")
    with pytest.raises(ModelDomainError):
        network_from_dict(d)


def test_malformed_file_is_parse_error(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    with pytest.raises(ModelParseError):
        load_model(p)
    with pytest.raises(ModelParseError):
        network_from_dict({"layers": []})


def test_softmax_only_allowed_last():
    layers = [DenseLayer(np.eye(2), np.zeros(2), "softmax"), DenseLayer(np.eye(2), np.zeros(2), "identity")]
    with pytest.raises(ModelShapeError):
        Network(layers, np.zeros(2), np.ones(2))


@pytest.mark.parametrize("seed", range(5))
def test_save_load_round_trip_is_byte_stable(tmp_path, seed):
    net = random_net(seed)
    p1, p2 = tmp_path / "a.json", tmp_path / "b.json"
    save_model(net, p1)
    back = load_model(p1)
    for a, b in zip(net.layers, back.layers):
        assert np.array_equal(a.weights, b.weights) and np.array_equal(a.biases, b.biases)
    save_model(back, p2)
    assert p1.read_bytes() == p2.read_bytes()
    # re-serialising a whitespace/key-shuffled copy gives the same canonical bytes
    pretty = json.dumps(json.loads(p1.read_text()), indent=3)
    p3 = tmp_path / "c.json"
    p3.write_text(pretty)
    assert canonical_dumps(network_to_dict(load_model(p3))).encode() == p1.read_bytes()


def test_single_relu_sign_case():
    net = Network([DenseLayer([[1.0, -1.0]], [0.0], "relu")], [0, 0], [5, 5])
    assert forward(net, [2.0, 3.0])[-1][0] == 0.0


def test_zero_sigmoid_layer_gives_half():
    net = Network([DenseLayer(np.zeros((2, 3)), np.zeros(2), "sigmoid")], np.zeros(3), np.ones(3))
    np.testing.assert_array_equal(forward(net, [0.3, 0.1, 0.9])[-1], [0.5, 0.5])


@pytest.mark.parametrize("seed", range(5))
def test_forward_matches_independent_evaluator(seed):
    net = random_net(seed)
    u = np.random.default_rng(100 + seed).uniform(-1, 1, net.input_dim)
    pre, out = naive_forward(net, u)
    np.testing.assert_allclose(logits(net, u), pre, rtol=1e-12, atol=1e-13)
    np.testing.assert_allclose(forward(net, u)[-1], out, rtol=1e-12, atol=1e-13)


def test_out_of_box_input_warns_but_evaluates(small_net):
    with pytest.warns(UserWarning):
        forward(small_net, np.full(small_net.input_dim, 5.0))


def test_dimension_mismatch_rejected(small_net):
    with pytest.raises(ModelShapeError):
        forward(small_net, np.zeros(small_net.input_dim + 1))


def test_latent_degenerate_cut_and_identity_cut():
    net = random_net(1)
    u = np.random.default_rng(0).uniform(-1, 1, net.input_dim)
    np.testing.assert_array_equal(latent(net, LatentSplit(net.n_layers - 1), u), forward(net, u)[-1])
    eye = Network([DenseLayer(np.eye(4), np.zeros(4), "relu"), DenseLayer(np.eye(4), np.zeros(4), "identity")],
                  np.zeros(4), np.ones(4))
    u = np.array([0.1, 0.0, 0.7, 1.0])
    np.testing.assert_array_equal(latent(eye, LatentSplit(0), u), u)


@pytest.mark.parametrize("seed", range(5))
def test_latent_matches_forward_and_composition(seed):
    net = random_net(seed)
    rng = np.random.default_rng(seed)
    for cut in range(net.n_layers - 1):
        split = LatentSplit(cut, head_output_index=seed % net.output_dim)
        u = rng.uniform(-1, 1, net.input_dim)
        z = latent(net, split, u)
        np.testing.assert_array_equal(z, forward(net, u)[cut])
        assert head_output(net, split, z) == logits(net, u)[split.head_output_index]


def test_identity_head_reads_coordinate():
    net = Network([DenseLayer(np.eye(3), np.zeros(3), "identity"), DenseLayer(np.eye(3), np.zeros(3), "identity")],
                  -np.ones(3), np.ones(3))
    assert head_output(net, LatentSplit(0, 2), [0.1, 0.2, 0.3]) == 0.3


def test_vjp_linear_case_equals_product_transpose():
    rng = np.random.default_rng(3)
    W1, W2 = rng.normal(size=(5, 4)), rng.normal(size=(6, 5))
    net = Network([DenseLayer(W1, rng.normal(size=5), "identity"), DenseLayer(W2, rng.normal(size=6), "identity"),
                   DenseLayer(np.ones((1, 6)), [0.0], "identity")], -np.ones(4), np.ones(4))
    v = rng.normal(size=6)
    g = latent_vjp(net, LatentSplit(1), rng.uniform(-1, 1, 4), v)
    np.testing.assert_allclose(g, (W2 @ W1).T @ v, rtol=1e-12)


def test_vjp_zero_cotangent(small_net, small_split):
    g = latent_vjp(small_net, small_split, np.zeros(small_net.input_dim), np.zeros(small_split.latent_dim(small_net)))
    assert np.all(g == 0.0)


def _generic_point(net, split, rng, margin=1e-3):
    from stealthkit.model import forward_trace
    while True:
        u = rng.uniform(-1, 1, net.input_dim)
        pres, _ = forward_trace(net, u)
        if all(np.min(np.abs(p)) > margin for p in pres[: split.cut + 1]):
            return u


@pytest.mark.parametrize("seed", range(10))
def test_vjp_matches_central_differences(seed):
    net = random_net(seed, acts=["relu", "sigmoid", "relu", "softmax"])
    split = LatentSplit(2)
    rng = np.random.default_rng(seed)
    u = _generic_point(net, split, rng)
    v = rng.normal(size=split.latent_dim(net))
    g = latent_vjp(net, split, u, v)
    h = 1e-5
    fd = np.array([
        (v @ latent(net, split, u + h * e) - v @ latent(net, split, u - h * e)) / (2 * h)
        for e in np.eye(net.input_dim)
    ])
    np.testing.assert_allclose(g, fd, rtol=1e-4, atol=1e-8)


def test_vjp_relu_subgradient_at_zero_is_zero():
    net = Network([DenseLayer([[1.0]], [0.0], "relu"), DenseLayer([[1.0]], [0.0], "identity")], [-1.0], [1.0])
    assert latent_vjp(net, LatentSplit(0), [0.0], [1.0])[0] == 0.0


def test_vectors_file_round_trip(tmp_path):
    arr = np.random.default_rng(0).normal(size=(4, 3))
    save_vectors(arr, tmp_path / "v.json")
    np.testing.assert_array_equal(load_vectors(tmp_path / "v.json"), arr)
    (tmp_path / "bad.json").write_text('{"dim": 2, "vectors": [[1, 2, 3]]}')
    with pytest.raises(ModelShapeError):
        load_vectors(tmp_path / "bad.json")


def test_network_is_immutable(small_net):
    with pytest.raises(ValueError):
        small_net.layers[0].weights[0, 0] = 1.0


def test_digest_changes_on_last_bit_flip(small_net):
    d0 = model_digest(small_net)
    w = small_net.layers[1].weights.copy()
    w[0, 0] = np.nextafter(w[0, 0], np.inf)
    layers = list(small_net.layers)
    layers[1] = DenseLayer(w, small_net.layers[1].biases, "relu")
    assert model_digest(small_net.replace(layers=layers)) != d0
