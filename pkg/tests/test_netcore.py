import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import linear_net, random_net
from rtkgloro import autodiff as ad
from rtkgloro.autodiff import GradientTape, Tensor, backward
from rtkgloro.netcore import (
    Conv,
    Dense,
    InvertibleDownsample,
    MinMax,
    Network,
    ShapeError,
    conv_network,
    dense_network,
    forward,
    forward_tensor,
    load_network,
    minmax,
    network_from_dict,
    network_to_dict,
    predict_topk,
    save_network,
)

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


# ---------------------------------------------------------------- forward


def test_forward_identity():
    np.testing.assert_array_equal(forward(linear_net(np.eye(2)), [0.3, -0.7]), [0.3, -0.7])


def test_forward_hand_matrix():
    np.testing.assert_array_equal(forward(linear_net([[1, 1], [0, 1]]), [1, 2]), [3, 2])


def test_forward_dense_minmax_dense():
    net = Network([Dense(np.ones((2, 2)), np.zeros(2)), MinMax(), Dense(np.ones((2, 2)), np.zeros(2))], (2,))
    np.testing.assert_array_equal(forward(net, [1, 0]), [2, 2])


def test_forward_batch_matches_single(rng):
    net = random_net(rng, 3, 4, 5)
    X = rng.standard_normal((7, 4))
    batch = forward(net, X)
    for x, row in zip(X, batch):
        np.testing.assert_allclose(forward(net, x), row, rtol=0, atol=1e-14)


def test_forward_deterministic(rng):
    net = random_net(rng, 3, 4, 5)
    x = rng.standard_normal(4)
    assert forward(net, x).tobytes() == forward(net, x).tobytes()


def test_forward_shape_mismatch():
    with pytest.raises(ShapeError):
        forward(linear_net(np.eye(2)), [1.0, 2.0, 3.0])


def test_network_requires_final_dense():
    with pytest.raises(ShapeError):
        Network([Dense(np.eye(2), np.zeros(2)), MinMax()], (2,))


def test_network_rejects_unchained_shapes():
    with pytest.raises(ShapeError):
        Network([Dense(np.ones((3, 2)), np.zeros(3)), Dense(np.ones((2, 4)), np.zeros(2))], (2,))


def test_dense_bias_must_match_rows():
    with pytest.raises(ShapeError):
        Dense(np.ones((3, 2)), np.zeros(2))


def test_parameterless_layers():
    assert MinMax().params == [] and InvertibleDownsample(2).params == []


# ---------------------------------------------------------------- minmax


@pytest.mark.parametrize(
    "v, expected",
    [((3, 1, 2, 5), (1, 3, 2, 5)), ((1, 2, 3, 4), (1, 2, 3, 4)), ((5, -1, 0), (-1, 5, 0))],
)
def test_minmax_examples(v, expected):
    np.testing.assert_array_equal(minmax(v), expected)


@given(arrays(np.float64, st.integers(1, 17), elements=finite))
def test_minmax_is_norm_preserving_pair_permutation(v):
    out = minmax(v)
    assert np.linalg.norm(out) == pytest.approx(np.linalg.norm(v), rel=1e-12, abs=1e-12)
    for p in range(0, len(v) - 1, 2):
        assert out[p] <= out[p + 1]
        assert sorted(out[p : p + 2]) == sorted(v[p : p + 2])
    if len(v) % 2:
        assert out[-1] == v[-1]


# ---------------------------------------------------------------- predict_topk


@pytest.mark.parametrize(
    "logits, k, expected",
    [((3.0, 2.0, 0.5), 2, {0, 1}), ((1.0, 1.0, 0.0), 1, {0}), ((0.5, 3.0, 2.0), 3, {0, 1, 2})],
)
def test_predict_topk_examples(logits, k, expected):
    assert predict_topk(logits, k) == frozenset(expected)


@pytest.mark.parametrize("k", [0, 4])
def test_predict_topk_range(k):
    with pytest.raises(ValueError):
        predict_topk([1.0, 2.0, 3.0], k)


# ---------------------------------------------------------------- reverse mode


def test_backward_bilinear():
    w, x = Tensor(2.0), Tensor(3.0)
    with GradientTape() as tape:
        y = w * x
    grads = backward(tape, y, [w, x])
    assert grads[w] == 3.0 and grads[x] == 2.0


def test_backward_strict_max():
    a = Tensor(np.array([1.0, 0.0]))
    with GradientTape() as tape:
        y = ad.tmax(a)
    np.testing.assert_array_equal(backward(tape, y, [a])[a], [1.0, 0.0])


def test_backward_rejects_unrecorded_scalar():
    w = Tensor(2.0)
    y = w * 3.0  # outside any tape
    with GradientTape() as tape:
        pass
    with pytest.raises(ValueError):
        backward(tape, y, [w])


def _central_difference(fn, arr: np.ndarray, h: float = 1e-5) -> np.ndarray:
    grad = np.zeros_like(arr)
    for idx in np.ndindex(arr.shape):
        old = arr[idx]
        arr[idx] = old + h
        up = fn()
        arr[idx] = old - h
        down = fn()
        arr[idx] = old
        grad[idx] = (up - down) / (2 * h)
    return grad


def _pair_gaps(net: Network, x: np.ndarray) -> float:
    """Smallest gap inside any MinMax pair along the forward pass."""
    h = Tensor(x[None])
    gap = np.inf
    for layer in net.layers:
        if isinstance(layer, MinMax):
            v = h.data.reshape(-1)
            gap = min(gap, float(np.abs(v[0 : len(v) - 1 : 2] - v[1::2]).min()))
        h = layer(h)
    return gap


def _check_gradients(net: Network, x: np.ndarray) -> float:
    xt = Tensor(x.copy())
    with GradientTape() as tape:
        y = ad.tsum(forward_tensor(net, xt.reshape(1, -1))[0, 0:1])
    params = net.params
    grads = tape.gradient(y, params + [xt])
    worst = 0.0
    for p, g in zip(params + [xt], grads):
        fd = _central_difference(lambda: float(forward(net, xt.data)[0]), p.data)
        scale = max(np.abs(fd).max(), 1e-8)
        worst = max(worst, float(np.abs(g - fd).max() / scale))
    return worst


def test_gradient_2_16_3(rng):
    net = dense_network(2, [16], 3, seed=5)
    x = np.array([0.3, -0.4])
    assert _pair_gaps(net, x) > 1e-6
    assert _check_gradients(net, x) < 1e-4


def test_gradient_100_random_nets():
    rng = np.random.default_rng(77)
    checked = 0
    while checked < 100:
        net = random_net(rng, int(rng.integers(2, 4)), int(rng.integers(2, 5)), int(rng.integers(2, 5)))
        x = rng.standard_normal(net.input_shape[0])
        if _pair_gaps(net, x) < 1e-6:  # within a MinMax tie: subgradients differ from differences
            continue
        assert _check_gradients(net, x) < 1e-4
        checked += 1


# ---------------------------------------------------------------- convolution and downsampling


def _naive_conv(x, kernel, stride):
    """Zero "same" padding, cross-correlation, written with explicit index arithmetic."""
    H, W, _ = x.shape
    cout, cin, kh, kw = kernel.shape
    Ho, Wo = -(-H // stride), -(-W // stride)
    pad_h = max((Ho - 1) * stride + kh - H, 0)
    pad_w = max((Wo - 1) * stride + kw - W, 0)
    top, left = pad_h // 2, pad_w // 2
    out = np.zeros((Ho, Wo, cout))
    for o in range(cout):
        for i in range(Ho):
            for j in range(Wo):
                acc = 0.0
                for c in range(cin):
                    for a in range(kh):
                        for b in range(kw):
                            r, s = i * stride + a - top, j * stride + b - left
                            if 0 <= r < H and 0 <= s < W:
                                acc += kernel[o, c, a, b] * x[r, s, c]
                out[i, j, o] = acc
    return out


@pytest.mark.parametrize("stride", [1, 2])
def test_conv_matches_naive_loops(rng, stride):
    x = rng.standard_normal((6, 5, 2))
    kernel = rng.standard_normal((3, 2, 3, 3))
    got = ad.conv2d_numpy(x[None], kernel, stride)[0]
    np.testing.assert_allclose(got, _naive_conv(x, kernel, stride), atol=1e-12)


def test_conv_transpose_is_adjoint(rng):
    x = rng.standard_normal((1, 7, 6, 2))
    kernel = rng.standard_normal((3, 2, 3, 3))
    y = ad.conv2d_numpy(x, kernel, 2)
    g = rng.standard_normal(y.shape)
    back = ad.conv2d_transpose_numpy(g, kernel, x.shape[1:3], 2)
    assert np.vdot(y, g) == pytest.approx(np.vdot(x, back), rel=1e-12)


def test_downsample_shape_and_inverse(rng):
    layer = InvertibleDownsample(2)
    x = rng.standard_normal((3, 4, 6, 5))
    y = layer(Tensor(x)).data
    assert y.shape == (3, 2, 3, 20)
    np.testing.assert_array_equal(layer.inverse(y), x)
    assert sorted(y.ravel()) == sorted(x.ravel())


def test_downsample_requires_divisible_shape():
    with pytest.raises(ShapeError):
        InvertibleDownsample(2).out_shape((5, 4, 1))


def test_conv_network_gradient(rng):
    net = conv_network((4, 4, 1), [2], [], 3, seed=3)
    x = rng.standard_normal((4, 4, 1))
    xt = Tensor(x[None])
    with GradientTape() as tape:
        y = ad.tsum(forward_tensor(net, xt)[:, 1])
    kernel = net.layers[0].kernel
    (g,) = tape.gradient(y, [kernel])
    fd = _central_difference(lambda: float(forward(net, x)[1]), kernel.data)
    np.testing.assert_allclose(g, fd, rtol=1e-5, atol=1e-7)


# ---------------------------------------------------------------- model files


def test_model_roundtrip_bit_exact(tmp_path, rng):
    net = conv_network((4, 4, 2), [2], [6], 3, seed=9)
    net.metadata.update(epsilon=0.1, guarantee="rtk", K=2, class_names=["a", "b", "c"])
    path = tmp_path / "m.json"
    save_network(net, path)
    loaded = load_network(path)
    for p, q in zip(net.params, loaded.params):
        assert p.data.tobytes() == q.data.tobytes()
    X = rng.standard_normal((5, 4, 4, 2))
    assert forward(net, X).tobytes() == forward(loaded, X).tobytes()
    doc = json.loads(path.read_text())
    assert doc["format_version"] == 1 and doc["metadata"]["K"] == 2
    assert [layer["type"] for layer in doc["layers"]][:3] == ["conv", "minmax", "downsample"]


def test_model_dict_rejects_unknown_version():
    d = network_to_dict(linear_net(np.eye(2)))
    d["format_version"] = 99
    with pytest.raises(ValueError):
        network_from_dict(d)


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, (3, 2), elements=finite))
def test_dense_roundtrip_any_weights(W):
    net = linear_net(W)
    back = network_from_dict(json.loads(json.dumps(network_to_dict(net))))
    assert back.layers[0].weights.data.tobytes() == net.layers[0].weights.data.tobytes()


def test_conv_layer_validates_stride():
    with pytest.raises(ShapeError):
        Conv(np.ones((1, 1, 3, 3)), np.zeros(1), stride=0)
