import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from triplet_forge.errors import ConfigError, NumericError
from triplet_forge.nn import (
    DEFAULT_LAYERS,
    Adam,
    Conv2D,
    Dense,
    EmbeddingNet,
    GlobalAvgPool,
    L2Normalize,
    MaxPool2D,
    ModelSpec,
    ReLU,
    Residual,
)
from triplet_forge.nn.gradcheck import LayerProbe, NetworkProbe, check_gradients


def brute_conv(x, W, b, pad, stride):
    N, C, H, Wd = x.shape
    K, _, k, _ = W.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    Ho, Wo = (H + 2 * pad - k) // stride + 1, (Wd + 2 * pad - k) // stride + 1
    out = np.zeros((N, K, Ho, Wo))
    for n in range(N):
        for o in range(K):
            for i in range(Ho):
                for j in range(Wo):
                    patch = xp[n, :, i * stride:i * stride + k, j * stride:j * stride + k]
                    out[n, o, i, j] = np.sum(patch * W[o]) + b[o]
    return out


@pytest.mark.parametrize("k,stride,pad", [(3, 1, None), (3, 2, None), (1, 1, 0), (5, 1, 2), (2, 2, 0)])
def test_conv_matches_brute_force(k, stride, pad):
    rng = np.random.default_rng(0)
    layer = Conv2D(3, 4, k, stride, pad, rng, np.float64)
    layer.params["b"] = rng.standard_normal(4)
    x = rng.standard_normal((2, 3, 7, 9))
    expected = brute_conv(x, layer.params["W"], layer.params["b"], layer.padding, stride)
    out = layer.forward(x)
    assert out.shape == expected.shape == (2, 4, *layer.output_shape((3, 7, 9))[1:])
    np.testing.assert_allclose(out, expected, rtol=1e-12, atol=1e-12)


def test_maxpool_forward_and_routing():
    x = np.arange(16, dtype=np.float64).reshape(1, 1, 4, 4)
    pool = MaxPool2D(2, 2)
    np.testing.assert_array_equal(pool.forward(x)[0, 0], [[5, 7], [13, 15]])
    dx = pool.backward(np.ones((1, 1, 2, 2)))
    assert dx.sum() == 4 and dx[0, 0, 1, 1] == 1 and dx[0, 0, 0, 0] == 0


def test_l2_normalize_unit_norm_and_degenerate_rows():
    layer = L2Normalize()
    h = np.array([[3.0, 4.0], [0.0, 0.0], [1e-20, 0.0]])
    y = layer.forward(h)
    np.testing.assert_allclose(np.linalg.norm(y, axis=1), 1.0)
    np.testing.assert_allclose(y[0], [0.6, 0.8])
    dh = layer.backward(np.ones_like(h))
    assert np.all(dh[1:] == 0) and np.all(np.isfinite(dh))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32))
def test_network_outputs_unit_norm(seed):
    rng = np.random.default_rng(seed)
    net = EmbeddingNet(ModelSpec(({"type": "conv2d", "channels": 3}, {"type": "relu"}, {"type": "maxpool"}),
                                 embedding_dim=6, input_shape=(8, 8), seed=seed))
    y = net.forward(rng.standard_normal((5, 8, 8)) * 10 ** rng.uniform(-3, 3))
    np.testing.assert_allclose(np.linalg.norm(y.astype(np.float64), axis=1), 1.0, rtol=1e-6)


def test_default_network_size():
    net = EmbeddingNet()
    assert net.spec.layers == tuple(DEFAULT_LAYERS)
    assert 20_000 < net.n_parameters() < 35_000
    y = net.forward(np.random.default_rng(0).standard_normal((2, 64, 96)))
    assert y.shape == (2, 128) and y.dtype == np.float32


def test_spec_validation():
    with pytest.raises(ConfigError):
        ModelSpec(embedding_dim=0)
    with pytest.raises(ConfigError):
        ModelSpec(layers=({"type": "lstm"},))
    with pytest.raises(ConfigError):
        EmbeddingNet(ModelSpec(layers=({"type": "maxpool", "kernel": 2},) * 8, input_shape=(8, 8)))
    with pytest.raises(ConfigError):
        EmbeddingNet().forward(np.zeros((1, 64, 95)))


def test_same_seed_same_weights():
    a, b = EmbeddingNet(ModelSpec(seed=3)), EmbeddingNet(ModelSpec(seed=3))
    for (_, x), (_, y) in zip(a.parameters(), b.parameters()):
        assert x.tobytes() == y.tobytes()


def test_checkpoint_round_trip_bitwise(tmp_path):
    spec = ModelSpec(layers=({"type": "residual", "channels": 4}, {"type": "global_avg_pool"}),
                     embedding_dim=5, input_shape=(8, 8), seed=2)
    net = EmbeddingNet(spec)
    opt = Adam([p for _, p in net.parameters()], 1e-3)
    net.forward(np.random.default_rng(0).standard_normal((3, 8, 8)))
    opt.step([g + 0.1 for _, g in net.backward(np.ones((3, 5), np.float32))])
    net.save(tmp_path / "m.ckpt", opt)
    back, state = EmbeddingNet.load(tmp_path / "m.ckpt", with_optimizer=True)
    assert back.spec == spec
    for (n1, x), (n2, y) in zip(net.parameters(), back.parameters()):
        assert n1 == n2 and x.tobytes() == y.tobytes()
    assert state["step"] == 1
    x = np.random.default_rng(1).standard_normal((2, 8, 8))
    assert net.forward(x).tobytes() == back.forward(x).tobytes()


def adam_reference(p, grads, lr, b1=0.9, b2=0.999, eps=1e-8):
    m = np.zeros_like(p)
    v = np.zeros_like(p)
    for t, g in enumerate(grads, 1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        p = p - lr * (m / (1 - b1 ** t)) / (np.sqrt(v / (1 - b2 ** t)) + eps)
    return p


def test_adam_matches_textbook_update():
    rng = np.random.default_rng(0)
    p0 = rng.standard_normal(10)
    grads = [rng.standard_normal(10) for _ in range(50)]
    p = p0.copy()
    opt = Adam([p], learning_rate=1e-2)
    for g in grads:
        opt.step([g])
    np.testing.assert_allclose(p, adam_reference(p0, grads, 1e-2), rtol=1e-9, atol=1e-12)


def test_adam_rejects_non_finite_gradient_without_update():
    p = np.ones(3)
    opt = Adam([p])
    with pytest.raises(NumericError):
        opt.step([np.array([1.0, np.inf, 0.0])])
    np.testing.assert_array_equal(p, 1.0)
    assert opt.step_count == 0


def _layer_cases(rng, dtype):
    return [
        (Conv2D(2, 3, 3, 1, None, rng, dtype), rng.standard_normal((2, 2, 6, 5))),
        (Conv2D(2, 3, 3, 2, None, rng, dtype), rng.standard_normal((2, 2, 7, 6))),
        (MaxPool2D(2, 2), rng.standard_normal((2, 2, 6, 6))),
        (ReLU(), rng.standard_normal((3, 7))),
        (GlobalAvgPool(), rng.standard_normal((2, 3, 4, 5))),
        (Dense(6, 4, rng, dtype), rng.standard_normal((3, 6))),
        (L2Normalize(), rng.standard_normal((4, 6))),
        (Residual(2, 3, 3, rng, dtype), rng.standard_normal((2, 2, 5, 5))),
    ]


@pytest.mark.parametrize("case", range(8))
def test_layer_gradients_float64(case):
    rng = np.random.default_rng(case)
    layer, x = _layer_cases(rng, np.float64)[case]
    res = check_gradients(LayerProbe(layer, x), rng, 1e-6)
    assert res.checked > 0
    assert res.max_error < 1e-6


def test_small_network_gradients_float32_against_shadow():
    rng = np.random.default_rng(0)
    spec = ModelSpec(({"type": "conv2d", "channels": 3}, {"type": "relu"}, {"type": "maxpool"},
                      {"type": "global_avg_pool"}), embedding_dim=4, input_shape=(8, 8), seed=0)
    probe = NetworkProbe(EmbeddingNet(spec), rng.standard_normal((2, 8, 8)).astype(np.float32))
    res = check_gradients(probe, rng, 1e-3, oracle=probe.shadow(np.float64))
    assert res.max_error < 1e-3
