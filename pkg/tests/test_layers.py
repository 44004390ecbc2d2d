import math

import numpy as np
import pytest

from eddynet import layers as L


def naive_conv(x, w, b):
    n, c, h, wd = x.shape
    o, _, k, _ = w.shape
    p = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    out = np.zeros((n, o, h, wd))
    for i in range(h):
        for j in range(wd):
            patch = xp[:, :, i:i + k, j:j + k]
            out[:, :, i, j] = np.einsum("nckl,ockl->no", patch, w)
    return out + b[None, :, None, None]


def naive_tconv(x, w, b):
    """Scatter each input pixel times the kernel into a stride-2 canvas."""
    n, ci, h, wd = x.shape
    _, co, k, _ = w.shape
    full = np.zeros((n, co, 2 * (h - 1) + k, 2 * (wd - 1) + k))
    for i in range(h):
        for j in range(wd):
            full[:, :, 2 * i:2 * i + k, 2 * j:2 * j + k] += np.einsum("nc,cokl->nokl", x[:, :, i, j], w)
    s = max(k - 2, 0) // 2
    return full[:, :, s:s + 2 * h, s:s + 2 * wd] + b[None, :, None, None]


def strided_conv(y, w, h):
    """Stride-2 conv of ``y`` (n, co, 2h, 2w) with ``w`` (ci, co, k, k), TF "same" padding."""
    n, co, H, W = y.shape
    k = w.shape[2]
    s = max(k - 2, 0) // 2
    out = np.zeros((n, w.shape[0], h, W // 2))
    for i in range(h):
        for j in range(W // 2):
            for ky in range(k):
                for kx in range(k):
                    r, c = 2 * i + ky - s, 2 * j + kx - s
                    if 0 <= r < H and 0 <= c < W:
                        out[:, :, i, j] += y[:, :, r, c] @ w[:, :, ky, kx].T
    return out


@pytest.mark.parametrize("k", [1, 3, 5])
def test_conv_matches_naive_loops(k):
    rng = np.random.default_rng(k)
    x = rng.normal(size=(2, 3, 6, 5))
    w = rng.normal(size=(4, 3, k, k))
    b = rng.normal(size=4)
    out, _ = L.conv2d_forward(x, w, b)
    np.testing.assert_allclose(out, naive_conv(x, w, b), rtol=1e-12, atol=1e-12)


def test_conv_backward_is_adjoint():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(2, 3, 5, 7))
    w = rng.normal(size=(4, 3, 3, 3))
    out, cache = L.conv2d_forward(x, w, np.zeros(4))
    g = rng.normal(size=out.shape)
    dx, dw, db = L.conv2d_backward(g, cache)
    assert np.isclose(np.sum(g * out), np.sum(dx * x))
    assert np.isclose(np.sum(g * out), np.sum(dw * w))
    np.testing.assert_allclose(db, g.sum(axis=(0, 2, 3)))


def test_conv_preserves_float32():
    x = np.ones((1, 2, 4, 4), np.float32)
    out, _ = L.conv2d_forward(x, np.ones((3, 2, 3, 3), np.float32), np.zeros(3, np.float32))
    assert out.dtype == np.float32


def test_conv_rejects_channel_mismatch():
    with pytest.raises(L.ShapeError, match="channels"):
        L.conv2d_forward(np.zeros((1, 2, 4, 4)), np.zeros((3, 5, 3, 3)), np.zeros(3))
    with pytest.raises(L.ShapeError):
        L.conv2d_forward(np.zeros((2, 4, 4)), np.zeros((3, 2, 3, 3)), np.zeros(3))


@pytest.mark.parametrize("k", [2, 3, 4])
def test_transposed_conv_matches_scatter(k):
    rng = np.random.default_rng(k)
    x = rng.normal(size=(2, 3, 4, 5))
    w = rng.normal(size=(3, 2, k, k))
    b = rng.normal(size=2)
    out, _ = L.transposed_conv2d_forward(x, w, b)
    assert out.shape == (2, 2, 8, 10)
    np.testing.assert_allclose(out, naive_tconv(x, w, b), rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("k", [2, 3])
def test_transposed_conv_is_adjoint_of_strided_conv(k):
    rng = np.random.default_rng(10 + k)
    x = rng.normal(size=(1, 3, 4, 4))
    w = rng.normal(size=(3, 2, k, k))
    y = rng.normal(size=(1, 2, 8, 8))
    out, _ = L.transposed_conv2d_forward(x, w, np.zeros(2))
    assert np.isclose(np.sum(out * y), np.sum(x * strided_conv(y, w, 4)))


def test_maxpool_values_and_routing():
    x = np.array([[1, 5, 2, 2], [3, 4, 2, 2], [0, 0, -1, -3], [0, 9, -2, -4]], dtype=float)[None, None]
    out, cache = L.maxpool2x2_forward(x)
    np.testing.assert_array_equal(out[0, 0], [[5, 2], [9, -1]])
    dx = L.maxpool2x2_backward(np.ones_like(out), cache)
    # tie in the top-right window goes to the first element
    expected = np.array([[0, 1, 1, 0], [0, 0, 0, 0], [0, 0, 1, 0], [0, 1, 0, 0]])
    np.testing.assert_array_equal(dx[0, 0], expected)


def test_maxpool_rejects_odd_size():
    with pytest.raises(L.ShapeError):
        L.maxpool2x2_forward(np.zeros((1, 1, 5, 4)))


def test_batchnorm_train_normalizes_and_updates_moving_stats():
    rng = np.random.default_rng(0)
    x = rng.normal(3.0, 2.0, size=(8, 2, 5, 5))
    mm, mv = np.zeros(2), np.ones(2)
    out, _ = L.batchnorm_forward(x, np.ones(2), np.zeros(2), mm, mv, "train", momentum=0.9)
    mean = x.mean(axis=(0, 2, 3))
    var = x.var(axis=(0, 2, 3))
    np.testing.assert_allclose(out.mean(axis=(0, 2, 3)), 0, atol=1e-12)
    np.testing.assert_allclose(out.var(axis=(0, 2, 3)), var / (var + L.BN_EPSILON), rtol=1e-12)
    np.testing.assert_allclose(mm, 0.1 * mean)
    np.testing.assert_allclose(mv, 0.9 + 0.1 * var)


def test_batchnorm_infer_uses_moving_stats():
    x = np.full((1, 1, 2, 2), 3.0)
    out, _ = L.batchnorm_forward(x, np.array([2.0]), np.array([1.0]), np.array([1.0]), np.array([4.0]), "infer")
    np.testing.assert_allclose(out, 1.0 + 2.0 * 2.0 / np.sqrt(4.0 + L.BN_EPSILON))


def test_batchnorm_momentum_one_freezes_stats():
    mm, mv = np.array([0.5]), np.array([2.0])
    L.batchnorm_forward(np.random.default_rng(0).normal(size=(2, 1, 3, 3)), np.ones(1), np.zeros(1),
                        mm, mv, "train", momentum=1.0)
    assert mm[0] == 0.5 and mv[0] == 2.0


def test_relu_and_selu_values():
    x = np.array([-2.0, 0.0, 1.5])
    np.testing.assert_array_equal(L.relu_forward(x)[0], [0, 0, 1.5])
    y, _ = L.selu_forward(x)
    lam, alpha = L.SELU_LAMBDA, L.SELU_ALPHA
    np.testing.assert_allclose(y, [lam * alpha * (math.exp(-2) - 1), 0.0, lam * 1.5])


def test_selu_fixed_point():
    # a standard normal input keeps zero mean and unit variance
    z = np.random.default_rng(0).standard_normal(2_000_000)
    y, _ = L.selu_forward(z)
    assert abs(y.mean()) < 5e-3 and abs(y.var() - 1) < 5e-3


def test_dropout_is_identity_in_infer_mode():
    x = np.arange(6.0).reshape(1, 1, 2, 3)
    out, cache = L.dropout_forward(x, 0.5, None, "infer")
    assert out is x and cache is None
    out, cache = L.alpha_dropout_forward(x, 0.5, None, "infer")
    assert out is x


def test_dropout_keeps_expectation():
    x = np.ones((1, 1, 500, 500))
    out, _ = L.dropout_forward(x, 0.2, np.random.default_rng(0))
    assert set(np.unique(out)) <= {0.0, 1.25}
    assert abs(out.mean() - 1) < 0.01
    assert abs((out == 0).mean() - 0.2) < 0.005


def test_alpha_dropout_keeps_standardized_moments():
    x = np.random.default_rng(1).standard_normal((1, 1, 1000, 1000))
    y, _ = L.selu_forward(x)
    out, _ = L.alpha_dropout_forward(y, 0.2, np.random.default_rng(2))
    assert abs(out.mean()) < 5e-3 and abs(out.var() - 1) < 5e-3


def test_alpha_dropout_dropped_value():
    x = np.zeros((1, 1, 100, 100))
    out, (keep, a) = L.alpha_dropout_forward(x, 0.3, np.random.default_rng(0))
    q, sat = 0.7, L.SELU_SATURATION
    a_ref = 1 / math.sqrt(q + sat * sat * q * 0.3)
    b_ref = -a_ref * 0.3 * sat
    np.testing.assert_allclose(out[~keep], a_ref * sat + b_ref)
    np.testing.assert_allclose(out[keep], b_ref)


def test_dropout_rejects_bad_rate():
    with pytest.raises(ValueError):
        L.dropout_forward(np.zeros((1, 1, 2, 2)), 1.0, np.random.default_rng(0))


def test_softmax_sums_to_one_and_is_stable():
    x = np.array([[[[1000.0]], [[1001.0]], [[999.0]]]])
    p = L.softmax_channels(x)
    assert np.isfinite(p).all()
    np.testing.assert_allclose(p.sum(axis=1), 1.0)
    e = np.exp([1.0, 2.0, 0.0])
    np.testing.assert_allclose(p[0, :, 0, 0], e / e.sum())


def test_concat_channels():
    a, b = np.zeros((2, 3, 4, 4)), np.ones((2, 5, 4, 4))
    assert L.concat_channels(a, b).shape == (2, 8, 4, 4)
    with pytest.raises(L.ShapeError):
        L.concat_channels(a, np.ones((2, 5, 2, 4)))


def _truncated_variance(c=2.0):
    # variance of a standard normal truncated to [-c, c]
    phi = math.exp(-c * c / 2) / math.sqrt(2 * math.pi)
    mass = math.erf(c / math.sqrt(2))
    return 1 - 2 * c * phi / mass


@pytest.mark.parametrize("rule,scale", [("he", 2.0), ("lecun", 1.0)])
def test_truncated_init_moments(rule, scale):
    w = L.init_truncated_gaussian((64, 32, 3, 3), rule, np.random.default_rng(0), dtype=np.float64)
    sigma2 = scale / (32 * 9)
    assert np.abs(w).max() <= 2 * math.sqrt(sigma2) + 1e-12
    assert abs(w.var() / sigma2 - _truncated_variance()) < 0.02
    assert abs(w.mean()) < 3 * math.sqrt(sigma2 / w.size)


def test_truncated_variance_oracle():
    # closed form vs. scipy
    from scipy.stats import truncnorm
    assert math.isclose(_truncated_variance(), truncnorm(-2, 2).var(), rel_tol=1e-12)
