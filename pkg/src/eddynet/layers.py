"""Layer kernels for the segmentation network.

Every tensor is a C-ordered ``numpy`` array of shape ``(n, c, h, w)``.
Forward functions return ``(out, cache)`` and the matching backward
function takes ``(dout, cache)``. Kernels preserve the input dtype, so the
network runs in float32 while gradient checks run the same code in float64.
"""

import numpy as np

SELU_LAMBDA = 1.0507009873554805
SELU_ALPHA = 1.6732632423543772
# negative saturation value of SELU, used by alpha dropout
SELU_SATURATION = -SELU_LAMBDA * SELU_ALPHA

BN_EPSILON = 1e-3
BN_MOMENTUM = 0.99


class ShapeError(ValueError):
    pass


def as_tensor4(x, dtype=np.float32):
    """Return ``x`` as a contiguous rank-4 array of ``dtype``."""
    x = np.ascontiguousarray(x, dtype=dtype)
    if x.ndim != 4:
        raise ShapeError(f"expected a rank-4 (n, c, h, w) tensor, got shape {x.shape}")
    return x


def _check4(x, what="input"):
    if x.ndim != 4:
        raise ShapeError(f"{what} must be rank 4 (n, c, h, w), got shape {x.shape}")


# ---------------------------------------------------------------------------
# convolution, stride 1, "same" zero padding


def _padded_rows(x, p):
    """NHWC copy of ``x`` zero-padded by ``p``, flattened to ``(pixels, c)``."""
    n, c, h, w = x.shape
    xp = np.zeros((n, h + 2 * p, w + 2 * p, c), dtype=x.dtype)
    xp[:, p:p + h, p:p + w, :] = x.transpose(0, 2, 3, 1)
    return xp.reshape(-1, c)


def conv2d_forward(x, w, b):
    """Stride-1 convolution with zero padding that keeps the spatial size.

    ``w`` has shape ``(out, in, k, k)`` with odd ``k`` (1 or 3 in practice).
    The padded input is flattened to one row per pixel; tap ``(ky, kx)`` is
    then a contiguous row offset, so each tap is a single GEMM.
    """
    _check4(x)
    if w.ndim != 4 or w.shape[2] != w.shape[3] or w.shape[2] % 2 == 0:
        raise ShapeError(f"conv kernel must be (out, in, k, k) with odd k, got {w.shape}")
    if x.shape[1] != w.shape[1]:
        raise ShapeError(
            f"input shape {x.shape} has {x.shape[1]} channels but kernel shape "
            f"{w.shape} expects {w.shape[1]}")
    if b.shape != (w.shape[0],):
        raise ShapeError(f"bias shape {b.shape} does not match kernel shape {w.shape}")
    n, _, h, wd = x.shape
    o, k = w.shape[0], w.shape[2]
    p = k // 2
    rows = _padded_rows(x, p)
    pw = wd + 2 * p
    m = rows.shape[0] - (k - 1) * (pw + 1)
    taps = np.ascontiguousarray(w.transpose(2, 3, 1, 0))  # (k, k, in, out)
    out = np.zeros((rows.shape[0], o), dtype=x.dtype)
    tmp = np.empty((m, o), dtype=x.dtype)
    for ky in range(k):
        for kx in range(k):
            d = ky * pw + kx
            np.matmul(rows[d:d + m], taps[ky, kx], out=tmp)
            out[:m] += tmp
    out = out.reshape(n, h + 2 * p, pw, o)[:, :h, :wd, :]
    out = np.ascontiguousarray(out.transpose(0, 3, 1, 2))
    out += b[None, :, None, None]
    return out, (x.shape, w, rows)


def conv2d_backward(dout, cache):
    """Returns ``(dx, dw, db)``."""
    x_shape, w, rows = cache
    n, c, h, wd = x_shape
    o, k = w.shape[0], w.shape[2]
    if dout.shape != (n, o, h, wd):
        raise ShapeError(f"grad_out shape {dout.shape} != forward output shape {(n, o, h, wd)}")
    p = k // 2
    pw = wd + 2 * p
    m = rows.shape[0] - (k - 1) * (pw + 1)
    gp = np.zeros((n, h + 2 * p, pw, o), dtype=dout.dtype)
    gp[:, :h, :wd, :] = dout.transpose(0, 2, 3, 1)
    g = gp.reshape(-1, o)[:m]
    taps_t = np.ascontiguousarray(w.transpose(2, 3, 0, 1))  # (k, k, out, in)
    dw = np.empty((k, k, c, o), dtype=dout.dtype)
    drows = np.zeros_like(rows)
    tmp = np.empty((m, c), dtype=dout.dtype)
    for ky in range(k):
        for kx in range(k):
            d = ky * pw + kx
            np.matmul(rows[d:d + m].T, g, out=dw[ky, kx])
            np.matmul(g, taps_t[ky, kx], out=tmp)
            drows[d:d + m] += tmp
    dx = drows.reshape(n, h + 2 * p, pw, c)[:, p:p + h, p:p + wd, :].transpose(0, 3, 1, 2)
    db = dout.sum(axis=(0, 2, 3))
    return np.ascontiguousarray(dx), np.ascontiguousarray(dw.transpose(3, 2, 0, 1)), db


# ---------------------------------------------------------------------------
# transposed convolution, stride 2


def _tconv_crop(k):
    return max(k - 2, 0) // 2


def transposed_conv2d_forward(x, w, b):
    """Stride-2 transposed convolution doubling the spatial size.

    ``w`` has shape ``(in, out, k, k)``. The full ``2(h-1)+k`` output is
    cropped to ``2h`` starting at row/col ``(k-2)//2``, which is the adjoint
    of a stride-2 convolution padded the same way (TensorFlow's "same").
    """
    _check4(x)
    if w.ndim != 4 or w.shape[2] != w.shape[3] or w.shape[2] < 2:
        raise ShapeError(f"transposed conv kernel must be (in, out, k, k), k >= 2, got {w.shape}")
    if x.shape[1] != w.shape[0]:
        raise ShapeError(
            f"input shape {x.shape} has {x.shape[1]} channels but kernel shape "
            f"{w.shape} expects {w.shape[0]}")
    if b.shape != (w.shape[1],):
        raise ShapeError(f"bias shape {b.shape} does not match kernel shape {w.shape}")
    n, ci, h, wd = x.shape
    co, k = w.shape[1], w.shape[2]
    xm = x.transpose(0, 2, 3, 1).reshape(-1, ci)
    cols = (xm @ w.reshape(ci, -1)).reshape(n, h, wd, co, k, k)
    full = np.zeros((n, co, 2 * (h - 1) + k, 2 * (wd - 1) + k), dtype=cols.dtype)
    for ky in range(k):
        for kx in range(k):
            full[:, :, ky:ky + 2 * h - 1:2, kx:kx + 2 * wd - 1:2] += \
                cols[:, :, :, :, ky, kx].transpose(0, 3, 1, 2)
    p = _tconv_crop(k)
    out = full[:, :, p:p + 2 * h, p:p + 2 * wd] + b[None, :, None, None]
    return np.ascontiguousarray(out), (x.shape, w, xm)


def transposed_conv2d_backward(dout, cache):
    """Returns ``(dx, dw, db)``; ``dx`` is a stride-2 convolution of ``dout``."""
    x_shape, w, xm = cache
    n, ci, h, wd = x_shape
    co, k = w.shape[1], w.shape[2]
    if dout.shape != (n, co, 2 * h, 2 * wd):
        raise ShapeError(f"grad_out shape {dout.shape} != forward output shape {(n, co, 2 * h, 2 * wd)}")
    p = _tconv_crop(k)
    full = np.zeros((n, co, 2 * (h - 1) + k, 2 * (wd - 1) + k), dtype=dout.dtype)
    full[:, :, p:p + 2 * h, p:p + 2 * wd] = dout
    dcols = np.empty((n, h, wd, co, k, k), dtype=dout.dtype)
    for ky in range(k):
        for kx in range(k):
            dcols[:, :, :, :, ky, kx] = \
                full[:, :, ky:ky + 2 * h - 1:2, kx:kx + 2 * wd - 1:2].transpose(0, 2, 3, 1)
    dcols = dcols.reshape(n * h * wd, -1)
    dw = (xm.T @ dcols).reshape(w.shape)
    dx = (dcols @ w.reshape(ci, -1).T).reshape(n, h, wd, ci).transpose(0, 3, 1, 2)
    db = dout.sum(axis=(0, 2, 3))
    return np.ascontiguousarray(dx), dw, db


# ---------------------------------------------------------------------------
# pooling


def maxpool2x2_forward(x):
    """2x2 max pooling, stride 2. Ties go to the first position in
    row-major window order."""
    _check4(x)
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"maxpool2x2 needs even height and width, got shape {x.shape}")
    win = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)
    idx = win.argmax(axis=-1)
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
    return out, (x.shape, idx)


def maxpool2x2_backward(dout, cache):
    shape, idx = cache
    n, c, h, w = shape
    if dout.shape != idx.shape:
        raise ShapeError(f"grad_out shape {dout.shape} != pooled shape {idx.shape}")
    win = np.zeros(idx.shape + (4,), dtype=dout.dtype)
    np.put_along_axis(win, idx[..., None], dout[..., None], axis=-1)
    dx = win.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(shape)
    return np.ascontiguousarray(dx)


# ---------------------------------------------------------------------------
# batch normalization


def batchnorm_forward(x, gamma, beta, moving_mean, moving_var, mode="train",
                      momentum=BN_MOMENTUM, eps=BN_EPSILON):
    """Per-channel batch normalization over (batch, height, width).

    In train mode the moving statistics are updated in place with
    ``moving = momentum * moving + (1 - momentum) * batch``.
    """
    _check4(x)
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"batchnorm parameters of shape {gamma.shape} do not fit input shape {x.shape}")
    if mode == "train":
        mean = x.mean(axis=(0, 2, 3), dtype=np.float64)
        var = x.var(axis=(0, 2, 3), dtype=np.float64)
        if moving_mean is not None:
            moving_mean *= momentum
            moving_mean += ((1.0 - momentum) * mean).astype(moving_mean.dtype)
            moving_var *= momentum
            moving_var += ((1.0 - momentum) * var).astype(moving_var.dtype)
        mean = mean.astype(x.dtype)
        var = var.astype(x.dtype)
    elif mode == "infer":
        if moving_mean is None or moving_var is None:
            raise ValueError("batchnorm in infer mode needs initialized moving statistics")
        mean = moving_mean.astype(x.dtype)
        var = moving_var.astype(x.dtype)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    inv_std = 1.0 / np.sqrt(var + x.dtype.type(eps))
    xhat = (x - mean[None, :, None, None]) * inv_std[None, :, None, None]
    out = gamma[None, :, None, None] * xhat + beta[None, :, None, None]
    return out, (xhat, gamma, inv_std, mode)


def batchnorm_backward(dout, cache):
    """Returns ``(dx, dgamma, dbeta)``. Train mode accounts for the batch
    statistics depending on the input."""
    xhat, gamma, inv_std, mode = cache
    dgamma = (dout * xhat).sum(axis=(0, 2, 3))
    dbeta = dout.sum(axis=(0, 2, 3))
    scale = (gamma * inv_std)[None, :, None, None]
    if mode == "infer":
        return dout * scale, dgamma, dbeta
    m = dout.size // dout.shape[1]
    dx = scale * (dout - (dbeta / m)[None, :, None, None] - xhat * (dgamma / m)[None, :, None, None])
    return dx, dgamma, dbeta


# ---------------------------------------------------------------------------
# activations


def relu_forward(x):
    return np.maximum(x, 0), x


def relu_backward(dout, cache):
    # derivative at 0 is taken as 0
    return dout * (cache > 0)


def selu_forward(x):
    neg = SELU_LAMBDA * SELU_ALPHA * np.expm1(np.minimum(x, 0))
    out = np.where(x > 0, SELU_LAMBDA * x, neg).astype(x.dtype, copy=False)
    return out, (x, neg)


def selu_backward(dout, cache):
    x, neg = cache
    d = np.where(x > 0, SELU_LAMBDA, neg + SELU_LAMBDA * SELU_ALPHA).astype(dout.dtype, copy=False)
    return dout * d


# ---------------------------------------------------------------------------
# dropout


def _check_rate(rate):
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")


def dropout_forward(x, rate, rng, mode="train"):
    """Inverted dropout: survivors are scaled by ``1 / (1 - rate)``.
    Identity in infer mode or when ``rate == 0``."""
    _check_rate(rate)
    if mode == "infer" or rate == 0.0:
        return x, None
    keep = rng.random(x.shape) >= rate
    scale = x.dtype.type(1.0 / (1.0 - rate))
    mask = keep * scale
    return x * mask, mask


def dropout_backward(dout, cache):
    return dout if cache is None else dout * cache


def alpha_dropout_forward(x, rate, rng, mode="train"):
    """Dropout for SELU networks.

    Dropped units are set to the negative saturation value ``-lambda*alpha``
    and an affine map ``a*y + b`` restores zero mean and unit variance for a
    standardized input.
    """
    _check_rate(rate)
    if mode == "infer" or rate == 0.0:
        return x, None
    q = 1.0 - rate
    sat = SELU_SATURATION
    a = (q + sat * sat * q * rate) ** -0.5
    b = -a * rate * sat
    keep = rng.random(x.shape) >= rate
    out = np.where(keep, a * x + b, a * sat + b)
    return out.astype(x.dtype, copy=False), (keep, x.dtype.type(a))


def alpha_dropout_backward(dout, cache):
    if cache is None:
        return dout
    keep, a = cache
    return dout * (keep * a)


# ---------------------------------------------------------------------------
# softmax over channels


def softmax_channels(x):
    """Per-pixel softmax across axis 1, stabilized by max subtraction."""
    _check4(x)
    z = x - x.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_channels_backward(dprob, prob):
    """Gradient w.r.t. the logits given the gradient w.r.t. the probabilities."""
    return prob * (dprob - (dprob * prob).sum(axis=1, keepdims=True))


def concat_channels(a, b):
    if a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise ShapeError(f"cannot concatenate shapes {a.shape} and {b.shape} on channels")
    return np.concatenate([a, b], axis=1)


# ---------------------------------------------------------------------------
# initialization

VARIANCE_RULES = {"he": 2.0, "lecun": 1.0}


def init_truncated_gaussian(shape, variance_rule, rng, fan_in=None, dtype=np.float32):
    """Zero-mean Gaussian truncated at two standard deviations.

    The pre-truncation variance is ``2/fan_in`` ("he") or ``1/fan_in``
    ("lecun"); ``fan_in`` defaults to ``prod(shape[1:])`` (in * kh * kw for a
    conv kernel). Out-of-range draws are resampled, so the empirical variance
    is about 0.774 times the target.
    """
    if variance_rule not in VARIANCE_RULES:
        raise ValueError(f"unknown variance rule {variance_rule!r}")
    if fan_in is None:
        fan_in = int(np.prod(shape[1:]))
    sigma = np.sqrt(VARIANCE_RULES[variance_rule] / fan_in)
    z = rng.standard_normal(shape)
    bad = np.abs(z) > 2.0
    while bad.any():
        z[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(z) > 2.0
    return (z * sigma).astype(dtype)
