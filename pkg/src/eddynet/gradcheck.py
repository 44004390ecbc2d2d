"""Finite-difference verification of the analytic backward passes."""

from dataclasses import dataclass, field

import numpy as np

from . import layers as L
from . import losses
from .data import one_hot

FD_STEP = 1e-3
FD_TOLERANCE = 1e-4
# Through a whole network the O(h^2) truncation term of the two-point
# central difference reaches 1e-3 at h = 1e-3 on some seeds, while a finer
# step lets round-off swamp the exactly-zero gradients of biases feeding
# batchnorm. The network check keeps h and uses the four-point stencil.
NETWORK_FD_ORDER = 4


@dataclass
class GradCheckReport:
    max_relative_error: float
    passed: bool
    errors: dict = field(default_factory=dict)


def relative_error(analytic, numeric, floor=1e-8):
    """Elementwise ``|a - n| / max(|a|, |n|, floor)``."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def grad_check(forward, backward, inputs, seed=0, h=FD_STEP, tol=FD_TOLERANCE, wrt=None,
               max_elements=None, order=2):
    """Compare analytic gradients against central differences in float64.

    ``forward(inputs) -> (out, cache)`` and ``backward(dout, cache) -> dict``
    with one gradient per key of ``inputs`` listed in ``wrt``. The scalar
    being differentiated is ``sum(out * r)`` for a fixed Gaussian ``r``.
    ``forward`` must be deterministic, so any randomness has to be seeded
    inside it. With ``max_elements`` only a random subset of each input's
    entries is perturbed. ``order=4`` switches from the two-point central
    difference to the four-point one, ``(8(f(h) - f(-h)) - (f(2h) - f(-2h))) / 12h``.
    """
    # a stream of its own: cases built from the same seed must not see their
    # input noise reused as the projection
    rng = np.random.default_rng([seed, 0x9C])
    inputs = {k: np.array(v, dtype=np.float64) for k, v in inputs.items()}
    wrt = list(inputs) if wrt is None else list(wrt)

    out, cache = forward(inputs)
    proj = rng.standard_normal(np.shape(out))
    analytic = backward(proj if np.ndim(out) else float(proj), cache)

    def loss():
        o, _ = forward(inputs)
        return float(np.sum(np.asarray(o, dtype=np.float64) * proj))

    steps = (-1, 1) if order == 2 else (-2, -1, 1, 2)
    errors = {}
    for key in wrt:
        x = inputs[key]
        a = np.asarray(analytic[key], dtype=np.float64)
        if a.shape != x.shape:
            raise ValueError(f"gradient for {key!r} has shape {a.shape}, input has {x.shape}")
        idx = np.arange(x.size)
        if max_elements is not None and x.size > max_elements:
            idx = np.sort(rng.choice(x.size, max_elements, replace=False))
        flat = x.reshape(-1)
        num = np.empty(len(idx))
        for j, i in enumerate(idx):
            old = flat[i]
            f = {}
            for step in steps:
                flat[i] = old + step * h
                f[step] = loss()
            flat[i] = old
            if order == 2:
                num[j] = (f[1] - f[-1]) / (2 * h)
            else:
                num[j] = (8 * (f[1] - f[-1]) - (f[2] - f[-2])) / (12 * h)
        err = relative_error(a.reshape(-1)[idx], num)
        errors[key] = float(err.max()) if err.size else 0.0
    worst = max(errors.values(), default=0.0)
    return GradCheckReport(worst, worst < tol, errors)


# ---------------------------------------------------------------------------
# one case per layer kind; each returns (forward, backward, inputs)


def _kink_free(rng, shape, margin=0.05):
    z = rng.standard_normal(shape)
    return np.sign(z) * (np.abs(z) + margin)


def _conv_case(rng, k):
    x = rng.standard_normal((2, 3, 6, 5))
    w = rng.standard_normal((4, 3, k, k))
    b = rng.standard_normal(4)

    def fwd(p):
        return L.conv2d_forward(p["x"], p["w"], p["b"])

    def bwd(d, cache):
        dx, dw, db = L.conv2d_backward(d, cache)
        return {"x": dx, "w": dw, "b": db}
    return fwd, bwd, {"x": x, "w": w, "b": b}


def _tconv_case(rng, k=3):
    x = rng.standard_normal((2, 3, 3, 4))
    w = rng.standard_normal((3, 2, k, k))
    b = rng.standard_normal(2)

    def fwd(p):
        return L.transposed_conv2d_forward(p["x"], p["w"], p["b"])

    def bwd(d, cache):
        dx, dw, db = L.transposed_conv2d_backward(d, cache)
        return {"x": dx, "w": dw, "b": db}
    return fwd, bwd, {"x": x, "w": w, "b": b}


def _maxpool_case(rng):
    # distinct values spaced well beyond the step so no window has a tie
    x = rng.permutation(2 * 3 * 6 * 4).reshape(2, 3, 6, 4) * 0.05

    def bwd(d, cache):
        return {"x": L.maxpool2x2_backward(d, cache)}
    return (lambda p: L.maxpool2x2_forward(p["x"])), bwd, {"x": x}


def _batchnorm_case(rng, mode):
    c = 3
    x = rng.standard_normal((4, c, 3, 3)) * 2.0 + 1.0
    gamma = rng.standard_normal(c)
    beta = rng.standard_normal(c)
    mm = rng.standard_normal(c)
    mv = rng.uniform(0.5, 2.0, c)

    def fwd(p):
        return L.batchnorm_forward(p["x"], p["gamma"], p["beta"], mm.copy(), mv.copy(), mode=mode)

    def bwd(d, cache):
        dx, dg, db = L.batchnorm_backward(d, cache)
        return {"x": dx, "gamma": dg, "beta": db}
    return fwd, bwd, {"x": x, "gamma": gamma, "beta": beta}


def _elementwise_case(rng, fwd_fn, bwd_fn):
    x = _kink_free(rng, (2, 3, 4, 4))
    return (lambda p: fwd_fn(p["x"])), (lambda d, cache: {"x": bwd_fn(d, cache)}), {"x": x}


def _dropout_case(rng, alpha):
    x = rng.standard_normal((2, 3, 4, 4))
    mask_seed = int(rng.integers(2 ** 31))
    fwd_fn = L.alpha_dropout_forward if alpha else L.dropout_forward
    bwd_fn = L.alpha_dropout_backward if alpha else L.dropout_backward

    def fwd(p):
        return fwd_fn(p["x"], 0.3, np.random.default_rng(mask_seed), "train")
    return fwd, (lambda d, cache: {"x": bwd_fn(d, cache)}), {"x": x}


def _softmax_case(rng):
    x = rng.standard_normal((2, 3, 4, 4)) * 3.0

    def fwd(p):
        prob = L.softmax_channels(p["x"])
        return prob, prob
    return fwd, (lambda d, prob: {"x": L.softmax_channels_backward(d, prob)}), {"x": x}


def _loss_case(rng, loss_fn):
    logits = rng.standard_normal((2, 3, 4, 4)) * 2.0
    # mixing with the uniform distribution keeps p >= 1/6; the central
    # difference error of log p grows like h^2 / p^2
    p = 0.5 * L.softmax_channels(logits) + 0.5 / 3
    labels = rng.integers(0, 3, size=(2, 4, 4))
    target = one_hot(labels, 3, dtype=np.float64)

    def fwd(q):
        value, grad = loss_fn(q["p"], target)
        return np.array(value), grad

    return fwd, (lambda d, grad: {"p": d * grad}), {"p": p}


LAYER_CASES = {
    "conv3x3": lambda rng: _conv_case(rng, 3),
    "conv1x1": lambda rng: _conv_case(rng, 1),
    "transposed_conv3x3": lambda rng: _tconv_case(rng, 3),
    "transposed_conv2x2": lambda rng: _tconv_case(rng, 2),
    "maxpool2x2": _maxpool_case,
    "batchnorm_train": lambda rng: _batchnorm_case(rng, "train"),
    "batchnorm_infer": lambda rng: _batchnorm_case(rng, "infer"),
    "relu": lambda rng: _elementwise_case(rng, L.relu_forward, L.relu_backward),
    "selu": lambda rng: _elementwise_case(rng, L.selu_forward, L.selu_backward),
    "dropout": lambda rng: _dropout_case(rng, False),
    "alpha_dropout": lambda rng: _dropout_case(rng, True),
    "softmax": _softmax_case,
    "dice_loss": lambda rng: _loss_case(rng, losses.dice_loss),
    "categorical_cross_entropy": lambda rng: _loss_case(rng, losses.categorical_cross_entropy),
}


def check_layer(kind, seed):
    fwd, bwd, inputs = LAYER_CASES[kind](np.random.default_rng(seed))
    return grad_check(fwd, bwd, inputs, seed=seed)


class _FrozenBranches:
    """Swaps the piecewise kernels for versions that replay the branch
    taken on a reference pass: ReLU/SELU sides and max-pool winners.

    The first forward pass after ``record()`` runs the real kernels and
    stores their choices; every later pass reuses them, so a finite
    difference never straddles a kink and measures the derivative of the
    same smooth piece the analytic backward pass differentiates.
    """

    def __init__(self):
        self.saved = []
        self.replay = False
        self.pos = 0

    def _next(self):
        value = self.saved[self.pos]
        self.pos += 1
        return value

    def relu(self, x):
        if not self.replay:
            out, cache = self.orig["relu_forward"](x)
            self.saved.append(x > 0)
            return out, cache
        keep = self._next()
        return x * keep, np.where(keep, 1.0, -1.0)

    def selu(self, x):
        if not self.replay:
            out, cache = self.orig["selu_forward"](x)
            self.saved.append(x > 0)
            return out, cache
        pos = self._next()
        neg = L.SELU_LAMBDA * L.SELU_ALPHA * np.expm1(np.where(pos, 0.0, x))
        return np.where(pos, L.SELU_LAMBDA * x, neg), (x, neg)

    def pool(self, x):
        if not self.replay:
            out, cache = self.orig["maxpool2x2_forward"](x)
            self.saved.append(cache[1])
            return out, cache
        idx = self._next()
        n, c, h, w = x.shape
        win = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)
        return np.take_along_axis(win, idx[..., None], axis=-1)[..., 0], (x.shape, idx)

    def __enter__(self):
        self.orig = {name: getattr(L, name) for name in ("relu_forward", "selu_forward", "maxpool2x2_forward")}
        L.relu_forward, L.selu_forward, L.maxpool2x2_forward = self.relu, self.selu, self.pool
        return self

    def __exit__(self, *exc):
        for name, fn in self.orig.items():
            setattr(L, name, fn)

    def start_pass(self):
        if self.saved or self.pos:
            self.replay = True
        self.pos = 0


def check_network(variant, seed, max_elements=40, tol=1e-3, order=NETWORK_FD_ORDER):
    """Whole-network check on a 1-stage, 2-filter model with 8x8 inputs.

    Every parameter tensor and the input get up to ``max_elements`` probes.
    ReLU/SELU branches and max-pool winners are frozen at the reference
    point, since with only two filters a perturbation moves enough
    activations that some probe would otherwise straddle a kink.
    """
    from .model import EddyNetConfig, build_model, forward, backward, flat_params

    cfg = EddyNetConfig(variant=variant, stages=1, filters=2, input_size=(8, 8), dropout_rate=0.2)
    rng = np.random.default_rng(seed)
    weights = build_model(cfg, rng, dtype=np.float64)
    for layer in weights.layers.values():
        if layer.bias is not None:
            layer.bias[:] = rng.standard_normal(layer.bias.shape) * 0.1
        if layer.gamma is not None:
            layer.gamma[:] = rng.uniform(0.5, 1.5, layer.gamma.shape)
            layer.beta[:] = rng.standard_normal(layer.beta.shape) * 0.1
    params = flat_params(weights)
    x = rng.standard_normal((2, 1, 8, 8))
    drop_seed = int(rng.integers(2 ** 31))
    frozen = _FrozenBranches()

    def fwd(p):
        for key, value in p.items():
            if key != "input":
                params[key][...] = value
        frozen.start_pass()
        return forward(weights, p["input"], "train", np.random.default_rng(drop_seed))

    def bwd(d, cache):
        dx, grads = backward(weights, cache, d)
        out = {"input": dx}
        for name, g in grads.items():
            for pname, arr in g.items():
                out[f"{name}.{pname}"] = arr
        return out

    inputs = {"input": x}
    inputs.update({k: v.copy() for k, v in params.items()})
    with frozen:
        return grad_check(fwd, bwd, inputs, seed=seed, tol=tol, max_elements=max_elements, order=order)


def run_suite(seeds=range(20), network_seeds=range(3), log=print):
    """Run every layer case on each seed plus the whole-network checks.
    Returns ``True`` when everything passes."""
    ok = True
    for kind in LAYER_CASES:
        worst = 0.0
        failed = []
        for s in seeds:
            rep = check_layer(kind, s)
            worst = max(worst, rep.max_relative_error)
            if not rep.passed:
                failed.append(s)
        ok &= not failed
        log(f"{'PASS' if not failed else 'FAIL'} {kind:28s} max rel err {worst:.2e}"
            + (f" failing seeds {failed}" if failed else ""))
    for variant in ("relu_bn", "selu"):
        for s in network_seeds:
            rep = check_network(variant, s)
            ok &= rep.passed
            log(f"{'PASS' if rep.passed else 'FAIL'} network[{variant}] seed {s:<3d}     max rel err "
                f"{rep.max_relative_error:.2e}")
    return ok
