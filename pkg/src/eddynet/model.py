"""EddyNet and EddyNet_S: a small U-shaped encoder-decoder.

Encoder stage ``s`` runs two 3x3 convolutions (each followed by BN+ReLU or
by SELU), keeps the result for the skip connection, then dropout and 2x2
max pooling. A two-convolution bottleneck sits at the bottom. Each decoder
stage applies dropout, a stride-2 transposed convolution, concatenates the
matching skip tensor and runs two more 3x3 convolutions. A 1x1 convolution
and a channel softmax give per-pixel class probabilities.

The SELU variant uses alpha dropout and keeps batch normalization after
every max pooling, transposed convolution and concatenation.
"""

import copy
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np

from . import layers as L

REFERENCE_PARAMETER_COUNT = 177_571

VARIANTS = ("relu_bn", "selu")
ACT_ORDERS = ("conv_bn_act", "conv_act_bn")


@dataclass(frozen=True)
class EddyNetConfig:
    variant: str = "relu_bn"
    stages: int = 3
    filters: int = 32
    dropout_rate: float = 0.2
    input_size: Tuple[int, int] = (128, 128)
    classes: int = 3
    in_channels: int = 1
    up_kernel: int = 3
    act_order: str = "conv_bn_act"
    bn_momentum: float = L.BN_MOMENTUM

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.act_order not in ACT_ORDERS:
            raise ValueError(f"act_order must be one of {ACT_ORDERS}, got {self.act_order!r}")
        if self.stages < 1 or self.filters < 1:
            raise ValueError("stages and filters must be at least 1")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError(f"dropout_rate must lie in [0, 1), got {self.dropout_rate}")
        if self.up_kernel < 2:
            raise ValueError("up_kernel must be at least 2")
        if not 0.0 <= self.bn_momentum <= 1.0:
            raise ValueError(f"bn_momentum must lie in [0, 1], got {self.bn_momentum}")
        object.__setattr__(self, "input_size", tuple(int(v) for v in self.input_size))
        check_input_size(self.input_size, self.stages)

    @property
    def init_rule(self):
        return "he" if self.variant == "relu_bn" else "lecun"


def check_input_size(size, stages):
    step = 2 ** stages
    if len(size) != 2 or any(v <= 0 or v % step for v in size):
        raise ValueError(f"input size {tuple(size)} must be positive multiples of {step} "
                         f"for a {stages}-stage network")


@dataclass
class LayerParams:
    kind: str  # conv3x3, conv1x1, transposed_conv, batchnorm
    weight: Optional[np.ndarray] = None
    bias: Optional[np.ndarray] = None
    gamma: Optional[np.ndarray] = None
    beta: Optional[np.ndarray] = None
    moving_mean: Optional[np.ndarray] = None
    moving_var: Optional[np.ndarray] = None
    trainable: bool = True

    def arrays(self):
        """``(name, array, trainable)`` triples in serialization order."""
        if self.kind == "batchnorm":
            return [("gamma", self.gamma, True), ("beta", self.beta, True),
                    ("moving_mean", self.moving_mean, False), ("moving_var", self.moving_var, False)]
        return [("weight", self.weight, True), ("bias", self.bias, True)]

    def count(self):
        trainable = sum(a.size for _, a, t in self.arrays() if t and self.trainable)
        total = sum(a.size for _, a, _ in self.arrays())
        return trainable, total - trainable


@dataclass
class NetworkWeights:
    config: EddyNetConfig
    layers: Dict[str, LayerParams]

    @property
    def trainable_parameter_count(self):
        return sum(p.count()[0] for p in self.layers.values())

    @property
    def total_parameter_count(self):
        return sum(sum(p.count()) for p in self.layers.values())

    def copy(self):
        return copy.deepcopy(self)


def layer_plan(cfg):
    """Ordered ``(name, kind, shapes)`` following the forward pass.

    ``shapes`` maps array name to shape.
    """
    f = cfg.filters
    bn = cfg.variant == "relu_bn"
    plan = []

    def conv(name, cin, cout, k=3):
        plan.append((name, f"conv{k}x{k}", {"weight": (cout, cin, k, k), "bias": (cout,)}))

    def norm(name, c):
        plan.append((name, "batchnorm", {"gamma": (c,), "beta": (c,), "moving_mean": (c,), "moving_var": (c,)}))

    def block(prefix, cin):
        conv(f"{prefix}_conv1", cin, f)
        if bn:
            norm(f"{prefix}_bn1", f)
        conv(f"{prefix}_conv2", f, f)
        if bn:
            norm(f"{prefix}_bn2", f)

    for s in range(1, cfg.stages + 1):
        block(f"enc{s}", cfg.in_channels if s == 1 else f)
        if not bn:
            norm(f"enc{s}_pool_bn", f)
    block("bott", f)
    k = cfg.up_kernel
    for s in range(cfg.stages, 0, -1):
        plan.append((f"dec{s}_up", "transposed_conv", {"weight": (f, f, k, k), "bias": (f,)}))
        if not bn:
            norm(f"dec{s}_up_bn", f)
            norm(f"dec{s}_cat_bn", 2 * f)
        block(f"dec{s}", 2 * f)
    conv("head", f, cfg.classes, k=1)
    return plan


def build_model(config, rng, dtype=np.float32):
    """Fresh weights: truncated-Gaussian kernels, zero biases, unit BN scale,
    BN moving statistics at mean 0 / variance 1."""
    layers = {}
    for name, kind, shapes in layer_plan(config):
        if kind == "batchnorm":
            c = shapes["gamma"][0]
            layers[name] = LayerParams(kind, gamma=np.ones(c, dtype), beta=np.zeros(c, dtype),
                                       moving_mean=np.zeros(c, dtype), moving_var=np.ones(c, dtype))
            continue
        wshape = shapes["weight"]
        if kind == "transposed_conv":
            fan_in = wshape[0] * wshape[2] * wshape[3]
        else:
            fan_in = wshape[1] * wshape[2] * wshape[3]
        w = L.init_truncated_gaussian(wshape, config.init_rule, rng, fan_in=fan_in, dtype=dtype)
        layers[name] = LayerParams(kind, weight=w, bias=np.zeros(shapes["bias"], dtype))
    return NetworkWeights(config, layers)


def flat_params(weights):
    """Trainable arrays keyed ``"layer.param"``; values are the live arrays."""
    return {f"{name}.{pname}": arr
            for name, layer in weights.layers.items()
            for pname, arr, trainable in layer.arrays() if trainable and layer.trainable}


def flatten_grads(grads):
    return {f"{name}.{pname}": g for name, gs in grads.items() for pname, g in gs.items()}


def parameter_table(weights):
    """Rows ``(name, kind, shapes, trainable, non_trainable)``."""
    rows = []
    for name, layer in weights.layers.items():
        shapes = " ".join(f"{p}{tuple(a.shape)}" for p, a, _ in layer.arrays())
        rows.append((name, layer.kind, shapes, *layer.count()))
    return rows


def _attribute_residual(rows, residual):
    # smallest multiple of a single layer's size that explains the residual
    for count in (1, 2, 3, 4):
        for name, kind, shapes, tr, nt in rows:
            size = tr + nt
            if size and size * count == abs(residual):
                same = [r[0] for r in rows if r[1] == kind and r[3] + r[4] == size]
                return count, kind, size, same
    return None


def parameter_report(weights, reference=REFERENCE_PARAMETER_COUNT):
    """Text table of per-layer counts reconciled against ``reference``."""
    rows = parameter_table(weights)
    lines = [f"{'layer':16s} {'kind':16s} {'trainable':>9s} {'moving':>7s}  arrays"]
    for name, kind, shapes, tr, nt in rows:
        lines.append(f"{name:16s} {kind:16s} {tr:9d} {nt:7d}  {shapes}")
    trainable = weights.trainable_parameter_count
    total = weights.total_parameter_count
    lines.append(f"trainable parameters: {trainable:,}")
    lines.append(f"total parameters (incl. BN moving statistics): {total:,}")
    if reference is None:
        return "\n".join(lines)
    if reference in (trainable, total):
        which = "total" if total == reference else "trainable"
        lines.append(f"reference {reference:,}: exact match ({which} count)")
        return "\n".join(lines)
    residual = total - reference
    lines.append(f"reference {reference:,}: residual {residual:+,} (total count)")
    hit = _attribute_residual(rows, residual)
    if hit:
        count, kind, size, names = hit
        lines.append(f"residual = {count} x {kind} layer of {size} parameters; "
                     f"candidates: {', '.join(names)}")
    else:
        lines.append("residual does not match any whole number of layers")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# forward / backward


def forward(weights, x, mode="infer", rng=None):
    """Class probabilities ``(n, classes, h, w)`` and a cache for backward.

    In train mode BN uses batch statistics (and updates its moving
    statistics in place) and dropout draws masks from ``rng``.
    """
    cfg = weights.config
    x = np.asarray(x)
    if x.ndim != 4 or x.shape[1] != cfg.in_channels:
        raise L.ShapeError(f"input shape {x.shape} does not match (n, {cfg.in_channels}, h, w)")
    check_input_size(x.shape[2:], cfg.stages)
    if mode not in ("train", "infer"):
        raise ValueError(f"unknown mode {mode!r}")
    if mode == "train" and cfg.dropout_rate > 0 and rng is None:
        raise ValueError("train mode with dropout needs an rng")
    layers = weights.layers
    selu = cfg.variant == "selu"
    tape = []

    def conv(h, name):
        p = layers[name]
        out, c = L.conv2d_forward(h, p.weight, p.bias)
        tape.append(("conv", name, c))
        return out

    def up(h, name):
        p = layers[name]
        out, c = L.transposed_conv2d_forward(h, p.weight, p.bias)
        tape.append(("conv_t", name, c))
        return out

    def norm(h, name):
        p = layers[name]
        out, c = L.batchnorm_forward(h, p.gamma, p.beta, p.moving_mean, p.moving_var, mode,
                                     momentum=cfg.bn_momentum)
        tape.append(("bn", name, c))
        return out

    def act(h):
        if selu:
            out, c = L.selu_forward(h)
            tape.append(("selu", None, c))
        else:
            out, c = L.relu_forward(h)
            tape.append(("relu", None, c))
        return out

    def drop(h):
        fn = L.alpha_dropout_forward if selu else L.dropout_forward
        out, c = fn(h, cfg.dropout_rate, rng, mode)
        tape.append(("alpha_dropout" if selu else "dropout", None, c))
        return out

    def block(h, prefix):
        for i in (1, 2):
            h = conv(h, f"{prefix}_conv{i}")
            if selu:
                h = act(h)
            elif cfg.act_order == "conv_bn_act":
                h = act(norm(h, f"{prefix}_bn{i}"))
            else:
                h = norm(act(h), f"{prefix}_bn{i}")
        return h

    skips = {}
    h = x
    for s in range(1, cfg.stages + 1):
        h = block(h, f"enc{s}")
        skips[s] = h
        tape.append(("skip", s, None))
        h = drop(h)
        h, c = L.maxpool2x2_forward(h)
        tape.append(("pool", None, c))
        if selu:
            h = norm(h, f"enc{s}_pool_bn")
    h = block(h, "bott")
    for s in range(cfg.stages, 0, -1):
        h = drop(h)
        h = up(h, f"dec{s}_up")
        if selu:
            h = norm(h, f"dec{s}_up_bn")
        tape.append(("concat", s, h.shape[1]))
        h = L.concat_channels(h, skips.pop(s))
        if selu:
            h = norm(h, f"dec{s}_cat_bn")
        h = block(h, f"dec{s}")
    logits = conv(h, "head")
    prob = L.softmax_channels(logits)
    return prob, {"tape": tape, "prob": prob}


def backward(weights, cache, grad_prob):
    """Gradients of a scalar loss given ``d loss / d probabilities``.

    Returns ``(grad_input, grads)`` with ``grads[layer][param]`` aligned with
    the trainable arrays of ``weights``.
    """
    prob = cache["prob"]
    if grad_prob.shape != prob.shape:
        raise L.ShapeError(f"gradient shape {grad_prob.shape} != output shape {prob.shape}")
    g = L.softmax_channels_backward(grad_prob, prob)
    grads = {}
    skip_grads = {}
    for op, name, c in reversed(cache["tape"]):
        if op == "conv":
            g, dw, db = L.conv2d_backward(g, c)
            grads[name] = {"weight": dw, "bias": db}
        elif op == "conv_t":
            g, dw, db = L.transposed_conv2d_backward(g, c)
            grads[name] = {"weight": dw, "bias": db}
        elif op == "bn":
            g, dg, db = L.batchnorm_backward(g, c)
            grads[name] = {"gamma": dg, "beta": db}
        elif op == "relu":
            g = L.relu_backward(g, c)
        elif op == "selu":
            g = L.selu_backward(g, c)
        elif op == "dropout":
            g = L.dropout_backward(g, c)
        elif op == "alpha_dropout":
            g = L.alpha_dropout_backward(g, c)
        elif op == "pool":
            g = L.maxpool2x2_backward(g, c)
        elif op == "concat":
            skip_grads[name] = g[:, c:]
            g = np.ascontiguousarray(g[:, :c])
        elif op == "skip":
            g = g + skip_grads.pop(name)
    ordered = {name: grads[name] for name in weights.layers if name in grads}
    return g, ordered


def predict_proba(weights, x, batch_size=16):
    """Infer-mode probabilities for ``(n, 1, h, w)`` or ``(n, h, w)`` input."""
    x = np.asarray(x, dtype=np.float32)
    if x.ndim == 3:
        x = x[:, None]
    out = [forward(weights, x[i:i + batch_size], "infer")[0] for i in range(0, len(x), batch_size)]
    return np.concatenate(out) if out else np.zeros((0, weights.config.classes) + x.shape[2:], np.float32)


def predict_labels(weights, x, batch_size=16):
    return predict_proba(weights, x, batch_size).argmax(axis=1).astype(np.uint8)
