"""Set-resampling evaluation protocol and the ghost-eddy centre check."""

import json
from dataclasses import dataclass
from typing import Callable, Union

import numpy as np

from . import losses
from .data import sanitize
from .model import NetworkWeights, predict_labels

AGGREGATIONS = ("pooled", "per_patch")


@dataclass(frozen=True)
class EvalProtocolConfig:
    n_sets: int = 50
    set_size: int = 360
    patch_size: int = 120
    seed: int = 0
    aggregation: str = "pooled"

    def __post_init__(self):
        if self.n_sets < 1 or self.set_size < 1 or self.patch_size < 1:
            raise ValueError("n_sets, set_size and patch_size must be positive")
        if self.aggregation not in AGGREGATIONS:
            raise ValueError(f"aggregation must be one of {AGGREGATIONS}")


@dataclass(frozen=True)
class GhostEddyRecord:
    row: int
    col: int
    label: int


Predictor = Union[NetworkWeights, Callable[[np.ndarray], np.ndarray]]


def as_predictor(model, batch_size=16):
    """Turn weights into ``f(ssh (n, h, w)) -> labels (n, h, w)``."""
    if isinstance(model, NetworkWeights):
        return lambda ssh: predict_labels(model, ssh[:, None], batch_size)
    return model


def _center_crop(a, size):
    h, w = a.shape
    r, c = (h - size) // 2, (w - size) // 2
    return a[r:r + size, c:c + size]


def evaluate_protocol(model, test_pool, config=EvalProtocolConfig()):
    """Mean and standard deviation of the metrics over random patch sets.

    Every pool patch is centre-cropped to ``patch_size`` and predicted once.
    Each of ``n_sets`` sets draws ``set_size`` distinct patches; the sets
    themselves are drawn independently. With ``pooled`` aggregation the
    per-class dice and accuracy are computed over all pixels of a set; with
    ``per_patch`` they are computed per patch and averaged within the set.
    """
    if len(test_pool) < config.set_size:
        raise ValueError(f"test pool has {len(test_pool)} patches, fewer than set_size {config.set_size}")
    size = config.patch_size
    if any(min(p.ssh.shape) < size for p in test_pool):
        raise ValueError(f"every pool patch must be at least {size}x{size}")
    ssh = np.stack([_center_crop(p.ssh, size) for p in test_pool]).astype(np.float32)
    truth = np.stack([_center_crop(p.mask, size) for p in test_pool])
    pred = np.asarray(as_predictor(model)(ssh))
    if pred.shape != truth.shape:
        raise ValueError(f"predictor returned shape {pred.shape}, expected {truth.shape}")

    rng = np.random.default_rng(config.seed)
    rows = []
    for _ in range(config.n_sets):
        idx = rng.choice(len(test_pool), config.set_size, replace=False)
        if config.aggregation == "pooled":
            rep = losses.metric_report(pred[idx], truth[idx])
            rows.append([*rep.per_class(), rep.global_accuracy])
        else:
            per = [losses.metric_report(pred[i], truth[i]) for i in idx]
            rows.append(np.mean([[*r.per_class(), r.global_accuracy] for r in per], axis=0))
    rows = np.asarray(rows, dtype=np.float64)
    mean = rows.mean(axis=0)
    std = rows.std(axis=0)
    # mean dice of each set, then its spread across sets
    set_dice = rows[:, :3].mean(axis=1)
    return losses.MetricReport(
        non_eddy=float(mean[0]), anticyclonic=float(mean[1]), cyclonic=float(mean[2]),
        mean_dice=float(mean[:3].mean()), global_accuracy=float(mean[3]),
        std={"non_eddy": float(std[0]), "anticyclonic": float(std[1]), "cyclonic": float(std[2]),
             "mean_dice": float(set_dice.std()), "global_accuracy": float(std[3])})


def report_json(report, aggregation="pooled"):
    """Table-1 shaped JSON text: per-class dice, mean dice, accuracy."""
    std = report.std or {}

    def cell(name):
        return {"mean": getattr(report, name), "std": std.get(name, 0.0)}
    doc = {
        "aggregation": aggregation,
        "dice": {c: cell(c) for c in ("anticyclonic", "cyclonic", "non_eddy")},
        "mean_dice": cell("mean_dice"),
        "global_accuracy": cell("global_accuracy"),
    }
    return json.dumps(doc, indent=2)


def _pad_to_multiple(values, step):
    h, w = values.shape
    ph, pw = (-h) % step, (-w) % step
    if ph == 0 and pw == 0:
        return values
    return np.pad(values, ((0, ph), (0, pw)), mode="symmetric")


def predict_grid(model, grid, step=8):
    """Label map for a whole grid. The sanitized field is mirror-padded at
    the bottom/right to a multiple of ``step`` and the prediction is cropped
    back."""
    if isinstance(model, NetworkWeights):
        step = 2 ** model.config.stages
    values = sanitize(grid).values
    padded = _pad_to_multiple(values, step)
    labels = np.asarray(as_predictor(model)(padded[None].astype(np.float32)))[0]
    return labels[:values.shape[0], :values.shape[1]]


def ghost_check(model, grid, ghosts):
    """Fraction of ghost centres whose predicted label equals their class.

    Returns ``{1: rate, 2: rate}``; a class without ghosts maps to ``None``.
    """
    ghosts = [g if isinstance(g, GhostEddyRecord) else GhostEddyRecord(*g) for g in ghosts]
    h, w = grid.shape
    for g in ghosts:
        if not (0 <= g.row < h and 0 <= g.col < w):
            raise ValueError(f"ghost centre ({g.row}, {g.col}) outside the {h}x{w} grid")
        if g.label not in (1, 2):
            raise ValueError(f"ghost class must be 1 or 2, got {g.label}")
    rates = {1: None, 2: None}
    if not ghosts:
        return rates
    labels = predict_grid(model, grid)
    for cls in (1, 2):
        hits = [labels[g.row, g.col] == cls for g in ghosts if g.label == cls]
        if hits:
            rates[cls] = float(np.mean(hits))
    return rates
