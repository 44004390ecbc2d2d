"""Dice / cross-entropy losses and segmentation metrics.

Class ids: 0 non-eddy (also land / no data), 1 anticyclonic, 2 cyclonic.
"""

from dataclasses import dataclass, asdict
from typing import Optional

import numpy as np

NON_EDDY, ANTICYCLONIC, CYCLONIC = 0, 1, 2
CLASS_NAMES = ("non_eddy", "anticyclonic", "cyclonic")
N_CLASSES = 3
CCE_CLIP = 1e-7


def _same_shape(a, b):
    if np.shape(a) != np.shape(b):
        raise ValueError(f"shape mismatch: {np.shape(a)} vs {np.shape(b)}")


def hard_dice(pred_labels, truth_labels, class_id):
    """``2|P & G| / (|P| + |G|)`` for one class; 1.0 when the class is
    absent from both masks."""
    _same_shape(pred_labels, truth_labels)
    p = np.asarray(pred_labels) == class_id
    g = np.asarray(truth_labels) == class_id
    total = int(p.sum()) + int(g.sum())
    if total == 0:
        return 1.0
    return 2.0 * int(np.logical_and(p, g).sum()) / total


def _soft_terms(prob, target):
    _same_shape(prob, target)
    p = np.asarray(prob, dtype=np.float64)
    g = np.asarray(target, dtype=np.float64)
    axes = (0, 2, 3)
    inter = (p * g).sum(axis=axes)
    denom = p.sum(axis=axes) + g.sum(axis=axes)
    return p, g, inter, denom


def soft_dice(prob, target, class_id):
    """``2 sum(p*g) / (sum(p) + sum(g))`` over every pixel of the batch for
    channel ``class_id``, without binarizing ``p``. 0/0 counts as 1."""
    _, _, inter, denom = _soft_terms(prob, target)
    if denom[class_id] == 0:
        return 1.0
    return float(2.0 * inter[class_id] / denom[class_id])


def dice_loss(prob, target):
    """``1 - mean_c soft_dice_c`` and its gradient w.r.t. ``prob``."""
    p, g, inter, denom = _soft_terms(prob, target)
    empty = denom == 0  # NaN must fall through, not count as empty
    safe = np.where(empty, 1.0, denom)
    dice = np.where(empty, 1.0, 2.0 * inter / safe)
    n_classes = p.shape[1]
    loss = 1.0 - dice.mean()
    # d dice_c / d p_i = 2 (g_i S_c - I_c) / S_c^2
    coef = np.where(empty, 0.0, 2.0 / safe)[None, :, None, None]
    grad = -(coef * (g - (inter / safe)[None, :, None, None])) / n_classes
    return float(loss), grad.astype(np.asarray(prob).dtype, copy=False)


def categorical_cross_entropy(prob, target):
    """Mean over pixels of ``-sum_c g_c log p_c`` with ``p`` clipped to
    ``[1e-7, 1 - 1e-7]``. Returns ``(loss, grad)``."""
    _same_shape(prob, target)
    p = np.asarray(prob, dtype=np.float64)
    g = np.asarray(target, dtype=np.float64)
    n_pix = p.shape[0] * p.shape[2] * p.shape[3]
    pc = np.clip(p, CCE_CLIP, 1.0 - CCE_CLIP)
    loss = -(g * np.log(pc)).sum() / n_pix
    inside = (p >= CCE_CLIP) & (p <= 1.0 - CCE_CLIP)
    grad = np.where(inside, -g / pc, 0.0) / n_pix
    return float(loss), grad.astype(np.asarray(prob).dtype, copy=False)


LOSSES = {"dice": dice_loss, "cce": categorical_cross_entropy}


def global_accuracy(pred_labels, truth_labels):
    _same_shape(pred_labels, truth_labels)
    return float(np.mean(np.asarray(pred_labels) == np.asarray(truth_labels)))


@dataclass
class MetricReport:
    non_eddy: float
    anticyclonic: float
    cyclonic: float
    mean_dice: float
    global_accuracy: float
    std: Optional[dict] = None

    def per_class(self):
        return (self.non_eddy, self.anticyclonic, self.cyclonic)

    def as_dict(self):
        return asdict(self)


def metric_report(pred_labels, truth_labels):
    """Per-class hard dice, their mean, and global accuracy."""
    dices = [hard_dice(pred_labels, truth_labels, c) for c in range(N_CLASSES)]
    return MetricReport(*dices, mean_dice=float(np.mean(dices)),
                        global_accuracy=global_accuracy(pred_labels, truth_labels))
