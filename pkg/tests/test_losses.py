import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from eddynet import losses
from eddynet.data import one_hot
from eddynet.layers import softmax_channels


def test_hard_dice_fixtures():
    a = np.array([[0, 1, 2, 1]])
    assert losses.hard_dice(a, a, 1) == 1.0
    assert losses.hard_dice(np.array([[1, 1, 0, 0]]), np.array([[0, 0, 1, 1]]), 1) == 0.0
    # |P| = 4, |G| = 6, |P & G| = 3
    pred = np.array([1, 1, 1, 1, 0, 0, 0, 0, 0])
    truth = np.array([1, 1, 1, 0, 1, 1, 1, 0, 0])
    assert losses.hard_dice(pred, truth, 1) == 0.6


def test_hard_dice_absent_class_is_one():
    z = np.zeros((3, 3), int)
    assert losses.hard_dice(z, z, 2) == 1.0


def test_uniform_one_pixel_dice_loss():
    p = np.full((1, 3, 1, 1), 1 / 3)
    loss, _ = losses.dice_loss(p, one_hot(np.zeros((1, 1), int)))
    assert abs(loss - (1 - 1 / 6)) < 1e-9


def test_uniform_cce_is_log3():
    p = np.full((2, 3, 4, 4), 1 / 3)
    y = np.random.default_rng(0).integers(0, 3, (2, 4, 4))
    loss, _ = losses.categorical_cross_entropy(p, one_hot(y))
    assert abs(loss - math.log(3)) < 1e-9


def test_cce_clips_confident_mistakes():
    p = np.zeros((1, 3, 1, 1))
    p[0, 1] = 1.0
    loss, grad = losses.categorical_cross_entropy(p, one_hot(np.zeros((1, 1), int)))
    assert math.isclose(loss, -math.log(1e-7))
    assert np.all(grad == 0)


def _fd(fn, p, h=1e-6):
    g = np.zeros_like(p)
    it = np.nditer(p, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = p[i]
        p[i] = old + h
        up = fn(p)[0]
        p[i] = old - h
        dn = fn(p)[0]
        p[i] = old
        g[i] = (up - dn) / (2 * h)
    return g


@pytest.mark.parametrize("loss_fn", [losses.dice_loss, losses.categorical_cross_entropy])
def test_loss_gradient_matches_finite_differences(loss_fn):
    rng = np.random.default_rng(3)
    p = softmax_channels(rng.normal(size=(2, 3, 3, 3)))
    t = one_hot(rng.integers(0, 3, (2, 3, 3)), dtype=np.float64)
    _, g = loss_fn(p, t)
    np.testing.assert_allclose(g, _fd(lambda q: loss_fn(q, t), p.copy()), rtol=1e-6, atol=1e-9)


def test_dice_loss_absent_class_contributes_zero_gradient():
    p = np.zeros((1, 3, 2, 2))
    p[:, 0] = 1.0
    loss, grad = losses.dice_loss(p, one_hot(np.zeros((2, 2), int)))
    assert loss == 0.0
    assert np.all(grad[:, 1:] == 0)


def test_soft_dice_equals_hard_dice_on_one_hot():
    rng = np.random.default_rng(0)
    a, b = rng.integers(0, 3, (2, 5, 5)), rng.integers(0, 3, (2, 5, 5))
    for c in range(3):
        assert math.isclose(losses.soft_dice(one_hot(a), one_hot(b), c), losses.hard_dice(a, b, c))


def test_metric_report_fields():
    truth = np.array([[0, 1], [2, 2]])
    rep = losses.metric_report(truth, truth)
    assert rep.per_class() == (1.0, 1.0, 1.0)
    assert rep.mean_dice == 1.0 and rep.global_accuracy == 1.0
    assert set(rep.as_dict()) >= {"non_eddy", "anticyclonic", "cyclonic", "mean_dice", "global_accuracy"}


def test_shape_mismatch_raises():
    with pytest.raises(ValueError):
        losses.hard_dice(np.zeros((2, 2)), np.zeros((3, 2)), 0)


labels = arrays(np.int64, (2, 4, 4), elements=st.integers(0, 2))


@settings(max_examples=60, deadline=None)
@given(labels, labels)
def test_dice_properties(a, b):
    for c in range(3):
        d = losses.hard_dice(a, b, c)
        assert 0.0 <= d <= 1.0
        assert d == losses.hard_dice(b, a, c)
    assert losses.metric_report(a, a).mean_dice == 1.0


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, (1, 3, 2, 3), elements=st.floats(-5, 5)), labels.map(lambda a: a[:1, :2, :3]))
def test_soft_losses_bounded(logits, y):
    p = softmax_channels(logits)
    d, _ = losses.dice_loss(p, one_hot(y))
    c, _ = losses.categorical_cross_entropy(p, one_hot(y))
    assert 0.0 <= d <= 1.0
    assert c >= 0.0
