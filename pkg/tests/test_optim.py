import numpy as np
import pytest

from eddynet.optim import AdamState, adam_step


def test_first_step_moves_by_learning_rate():
    p = {"w": np.array([1.0, -2.0, 3.0])}
    adam_step(p, {"w": np.array([0.5, -4.0, 1e-3])}, AdamState(learning_rate=0.1))
    # bias correction makes the first step lr * sign(g) up to epsilon
    np.testing.assert_allclose(p["w"], [0.9, -1.9, 2.9], rtol=1e-4)


def test_matches_hand_rolled_recurrence():
    rng = np.random.default_rng(0)
    p = {"a": rng.normal(size=5)}
    ref = p["a"].copy()
    m = v = np.zeros(5)
    state = AdamState(learning_rate=0.01)
    for t in range(1, 6):
        g = rng.normal(size=5)
        adam_step(p, {"a": g}, state)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        ref = ref - 0.01 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
    np.testing.assert_allclose(p["a"], ref, rtol=1e-12)
    assert state.step_count == 5


def test_zero_learning_rate_leaves_params():
    p = {"a": np.ones(3)}
    adam_step(p, {"a": np.ones(3)}, AdamState(learning_rate=0.0))
    np.testing.assert_array_equal(p["a"], 1.0)


def test_shape_mismatch():
    with pytest.raises(ValueError):
        adam_step({"a": np.ones(3)}, {"a": np.ones(2)}, AdamState())


def test_minimizes_quadratic():
    p = {"x": np.array([5.0, -3.0])}
    state = AdamState(learning_rate=0.1)
    for _ in range(500):
        adam_step(p, {"x": 2 * p["x"]}, state)
    assert np.abs(p["x"]).max() < 1e-2
