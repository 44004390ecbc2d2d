"""ADAM optimizer over a flat ``{key: array}`` parameter dictionary."""

from dataclasses import dataclass, field

import numpy as np


@dataclass
class AdamState:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    first_moment: dict = field(default_factory=dict)
    second_moment: dict = field(default_factory=dict)


def adam_step(params, grads, state):
    """Bias-corrected ADAM update, applied to ``params`` in place.

    ``params`` and ``grads`` share keys; keys missing from ``grads`` are
    left alone. Returns ``(params, state)``.
    """
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for key, g in grads.items():
        p = params[key]
        if g.shape != p.shape:
            raise ValueError(f"gradient for {key!r} has shape {g.shape}, parameter has {p.shape}")
        m = state.first_moment.get(key)
        if m is None:
            m = state.first_moment[key] = np.zeros_like(p)
            state.second_moment[key] = np.zeros_like(p)
        v = state.second_moment[key]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= (state.learning_rate * (m / c1) / (np.sqrt(v / c2) + state.epsilon)).astype(p.dtype)
    return params, state
