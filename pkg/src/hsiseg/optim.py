"""Nesterov-accelerated adaptive-moment (Nadam) parameter updates.

The variant with constant momentum schedule: with step count t (1-based),

    m_t = b1 m_{t-1} + (1 - b1) g
    v_t = b2 v_{t-1} + (1 - b2) g^2
    mhat = b1 m_t / (1 - b1^(t+1)) + (1 - b1) g / (1 - b1^t)
    vhat = v_t / (1 - b2^t)
    theta -= lr * mhat / (sqrt(vhat) + eps)

The lookahead lives in mhat, which mixes the bias-corrected first moment
with the current gradient.
"""

from dataclasses import dataclass, field

import numpy as np


@dataclass
class NadamState:
    """Optimizer hyperparameters plus per-parameter moment accumulators."""

    learning_rate: float
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ValueError("betas must lie in [0, 1)")


def nadam_step(state, params, grads):
    """Apply one Nadam update to each parameter array in place.

    params and grads are parallel lists of ndarrays; moment accumulators
    are created lazily on the first call.  Returns (params, state).
    """
    if len(params) != len(grads):
        raise ValueError("params and grads must have equal length")
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    if len(state.m) != len(params):
        raise ValueError("optimizer state does not match parameter list")

    state.t += 1
    t = state.t
    b1, b2 = state.beta1, state.beta2
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise ValueError("gradient shape does not match parameter shape")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        m_hat = b1 * m / (1.0 - b1 ** (t + 1)) + (1.0 - b1) * g / (1.0 - b1 ** t)
        v_hat = v / (1.0 - b2 ** t)
        p -= state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)
    return params, state
