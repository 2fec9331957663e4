"""Adam optimizer with bias correction, operating on plain float64 arrays.

State lives in an `AdamState` holding first/second moment estimates per
parameter plus the shared step counter, so it can be checkpointed and
restored exactly.  `adam_step` mutates parameter arrays in place.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeError


class AdamState:
    """Moment estimates for one named parameter set."""

    def __init__(self, params: dict[str, np.ndarray]):
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.step = 0


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
              state: AdamState, lr: float, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> None:
    """One Adam update; modifies `params` and `state` in place.

    Bias-corrected form: with zero initial moments the first step moves each
    coordinate by about lr * sign(grad).
    """
    if set(params) != set(grads) or set(params) != set(state.m):
        raise ShapeError("adam_step: parameter, gradient and state keys differ")
    state.step += 1
    t = state.step
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for k, p in params.items():
        g = grads[k]
        if g.shape != p.shape:
            raise ShapeError(f"adam_step: gradient shape {g.shape} != parameter shape {p.shape} for {k!r}")
        m = state.m[k]
        v = state.v[k]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
