from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import DivergenceError, ShapeMismatchError


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    @classmethod
    def for_params(cls, params, **hyper):
        return cls(m=[np.zeros_like(p) for p in params], v=[np.zeros_like(p) for p in params], **hyper)


def adam_step(params, grads, state: AdamState):
    """One bias-corrected Adam update, applied to ``params`` in place.

    Returns ``(params, state)`` for convenience; both are the objects passed in.
    """
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    if not (len(params) == len(grads) == len(state.m) == len(state.v)):
        raise ShapeMismatchError("params, grads and moment lists differ in length")
    for p, g, m in zip(params, grads, state.m):
        if p.shape != g.shape or p.shape != m.shape:
            raise ShapeMismatchError(f"shape mismatch: param {p.shape}, grad {g.shape}, moment {m.shape}")
        if not np.isfinite(g).all():
            raise DivergenceError("non-finite gradient passed to adam_step")
    if state.t < 0:
        raise ValueError("Adam step count must be non-negative")

    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        if not np.isfinite(p).all():
            raise DivergenceError("Adam update produced non-finite parameters")
    return params, state
