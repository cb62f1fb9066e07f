"""Adam optimizer over named parameter dictionaries."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .params import ParamStore


@dataclass
class AdamState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: ParamStore, grads: dict, state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8
              ) -> tuple[ParamStore, AdamState]:
    """One in-place Adam update; parameters without gradients stay untouched."""
    state.step += 1
    t = state.step
    for name, tensor in params.tensors.items():
        g = grads.get(name)
        if g is None:
            continue
        m = state.m.setdefault(name, np.zeros_like(tensor))
        v = state.v.setdefault(name, np.zeros_like(tensor))
        m += (1.0 - beta1) * (g - m)
        v += (1.0 - beta2) * (g * g - v)
        m_hat = m / (1.0 - beta1 ** t)
        v_hat = v / (1.0 - beta2 ** t)
        tensor -= lr * m_hat / (np.sqrt(v_hat) + eps)
    return params, state
