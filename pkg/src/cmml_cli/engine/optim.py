"""Adam optimizer over named parameter arrays."""

from dataclasses import dataclass, field
from typing import Dict, Mapping, Tuple

import numpy as np

from cmml_cli.utils.exceptions import OptimizerError

DEFAULT_LR = 1e-4


@dataclass
class AdamState:
    """First/second moments per parameter plus the step counter."""

    lr: float = DEFAULT_LR
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    t: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)


def _readonly(values: np.ndarray) -> np.ndarray:
    values.setflags(write=False)
    return values


def adam_step(
    params: Mapping[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
    state: AdamState,
) -> Tuple[Dict[str, np.ndarray], AdamState]:
    """One bias-corrected Adam update; inputs are left untouched."""
    if set(params) != set(grads):
        missing = sorted(set(params) ^ set(grads))
        raise OptimizerError(f"Parameters and gradients name different sets: {missing[:5]}")
    if state.lr < 0:
        raise OptimizerError(f"Learning rate must be >= 0, got {state.lr}")

    t = state.t + 1
    correction1 = 1.0 - state.beta1**t
    correction2 = 1.0 - state.beta2**t
    new_params: Dict[str, np.ndarray] = {}
    new_m: Dict[str, np.ndarray] = {}
    new_v: Dict[str, np.ndarray] = {}

    for name in sorted(params):
        p = params[name]
        g = np.asarray(grads[name], dtype=np.float64)
        if g.shape != p.shape:
            raise OptimizerError(f"Gradient for '{name}' has shape {g.shape}, parameter {p.shape}")
        m_prev = state.m.get(name, np.zeros_like(p))
        v_prev = state.v.get(name, np.zeros_like(p))
        if m_prev.shape != p.shape or v_prev.shape != p.shape:
            raise OptimizerError(f"Optimizer state for '{name}' does not match shape {p.shape}")

        m = state.beta1 * m_prev + (1.0 - state.beta1) * g
        v = state.beta2 * v_prev + (1.0 - state.beta2) * g * g
        step = (m / correction1) / (np.sqrt(v / correction2) + state.epsilon)
        new_params[name] = _readonly(p - state.lr * step)
        new_m[name] = _readonly(m)
        new_v[name] = _readonly(v)

    new_state = AdamState(
        lr=state.lr,
        beta1=state.beta1,
        beta2=state.beta2,
        epsilon=state.epsilon,
        t=t,
        m=new_m,
        v=new_v,
    )
    return new_params, new_state
