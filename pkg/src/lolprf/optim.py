"""AdamW over a name -> array parameter dict."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Tuple

import numpy as np

from .core import ContractViolation


@dataclass
class AdamWState:
    step: int = 0
    exp_avg: Dict[str, np.ndarray] = field(default_factory=dict)
    exp_avg_sq: Dict[str, np.ndarray] = field(default_factory=dict)


def adamw_update(params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray], state: AdamWState,
                 lr: float, betas: Tuple[float, float] = (0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 0.01) -> Tuple[Dict[str, np.ndarray], AdamWState]:
    """One decoupled-weight-decay Adam step. Inputs are not modified."""
    beta1, beta2 = betas
    step = state.step + 1
    bias1 = 1.0 - beta1 ** step
    bias2 = 1.0 - beta2 ** step
    new_params, new_m, new_v = {}, {}, {}
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ContractViolation(f"gradient for {name} has shape {g.shape}, param has {p.shape}")
        m = state.exp_avg.get(name, np.zeros_like(p))
        v = state.exp_avg_sq.get(name, np.zeros_like(p))
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * (g * g)
        denom = np.sqrt(v / bias2) + eps
        new_params[name] = p * (1.0 - lr * weight_decay) - lr * (m / bias1) / denom
        new_m[name] = m
        new_v[name] = v
    return new_params, AdamWState(step, new_m, new_v)
