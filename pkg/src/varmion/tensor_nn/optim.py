"""Bias-corrected Adam as a pure function of parameter, gradient and moment arrays."""
from __future__ import annotations

import numpy as np

from .layers import MIN_RBF_WIDTH, ParameterStore


def adam_step(params: dict, grads: dict, m: dict, v: dict, lr: float, beta1: float = 0.9, beta2: float = 0.999,
              eps_adam: float = 1e-8, step_index: int = 1):
    """One Adam update. Returns new ``(params, m, v)`` dicts; the inputs are not modified."""
    if step_index < 1:
        raise ValueError("step_index starts at 1")
    new_p, new_m, new_v = {}, {}, {}
    c1 = 1.0 - beta1**step_index
    c2 = 1.0 - beta2**step_index
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {name!r} {p.shape}")
        mi = beta1 * m.get(name, np.zeros_like(p)) + (1.0 - beta1) * g
        vi = beta2 * v.get(name, np.zeros_like(p)) + (1.0 - beta2) * g * g
        new_p[name] = p - lr * (mi / c1) / (np.sqrt(vi / c2) + eps_adam)
        new_m[name], new_v[name] = mi, vi
    return new_p, new_m, new_v


def apply_adam(store: ParameterStore, lr: float, beta1=0.9, beta2=0.999, eps_adam=1e-8) -> None:
    """Advance ``store`` by one Adam step using the gradients currently held on its tensors."""
    store.step += 1
    params = store.arrays()
    new_p, store.adam_m, store.adam_v = adam_step(params, store.grads(), store.adam_m, store.adam_v,
                                                 lr, beta1, beta2, eps_adam, store.step)
    for name, value in new_p.items():
        if name.endswith(".widths"):
            # the RBF output depends on sigma^2 only; keep the stored width positive
            value = np.maximum(np.abs(value), MIN_RBF_WIDTH)
        store.params[name].data = value
