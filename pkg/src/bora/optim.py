"""SGD and AdamW updates over :class:`~bora.adapters.AdapterParams`.

Updates return new parameter objects; inputs are never modified.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .adapters import AdapterParams
from .exceptions import NumericError
from .grad import Gradients

__all__ = ["OptimState", "sgd_step", "adamw_step", "linear_warmup_decay"]


def _check_grads(grads: Gradients) -> dict[str, np.ndarray]:
    arrays = grads.arrays()
    for name, g in arrays.items():
        if not np.all(np.isfinite(g)):
            raise NumericError(f"gradient for {name} contains non-finite entries")
    return arrays


def sgd_step(params: AdapterParams, grads: Gradients, lr: float) -> AdapterParams:
    """Plain gradient descent: ``p <- p - lr * g``."""
    if not lr > 0:
        raise ValueError(f"lr must be positive, got {lr}")
    garr = _check_grads(grads)
    new = params.copy()
    for name in params.names():
        setattr(new, name, getattr(params, name) - lr * garr[name])
    return new


@dataclass
class OptimState:
    """AdamW hyperparameters plus bias-corrected moment estimates.

    Moments are created lazily (zeros shaped like each parameter) on the
    first step.
    """

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    step: int = 0
    first_moment: dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ValueError(f"betas must lie in [0, 1), got {self.beta1}, {self.beta2}")
        if not self.eps > 0 or self.weight_decay < 0:
            raise ValueError("eps must be positive and weight_decay non-negative")


def adamw_step(
    params: AdapterParams,
    grads: Gradients,
    state: OptimState,
    lr: float | None = None,
) -> tuple[AdapterParams, OptimState]:
    """One AdamW update with decoupled weight decay.

    Decay is applied first, ``p <- p - lr * wd * p``, then the bias-corrected
    adaptive step ``p <- p - lr * m_hat / (sqrt(v_hat) + eps)``. ``lr``
    overrides ``state.lr`` for this step only (schedules live in the caller).
    """
    garr = _check_grads(grads)
    lr = state.lr if lr is None else lr
    step = state.step + 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**step
    c2 = 1.0 - b2**step

    new = params.copy()
    m_new, v_new = {}, {}
    for name in params.names():
        p = getattr(params, name)
        g = garr[name]
        m = state.first_moment.get(name, np.zeros_like(p))
        v = state.second_moment.get(name, np.zeros_like(p))
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        if state.weight_decay:
            p = p - lr * state.weight_decay * p
        p = p - lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        setattr(new, name, p)
        m_new[name], v_new[name] = m, v

    new_state = OptimState(
        lr=state.lr,
        beta1=b1,
        beta2=b2,
        eps=state.eps,
        weight_decay=state.weight_decay,
        step=step,
        first_moment=m_new,
        second_moment=v_new,
    )
    return new, new_state


def linear_warmup_decay(step: int, total: int, peak: float, warmup: int = 10) -> float:
    """Learning rate for 0-based ``step``: linear ramp over ``warmup`` steps, then linear decay to 0."""
    warmup = min(warmup, total)
    if step < warmup:
        return peak * (step + 1) / warmup
    remaining = total - warmup
    if remaining <= 0:
        return peak
    return peak * (total - step) / remaining
