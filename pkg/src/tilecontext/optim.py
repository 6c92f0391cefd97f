"""AdamW with decoupled weight decay, plus the cosine schedule multiplier."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation
from .tensor import Tensor


@dataclass
class AdamWState:
    """Per-parameter moment estimates and shared hyperparameters."""
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0

    @classmethod
    def for_param(cls, param: Tensor, **hp) -> "AdamWState":
        return cls(m=np.zeros_like(param.data), v=np.zeros_like(param.data), **hp)


def adamw_step(param: Tensor, grad: np.ndarray, state: AdamWState,
               lr_scale: float = 1.0) -> Tensor:
    """One bias-corrected AdamW update, in place on the parameter buffer.

    Weight decay is decoupled: it scales the parameter directly and never
    touches the moment estimates. ``lr_scale`` is the external schedule
    multiplier (cosine decay lives outside the update rule).
    """
    if grad.shape != param.shape:
        raise ContractViolation(
            f"adamw_step: grad shape {grad.shape} != param shape {param.shape}")
    if state.m.shape != param.shape or state.v.shape != param.shape:
        raise ContractViolation("adamw_step: moment shapes do not match param")
    state.step += 1
    t = state.step
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * (grad * grad)
    m_hat = state.m / (1.0 - state.beta1 ** t)
    v_hat = state.v / (1.0 - state.beta2 ** t)
    lr = state.lr * lr_scale
    param.data -= lr * (m_hat / (np.sqrt(v_hat) + state.eps))
    param.data -= lr * state.weight_decay * param.data
    return param


class AdamW:
    """Optimizer over a name -> parameter dict."""

    def __init__(self, params: dict[str, Tensor], lr=1e-4, beta1=0.9,
                 beta2=0.999, eps=1e-8, weight_decay=0.0):
        self.params = params
        self.states = {
            name: AdamWState.for_param(p, lr=lr, beta1=beta1, beta2=beta2,
                                       eps=eps, weight_decay=weight_decay)
            for name, p in params.items()
        }

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def step(self, lr_scale: float = 1.0):
        for name, p in self.params.items():
            if p.grad is None:
                continue
            adamw_step(p, p.grad, self.states[name], lr_scale=lr_scale)


def cosine_decay(step: int, total_steps: int) -> float:
    """Schedule multiplier in [0, 1]; 1 at step 0, 0 at total_steps."""
    if total_steps <= 0:
        return 1.0
    frac = min(max(step / total_steps, 0.0), 1.0)
    return 0.5 * (1.0 + float(np.cos(np.pi * frac)))
