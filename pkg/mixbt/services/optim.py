"""
Optimisation primitives shared by pre-training and linear probing: learning-rate
schedules and an Adam step with decoupled weight decay.

`adam_step` is functional: it returns fresh parameter tensors and a fresh state and never
mutates its inputs, so an aborted step leaves the previous values intact.
"""
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from mixbt.core.exceptions import ContractError, DimensionError, NumericDomainError
from mixbt.schemas import Schedule
from mixbt.utils.diffcore import Tensor

BETA1 = 0.9
BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass
class OptimState:
    m: List[np.ndarray]
    v: List[np.ndarray]
    step: int = 0
    beta1: float = BETA1
    beta2: float = BETA2
    eps: float = ADAM_EPS

    @classmethod
    def for_params(cls, params: Sequence[Tensor]) -> "OptimState":
        return cls(m=[np.zeros(p.shape) for p in params], v=[np.zeros(p.shape) for p in params])


def lr_at(sched: Schedule, epoch: float) -> float:
    """
    Linear warmup from 0 to base_lr over warmup_epochs, then cosine annealing to 0 at
    total_epochs. `epoch` may be fractional (step-level schedules).
    """
    if not 0.0 <= epoch <= sched.total_epochs:
        raise ContractError(f"epoch {epoch} outside [0, {sched.total_epochs}]")
    warmup = sched.warmup_epochs
    if epoch < warmup:
        return sched.base_lr * epoch / warmup
    progress = (epoch - warmup) / (sched.total_epochs - warmup)
    return sched.base_lr * 0.5 * (1.0 + math.cos(math.pi * progress))


def exponential_lr(base_lr: float, gamma: float, epoch: int) -> float:
    """lr_t = base_lr · gamma^epoch."""
    return base_lr * gamma ** epoch


def adam_step(params: Sequence[Tensor], grads: Sequence[Optional[np.ndarray]], state: OptimState,
              lr: float, weight_decay: float) -> Tuple[List[Tensor], OptimState]:
    """
    One bias-corrected Adam update with decoupled weight decay (θ ← θ − lr·wd·θ alongside
    the adaptive step). A missing gradient is treated as zero.
    """
    if not (len(params) == len(grads) == len(state.m) == len(state.v)):
        raise DimensionError("adam_step", "params, grads and optimizer state differ in length")
    grads = [np.zeros(p.shape) if g is None else np.asarray(g) for p, g in zip(params, grads)]
    for index, (p, g) in enumerate(zip(params, grads)):
        if g.shape != p.shape or state.m[index].shape != p.shape:
            raise DimensionError("adam_step", f"parameter {index}: shape {p.shape} vs grad {g.shape}")
        if not np.all(np.isfinite(g)):
            raise NumericDomainError("adam_step", f"non-finite gradient for parameter {index}")

    step = state.step + 1
    correction1 = 1.0 - state.beta1 ** step
    correction2 = 1.0 - state.beta2 ** step
    new_params, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * g * g
        m_hat = m / correction1
        v_hat = v / correction2
        theta = p.data - lr * weight_decay * p.data - lr * m_hat / (np.sqrt(v_hat) + state.eps)
        new_params.append(Tensor(theta, requires_grad=p.requires_grad))
        new_m.append(m)
        new_v.append(v)
    return new_params, OptimState(m=new_m, v=new_v, step=step, beta1=state.beta1,
                                  beta2=state.beta2, eps=state.eps)
