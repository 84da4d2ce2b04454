"""AdamW with decoupled weight decay and a half-cosine learning-rate schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor

# Optimizer defaults used for training the visual model.
LR_START = 1e-5
LR_END = 2e-6
BETAS = (0.9, 0.999)
WEIGHT_DECAY = 1e-2


@dataclass
class AdamWState:
    lr: float = LR_START
    betas: tuple[float, float] = BETAS
    weight_decay: float = WEIGHT_DECAY
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adamw_step(
    params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamWState
) -> dict[str, np.ndarray]:
    """One AdamW update; returns new parameter arrays and advances ``state``.

    Parameters without a gradient entry are returned unchanged.
    """
    state.step += 1
    b1, b2 = state.betas
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    out = {}
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            out[name] = p
            continue
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape} for {name}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        new = p * (1.0 - state.lr * state.weight_decay)
        new -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        out[name] = new
    return out


class AdamW:
    """Stateful wrapper updating :class:`Tensor` parameters in place."""

    def __init__(self, params: dict[str, Tensor], lr=LR_START, betas=BETAS,
                 weight_decay=WEIGHT_DECAY, eps=1e-8):
        self.params = dict(params)
        self.state = AdamWState(lr=lr, betas=tuple(betas), weight_decay=weight_decay, eps=eps)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self, lr: float | None = None) -> None:
        if lr is not None:
            self.state.lr = lr
        arrays = {k: p.data for k, p in self.params.items()}
        grads = {k: p.grad for k, p in self.params.items() if p.grad is not None}
        for k, new in adamw_step(arrays, grads, self.state).items():
            self.params[k].data[...] = new


def cosine_lr(step: int, total_steps: int, lr_start: float = LR_START, lr_end: float = LR_END) -> float:
    if total_steps <= 0 or not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    return lr_end + 0.5 * (lr_start - lr_end) * (1.0 + math.cos(math.pi * step / total_steps))
