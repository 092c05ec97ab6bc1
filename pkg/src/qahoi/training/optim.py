"""AdamW with parameter groups, global-norm clipping and step decay."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..layers import Parameter


@dataclass
class ParamGroup:
    params: list[Parameter]
    lr: float
    base_lr: float = field(init=False)

    def __post_init__(self):
        self.base_lr = self.lr


class AdamW:
    """Adam with decoupled weight decay: p -= lr * (m_hat / (sqrt(v_hat) + eps) + wd * p)."""

    def __init__(self, groups: list[ParamGroup], weight_decay: float = 1e-4,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.groups = groups
        self.weight_decay = weight_decay
        self.betas = betas
        self.eps = eps
        self.step_count = 0
        self.state: dict[int, tuple[np.ndarray, np.ndarray]] = {}

    def parameters(self):
        for g in self.groups:
            yield from g.params

    def step(self) -> None:
        self.step_count += 1
        b1, b2 = self.betas
        c1 = 1 - b1 ** self.step_count
        c2 = 1 - b2 ** self.step_count
        for g in self.groups:
            for p in g.params:
                if p.grad is None:
                    continue
                m, v = self.state.setdefault(id(p), (np.zeros_like(p.data), np.zeros_like(p.data)))
                m *= b1
                m += (1 - b1) * p.grad
                v *= b2
                v += (1 - b2) * p.grad * p.grad
                if g.lr == 0:
                    continue
                if self.weight_decay:
                    p.data *= 1 - g.lr * self.weight_decay
                p.data -= g.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def set_decay(self, factor: float) -> None:
        for g in self.groups:
            g.lr = g.base_lr * factor


def clip_grad_norm(params, max_norm: float) -> float:
    """Scale gradients in place so their global L2 norm is at most ``max_norm``.

    Returns the norm before clipping. ``max_norm <= 0`` disables clipping.
    """
    params = [p for p in params if p.grad is not None]
    total = math.sqrt(sum(float(np.sum(p.grad * p.grad)) for p in params))
    if max_norm > 0 and total > max_norm:
        scale = max_norm / (total + 1e-6)
        for p in params:
            p.grad *= scale
    return total


def step_decay(epoch: int, drop_epoch: int, factor: float) -> float:
    """Learning-rate multiplier: 1 before ``drop_epoch``, ``factor`` from then on."""
    return factor if epoch >= drop_epoch else 1.0
