"""Adam with decoupled weight decay and a half-cosine learning-rate schedule."""

from __future__ import annotations

import math

import numpy as np

from .autodiff import Parameter


def cosine_lr(step: int, total_steps: int, base_lr: float, floor: float = 0.0) -> float:
    """Half-cosine decay from base_lr at step 0 to floor at total_steps.

    Steps past the horizon clamp to the floor.
    """
    if total_steps < 1:
        raise ValueError("total_steps must be >= 1")
    if step >= total_steps:
        return floor
    frac = step / total_steps
    return floor + (base_lr - floor) * 0.5 * (1.0 + math.cos(math.pi * frac))


class Adam:
    """Standard Adam update; weight decay is decoupled (applied to the value)."""

    def __init__(self, params, base_lr=1e-4, weight_decay=0.0,
                 betas=(0.9, 0.999), eps=1e-8, total_steps=None, lr_floor=0.0):
        self.params = list(params)
        self.base_lr = base_lr
        self.weight_decay = weight_decay
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.total_steps = total_steps
        self.lr_floor = lr_floor
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def current_lr(self) -> float:
        if self.total_steps is None:
            return self.base_lr
        return cosine_lr(self.step_count, self.total_steps, self.base_lr, self.lr_floor)

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def step(self):
        lr = self.current_lr()
        self.step_count += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1 ** self.step_count
        bc2 = 1.0 - b2 ** self.step_count
        for i, p in enumerate(self.params):
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * g * g
            m_hat = self.m[i] / bc1
            v_hat = self.v[i] / bc2
            p.data -= lr * m_hat / (np.sqrt(v_hat) + self.eps)
            if self.weight_decay:
                p.data -= lr * self.weight_decay * p.data
        return lr

    # -- serialization hooks used by checkpointing ---------------------------

    def state_dict(self) -> dict:
        return {
            "step_count": self.step_count,
            "m": [a.copy() for a in self.m],
            "v": [a.copy() for a in self.v],
        }

    def load_state_dict(self, state: dict):
        self.step_count = state["step_count"]
        self.m = [np.array(a, dtype=np.float64) for a in state["m"]]
        self.v = [np.array(a, dtype=np.float64) for a in state["v"]]
