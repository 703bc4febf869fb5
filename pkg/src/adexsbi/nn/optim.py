"""Adaptive-moment (Adam-style) optimizer over parameter tensors."""

from __future__ import annotations

import logging

import numpy as np

from .tensor import Tensor

log = logging.getLogger(__name__)


class Adam:
    """Adam with decoupled weight decay (decay 0 by default).

    State arrays are allocated per parameter at construction; the bound
    parameter list is positional, so keep it stable for the optimizer's
    lifetime. A step with any non-finite gradient is skipped entirely
    (parameters, moments, and the step counter stay untouched) and the
    event is logged.
    """

    def __init__(self, params: list[Tensor], lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8, weight_decay: float = 0.0):
        self.params = list(params)
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.weight_decay = float(weight_decay)
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.skipped_steps = 0

    def step(self) -> bool:
        """Apply one update from the parameters' current gradients.

        Returns False when the step was skipped because of a non-finite
        gradient.
        """
        grads = []
        for p in self.params:
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if not np.all(np.isfinite(g)):
                self.skipped_steps += 1
                log.warning(
                    "optimizer step %d skipped: non-finite gradient in %s",
                    self.step_count, p.name or p.op,
                )
                return False
            grads.append(g)

        self.step_count += 1
        b1t = 1.0 - self.beta1 ** self.step_count
        b2t = 1.0 - self.beta2 ** self.step_count
        with np.errstate(over="ignore"):  # diverging runs are caught by callers
            for p, g, m, v in zip(self.params, grads, self.m, self.v):
                m *= self.beta1
                m += (1.0 - self.beta1) * g
                v *= self.beta2
                v += (1.0 - self.beta2) * g * g
                update = (m / b1t) / (np.sqrt(v / b2t) + self.eps)
                if self.weight_decay:
                    p.data -= self.lr * self.weight_decay * p.data
                p.data -= self.lr * update
        return True

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()
