"""Adaptive-moment (Adam) parameter updates."""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor


class PoisonedUpdateError(ArithmeticError):
    """A gradient contained NaN/Inf; the whole step was refused."""


class Adam:
    """Standard Adam with bias correction.

    Parameters with grad=None are treated as having a zero gradient: their
    moments decay but no NaN can poison the step.
    """

    def __init__(self, params: list[Tensor], lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.step_count = 0
        self.m = [np.zeros(p.shape) for p in self.params]
        self.v = [np.zeros(p.shape) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        grads = []
        for p in self.params:
            g = p.grad if p.grad is not None else np.zeros(p.shape)
            if not np.all(np.isfinite(g)):
                raise PoisonedUpdateError("non-finite gradient; update refused")
            grads.append(g)
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    # checkpoint support ---------------------------------------------------
    def state_dict(self):
        return {
            "step_count": self.step_count,
            "m": [m.copy() for m in self.m],
            "v": [v.copy() for v in self.v],
        }

    def load_state_dict(self, state):
        self.step_count = int(state["step_count"])
        self.m = [np.array(m) for m in state["m"]]
        self.v = [np.array(v) for v in state["v"]]
