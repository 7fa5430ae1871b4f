"""SGD with momentum and Adam, both with additive L2 weight decay."""

from __future__ import annotations

import numpy as np

from cgpcnn.errors import ShapeMismatch


class Optimizer:
    def __init__(self, lr, weight_decay=0.0):
        self.lr = lr
        self.weight_decay = weight_decay
        self.slots = {}

    def _grad(self, name, w, g):
        if g.shape != w.shape:
            raise ShapeMismatch(f"gradient for {name} has shape {g.shape}, parameter {w.shape}")
        return g + self.weight_decay * w if self.weight_decay else g

    def step(self, params: dict, grads: dict) -> None:
        for name, w in params.items():
            g = grads.get(name)
            if g is not None:
                self.update(name, w, self._grad(name, w, g))

    def update(self, name, w, g):
        raise NotImplementedError


class SGDMomentum(Optimizer):
    """``v <- mu * v + g``; ``w <- w - lr * v``."""

    def __init__(self, lr=0.01, momentum=0.9, weight_decay=0.0):
        super().__init__(lr, weight_decay)
        self.momentum = momentum

    def update(self, name, w, g):
        v = self.slots.get(name)
        if v is None:
            v = self.slots[name] = np.zeros_like(w)
        v *= self.momentum
        v += g
        w -= (self.lr * v).astype(w.dtype, copy=False)


class Adam(Optimizer):
    def __init__(self, lr=0.01, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.0):
        super().__init__(lr, weight_decay)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        super().step(params, grads)

    def update(self, name, w, g):
        if name not in self.slots:
            self.slots[name] = (np.zeros_like(w), np.zeros_like(w))
        m, v = self.slots[name]
        b1, b2 = self.beta1, self.beta2
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        m_hat = m / (1 - b1**self.t)
        v_hat = v / (1 - b2**self.t)
        w -= (self.lr * m_hat / (np.sqrt(v_hat) + self.eps)).astype(w.dtype, copy=False)


def sgd_momentum_step(opt: SGDMomentum, params, grads):
    opt.step(params, grads)


def adam_step(opt: Adam, params, grads):
    opt.step(params, grads)
