"""Optimizers updating :class:`Parameter` values in place."""

from __future__ import annotations

import numpy as np

from ..errors import ShapeError


class Optimizer:
    def __init__(self, params, lr: float):
        self.params = [p for p in params if p.trainable]
        self.lr = float(lr)

    def _checked(self, grads):
        for p in self.params:
            g = grads.get(p.name)
            if g is None:
                continue
            if g.shape != p.data.shape:
                raise ShapeError(f"gradient for {p.name} has shape {g.shape}, parameter has {p.data.shape}")
            yield p, g

    def state_dict(self) -> dict:
        return {"kind": type(self).__name__.lower(), "lr": self.lr}

    def load_state_dict(self, state: dict):
        self.lr = float(state["lr"])


class SGD(Optimizer):
    def step(self, grads: dict):
        for p, g in self._checked(grads):
            p.data -= self.lr * g


class Adam(Optimizer):
    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
        super().__init__(params, lr)
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = {p.name: np.zeros_like(p.data) for p in self.params}
        self.v = {p.name: np.zeros_like(p.data) for p in self.params}

    def step(self, grads: dict):
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, g in self._checked(grads):
            m = self.m[p.name]
            v = self.v[p.name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state_dict(self) -> dict:
        state = super().state_dict()
        state.update(betas=[self.beta1, self.beta2], eps=self.eps, t=self.t, m=self.m, v=self.v)
        return state

    def load_state_dict(self, state: dict):
        super().load_state_dict(state)
        self.beta1, self.beta2 = state["betas"]
        self.eps = state["eps"]
        self.t = int(state["t"])
        for name in self.m:
            self.m[name][...] = state["m"][name]
            self.v[name][...] = state["v"][name]
