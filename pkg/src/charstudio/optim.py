"""Adam and RMSProp with exportable state, plus critic weight clipping."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor

ADAM_EPS = 1e-8
RMSPROP_EPS = 1e-8
RMSPROP_RHO = 0.99


class Optimizer:
    """Base: owns (name, parameter) pairs and per-parameter state slots."""

    def __init__(self, params: dict[str, Tensor], frozen: set[str] | None = None):
        self.params = dict(params)
        self.frozen = set(frozen or ())

    def active(self):
        for name, p in self.params.items():
            if name not in self.frozen:
                yield name, p

    def step(self, grads: dict[str, np.ndarray]) -> None:
        raise NotImplementedError

    def state_tensors(self) -> dict[str, np.ndarray]:
        raise NotImplementedError

    def load_state(self, tensors: dict[str, np.ndarray], counters: dict) -> None:
        raise NotImplementedError


class Adam(Optimizer):
    def __init__(self, params, lr=2e-4, beta1=0.5, beta2=0.999, eps=ADAM_EPS, frozen=None):
        super().__init__(params, frozen)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {n: np.zeros_like(p.data) for n, p in self.active()}
        self.v = {n: np.zeros_like(p.data) for n, p in self.active()}

    def step(self, grads):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for name, p in self.active():
            g = grads.get(name)
            if g is None:
                continue
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * np.square(g)
            mhat = m / (1 - b1**self.t)
            vhat = v / (1 - b2**self.t)
            p.data -= (self.lr * mhat / (np.sqrt(vhat) + self.eps)).astype(p.data.dtype)

    def state_tensors(self):
        out = {}
        for name in self.m:
            out[f"m.{name}"] = self.m[name]
            out[f"v.{name}"] = self.v[name]
        return out

    def counters(self):
        return {"kind": "adam", "t": self.t}

    def load_state(self, tensors, counters):
        self.t = counters["t"]
        for name in self.m:
            self.m[name][...] = tensors[f"m.{name}"]
            self.v[name][...] = tensors[f"v.{name}"]


class RMSProp(Optimizer):
    def __init__(self, params, lr=5e-5, rho=RMSPROP_RHO, eps=RMSPROP_EPS, frozen=None):
        super().__init__(params, frozen)
        self.lr = lr
        self.rho = rho
        self.eps = eps
        self.v = {n: np.zeros_like(p.data) for n, p in self.active()}

    def step(self, grads):
        for name, p in self.active():
            g = grads.get(name)
            if g is None:
                continue
            v = self.v[name]
            v *= self.rho
            v += (1 - self.rho) * np.square(g)
            p.data -= (self.lr * g / (np.sqrt(v) + self.eps)).astype(p.data.dtype)

    def state_tensors(self):
        return {f"v.{name}": v for name, v in self.v.items()}

    def counters(self):
        return {"kind": "rmsprop"}

    def load_state(self, tensors, counters):
        for name in self.v:
            self.v[name][...] = tensors[f"v.{name}"]


def clip_weights(params, c: float) -> None:
    """Project every parameter element into [-c, c] in place."""
    for p in params:
        np.clip(p.data, -c, c, out=p.data)
