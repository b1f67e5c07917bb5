from __future__ import annotations

import numpy as np

from advnav.diffkit.params import ParamStore


class SGD:
    """Plain (online) gradient descent."""

    name = "sgd"

    def __init__(self, lr: float):
        if lr <= 0:
            raise ValueError("lr must be > 0")
        self.lr = lr
        self.t = 0

    def step(self, store: ParamStore) -> None:
        for name, p in store.params.items():
            p -= self.lr * store.grads[name]
        self.t += 1

    def state(self) -> dict:
        return {}

    def load_state(self, state: dict, t: int) -> None:
        self.t = t


class Adam:
    name = "adam"

    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        if lr <= 0:
            raise ValueError("lr must be > 0")
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, store: ParamStore) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for name, p in store.params.items():
            g = store.grads[name]
            m = self.m.setdefault(name, np.zeros_like(p))
            v = self.v.setdefault(name, np.zeros_like(p))
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state(self) -> dict:
        out = {}
        for name in sorted(self.m):
            out[f"adam.m.{name}"] = self.m[name]
            out[f"adam.v.{name}"] = self.v[name]
        return out

    def load_state(self, state: dict, t: int) -> None:
        self.t = t
        for key, value in state.items():
            kind, _, name = key.partition(".")[2].partition(".")
            getattr(self, kind)[name] = np.array(value, dtype=np.float64)


def make_optimizer(kind: str, lr: float):
    if kind == "sgd":
        return SGD(lr)
    if kind == "adam":
        return Adam(lr)
    raise ValueError(f"unknown optimizer {kind!r} (expected sgd|adam)")


def sgd_step(store: ParamStore, lr: float) -> None:
    SGD(lr).step(store)


def adam_step(store: ParamStore, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
              state: Adam | None = None) -> Adam:
    """One Adam update. Pass the returned state back in to keep the moments."""
    opt = Adam(lr, beta1, beta2, eps) if state is None else state
    opt.step(store)
    return opt
