"""First-order update rules applied to flat parameter vectors."""
from __future__ import annotations

import numpy as np


class SGD:
    name = "sgd"

    def __init__(self, lr: float):
        self.lr = lr

    def direction(self, grad: np.ndarray) -> np.ndarray:
        return self.lr * grad

    def state_dict(self) -> dict:
        return {"name": self.name}

    def load_state(self, state: dict) -> None:
        pass


class Adam:
    name = "adam"

    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m: np.ndarray | None = None
        self.v: np.ndarray | None = None
        self.t = 0

    def direction(self, grad: np.ndarray) -> np.ndarray:
        """Bias-corrected step for ``grad``; caller adds (ascent) or subtracts (descent) it."""
        if self.m is None:
            self.m = np.zeros_like(grad)
            self.v = np.zeros_like(grad)
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad**2
        mhat = self.m / (1 - self.beta1**self.t)
        vhat = self.v / (1 - self.beta2**self.t)
        return self.lr * mhat / (np.sqrt(vhat) + self.eps)

    def state_dict(self) -> dict:
        return {
            "name": self.name,
            "t": self.t,
            "m": None if self.m is None else self.m.tolist(),
            "v": None if self.v is None else self.v.tolist(),
        }

    def load_state(self, state: dict) -> None:
        self.t = state["t"]
        self.m = None if state["m"] is None else np.array(state["m"])
        self.v = None if state["v"] is None else np.array(state["v"])


def make_optimizer(name: str, lr: float):
    if name == "sgd":
        return SGD(lr)
    if name == "adam":
        return Adam(lr)
    raise ValueError(f"unknown optimizer {name!r}")
