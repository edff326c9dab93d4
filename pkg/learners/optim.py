"""In-place first-order optimizers over lists of numpy parameter arrays."""
from __future__ import annotations

from abc import ABC, abstractmethod
from typing import List, Optional

import numpy as np

try:
    from ..errors import ArgumentError
except ImportError:
    from errors import ArgumentError


class Optimizer(ABC):
    @abstractmethod
    def step(self, params: List[np.ndarray], grads: List[np.ndarray]) -> None:
        ...


class Sgd(Optimizer):
    def __init__(self, step_size: float = 1e-2, momentum: float = 0.0) -> None:
        self.step_size = step_size
        self.momentum = momentum
        self._velocity: Optional[List[np.ndarray]] = None

    def step(self, params: List[np.ndarray], grads: List[np.ndarray]) -> None:
        if self._velocity is None:
            self._velocity = [np.zeros_like(p) for p in params]
        for p, g, v in zip(params, grads, self._velocity):
            v *= self.momentum
            v -= self.step_size * g
            p += v


class Adam(Optimizer):
    def __init__(self, step_size: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
        self.step_size = step_size
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self._t = 0
        self._m: Optional[List[np.ndarray]] = None
        self._v: Optional[List[np.ndarray]] = None

    def step(self, params: List[np.ndarray], grads: List[np.ndarray]) -> None:
        if self._m is None or self._v is None:
            self._m = [np.zeros_like(p) for p in params]
            self._v = [np.zeros_like(p) for p in params]
        self._t += 1
        scale = self.step_size * np.sqrt(1.0 - self.beta2 ** self._t) / (1.0 - self.beta1 ** self._t)
        for p, g, m, v in zip(params, grads, self._m, self._v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= scale * m / (np.sqrt(v) + self.eps)


def make_optimizer(kind: str, *, step_size: float, momentum: float = 0.0, beta1: float = 0.9, beta2: float = 0.999) -> Optimizer:
    if kind == "sgd":
        return Sgd(step_size=step_size, momentum=momentum)
    if kind == "adam":
        return Adam(step_size=step_size, beta1=beta1, beta2=beta2)
    raise ArgumentError(f"unknown optimizer {kind!r}")
