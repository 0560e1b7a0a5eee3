"""SGD and Adam with multiplicative learning-rate decay."""
from __future__ import annotations

from typing import Iterable, Optional

import numpy as np

from .tensor import Tensor


class MissingGradientError(RuntimeError):
    pass


class Optimizer:
    """First-order optimizer over a fixed list of parameters.

    ``decay()`` multiplies the learning rate by ``decay_factor``; after k decays
    the rate is ``initial_rate * decay_factor ** k``.
    """

    def __init__(self, params: Iterable[Tensor], kind: str = "adam", learning_rate: float = 1e-3,
                 decay_factor: float = 0.5, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8, max_grad_norm: Optional[float] = None):
        if kind not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer kind {kind!r}")
        if learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not 0 < decay_factor <= 1:
            raise ValueError("decay_factor must lie in (0, 1]")
        self.params = list(params)
        self.kind = kind
        self.initial_rate = float(learning_rate)
        self.decay_factor = float(decay_factor)
        self.decays = 0
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.max_grad_norm = max_grad_norm
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    @property
    def learning_rate(self) -> float:
        return self.initial_rate * self.decay_factor ** self.decays

    def decay(self) -> float:
        self.decays += 1
        return self.learning_rate

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        for p in self.params:
            if p.grad is None:
                raise MissingGradientError(f"parameter {p.name or p.shape} has no gradient")
        grads = [p.grad for p in self.params]
        if self.max_grad_norm is not None:
            norm = np.sqrt(sum(float((g * g).sum()) for g in grads))
            if norm > self.max_grad_norm:
                scale = self.max_grad_norm / norm
                grads = [g * scale for g in grads]
        lr = self.learning_rate
        if self.kind == "sgd":
            for p, g in zip(self.params, grads):
                p.data -= lr * g
        else:
            self.t += 1
            b1, b2 = self.beta1, self.beta2
            c1 = 1.0 - b1 ** self.t
            c2 = 1.0 - b2 ** self.t
            for p, g, m, v in zip(self.params, grads, self.m, self.v):
                m *= b1
                m += (1.0 - b1) * g
                v *= b2
                v += (1.0 - b2) * g * g
                p.data -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        self.zero_grad()

    def state_dict(self) -> dict:
        return {"kind": self.kind, "initial_rate": self.initial_rate, "decays": self.decays, "t": self.t}


def optimizer_step(opt: Optimizer, params=None) -> None:
    """Apply one update; ``params`` must match the optimizer's own list when given."""
    if params is not None and [id(p) for p in params] != [id(p) for p in opt.params]:
        raise ValueError("optimizer_step: params differ from the optimizer's parameter list")
    opt.step()
