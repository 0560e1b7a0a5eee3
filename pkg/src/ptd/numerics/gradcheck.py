"""Central finite-difference check of tape gradients."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from .tensor import Tape, Tensor, backward


@dataclass
class GradCheckReport:
    tolerance: float
    errors: dict = field(default_factory=dict)  # param name -> max relative error
    checked: dict = field(default_factory=dict)  # param name -> number of entries probed

    @property
    def passed(self) -> bool:
        return all(err <= self.tolerance for err in self.errors.values())

    @property
    def failures(self) -> dict:
        return {k: v for k, v in self.errors.items() if v > self.tolerance}

    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)


def relative_error(analytic, numeric) -> np.ndarray:
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8)


def grad_check(loss_fn: Callable[[], Tensor], params: Sequence[Tensor], tolerance: float = 1e-4,
               eps: float = 1e-5, max_entries: Optional[int] = None, seed: int = 0,
               frozen: Optional[Mapping[str, Sequence[int]]] = None) -> GradCheckReport:
    """Compare tape gradients of ``loss_fn()`` against central differences.

    ``loss_fn`` must be a pure function of ``params`` returning a scalar tensor.
    ``max_entries`` caps how many entries per parameter are probed (chosen with
    a seeded generator); ``None`` probes all of them. ``frozen`` maps a
    parameter name to leading-axis rows that are excluded on purpose, such as
    a padding embedding that feeds the forward pass but never trains.
    """
    report = GradCheckReport(tolerance=tolerance)
    if not params:
        return report
    for p in params:
        p.grad = None
    with Tape() as tape:
        loss = loss_fn()
    backward(tape, loss)
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]

    rng = np.random.default_rng(seed)
    for i, (p, ga) in enumerate(zip(params, analytic)):
        name = p.name or f"param{i}"
        flat = p.data.reshape(-1)
        idx = np.arange(flat.size)
        rows = (frozen or {}).get(name)
        if rows is not None and p.data.ndim:
            row_of = idx // (flat.size // p.data.shape[0])
            idx = idx[~np.isin(row_of, list(rows))]
        if max_entries is not None and idx.size > max_entries:
            idx = np.sort(rng.choice(idx, size=max_entries, replace=False))
        worst = 0.0
        for j in idx:
            orig = flat[j]
            flat[j] = orig + eps
            up = loss_fn().item()
            flat[j] = orig - eps
            down = loss_fn().item()
            flat[j] = orig
            numeric = (up - down) / (2 * eps)
            worst = max(worst, float(relative_error(ga.reshape(-1)[j], numeric)))
        report.errors[name] = worst
        report.checked[name] = len(idx)
    for p in params:
        p.grad = None
    return report
