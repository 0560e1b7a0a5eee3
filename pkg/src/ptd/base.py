"""Shared estimator plumbing: parameter stores, input checks, batching."""
from __future__ import annotations

import hashlib
from typing import Iterator, Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .corpus.data import USER, DataError, Utterance


def check_history(history, name: str = "history") -> list:
    """A non-empty list of utterances."""
    if not isinstance(history, (list, tuple)) or not history:
        raise ValueError(f"{name} must be a non-empty list of utterances")
    for u in history:
        if not isinstance(u, Utterance):
            raise TypeError(f"{name} must contain Utterance objects, got {type(u).__name__}")
    return list(history)


def check_decision_point(history) -> list:
    """A history that ends in a user utterance, the only place a decision exists."""
    history = check_history(history)
    if history[-1].speaker_id != USER:
        raise DataError("history must end with a user utterance")
    return history


def check_labels(labels) -> np.ndarray:
    y = np.asarray(labels)
    if y.ndim != 1 or (y.size and not np.isin(y, (0, 1)).all()):
        raise ValueError("labels must be a 1-D sequence of 0 (wait) / 1 (answer)")
    return y.astype(np.int64)


def minibatches(n: int, batch_size: int, rng=None) -> Iterator[np.ndarray]:
    order = np.arange(n) if rng is None else rng.permutation(n)
    for lo in range(0, n, batch_size):
        yield order[lo:lo + batch_size]


def to_f32_grid(a: np.ndarray) -> np.ndarray:
    """Round to the nearest float32 while keeping float64 storage."""
    return np.asarray(a, dtype=np.float32).astype(np.float64)


class NeuralEstimator(BaseEstimator):
    """Mixin for estimators whose state is an ordered ``params_`` dict of tensors."""

    def _check_fitted(self) -> None:
        if not hasattr(self, "params_"):
            raise NotFittedError(f"{type(self).__name__} is not fitted yet; call fit first")

    def get_weights(self) -> dict:
        self._check_fitted()
        return {k: v.data.copy() for k, v in self.params_.items()}

    def set_weights(self, weights: dict) -> None:
        self._check_fitted()
        if set(weights) != set(self.params_):
            missing = sorted(set(self.params_) ^ set(weights))
            raise ValueError(f"weight names differ from the model's parameters: {missing}")
        for k, v in weights.items():
            if v.shape != self.params_[k].shape:
                raise ValueError(f"weight {k!r} has shape {v.shape}, expected {self.params_[k].shape}")
            self.params_[k].data = np.array(v, dtype=np.float64)

    def _round_params(self) -> None:
        for p in self.params_.values():
            p.data = to_f32_grid(p.data)

    def weights_digest(self) -> str:
        """SHA-256 over parameter names and bytes; equal digests mean identical weights."""
        self._check_fitted()
        h = hashlib.sha256()
        for k in sorted(self.params_):
            h.update(k.encode())
            h.update(np.ascontiguousarray(self.params_[k].data).tobytes())
        return h.hexdigest()

    def _param_list(self) -> Sequence:
        return list(self.params_.values())
