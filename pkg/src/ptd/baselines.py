"""Comparison deciders: two length rules and a history-only learned classifier.

The rules compare the token length of the last user utterance with every
preceding utterance of the history (both speakers), using strict inequalities.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .base import check_decision_point, check_history, check_labels
from .corpus.data import DecisionSample
from .corpus.vocab import build_vocabulary, encode_history
from .decision import ENCODERS, _TaggedClassifier
from .layers import add_param, dropout
from .numerics import ops, uniform_init


@dataclass(frozen=True)
class RuleDecision:
    label: int
    last_len: int
    reference_len: int


def atlu_decide(history) -> RuleDecision:
    """Answer iff the last utterance is strictly longer than every earlier one."""
    history = check_decision_point(history)
    last = len(history[-1].tokens)
    ref = max((len(u.tokens) for u in history[:-1]), default=0)
    return RuleDecision(int(last > ref), last, ref)


def ptsu_decide(history) -> RuleDecision:
    """Wait iff the last utterance is strictly shorter than every earlier one."""
    history = check_decision_point(history)
    last = len(history[-1].tokens)
    if len(history) == 1:
        return RuleDecision(1, last, 0)
    ref = min(len(u.tokens) for u in history[:-1])
    return RuleDecision(int(not last < ref), last, ref)


class _RuleClassifier:
    """Fit-free sklearn-style wrapper around a length rule."""

    rule = staticmethod(atlu_decide)

    def get_params(self, deep=True):
        return {}

    def set_params(self, **params):
        if params:
            raise ValueError(f"{type(self).__name__} has no parameters")
        return self

    def fit(self, X=None, y=None):
        return self

    def predict(self, X) -> np.ndarray:
        return np.array([self.rule(_history_of(x)).label for x in X], dtype=np.int64)

    def score(self, X, y) -> float:
        return float((self.predict(X) == check_labels(y)).mean())


class ATLUClassifier(_RuleClassifier):
    rule = staticmethod(atlu_decide)


class PTSUClassifier(_RuleClassifier):
    rule = staticmethod(ptsu_decide)


def _history_of(x):
    return x.history if isinstance(x, DecisionSample) else x


class HistoryClassifier(_TaggedClassifier):
    """Wait/answer classifier that sees only the history.

    One encoder (TextCNN or bi-directional GRU) over the tagged history, then a
    linear layer and a softmax. Training follows the decision model protocol.
    ``X`` is a sequence of histories or :class:`DecisionSample` objects.
    """

    def __init__(self, encoder="textcnn", token_dim=64, tag_dim=8, widths=(3, 4, 5), n_filters=100,
                 rnn_hidden=64, dropout=0.3, epochs=30, batch_size=64, learning_rate=1e-3,
                 decay_factor=0.5, patience=6, max_turn=20, max_sub_turn=8, max_len=64, min_freq=1,
                 random_state=0, verbose=False):
        self.encoder = encoder
        self.token_dim = token_dim
        self.tag_dim = tag_dim
        self.widths = widths
        self.n_filters = n_filters
        self.rnn_hidden = rnn_hidden
        self.dropout = dropout
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.decay_factor = decay_factor
        self.patience = patience
        self.max_turn = max_turn
        self.max_sub_turn = max_sub_turn
        self.max_len = max_len
        self.min_freq = min_freq
        self.random_state = random_state
        self.verbose = verbose

    def initialize(self, vocab) -> "HistoryClassifier":
        rng = np.random.default_rng(self.random_state)
        p: dict = {}
        n_in = self._init_embeddings(p, vocab, rng)
        self.encoder_ = self._make_encoder(p, "enc.x", n_in, rng)
        add_param(p, "out.w", uniform_init(rng, (self.encoder_.out_dim, 2)))
        add_param(p, "out.b", np.zeros(2))
        self._finish_init(p, vocab)
        return self

    def _encode_inputs(self, X) -> list:
        return [encode_history(check_history(_history_of(x)), self.vocab_, self.caps, terminal=True)
                for x in X]

    def _logits(self, encoded, training, rng):
        c = dropout(self._encode_batch(self.encoder_, encoded), self.dropout, rng, training)
        return ops.add(ops.matmul(c, self.params_["out.w"]), self.params_["out.b"])

    def fit(self, X, y=None, X_valid=None, y_valid=None, vocab=None):
        X = list(X)
        if y is None:
            y = [x.label for x in X]
        y = check_labels(y)
        if len(X) != len(y):
            raise ValueError(f"{len(X)} inputs but {len(y)} labels")
        if not X:
            raise ValueError("cannot train a history classifier on an empty sample set")
        if self.encoder not in ENCODERS:
            raise ValueError(f"encoder must be one of {ENCODERS}, got {self.encoder!r}")
        if vocab is None:
            vocab = build_vocabulary([u for x in X for u in _history_of(x)], self.min_freq)
        self.initialize(vocab)
        enc_valid = yv = None
        if X_valid is not None and len(X_valid):
            X_valid = list(X_valid)
            yv = check_labels([x.label for x in X_valid] if y_valid is None else y_valid)
            enc_valid = self._encode_inputs(X_valid)
        return self._fit_loop(self._encode_inputs(X), y, enc_valid, yv)

    def loss(self, X, y, training=False, rng=None):
        self._check_fitted()
        return ops.cross_entropy(self._logits(self._encode_inputs(X), training, rng), check_labels(y))


def train_history_classifier(samples, valid=None, config=None, arch: str = "textcnn",
                             vocab=None) -> HistoryClassifier:
    """Train on :class:`DecisionSample` lists; ``arch`` is ``textcnn`` or ``rnn``."""
    config = dict(config or {})
    config.setdefault("encoder", arch)
    return HistoryClassifier(**config).fit(samples, None, valid, None, vocab=vocab)
