"""Decision model: choose between the two simulated dialogue paths.

The history and both simulated futures are embedded (shared token table plus
turn / sub-turn / speaker tags) and encoded by three TextCNN encoders with
separate filters. The answer path fuses history with the agent reply, the wait
path fuses history with the user supplement; a ReLU layer over both paths and
a linear layer give the 2-way wait/answer distribution (index 1 = answer).
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np
from sklearn.base import ClassifierMixin

from .base import NeuralEstimator, check_decision_point, check_history, check_labels, minibatches, to_f32_grid
from .corpus.data import AGENT, USER
from .corpus.vocab import PAD, EncodedSequence, TagCaps, Vocabulary, build_vocabulary, encode_history, pad_batch
from .layers import BiGRUEncoder, TextCNNEncoder, add_param, dropout
from .numerics import Optimizer, ShapeError, Tape, backward, constant, no_grad, ops, uniform_init

log = logging.getLogger(__name__)

ENCODERS = ("textcnn", "rnn")


@dataclass
class Decision:
    label: int
    p_answer: float
    r_u: list = field(default_factory=list)
    r_a: list = field(default_factory=list)

    @property
    def action(self) -> str:
        return "answer" if self.label == 1 else "wait"

    def to_dict(self) -> dict:
        return asdict(self)


def label_from_p_answer(p_answer: float) -> int:
    """Answer only on a strict majority; a tie waits rather than cutting the user off."""
    return int(p_answer > 0.5)


def future_tags(history, caps: TagCaps):
    """Tags for the two continuations of a history that ends in a user utterance.

    The user supplement continues the current turn at the next sub-turn; the
    agent reply opens the next turn.
    """
    last = history[-1]
    r_u = (min(last.turn_id, caps.max_turn), min(last.sub_turn_id + 1, caps.max_sub_turn), USER)
    r_a = (min(last.turn_id + 1, caps.max_turn), 0, AGENT)
    return r_a, r_u


def encode_future(tokens, tags, vocab: Vocabulary, caps: TagCaps) -> EncodedSequence:
    ids = np.asarray(vocab.encode(list(tokens))[-caps.max_len:], dtype=np.int64)
    n = len(ids)
    return EncodedSequence(ids, np.full(n, tags[0], dtype=np.int64), np.full(n, tags[1], dtype=np.int64),
                           np.full(n, tags[2], dtype=np.int64))


class _TaggedClassifier(NeuralEstimator, ClassifierMixin):
    """Shared embedding, encoder factory and training loop for the learned classifiers."""

    _estimator_type = "classifier"

    @property
    def caps(self) -> TagCaps:
        return TagCaps(self.max_turn, self.max_sub_turn, self.max_len)

    def _init_embeddings(self, p, vocab, rng):
        table = uniform_init(rng, (len(vocab), self.token_dim))
        table[PAD] = 0.0  # padding contributes nothing and never trains
        add_param(p, "emb.tok", table)
        add_param(p, "emb.turn", uniform_init(rng, (self.max_turn + 1, self.tag_dim)))
        add_param(p, "emb.sub", uniform_init(rng, (self.max_sub_turn + 1, self.tag_dim)))
        add_param(p, "emb.spk", uniform_init(rng, (2, self.tag_dim)))
        return self.token_dim + 3 * self.tag_dim

    def _make_encoder(self, p, prefix, n_in, rng):
        if self.encoder == "textcnn":
            return TextCNNEncoder(p, prefix, n_in, self.widths, self.n_filters, rng)
        if self.encoder == "rnn":
            return BiGRUEncoder(p, prefix, n_in, self.rnn_hidden, rng)
        raise ValueError(f"encoder must be one of {ENCODERS}, got {self.encoder!r}")

    def _encode_batch(self, encoder, seqs):
        p = self.params_
        tok, turn, sub, spk, lengths = pad_batch(seqs, min_len=encoder.min_len)
        x = ops.concat([
            ops.embedding_lookup(p["emb.tok"], tok, padding_idx=PAD),
            ops.embedding_lookup(p["emb.turn"], turn),
            ops.embedding_lookup(p["emb.sub"], sub),
            ops.embedding_lookup(p["emb.spk"], spk),
        ], axis=-1)
        return encoder(x, lengths)

    def _finish_init(self, p, vocab):
        for tensor in p.values():
            tensor.data = to_f32_grid(tensor.data)
        self.params_ = p
        self.vocab_ = vocab
        self.classes_ = np.array([0, 1])
        self.history_ = []

    # subclasses provide _encode_inputs(X) -> list of cached encodings and
    # _logits(encoded, training, rng) -> (B, 2) tensor

    def _fit_loop(self, enc_train, y, enc_valid, y_valid):
        if self.epochs <= 0:
            return self
        opt = Optimizer(self._param_list(), "adam", self.learning_rate, self.decay_factor)
        rng = np.random.default_rng(self.random_state + 1)
        best_acc, best, stale = -1.0, None, 0
        for epoch in range(self.epochs):
            total = 0.0
            for idx in minibatches(len(enc_train), self.batch_size, rng):
                with Tape() as tape:
                    logits = self._logits([enc_train[i] for i in idx], True, rng)
                    loss = ops.cross_entropy(logits, y[idx])
                backward(tape, loss)
                opt.step()
                total += loss.item()
            record = {"epoch": epoch + 1, "train_loss": total / len(enc_train), "lr": opt.learning_rate}
            if enc_valid is not None:
                acc = float((self._predict_encoded(enc_valid) == y_valid).mean())
                record["valid_accuracy"] = acc
                if acc > best_acc:
                    best_acc, best, stale = acc, self.get_weights(), 0
                else:
                    stale += 1
                    opt.decay()
            self.history_.append(record)
            if self.verbose:
                log.info("%s %s", type(self).__name__, record)
            if enc_valid is not None and stale >= self.patience:
                break
        if best is not None:
            self.set_weights(best)
        self._round_params()
        return self

    def _proba_encoded(self, encoded, batch_size=256) -> np.ndarray:
        out = []
        with no_grad():
            for lo in range(0, len(encoded), batch_size):
                logits = self._logits(encoded[lo:lo + batch_size], False, None)
                out.append(ops.softmax(logits, axis=-1).data)
        return np.concatenate(out, axis=0) if out else np.zeros((0, 2))

    def _predict_encoded(self, encoded) -> np.ndarray:
        return (self._proba_encoded(encoded)[:, 1] > 0.5).astype(np.int64)

    def predict_proba(self, X) -> np.ndarray:
        self._check_fitted()
        return self._proba_encoded(self._encode_inputs(X))

    def predict(self, X) -> np.ndarray:
        return (self.predict_proba(X)[:, 1] > 0.5).astype(np.int64)

    def mean_loss(self, X, y) -> float:
        """Average cross-entropy per sample (dropout off)."""
        self._check_fitted()
        y = check_labels(y)
        enc = self._encode_inputs(X)
        with no_grad():
            return ops.cross_entropy(self._logits(enc, False, None), y).item() / len(y)


def _as_path_input(item):
    try:
        history, r_a, r_u = item
    except (TypeError, ValueError):
        raise ValueError("decision inputs must be (history, r_a, r_u) triples") from None
    return check_history(history), list(r_a), list(r_u)


class DecisionModel(_TaggedClassifier):
    """Wait/answer classifier over the history and both simulated futures.

    ``X`` is a sequence of ``(history, r_a, r_u)`` triples where ``r_a`` and
    ``r_u`` are token lists (possibly empty). ``predict`` returns 0 (wait) or
    1 (answer). Model selection uses validation accuracy with early stopping
    after ``patience`` epochs without improvement.
    """

    def __init__(self, token_dim=64, tag_dim=8, widths=(3, 4, 5), n_filters=100, fusion_dim=100,
                 hidden_dim=100, dropout=0.3, encoder="textcnn", rnn_hidden=64, epochs=30,
                 batch_size=64, learning_rate=1e-3, decay_factor=0.5, patience=6, max_turn=20,
                 max_sub_turn=8, max_len=64, min_freq=1, random_state=0, verbose=False):
        self.token_dim = token_dim
        self.tag_dim = tag_dim
        self.widths = widths
        self.n_filters = n_filters
        self.fusion_dim = fusion_dim
        self.hidden_dim = hidden_dim
        self.dropout = dropout
        self.encoder = encoder
        self.rnn_hidden = rnn_hidden
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

    def initialize(self, vocab: Vocabulary) -> "DecisionModel":
        rng = np.random.default_rng(self.random_state)
        p: dict = {}
        n_in = self._init_embeddings(p, vocab, rng)
        self.encoders_ = {name: self._make_encoder(p, f"enc.{name}", n_in, rng) for name in ("x", "a", "u")}
        c = self.encoders_["x"].out_dim
        f, h = self.fusion_dim, self.hidden_dim
        add_param(p, "fuse.a.w", uniform_init(rng, (2 * c, f)))
        add_param(p, "fuse.a.b", np.zeros(f))
        add_param(p, "fuse.u.w", uniform_init(rng, (2 * c, f)))
        add_param(p, "fuse.u.b", np.zeros(f))
        add_param(p, "hidden.w", uniform_init(rng, (2 * f, h)))
        add_param(p, "hidden.b", np.zeros(h))
        add_param(p, "out.w", uniform_init(rng, (h, 2)))
        add_param(p, "out.b", np.zeros(2))
        self._finish_init(p, vocab)
        return self

    def _encode_inputs(self, X) -> list:
        out = []
        for item in X:
            history, r_a, r_u = _as_path_input(item)
            tags_a, tags_u = future_tags(history, self.caps)
            out.append((encode_history(history, self.vocab_, self.caps, terminal=True),
                        encode_future(r_a, tags_a, self.vocab_, self.caps),
                        encode_future(r_u, tags_u, self.vocab_, self.caps)))
        return out

    def _features(self, encoded, training=False, rng=None):
        feats = []
        for k, name in enumerate(("x", "a", "u")):
            c = self._encode_batch(self.encoders_[name], [e[k] for e in encoded])
            feats.append(dropout(c, self.dropout, rng, training))
        return feats

    def _classify(self, cx, ca, cu):
        p = self.params_
        d_a = ops.add(ops.matmul(ops.concat([cx, ca], axis=-1), p["fuse.a.w"]), p["fuse.a.b"])
        d_u = ops.add(ops.matmul(ops.concat([cx, cu], axis=-1), p["fuse.u.w"]), p["fuse.u.b"])
        hidden = ops.relu(ops.add(ops.matmul(ops.concat([d_a, d_u], axis=-1), p["hidden.w"]), p["hidden.b"]))
        return ops.add(ops.matmul(hidden, p["out.w"]), p["out.b"])

    def _logits(self, encoded, training, rng):
        return self._classify(*self._features(encoded, training, rng))

    def fit(self, X, y, X_valid=None, y_valid=None, vocab=None):
        X = [_as_path_input(item) for item in X]
        y = check_labels(y)
        if len(X) != len(y):
            raise ValueError(f"{len(X)} inputs but {len(y)} labels")
        if not X:
            raise ValueError("cannot train a decision model on an empty sample set")
        if vocab is None:
            vocab = build_vocabulary([u for h, _, _ in X for u in h] + [t for _, a, u in X for t in (a, u)],
                                     self.min_freq)
        self.initialize(vocab)
        enc_valid = y_valid_arr = None
        if X_valid is not None and len(X_valid):
            enc_valid, y_valid_arr = self._encode_inputs(X_valid), check_labels(y_valid)
        return self._fit_loop(self._encode_inputs(X), y, enc_valid, y_valid_arr)

    def loss(self, X, y, training=False, rng=None):
        """Summed cross-entropy over ``X`` as a differentiable tensor."""
        self._check_fitted()
        return ops.cross_entropy(self._logits(self._encode_inputs(X), training, rng), check_labels(y))

    def decide(self, history, r_a, r_u) -> Decision:
        history = check_decision_point(history)
        p_answer = float(self.predict_proba([(history, r_a, r_u)])[0, 1])
        return Decision(label_from_p_answer(p_answer), p_answer, list(r_u), list(r_a))


def encode_path_features(model: DecisionModel, history, r_a, r_u, vocab: Vocabulary = None):
    """(C_x, C_a, C_u) feature vectors for one input, dropout off."""
    model._check_fitted()
    if vocab is not None and vocab != model.vocab_:
        raise ValueError("vocabulary differs from the model's")
    with no_grad():
        feats = model._features(model._encode_inputs([(history, r_a, r_u)]))
    return tuple(f.data[0].copy() for f in feats)


def classify(model: DecisionModel, c_x, c_a, c_u) -> np.ndarray:
    """Wait/answer distribution from precomputed path features."""
    model._check_fitted()
    dim = model.encoders_["x"].out_dim
    arrs = [np.asarray(c, dtype=np.float64).reshape(-1) for c in (c_x, c_a, c_u)]
    if any(a.shape != (dim,) for a in arrs):
        raise ShapeError(f"classify: features must each have length {dim}, got {[a.shape for a in arrs]}")
    with no_grad():
        logits = model._classify(*(constant(a[None, :]) for a in arrs))
        return ops.softmax(logits, axis=-1).data[0]


def train_decision_model(samples, valid=None, config=None, vocab=None) -> DecisionModel:
    """Train on ``(history, r_a, r_u, label)`` tuples."""
    samples = list(samples)
    X = [s[:3] for s in samples]
    y = [s[3] for s in samples]
    Xv = yv = None
    if valid:
        Xv = [s[:3] for s in valid]
        yv = [s[3] for s in valid]
    return DecisionModel(**dict(config or {})).fit(X, y, Xv, yv, vocab=vocab)


def decide(model: DecisionModel, history, r_a, r_u, vocab: Vocabulary = None) -> Decision:
    if vocab is not None and vocab != model.vocab_:
        raise ValueError("vocabulary differs from the model's")
    return model.decide(history, r_a, r_u)
