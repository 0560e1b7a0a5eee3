"""User and agent prediction models.

An LSTM encoder reads the tag-augmented history (token, turn, sub-turn and
speaker embeddings concatenated per position). An LSTM decoder, initialised
from the final encoder state, attends over the encoder states with a bilinear
("general") score; the attended context and decoder state are combined,
projected to the vocabulary and normalised with a softmax.

Training minimises the summed negative log-likelihood of the gold target
(EOS included) under teacher forcing. Generation is beam search with no length
normalisation.
"""
from __future__ import annotations

import copy
import logging
from dataclasses import dataclass, field

import numpy as np

from .base import NeuralEstimator, check_history, minibatches, to_f32_grid
from .corpus.samples import ROLES
from .corpus.vocab import BOS, EOS, PAD, TagCaps, Vocabulary, build_vocabulary, encode_history, pad_batch
from .layers import add_param, init_lstm, lstm_step_np, run_lstm
from .metrics import bleu_cumulative
from .numerics import Optimizer, Tape, backward, constant, no_grad, ops, uniform_init

log = logging.getLogger(__name__)

NEG_INF_MASK = -1e9


@dataclass
class GenerationResult:
    tokens: list
    log_prob: float
    all_beams: list = field(default_factory=list)
    ids: list = field(default_factory=list)
    completed: bool = True


def _log_softmax_np(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


class PredictionModel(NeuralEstimator):
    """Seq2seq generator for one speaker role.

    ``fit`` takes :class:`~ptd.corpus.PredictionSample` lists; ``predict``
    maps histories to generated token lists. The model with the best
    validation loss is kept; the learning rate is halved whenever the
    validation loss fails to improve.
    """

    def __init__(self, role="user", token_dim=64, tag_dim=8, hidden_size=128, beam_size=4,
                 max_gen_len=30, epochs=30, batch_size=64, learning_rate=1e-3, decay_factor=0.5,
                 max_grad_norm=5.0, max_turn=20, max_sub_turn=8, max_len=40, min_freq=1,
                 random_state=0, verbose=False):
        self.role = role
        self.token_dim = token_dim
        self.tag_dim = tag_dim
        self.hidden_size = hidden_size
        self.beam_size = beam_size
        self.max_gen_len = max_gen_len
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.decay_factor = decay_factor
        self.max_grad_norm = max_grad_norm
        self.max_turn = max_turn
        self.max_sub_turn = max_sub_turn
        self.max_len = max_len
        self.min_freq = min_freq
        self.random_state = random_state
        self.verbose = verbose

    # ------------------------------------------------------------ setup

    @property
    def caps(self) -> TagCaps:
        return TagCaps(self.max_turn, self.max_sub_turn, self.max_len)

    def initialize(self, vocab: Vocabulary) -> "PredictionModel":
        if self.role not in ROLES:
            raise ValueError(f"role must be one of {ROLES}, got {self.role!r}")
        rng = np.random.default_rng(self.random_state)
        V, d, t, h = len(vocab), self.token_dim, self.tag_dim, self.hidden_size
        p: dict = {}
        table = uniform_init(rng, (V, d))
        table[PAD] = 0.0
        add_param(p, "emb.tok", table)
        add_param(p, "emb.turn", uniform_init(rng, (self.max_turn + 1, t)))
        add_param(p, "emb.sub", uniform_init(rng, (self.max_sub_turn + 1, t)))
        add_param(p, "emb.spk", uniform_init(rng, (2, t)))
        init_lstm(p, "enc", d + 3 * t, h, rng)
        init_lstm(p, "dec", d, h, rng)
        add_param(p, "att.w", uniform_init(rng, (h, h)))
        add_param(p, "att.out.w", uniform_init(rng, (2 * h, h)))
        add_param(p, "att.out.b", uniform_init(rng, (h,)))
        add_param(p, "out.w", uniform_init(rng, (h, V)))
        add_param(p, "out.b", uniform_init(rng, (V,)))
        for tensor in p.values():
            tensor.data = to_f32_grid(tensor.data)
        self.params_ = p
        self.vocab_ = vocab
        self.history_ = []
        return self

    # ------------------------------------------------------------ encoding

    def _encode_sample(self, sample):
        enc = encode_history(sample.history, self.vocab_, self.caps)
        ids = self.vocab_.encode(sample.target.tokens)
        return enc, ids

    def _batch_arrays(self, encoded):
        tok, turn, sub, spk, lengths = pad_batch([e for e, _ in encoded])
        T = max(len(ids) for _, ids in encoded) + 1
        dec_in = np.full((len(encoded), T), PAD, dtype=np.int64)
        dec_out = np.full((len(encoded), T), PAD, dtype=np.int64)
        weights = np.zeros((len(encoded), T))
        for i, (_, ids) in enumerate(encoded):
            n = len(ids) + 1
            dec_in[i, :n] = [BOS] + ids
            dec_out[i, :n] = ids + [EOS]
            weights[i, :n] = 1.0
        return (tok, turn, sub, spk, lengths), dec_in, dec_out, weights

    def _embed(self, tok, turn, sub, spk):
        p = self.params_
        return ops.concat([
            ops.embedding_lookup(p["emb.tok"], tok, padding_idx=PAD),
            ops.embedding_lookup(p["emb.turn"], turn),
            ops.embedding_lookup(p["emb.sub"], sub),
            ops.embedding_lookup(p["emb.spk"], spk),
        ], axis=-1)

    def _loss(self, src, dec_in, dec_out, weights):
        """Summed teacher-forced NLL of a padded batch (a scalar tensor)."""
        p = self.params_
        tok, turn, sub, spk, lengths = src
        x = self._embed(tok, turn, sub, spk)
        H, h, c = run_lstm(p, "enc", x, lengths)
        y = ops.embedding_lookup(p["emb.tok"], dec_in, padding_idx=PAD)
        Hd, _, _ = run_lstm(p, "dec", y, None, h0=h, c0=c)
        S = H.shape[1]
        mask = np.where(np.arange(S)[None, None, :] < lengths[:, None, None], 0.0, NEG_INF_MASK)
        scores = ops.add(ops.matmul(ops.matmul(Hd, p["att.w"]), ops.transpose(H)), constant(mask))
        alpha = ops.softmax(scores, axis=-1)
        ctx = ops.matmul(alpha, H)
        att = ops.tanh(ops.add(ops.matmul(ops.concat([ctx, Hd], axis=-1), p["att.out.w"]), p["att.out.b"]))
        logits = ops.add(ops.matmul(att, p["out.w"]), p["out.b"])
        return ops.cross_entropy(logits, dec_out, weights)

    def batch_loss(self, samples):
        self._check_fitted()
        return self._loss(*self._batch_arrays([self._encode_sample(s) for s in samples]))

    # ------------------------------------------------------------ training

    def fit(self, samples, valid_samples=None, vocab=None):
        samples = list(samples)
        if not samples:
            raise ValueError("cannot train a prediction model on an empty sample set")
        if vocab is None:
            vocab = build_vocabulary(samples, self.min_freq)
        self.initialize(vocab)
        if self.epochs <= 0:
            return self
        train = [self._encode_sample(s) for s in samples]
        valid = [self._encode_sample(s) for s in valid_samples] if valid_samples else None
        params = self._param_list()
        opt = Optimizer(params, "adam", self.learning_rate, self.decay_factor,
                        max_grad_norm=self.max_grad_norm)
        rng = np.random.default_rng(self.random_state + 1)
        best_loss, best = np.inf, None
        for epoch in range(self.epochs):
            total = 0.0
            for idx in minibatches(len(train), self.batch_size, rng):
                with Tape() as tape:
                    loss = self._loss(*self._batch_arrays([train[i] for i in idx]))
                backward(tape, loss)
                opt.step()
                total += loss.item()
            n_tok = sum(len(ids) + 1 for _, ids in train)
            record = {"epoch": epoch + 1, "train_loss": total / n_tok, "lr": opt.learning_rate}
            if valid:
                vloss = self._mean_token_loss(valid)
                record["valid_loss"] = vloss
                if vloss < best_loss:
                    best_loss, best = vloss, self.get_weights()
                else:
                    opt.decay()
            self.history_.append(record)
            if self.verbose:
                log.info("%s prediction model %s", self.role, record)
        if best is not None:
            self.set_weights(best)
        self._round_params()
        return self

    def _mean_token_loss(self, encoded) -> float:
        total = 0.0
        with no_grad():
            for idx in minibatches(len(encoded), 256):
                total += self._loss(*self._batch_arrays([encoded[i] for i in idx])).item()
        return total / sum(len(ids) + 1 for _, ids in encoded)

    def mean_token_loss(self, samples) -> float:
        self._check_fitted()
        return self._mean_token_loss([self._encode_sample(s) for s in samples])

    # ------------------------------------------------------------ inference

    def _encode_np(self, encs):
        """Plain-numpy encoder over a batch; returns per-row state arrays."""
        p = {k: v.data for k, v in self.params_.items()}
        tok, turn, sub, spk, lengths = pad_batch(encs)
        x = np.concatenate([p["emb.tok"][tok], p["emb.turn"][turn], p["emb.sub"][sub],
                            p["emb.spk"][spk]], axis=-1)
        xp = x @ p["enc.w_x"] + p["enc.b"]
        B, S = tok.shape
        H = p["enc.w_h"].shape[0]
        h = np.zeros((B, H))
        c = np.zeros((B, H))
        outs = np.zeros((B, S, H))
        for t in range(S):
            hn, cn = lstm_step_np(xp[:, t], h, c, p["enc.w_h"])
            m = (lengths > t)[:, None]
            h = np.where(m, hn, h)
            c = np.where(m, cn, c)
            outs[:, t] = h
        return [(outs[i, :lengths[i]], h[i], c[i]) for i in range(B)]

    def _step_np(self, p, tokens, h, c, enc):
        xp = p["emb.tok"][tokens] @ p["dec.w_x"] + p["dec.b"]
        h, c = lstm_step_np(xp, h, c, p["dec.w_h"])
        scores = (h @ p["att.w"]) @ enc.T
        alpha = np.exp(scores - scores.max(axis=-1, keepdims=True))
        alpha /= alpha.sum(axis=-1, keepdims=True)
        ctx = alpha @ enc
        att = np.tanh(np.concatenate([ctx, h], axis=-1) @ p["att.out.w"] + p["att.out.b"])
        logits = att @ p["out.w"] + p["out.b"]
        return _log_softmax_np(logits), h, c

    def _beam_search(self, enc, h0, c0, beam_size, max_len) -> GenerationResult:
        p = {k: v.data for k, v in self.params_.items()}
        V = p["out.w"].shape[1]
        live_tokens = [[]]
        live_scores = np.zeros(1)
        h, c = h0[None, :], c0[None, :]
        completed = []  # (score, ids)
        for _ in range(max_len):
            last = np.array([t[-1] if t else BOS for t in live_tokens])
            logp, h, c = self._step_np(p, last, h, c, enc)
            cand = (live_scores[:, None] + logp).reshape(-1)
            beam_idx = np.repeat(np.arange(len(live_tokens)), V)
            tok_idx = np.tile(np.arange(V), len(live_tokens))
            order = np.lexsort((beam_idx, tok_idx, -cand))
            new_rows, new_tokens, new_scores = [], [], []
            for rank, j in enumerate(order):
                if len(new_rows) == beam_size:
                    break
                b, tkn, sc = beam_idx[j], tok_idx[j], cand[j]
                if tkn == EOS:
                    if rank < beam_size:
                        completed.append((float(sc), live_tokens[b]))
                    continue
                new_rows.append(b)
                new_tokens.append(live_tokens[b] + [int(tkn)])
                new_scores.append(sc)
            rows = np.array(new_rows, dtype=np.int64)
            live_tokens, live_scores = new_tokens, np.array(new_scores)
            h, c = h[rows], c[rows]
            if completed and max(s for s, _ in completed) >= live_scores.max():
                break  # scores only decrease, nothing live can overtake
        beams = [(s, ids, True) for s, ids in completed]
        beams += [(float(s), ids, False) for s, ids in zip(live_scores, live_tokens)] if not completed else []
        beams.sort(key=lambda b: (-b[0], b[1]))
        best_score, best_ids, done = beams[0]
        return GenerationResult(
            tokens=self.vocab_.decode(best_ids), log_prob=best_score,
            all_beams=[(self.vocab_.decode(ids), s) for s, ids, _ in beams],
            ids=list(best_ids), completed=done)

    def generate_many(self, histories, beam_size=None, max_len=None, batch_size=256) -> list:
        """Beam-search generations for a list of histories, in input order."""
        self._check_fitted()
        beam_size = self.beam_size if beam_size is None else beam_size
        max_len = self.max_gen_len if max_len is None else max_len
        if beam_size < 1 or max_len < 1:
            raise ValueError("beam_size and max_len must be >= 1")
        encs = [encode_history(check_history(h), self.vocab_, self.caps) for h in histories]
        out = []
        for lo in range(0, len(encs), batch_size):
            for enc, h0, c0 in self._encode_np(encs[lo:lo + batch_size]):
                out.append(self._beam_search(enc, h0, c0, beam_size, max_len))
        return out

    def generate(self, history, beam_size=None, max_len=None) -> GenerationResult:
        return self.generate_many([history], beam_size, max_len)[0]

    def predict(self, histories) -> list:
        return [r.tokens for r in self.generate_many(histories)]

    def sequence_log_prob(self, history, token_ids, include_eos=True) -> float:
        """Log-probability of ``token_ids`` (then EOS) given ``history``, via the training graph."""
        self._check_fitted()
        enc = encode_history(check_history(history), self.vocab_, self.caps)
        src, dec_in, dec_out, weights = self._batch_arrays([(enc, list(token_ids))])
        if not include_eos:
            weights[0, len(token_ids)] = 0.0
        with no_grad():
            return -self._loss(src, dec_in, dec_out, weights).item()

    def score(self, samples, y=None) -> float:
        """Corpus BLEU of beam-search output against the samples' targets."""
        samples = list(samples)
        preds = self.predict([s.history for s in samples])
        return bleu_cumulative(preds, [s.target.tokens for s in samples])


def forward_teacher_forced(model: PredictionModel, sample, vocab: Vocabulary = None):
    """Scalar teacher-forced loss tensor for one sample (differentiable under a tape)."""
    if vocab is not None and vocab != model.vocab_:
        raise ValueError("vocabulary differs from the model's")
    return model.batch_loss([sample])


def generate(model: PredictionModel, history, vocab: Vocabulary = None, beam_size: int = 4,
             max_len: int = 30) -> GenerationResult:
    if vocab is not None and vocab != model.vocab_:
        raise ValueError("vocabulary differs from the model's")
    return model.generate(history, beam_size, max_len)


def train_prediction_model(samples, valid_samples=None, config=None, vocab=None) -> PredictionModel:
    config = dict(config or {})
    return PredictionModel(**config).fit(samples, valid_samples, vocab=vocab)


def clone_untrained(model: PredictionModel) -> PredictionModel:
    return copy.deepcopy(model)
