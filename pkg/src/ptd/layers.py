"""Recurrent and convolutional building blocks shared by the models.

Parameters live in plain ``dict[str, Tensor]`` stores keyed by dotted names;
the helpers here create entries under a prefix and compose ops over them.
"""
from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from .numerics import ops
from .numerics.init import kaiming_normal, uniform_init
from .numerics.tensor import Tensor, constant, parameter

Params = dict


def add_param(params: Params, name: str, value: np.ndarray) -> Tensor:
    if name in params:
        raise KeyError(f"duplicate parameter {name!r}")
    t = parameter(value, name=name)
    params[name] = t
    return t


def stack_time(steps: Sequence[Tensor]) -> Tensor:
    """List of (B, H) tensors -> (B, T, H)."""
    B, H = steps[0].shape
    return ops.concat([ops.reshape(s, (B, 1, H)) for s in steps], axis=1)


# ---------------------------------------------------------------- LSTM

def init_lstm(params: Params, prefix: str, n_in: int, hidden: int, rng, forget_bias: float = 1.0) -> None:
    add_param(params, f"{prefix}.w_x", uniform_init(rng, (n_in, 4 * hidden)))
    add_param(params, f"{prefix}.w_h", uniform_init(rng, (hidden, 4 * hidden)))
    b = uniform_init(rng, (4 * hidden,))
    b[hidden:2 * hidden] += forget_bias  # start with the cell state mostly kept
    add_param(params, f"{prefix}.b", b)


def lstm_cell(x_proj: Tensor, h: Tensor, c: Tensor, w_h: Tensor):
    """One LSTM step given the precomputed input projection ``x W_x + b``.

    Gate order in the 4H axis is input, forget, candidate, output.
    """
    H = h.shape[-1]
    z = ops.add(x_proj, ops.matmul(h, w_h))
    i = ops.sigmoid(ops.slice(z, (slice(None), slice(0, H))))
    f = ops.sigmoid(ops.slice(z, (slice(None), slice(H, 2 * H))))
    g = ops.tanh(ops.slice(z, (slice(None), slice(2 * H, 3 * H))))
    o = ops.sigmoid(ops.slice(z, (slice(None), slice(3 * H, 4 * H))))
    c_new = ops.add(ops.elementwise_mul(f, c), ops.elementwise_mul(i, g))
    h_new = ops.elementwise_mul(o, ops.tanh(c_new))
    return h_new, c_new


def run_lstm(params: Params, prefix: str, x: Tensor, lengths: Optional[np.ndarray] = None,
             h0: Optional[Tensor] = None, c0: Optional[Tensor] = None):
    """Run an LSTM over (B, T, D) input.

    With ``lengths`` the state stops updating past each row's length, so the
    returned final state is the state at the last real position.
    Returns (outputs (B, T, H), h_final, c_final).
    """
    w_x, w_h, b = params[f"{prefix}.w_x"], params[f"{prefix}.w_h"], params[f"{prefix}.b"]
    B, T, _ = x.shape
    H = w_h.shape[0]
    x_proj = ops.add(ops.matmul(x, w_x), b)
    h = h0 if h0 is not None else constant(np.zeros((B, H)))
    c = c0 if c0 is not None else constant(np.zeros((B, H)))
    hc = ops.lstm_sequence(x_proj, h, c, w_h, lengths)
    outs = ops.slice(hc, (slice(None), slice(None), slice(0, H)))
    h_last = ops.slice(hc, (slice(None), T - 1, slice(0, H)))
    c_last = ops.slice(hc, (slice(None), T - 1, slice(H, 2 * H)))
    return outs, h_last, c_last


def run_lstm_unfused(params: Params, prefix: str, x: Tensor, lengths: Optional[np.ndarray] = None,
                     h0: Optional[Tensor] = None, c0: Optional[Tensor] = None):
    """Step-by-step composition of :func:`lstm_cell`; a reference for the fused path."""
    w_x, w_h, b = params[f"{prefix}.w_x"], params[f"{prefix}.w_h"], params[f"{prefix}.b"]
    B, T, _ = x.shape
    H = w_h.shape[0]
    x_proj = ops.add(ops.matmul(x, w_x), b)
    h = h0 if h0 is not None else constant(np.zeros((B, H)))
    c = c0 if c0 is not None else constant(np.zeros((B, H)))
    outs = []
    for t in range(T):
        h_new, c_new = lstm_cell(ops.slice(x_proj, (slice(None), t)), h, c, w_h)
        if lengths is not None and (lengths <= t).any():
            m = constant((lengths > t).astype(np.float64)[:, None])
            h_new = ops.add(h, ops.elementwise_mul(m, ops.sub(h_new, h)))
            c_new = ops.add(c, ops.elementwise_mul(m, ops.sub(c_new, c)))
        h, c = h_new, c_new
        outs.append(h)
    return stack_time(outs), h, c


def lstm_step_np(x_proj: np.ndarray, h: np.ndarray, c: np.ndarray, w_h: np.ndarray):
    """Plain-numpy twin of :func:`lstm_cell` used on inference paths."""
    H = h.shape[-1]
    z = x_proj + h @ w_h
    i = 0.5 * (1.0 + np.tanh(0.5 * z[:, :H]))
    f = 0.5 * (1.0 + np.tanh(0.5 * z[:, H:2 * H]))
    g = np.tanh(z[:, 2 * H:3 * H])
    o = 0.5 * (1.0 + np.tanh(0.5 * z[:, 3 * H:]))
    c_new = f * c + i * g
    return o * np.tanh(c_new), c_new


# ---------------------------------------------------------------- GRU

def init_gru(params: Params, prefix: str, n_in: int, hidden: int, rng) -> None:
    add_param(params, f"{prefix}.w_x", uniform_init(rng, (n_in, 3 * hidden)))
    add_param(params, f"{prefix}.w_h", uniform_init(rng, (hidden, 3 * hidden)))
    add_param(params, f"{prefix}.b", uniform_init(rng, (3 * hidden,)))


def gru_cell(x_proj: Tensor, h: Tensor, w_h: Tensor) -> Tensor:
    """GRU step; gate order reset, update, candidate."""
    H = h.shape[-1]
    hz = ops.matmul(h, w_h)
    r = ops.sigmoid(ops.add(ops.slice(x_proj, (slice(None), slice(0, H))),
                            ops.slice(hz, (slice(None), slice(0, H)))))
    u = ops.sigmoid(ops.add(ops.slice(x_proj, (slice(None), slice(H, 2 * H))),
                            ops.slice(hz, (slice(None), slice(H, 2 * H)))))
    n = ops.tanh(ops.add(ops.slice(x_proj, (slice(None), slice(2 * H, 3 * H))),
                         ops.elementwise_mul(r, ops.slice(hz, (slice(None), slice(2 * H, 3 * H))))))
    # h' = n + u * (h - n)
    return ops.add(n, ops.elementwise_mul(u, ops.sub(h, n)))


def run_gru_final(params: Params, prefix: str, x: Tensor, lengths: np.ndarray) -> Tensor:
    """Final GRU state of each row of a right-padded (B, T, D) batch."""
    w_x, w_h, b = params[f"{prefix}.w_x"], params[f"{prefix}.w_h"], params[f"{prefix}.b"]
    B, T, _ = x.shape
    x_proj = ops.add(ops.matmul(x, w_x), b)
    h = constant(np.zeros((B, w_h.shape[0])))
    for t in range(T):
        h_new = gru_cell(ops.slice(x_proj, (slice(None), t)), h, w_h)
        if (lengths <= t).any():
            m = constant((lengths > t).astype(np.float64)[:, None])
            h_new = ops.add(h, ops.elementwise_mul(m, ops.sub(h_new, h)))
        h = h_new
    return h


def reverse_padded(ids: np.ndarray, lengths: np.ndarray) -> np.ndarray:
    """Index array that reverses the first ``lengths[i]`` steps of each row."""
    B, T = ids.shape[:2]
    idx = np.tile(np.arange(T), (B, 1))
    for i, n in enumerate(lengths):
        idx[i, :n] = np.arange(n)[::-1]
    return idx


# ---------------------------------------------------------------- encoders

class TextCNNEncoder:
    """Kim-style encoder: parallel filter widths, ReLU, max-over-time pooling.

    Output width is ``len(widths) * n_filters`` whatever the input length.
    """

    def __init__(self, params: Params, prefix: str, n_in: int, widths=(3, 4, 5),
                 n_filters: int = 100, rng=None):
        self.prefix = prefix
        self.widths = tuple(int(w) for w in widths)
        self.n_filters = n_filters
        if rng is not None:
            for k in self.widths:
                add_param(params, f"{prefix}.conv{k}.w",
                          kaiming_normal(rng, (k * n_in, n_filters), fan_in=k * n_in))
                add_param(params, f"{prefix}.conv{k}.b", np.zeros(n_filters))
        self.params = params

    @property
    def out_dim(self) -> int:
        return len(self.widths) * self.n_filters

    @property
    def min_len(self) -> int:
        return max(self.widths)

    def __call__(self, x: Tensor, lengths: np.ndarray) -> Tensor:
        """``x`` is (B, L, D) with L >= max width; ``lengths`` real lengths (>= max width)."""
        ws = [self.params[f"{self.prefix}.conv{k}.w"] for k in self.widths]
        bs = [self.params[f"{self.prefix}.conv{k}.b"] for k in self.widths]
        maps = ops.conv1d_multi_width(x, ws, bs, self.widths)
        pooled = []
        for k, fmap in zip(self.widths, maps):
            valid = np.asarray(lengths) - k + 1
            pooled.append(ops.max_over_time_pool(ops.relu(fmap), valid))
        return ops.concat(pooled, axis=-1)


class BiGRUEncoder:
    """Bi-directional GRU; concatenated final states of both directions."""

    def __init__(self, params: Params, prefix: str, n_in: int, hidden: int = 128, rng=None):
        self.prefix = prefix
        self.hidden = hidden
        if rng is not None:
            init_gru(params, f"{prefix}.fwd", n_in, hidden, rng)
            init_gru(params, f"{prefix}.bwd", n_in, hidden, rng)
        self.params = params

    @property
    def out_dim(self) -> int:
        return 2 * self.hidden

    min_len = 1

    def __call__(self, x: Tensor, lengths: np.ndarray) -> Tensor:
        fwd = run_gru_final(self.params, f"{self.prefix}.fwd", x, lengths)
        B, T, D = x.shape
        rev = reverse_padded(np.zeros((B, T), dtype=np.int64), lengths)
        x_rev = ops.slice(x, (np.arange(B)[:, None], rev))
        bwd = run_gru_final(self.params, f"{self.prefix}.bwd", x_rev, lengths)
        return ops.concat([fwd, bwd], axis=-1)


def dropout(x: Tensor, rate: float, rng, training: bool) -> Tensor:
    """Inverted dropout; identity at inference or when ``rate`` is 0."""
    if not training or rate <= 0:
        return x
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return ops.elementwise_mul(x, constant(keep))
