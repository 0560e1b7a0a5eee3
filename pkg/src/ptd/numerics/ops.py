"""Differentiable operations over :class:`~ptd.numerics.tensor.Tensor`.

Every op computes its forward value with numpy, checks it is finite and, when a
tape is active and some input requires a gradient, records a node whose
closure maps the output gradient to input gradients.

Shape rules
-----------
matmul            numpy ``@`` semantics; a 2-D right operand broadcasts over
                  the leading axes of the left one, 3-D operands must agree on
                  the batch axis.
add / sub / mul   numpy broadcasting; gradients are summed back to the input
                  shape.
concat            equal shapes except along ``axis``.
embedding_lookup  ``table`` is (V, d); ``ids`` is an integer array of any shape.
conv1d            ``x`` is (B, L, D), ``weight`` is (width * D, F), ``bias`` (F,).
max_over_time_pool
                  ``x`` is (B, T, F); optional ``valid`` gives the number of
                  leading time steps to pool per row (>= 1).
cross_entropy     ``logits`` (..., C) against integer ``targets`` (...), summed.
"""
from __future__ import annotations

import builtins
from typing import Optional, Sequence

import numpy as np

from .tensor import DTYPE, Node, NonFiniteError, ShapeError, SparseGrad, Tensor, active_tape

__all__ = [
    "matmul", "add", "sub", "elementwise_mul", "concat", "embedding_lookup",
    "sigmoid", "tanh", "relu", "softmax", "log_softmax", "conv1d",
    "conv1d_multi_width", "max_over_time_pool", "cross_entropy", "slice",
    "sum", "reshape", "transpose", "lstm_sequence", "forward", "OPS",
]


def _emit(kind: str, inputs: Sequence[Tensor], out: np.ndarray, backward_fn) -> Tensor:
    if not np.isfinite(out).all():
        shapes = ", ".join(str(t.shape) for t in inputs)
        raise NonFiniteError(f"{kind}: non-finite output for inputs of shape {shapes}")
    tape = active_tape()
    needs = tape is not None and any(t.requires_grad for t in inputs)
    result = Tensor(out, requires_grad=needs)
    if needs:
        tape.record(Node(kind, inputs, result, backward_fn))
    return result


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _broadcast_shapes(kind: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{kind}: cannot broadcast shapes {a.shape} and {b.shape}") from None


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim < 1 or b.data.ndim < 1 or a.shape[-1] != b.shape[-2 if b.data.ndim > 1 else 0]:
        raise ShapeError(f"matmul: inner dimensions differ for shapes {a.shape} and {b.shape}")
    if a.data.ndim >= 3 and b.data.ndim >= 3 and a.shape[:-2] != b.shape[:-2]:
        raise ShapeError(f"matmul: batch dimensions differ for shapes {a.shape} and {b.shape}")
    A, B = a.data, b.data
    out = A @ B

    def back(g):
        ga = gb = None
        if a.requires_grad:
            ga = g @ np.swapaxes(B, -1, -2) if B.ndim > 1 else np.multiply.outer(g, B)
            ga = _unbroadcast(ga, A.shape)
        if b.requires_grad:
            if B.ndim == 2 and A.ndim > 2:
                gb = A.reshape(-1, A.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            elif A.ndim == 1:
                gb = np.multiply.outer(A, g)
            else:
                gb = np.swapaxes(A, -1, -2) @ g
        return ga, gb

    return _emit("matmul", (a, b), out, back)


def add(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shapes("add", a, b)
    out = a.data + b.data
    return _emit("add", (a, b), out,
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shapes("sub", a, b)
    out = a.data - b.data
    return _emit("sub", (a, b), out,
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def elementwise_mul(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shapes("elementwise_mul", a, b)
    A, B = a.data, b.data
    out = A * B

    def back(g):
        ga = _unbroadcast(g * B, A.shape) if a.requires_grad else None
        gb = _unbroadcast(g * A, B.shape) if b.requires_grad else None
        return ga, gb

    return _emit("elementwise_mul", (a, b), out, back)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = tuple(tensors)
    if not tensors:
        raise ShapeError("concat: no inputs")
    ndim = tensors[0].data.ndim
    ax = axis % ndim
    for t in tensors[1:]:
        if t.data.ndim != ndim or any(
                s != r for i, (s, r) in enumerate(zip(t.shape, tensors[0].shape)) if i != ax):
            raise ShapeError(f"concat: incompatible shapes {[t.shape for t in tensors]} on axis {axis}")
    out = np.concatenate([t.data for t in tensors], axis=ax)
    bounds = np.cumsum([0] + [t.shape[ax] for t in tensors])

    def back(g):
        grads = []
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            if not t.requires_grad:
                grads.append(None)
                continue
            idx = [builtins.slice(None)] * ndim
            idx[ax] = builtins.slice(lo, hi)
            grads.append(g[tuple(idx)])
        return grads

    return _emit("concat", tensors, out, back)


def embedding_lookup(table: Tensor, ids, padding_idx: Optional[int] = None) -> Tensor:
    """Rows of ``table`` selected by ``ids``; ``padding_idx`` rows get no gradient."""
    ids = np.asarray(ids)
    if table.data.ndim != 2:
        raise ShapeError(f"embedding_lookup: table must be 2-D, got {table.shape}")
    if not np.issubdtype(ids.dtype, np.integer):
        raise ShapeError(f"embedding_lookup: ids must be integers, got dtype {ids.dtype}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ShapeError(f"embedding_lookup: ids out of range for table of shape {table.shape}")
    out = table.data[ids]

    def back(g):
        flat_ids = ids.reshape(-1)
        flat_g = g.reshape(-1, table.shape[1])
        if padding_idx is not None:
            keep = flat_ids != padding_idx
            flat_ids, flat_g = flat_ids[keep], flat_g[keep]
        gt = np.zeros_like(table.data)
        np.add.at(gt, flat_ids, flat_g)
        return (gt,)

    return _emit("embedding_lookup", (table,), out, back)


def sigmoid(x: Tensor) -> Tensor:
    # tanh form cannot overflow for large |x|
    out = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return _emit("sigmoid", (x,), out, lambda g: (g * out * (1.0 - out),))


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return _emit("tanh", (x,), out, lambda g: (g * (1.0 - out * out),))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    out = x.data * mask
    return _emit("relu", (x,), out, lambda g: (g * mask,))


def _softmax(z: np.ndarray, axis: int) -> np.ndarray:
    e = np.exp(z - z.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def _log_softmax(z: np.ndarray, axis: int) -> np.ndarray:
    shifted = z - z.max(axis=axis, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    out = _softmax(x.data, axis)

    def back(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _emit("softmax", (x,), out, back)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    out = _log_softmax(x.data, axis)

    def back(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return _emit("log_softmax", (x,), out, back)


def _windows(x: np.ndarray, width: int) -> np.ndarray:
    # (B, L, D) -> (B, L - width + 1, width * D), rows ordered position-major
    v = np.lib.stride_tricks.sliding_window_view(x, width, axis=1)  # (B, Lo, D, w)
    return np.ascontiguousarray(v.transpose(0, 1, 3, 2)).reshape(x.shape[0], -1, width * x.shape[2])


def conv1d(x: Tensor, weight: Tensor, bias: Tensor, width: int) -> Tensor:
    """Valid 1-D convolution over the time axis of a (B, L, D) input."""
    if x.data.ndim != 3:
        raise ShapeError(f"conv1d: input must be (B, L, D), got {x.shape}")
    B, L, D = x.shape
    if weight.shape[0] != width * D or bias.shape != (weight.shape[1],):
        raise ShapeError(
            f"conv1d: weight {weight.shape} / bias {bias.shape} do not fit width {width} over {x.shape}")
    if L < width:
        raise ShapeError(f"conv1d: sequence length {L} shorter than filter width {width}")
    cols = _windows(x.data, width)
    out = cols @ weight.data + bias.data

    def back(g):
        gx = gw = gb = None
        if weight.requires_grad:
            gw = cols.reshape(-1, cols.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        if bias.requires_grad:
            gb = g.reshape(-1, g.shape[-1]).sum(axis=0)
        if x.requires_grad:
            gcols = (g @ weight.data.T).reshape(B, -1, width, D)
            gx = np.zeros_like(x.data)
            n_out = gcols.shape[1]
            for j in range(width):
                gx[:, j:j + n_out, :] += gcols[:, :, j, :]
        return gx, gw, gb

    return _emit("conv1d", (x, weight, bias), out, back)


def conv1d_multi_width(x: Tensor, weights: Sequence[Tensor], biases: Sequence[Tensor],
                       widths: Sequence[int]) -> list[Tensor]:
    """One :func:`conv1d` feature map per filter width."""
    if not (len(weights) == len(biases) == len(widths)):
        raise ShapeError("conv1d_multi_width: weights, biases and widths differ in length")
    return [conv1d(x, w, b, k) for w, b, k in zip(weights, biases, widths)]


def max_over_time_pool(x: Tensor, valid=None) -> Tensor:
    """Max over axis 1 of a (B, T, F) tensor; ties route the gradient to the first maximum."""
    if x.data.ndim != 3:
        raise ShapeError(f"max_over_time_pool: input must be (B, T, F), got {x.shape}")
    B, T, F = x.shape
    data = x.data
    if valid is not None:
        valid = np.asarray(valid)
        if valid.shape != (B,) or valid.min() < 1 or valid.max() > T:
            raise ShapeError(f"max_over_time_pool: bad valid lengths for input {x.shape}")
        if (valid < T).any():
            data = np.where(np.arange(T)[None, :, None] < valid[:, None, None], data, -np.inf)
    arg = data.argmax(axis=1)  # (B, F), first occurrence
    out = np.take_along_axis(x.data, arg[:, None, :], axis=1)[:, 0, :]

    def back(g):
        gx = np.zeros_like(x.data)
        np.put_along_axis(gx, arg[:, None, :], g[:, None, :], axis=1)
        return (gx,)

    return _emit("max_over_time_pool", (x,), out, back)


def cross_entropy(logits: Tensor, targets, weights=None) -> Tensor:
    """Summed negative log-likelihood of integer ``targets`` under softmax(logits).

    ``weights`` (same shape as ``targets``) scales each position; a zero weight
    masks it out.
    """
    targets = np.asarray(targets)
    if logits.data.ndim < 1 or targets.shape != logits.shape[:-1]:
        raise ShapeError(f"cross_entropy: targets {targets.shape} do not match logits {logits.shape}")
    C = logits.shape[-1]
    if targets.size and (targets.min() < 0 or targets.max() >= C):
        raise ShapeError(f"cross_entropy: target ids outside [0, {C})")
    w = np.ones(targets.shape, dtype=DTYPE) if weights is None else np.asarray(weights, dtype=DTYPE)
    if w.shape != targets.shape:
        raise ShapeError(f"cross_entropy: weights {w.shape} do not match targets {targets.shape}")
    logp = _log_softmax(logits.data, -1)
    picked = np.take_along_axis(logp, targets[..., None], axis=-1)[..., 0]
    out = np.asarray(-(picked * w).sum())

    def back(g):
        p = np.exp(logp)
        onehot = np.zeros_like(p)
        np.put_along_axis(onehot, targets[..., None], 1.0, axis=-1)
        return ((p - onehot) * (w * g)[..., None],)

    return _emit("cross_entropy", (logits,), out, back)


def slice(x: Tensor, key) -> Tensor:  # noqa: A001 - op name
    out = x.data[key]
    fancy = any(isinstance(k, (list, np.ndarray)) for k in (key if isinstance(key, tuple) else (key,)))

    return _emit("slice", (x,), np.array(out), lambda g: (SparseGrad(key, g, fancy),))



def sum(x: Tensor) -> Tensor:  # noqa: A001 - op name
    out = np.asarray(x.data.sum())
    return _emit("sum", (x,), out, lambda g: (np.broadcast_to(g, x.shape).copy(),))


def reshape(x: Tensor, shape) -> Tensor:
    out = x.data.reshape(shape)
    return _emit("reshape", (x,), out, lambda g: (g.reshape(x.shape),))


def transpose(x: Tensor, axes=None) -> Tensor:
    """Permute axes; the default swaps the last two."""
    if axes is None:
        axes = list(range(x.data.ndim))
        axes[-2], axes[-1] = axes[-1], axes[-2]
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    out = np.ascontiguousarray(x.data.transpose(axes))
    return _emit("transpose", (x,), out, lambda g: (g.transpose(inv),))


def _sig(z: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def lstm_sequence(x_proj: Tensor, h0: Tensor, c0: Tensor, w_h: Tensor, lengths=None) -> Tensor:
    """Whole-sequence LSTM as one node, with hand-written backpropagation through time.

    ``x_proj`` is the (B, T, 4H) input projection ``x W_x + b`` with gates
    ordered input, forget, candidate, output. Rows stop updating once ``t``
    reaches their length, so the last step holds each row's final state.
    Returns (B, T, 2H): hidden states in ``[..., :H]``, cell states in ``[..., H:]``.
    """
    XP, W = x_proj.data, w_h.data
    if XP.ndim != 3 or W.ndim != 2 or XP.shape[-1] != W.shape[1] or W.shape[1] != 4 * W.shape[0]:
        raise ShapeError(f"lstm_sequence: bad shapes x_proj {x_proj.shape}, w_h {w_h.shape}")
    B, T, _ = XP.shape
    H = W.shape[0]
    if h0.shape != (B, H) or c0.shape != (B, H):
        raise ShapeError(f"lstm_sequence: initial states {h0.shape}, {c0.shape} do not match ({B}, {H})")
    if lengths is None:
        masks = None
    else:
        masks = (np.arange(T)[None, :] < np.asarray(lengths)[:, None]).astype(DTYPE)[:, :, None]
    out = np.empty((B, T, 2 * H), dtype=DTYPE)
    saved = []
    h, c = h0.data, c0.data
    for t in range(T):
        z = XP[:, t] + h @ W
        i, f, o = _sig(z[:, :H]), _sig(z[:, H:2 * H]), _sig(z[:, 3 * H:])
        g = np.tanh(z[:, 2 * H:3 * H])
        c_new = f * c + i * g
        tc = np.tanh(c_new)
        h_new = o * tc
        if masks is not None:
            m = masks[:, t]
            h_new = h + m * (h_new - h)
            c_new_kept = c + m * (c_new - c)
        else:
            c_new_kept = c_new
        saved.append((h, c, i, f, g, o, tc))
        h, c = h_new, c_new_kept
        out[:, t, :H] = h
        out[:, t, H:] = c

    def back(gy):
        gxp = np.empty_like(XP)
        gw = np.zeros_like(W)
        dh = np.zeros((B, H))
        dc = np.zeros((B, H))
        for t in range(T - 1, -1, -1):
            h_prev, c_prev, i, f, g, o, tc = saved[t]
            dh = dh + gy[:, t, :H]
            dc = dc + gy[:, t, H:]
            if masks is not None:
                m = masks[:, t]
                dh_new, dc_new = m * dh, m * dc
                dh_keep, dc_keep = dh - dh_new, dc - dc_new
            else:
                dh_new, dc_new, dh_keep, dc_keep = dh, dc, 0.0, 0.0
            dc_tot = dc_new + dh_new * o * (1.0 - tc * tc)
            dz = np.concatenate([
                dc_tot * g * i * (1.0 - i),
                dc_tot * c_prev * f * (1.0 - f),
                dc_tot * i * (1.0 - g * g),
                dh_new * tc * o * (1.0 - o),
            ], axis=1)
            gxp[:, t] = dz
            gw += h_prev.T @ dz
            dh = dh_keep + dz @ W.T
            dc = dc_keep + dc_tot * f
        return gxp, dh, dc, gw

    return _emit("lstm_sequence", (x_proj, h0, c0, w_h), out, back)


OPS = {
    "matmul": matmul,
    "add": add,
    "sub": sub,
    "concat": lambda *ts, axis=-1: concat(ts, axis=axis),
    "embedding_lookup": embedding_lookup,
    "sigmoid": sigmoid,
    "tanh": tanh,
    "relu": relu,
    "softmax": softmax,
    "log_softmax": log_softmax,
    "conv1d": conv1d,
    "conv1d_multi_width": conv1d_multi_width,
    "max_over_time_pool": max_over_time_pool,
    "cross_entropy": cross_entropy,
    "elementwise_mul": elementwise_mul,
    "slice": slice,
    "sum": sum,
    "reshape": reshape,
    "transpose": transpose,
    "lstm_sequence": lstm_sequence,
}


def forward(op_kind: str, *inputs, **kwargs):
    """Dispatch an op by name, e.g. ``forward("softmax", t)``."""
    try:
        fn = OPS[op_kind]
    except KeyError:
        raise ValueError(f"unknown op kind {op_kind!r}") from None
    return fn(*inputs, **kwargs)
