"""Binary checkpoint format.

Layout::

    b"PTDCKPT1"                       8-byte magic
    uint64 little-endian              header length in bytes
    header                            UTF-8 JSON, keys sorted
    blob                              little-endian float32 parameters

The header records the model kind, its constructor parameters, the vocabulary
and its SHA-256 fingerprint, and a tensor index of (name, shape, offset,
count) with offsets in float32 elements. Parameters are kept on the float32
grid during training, so a save / load / save cycle is byte-identical.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..baselines import HistoryClassifier
from ..corpus.vocab import Vocabulary
from ..decision import DecisionModel
from ..seq2seq import PredictionModel

MAGIC = b"PTDCKPT1"
FORMAT_VERSION = 1
KINDS = {"prediction": PredictionModel, "decision": DecisionModel, "history_classifier": HistoryClassifier}
_TUPLE_PARAMS = {"widths"}


class CheckpointError(RuntimeError):
    """Unreadable, truncated or inconsistent checkpoint file."""


def model_kind(model) -> str:
    for kind, cls in KINDS.items():
        if type(model) is cls:
            return kind
    raise CheckpointError(f"cannot checkpoint objects of type {type(model).__name__}")


def _config_of(model) -> dict:
    out = {}
    for k, v in model.get_params(deep=False).items():
        out[k] = list(v) if isinstance(v, tuple) else v
    return out


def dumps_checkpoint(model) -> bytes:
    kind = model_kind(model)
    model._check_fitted()
    index, chunks, offset = [], [], 0
    for name, tensor in model.params_.items():
        arr = np.ascontiguousarray(tensor.data, dtype="<f4")
        if not np.array_equal(arr.astype(np.float64), tensor.data):
            raise CheckpointError(f"parameter {name!r} is not on the float32 grid")
        index.append({"name": name, "shape": list(arr.shape), "offset": offset, "count": int(arr.size)})
        chunks.append(arr.tobytes())
        offset += int(arr.size)
    header = {
        "format_version": FORMAT_VERSION,
        "kind": kind,
        "config": _config_of(model),
        "vocab": model.vocab_.to_dict(),
        "vocab_hash": model.vocab_.fingerprint(),
        "tensors": index,
        "n_values": offset,
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return MAGIC + struct.pack("<Q", len(head)) + head + b"".join(chunks)


def save_checkpoint(model, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(dumps_checkpoint(model))
    return path


def _read_header(fh) -> tuple:
    magic = fh.read(len(MAGIC))
    if magic != MAGIC:
        raise CheckpointError("bad magic")
    raw = fh.read(8)
    if len(raw) != 8:
        raise CheckpointError("truncated header")
    (n,) = struct.unpack("<Q", raw)
    head = fh.read(n)
    if len(head) != n:
        raise CheckpointError("truncated header")
    try:
        header = json.loads(head.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"unreadable header: {exc}") from None
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"unknown checkpoint version {header.get('format_version')!r}")
    if header.get("kind") not in KINDS:
        raise CheckpointError(f"unknown model kind {header.get('kind')!r}")
    _check_index(header)
    return header, len(MAGIC) + 8 + n


def _check_index(header: dict) -> None:
    offset, seen = 0, set()
    for entry in header.get("tensors", []):
        name = entry.get("name")
        if name in seen:
            raise CheckpointError(f"tensor {name!r} listed twice")
        seen.add(name)
        if entry.get("offset") != offset or entry.get("count") != int(np.prod(entry.get("shape", [-1]))):
            raise CheckpointError(f"tensor index offset mismatch at {name!r}")
        offset += entry["count"]
    if offset != header.get("n_values"):
        raise CheckpointError("tensor index does not cover the parameter blob")


def inspect_checkpoint(path) -> dict:
    """Header summary without reading the parameter blob."""
    with open(path, "rb") as fh:
        header, _ = _read_header(fh)
    return {
        "kind": header["kind"],
        "vocab_size": len(header["vocab"]["tokens"]) + 5,
        "vocab_hash": header["vocab_hash"],
        "tensors": [{"name": t["name"], "shape": t["shape"]} for t in header["tensors"]],
        "config": header["config"],
    }


def loads_checkpoint(data: bytes, vocab: Vocabulary = None):
    import io

    fh = io.BytesIO(data)
    header, start = _read_header(fh)
    blob = data[start:]
    if len(blob) != 4 * header["n_values"]:
        raise CheckpointError(f"truncated blob: expected {4 * header['n_values']} bytes, found {len(blob)}")
    file_vocab = Vocabulary.from_dict(header["vocab"])
    if file_vocab.fingerprint() != header["vocab_hash"]:
        raise CheckpointError("vocabulary does not match its recorded hash")
    if vocab is not None:
        if len(vocab) != len(file_vocab):
            raise CheckpointError(f"vocabulary size {len(vocab)} differs from the checkpoint's {len(file_vocab)}")
        if vocab.fingerprint() != file_vocab.fingerprint():
            raise CheckpointError("vocabulary differs from the checkpoint's")
    config = {k: tuple(v) if k in _TUPLE_PARAMS else v for k, v in header["config"].items()}
    cls = KINDS[header["kind"]]
    try:
        model = cls(**config)
    except TypeError as exc:
        raise CheckpointError(f"config does not fit {cls.__name__}: {exc}") from None
    model.initialize(file_vocab)
    values = np.frombuffer(blob, dtype="<f4")
    weights = {}
    for t in header["tensors"]:
        weights[t["name"]] = values[t["offset"]:t["offset"] + t["count"]].astype(np.float64).reshape(t["shape"])
    try:
        model.set_weights(weights)
    except ValueError as exc:
        raise CheckpointError(str(exc)) from None
    return model


def load_checkpoint(path, vocab: Vocabulary = None):
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc.strerror}") from None
    return loads_checkpoint(data, vocab)
