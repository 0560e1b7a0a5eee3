"""Vocabulary and tag-augmented sequence encoding."""
from __future__ import annotations

import hashlib
import json
from collections import Counter
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .data import DecisionSample, Dialogue, PredictionSample, Utterance

PAD, UNK, BOS, EOS, SEP = 0, 1, 2, 3, 4
SPECIALS = ("<pad>", "<unk>", "<s>", "</s>", "<sep>")


class Vocabulary:
    """Dense token <-> id map; ids 0-4 are the reserved specials."""

    def __init__(self, tokens: Iterable[str] = (), min_freq: int = 1):
        self.id_to_token = list(SPECIALS)
        self.token_to_id = {t: i for i, t in enumerate(SPECIALS)}
        self.min_freq = min_freq
        for tok in tokens:
            if tok in self.token_to_id:
                raise ValueError(f"duplicate vocabulary entry {tok!r}")
            self.token_to_id[tok] = len(self.id_to_token)
            self.id_to_token.append(tok)

    def __len__(self) -> int:
        return len(self.id_to_token)

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_id

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.id_to_token == other.id_to_token

    def id(self, token: str) -> int:
        return self.token_to_id.get(token, UNK)

    def encode(self, tokens: Iterable[str]) -> list:
        return [self.token_to_id.get(t, UNK) for t in tokens]

    def decode(self, ids: Iterable[int], strip_specials: bool = True) -> list:
        out = []
        for i in ids:
            i = int(i)
            if strip_specials and i < len(SPECIALS) and i != UNK:
                continue
            out.append(self.id_to_token[i])
        return out

    def fingerprint(self) -> str:
        blob = json.dumps(self.id_to_token, ensure_ascii=False).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()

    def to_dict(self) -> dict:
        return {"tokens": self.id_to_token[len(SPECIALS):], "min_freq": self.min_freq}

    @classmethod
    def from_dict(cls, obj: dict) -> "Vocabulary":
        return cls(obj["tokens"], obj.get("min_freq", 1))


def _iter_token_lists(items) -> Iterable[list]:
    seen = set()

    def utt(u):
        if id(u) not in seen:
            seen.add(id(u))
            yield u.tokens

    for item in items:
        if isinstance(item, Dialogue):
            for u in item.utterances:
                yield from utt(u)
        elif isinstance(item, DecisionSample):
            for u in item.history:
                yield from utt(u)
        elif isinstance(item, PredictionSample):
            for u in item.history:
                yield from utt(u)
            yield from utt(item.target)
        elif isinstance(item, Utterance):
            yield from utt(item)
        else:
            yield list(item)


def build_vocabulary(samples, min_freq: int = 1) -> Vocabulary:
    """Tokens with frequency >= ``min_freq``, ordered by (-frequency, token).

    ``samples`` may mix dialogues, samples, utterances and raw token lists.
    Utterances shared between samples (overlapping histories) count once.
    """
    if min_freq < 1:
        raise ValueError("min_freq must be >= 1")
    counts = Counter()
    for tokens in _iter_token_lists(samples):
        counts.update(tokens)
    for special in SPECIALS:
        counts.pop(special, None)
    kept = sorted((t for t, c in counts.items() if c >= min_freq), key=lambda t: (-counts[t], t))
    return Vocabulary(kept, min_freq)


@dataclass(frozen=True)
class TagCaps:
    max_turn: int = 20
    max_sub_turn: int = 8
    max_len: int = 128

    def __post_init__(self):
        if min(self.max_turn, self.max_sub_turn, self.max_len) < 1:
            raise ValueError("tag caps must be positive")


@dataclass
class EncodedSequence:
    """Parallel int arrays: token id, capped turn id, capped sub-turn id, speaker id."""
    tokens: np.ndarray
    turns: np.ndarray
    subs: np.ndarray
    speakers: np.ndarray

    def __len__(self) -> int:
        return len(self.tokens)

    def positions(self) -> list:
        return list(zip(self.tokens.tolist(), self.turns.tolist(), self.subs.tolist(),
                        self.speakers.tolist()))


def encode_utterances(utterances, vocab: Vocabulary, caps: TagCaps, terminal: bool = False,
                      truncate: bool = True) -> EncodedSequence:
    rows = []
    for k, u in enumerate(utterances):
        tags = (min(u.turn_id, caps.max_turn), min(u.sub_turn_id, caps.max_sub_turn), u.speaker_id)
        if k > 0:
            rows.append((SEP,) + tags)  # separator carries the following utterance's tags
        rows.extend((vocab.id(t),) + tags for t in u.tokens)
    if terminal and rows:
        rows.append((EOS,) + rows[-1][1:])
    if truncate and len(rows) > caps.max_len:
        rows = rows[-caps.max_len:]
    arr = np.asarray(rows, dtype=np.int64).reshape(-1, 4)
    return EncodedSequence(arr[:, 0].copy(), arr[:, 1].copy(), arr[:, 2].copy(), arr[:, 3].copy())


def encode_history(history, vocab: Vocabulary, caps: TagCaps = TagCaps(), terminal: bool = False) -> EncodedSequence:
    """Join utterances with SEP, tag every position, keep the most recent ``max_len``.

    ``terminal`` appends an EOS position (tagged like the last utterance) before
    truncation so that position-blind encoders can see where the history ends.
    """
    if not history:
        raise ValueError("cannot encode an empty history")
    return encode_utterances(history, vocab, caps, terminal=terminal)


def pad_batch(seqs: list, min_len: int = 1):
    """Right-pad encoded sequences; returns (tokens, turns, subs, speakers, lengths).

    Sequences shorter than ``min_len`` are left-padded with PAD up to it first.
    """
    lengths = np.array([max(len(s), min_len) for s in seqs], dtype=np.int64)
    T = int(lengths.max())
    out = [np.zeros((len(seqs), T), dtype=np.int64) for _ in range(4)]
    for i, s in enumerate(seqs):
        offset = lengths[i] - len(s)
        for arr, src in zip(out, (s.tokens, s.turns, s.subs, s.speakers)):
            arr[i, offset:offset + len(s)] = src
    return (*out, lengths)
