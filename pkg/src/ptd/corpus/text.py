"""Tokenisation, delexicalisation and user-turn segmentation."""
from __future__ import annotations

import copy
import hashlib
import json
import math
import re
from typing import Iterable, Mapping

PUNCTUATION = set(".,!?;:\"'()[]")
_PLACEHOLDER = re.compile(r"^\[[a-z0-9_]+\]$")
_PIECES = re.compile(r"\[[a-z0-9_]+\]|\S+")
_STRIP = str.maketrans("", "", "".join(sorted(PUNCTUATION)))


def tokenize(text: str) -> list:
    """Lowercase, split on whitespace, drop punctuation marks.

    Bracketed slot placeholders such as ``[restaurant_address]`` survive intact.
    """
    out = []
    for piece in _PIECES.findall(text.lower()):
        if _PLACEHOLDER.match(piece):
            out.append(piece)
            continue
        piece = piece.translate(_STRIP)
        if piece:
            out.append(piece)
    return out


class SlotTable(dict):
    """Mapping from a surface value to its ``[slot_name]`` placeholder."""

    def __init__(self, mapping: Mapping[str, str] | None = None):
        super().__init__()
        for value, placeholder in (mapping or {}).items():
            if not isinstance(value, str) or not value.strip():
                raise ValueError(f"slot value must be a non-empty string, got {value!r}")
            if not isinstance(placeholder, str) or not _PLACEHOLDER.match(placeholder):
                raise ValueError(f"bad slot placeholder {placeholder!r}: must be bracketed, lowercase, no spaces")
            self[value] = placeholder
        self._raw = None
        self._tok = None

    @classmethod
    def load(cls, path) -> "SlotTable":
        with open(path, encoding="utf-8") as fh:
            obj = json.load(fh)
        if not isinstance(obj, dict):
            raise ValueError("slot table file must hold a JSON object")
        return cls(obj)

    def _patterns(self):
        if self._raw is None:
            raw, tok = {}, {}
            for value, ph in self.items():
                raw.setdefault(value.lower(), ph)
                norm = " ".join(tokenize(value))
                if norm:
                    tok.setdefault(norm, ph)
            self._raw = _alternation(raw)
            self._tok = _alternation(tok)
        return self._raw, self._tok

    def replace_text(self, text: str) -> str:
        raw, _ = self._patterns()
        return raw[0].sub(lambda m: raw[1][m.group(0).lower()], text) if raw else text

    def replace_tokens(self, tokens: list) -> list:
        _, tok = self._patterns()
        if not tok:
            return list(tokens)
        joined = " ".join(tokens)
        return tok[0].sub(lambda m: tok[1][m.group(0).lower()], joined).split()


def _alternation(table: dict):
    if not table:
        return None
    # longest first: at any position the regex engine takes the first alternative that matches
    keys = sorted(table, key=lambda v: (-len(v), v))
    pattern = re.compile(r"(?<![\w\[])(?:" + "|".join(re.escape(k) for k in keys) + r")(?![\w\]])",
                         re.IGNORECASE)
    return pattern, table


def delexicalize(d, slots: SlotTable):
    """Replace slot values with placeholders in both source sentences and utterances."""
    out = copy.deepcopy(d)
    if not slots:
        return out
    if out.turns is not None:
        for turn in out.turns:
            turn.sentences = [slots.replace_text(s) for s in turn.sentences]
    for u in out.utterances:
        u.tokens = slots.replace_tokens(u.tokens)
    return out


def _turn_hash(seed: int, dialogue_id: str, turn_id: int) -> int:
    digest = hashlib.sha256(f"{seed}\x1f{dialogue_id}\x1f{turn_id}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def eligible_turns(d) -> list:
    """Turn ids of undecided user turns with at least two sentences."""
    if d.turns is None:
        return []
    return [i for i, t in enumerate(d.turns)
            if t.speaker == "user" and t.segmented is None and len(t.sentences) >= 2]


def segment_corpus(dialogues: Iterable, fraction: float, seed: int) -> list:
    """Split ``round(fraction * eligible)`` user turns of the whole corpus into sentences.

    Turns are ranked by a seeded hash of (dialogue_id, turn_id); the lowest
    ranks are split. Every turn that was eligible is marked decided, so running
    again on the output changes nothing. Utterances are rebuilt from the
    source sentences with punctuation removed.
    """
    if not 0.0 <= fraction <= 1.0:
        raise ValueError(f"fraction must lie in [0, 1], got {fraction}")
    dialogues = [copy.deepcopy(d) for d in dialogues]
    pool = [(_turn_hash(seed, d.dialogue_id, t), d.dialogue_id, t, di)
            for di, d in enumerate(dialogues) for t in eligible_turns(d)]
    pool.sort()
    n_split = int(math.floor(fraction * len(pool) + 0.5))
    chosen = {(di, t) for _, _, t, di in pool[:n_split]}
    for _, _, t, di in pool:
        dialogues[di].turns[t].segmented = (di, t) in chosen
    for d in dialogues:
        if d.turns is not None:
            d.utterances = _build_utterances(d)
    return dialogues


def segment_user_turns(d, fraction: float, seed: int):
    """Single-dialogue form of :func:`segment_corpus`."""
    return segment_corpus([d], fraction, seed)[0]


def _build_utterances(d) -> list:
    from .data import SPEAKERS, DataError, Utterance

    utts = []
    for turn_id, turn in enumerate(d.turns):
        spk = SPEAKERS[turn.speaker]
        if turn.speaker == "user" and turn.segmented:
            pieces = [tokenize(s) for s in turn.sentences]
            pieces = [p for p in pieces if p]
        else:
            pieces = [[tok for s in turn.sentences for tok in tokenize(s)]]
        if not pieces or not pieces[0]:
            raise DataError(f"dialogue {d.dialogue_id!r}: turn {turn_id} is empty after removing punctuation")
        for sub, toks in enumerate(pieces):
            utts.append(Utterance(toks, turn_id, sub, spk))
    return utts
