"""Tagged dialogue data model and the line-delimited JSON corpus format.

A corpus file holds one JSON object per line::

    {"dialogue_id": "d1", "split": "train",
     "turns": [{"speaker": "agent", "sentences": ["Hello."]}, ...],
     "utterances": [{"tokens": ["hello"], "turn_id": 0, "sub_turn_id": 0, "speaker_id": 1}, ...]}

``turns`` is the source (pre-construction) form; ``utterances`` is added by
construction. A record with only ``turns`` is read as one merged utterance per
turn. ``split`` is optional.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional

from .text import PUNCTUATION, tokenize

USER, AGENT = 0, 1
SPEAKERS = {"user": USER, "agent": AGENT}
SPEAKER_NAMES = {USER: "user", AGENT: "agent"}
SPLITS = ("train", "valid", "test")


class DataError(ValueError):
    """Malformed corpus data or a violated dialogue invariant."""


@dataclass
class Utterance:
    tokens: list
    turn_id: int
    sub_turn_id: int
    speaker_id: int

    def to_dict(self) -> dict:
        return {"tokens": list(self.tokens), "turn_id": self.turn_id,
                "sub_turn_id": self.sub_turn_id, "speaker_id": self.speaker_id}

    @classmethod
    def from_dict(cls, obj: dict) -> "Utterance":
        if not isinstance(obj, dict):
            raise DataError(f"utterance must be an object, got {type(obj).__name__}")
        try:
            tokens, turn, sub, spk = obj["tokens"], obj["turn_id"], obj["sub_turn_id"], obj["speaker_id"]
        except KeyError as exc:
            raise DataError(f"utterance missing field {exc.args[0]!r}") from None
        if not isinstance(tokens, list) or not all(isinstance(t, str) for t in tokens):
            raise DataError("utterance tokens must be a list of strings")
        for name, val in (("turn_id", turn), ("sub_turn_id", sub)):
            if not isinstance(val, int) or isinstance(val, bool) or val < 0:
                raise DataError(f"utterance {name} must be a non-negative integer, got {val!r}")
        if spk not in (USER, AGENT) or isinstance(spk, bool):
            raise DataError(f"utterance speaker_id must be 0 or 1, got {spk!r}")
        return cls(list(tokens), turn, sub, spk)

    def __len__(self) -> int:
        return len(self.tokens)


@dataclass
class Turn:
    speaker: str
    sentences: list
    segmented: Optional[bool] = None  # set once segmentation has decided this turn

    def to_dict(self) -> dict:
        out = {"speaker": self.speaker, "sentences": list(self.sentences)}
        if self.segmented is not None:
            out["segmented"] = self.segmented
        return out

    @classmethod
    def from_dict(cls, obj: dict) -> "Turn":
        if not isinstance(obj, dict):
            raise DataError("turn must be an object")
        speaker = obj.get("speaker")
        if speaker not in SPEAKERS:
            raise DataError(f"turn speaker must be 'user' or 'agent', got {speaker!r}")
        sentences = obj.get("sentences")
        if not isinstance(sentences, list) or not sentences or not all(isinstance(s, str) for s in sentences):
            raise DataError("turn sentences must be a non-empty list of strings")
        seg = obj.get("segmented")
        if seg is not None and not isinstance(seg, bool):
            raise DataError("turn 'segmented' must be a boolean")
        return cls(speaker, list(sentences), seg)


@dataclass
class Dialogue:
    dialogue_id: str
    utterances: list
    turns: Optional[list] = None
    split: Optional[str] = None

    def validate(self) -> "Dialogue":
        check_dialogue(self)
        return self

    @property
    def n_turns(self) -> int:
        return len({u.turn_id for u in self.utterances})

    def to_dict(self) -> dict:
        out: dict = {"dialogue_id": self.dialogue_id}
        if self.split is not None:
            out["split"] = self.split
        if self.turns is not None:
            out["turns"] = [t.to_dict() for t in self.turns]
        out["utterances"] = [u.to_dict() for u in self.utterances]
        return out


@dataclass
class DecisionSample:
    history: list
    label: int
    sample_id: str = ""


@dataclass
class PredictionSample:
    history: list
    target: Utterance
    role: str
    sample_id: str = ""


def merged_utterances(turns: list) -> list:
    """One utterance per turn with all sentences joined, tokens punctuation-free."""
    out = []
    for turn_id, turn in enumerate(turns):
        tokens = [tok for s in turn.sentences for tok in tokenize(s)]
        out.append(Utterance(tokens, turn_id, 0, SPEAKERS[turn.speaker]))
    return out


def check_dialogue(d: Dialogue) -> None:
    """Raise :class:`DataError` naming the dialogue when an invariant fails."""
    def fail(msg):
        raise DataError(f"dialogue {d.dialogue_id!r}: {msg}")

    if d.split is not None and d.split not in SPLITS:
        fail(f"unknown split {d.split!r}")
    prev_turn, prev_sub, prev_spk = None, None, None
    turn_speakers = []
    turn_sizes: dict = {}
    for i, u in enumerate(d.utterances):
        if not u.tokens:
            fail(f"utterance {i} has no tokens")
        bad = [t for t in u.tokens if not t or all(ch in PUNCTUATION for ch in t)]
        if bad:
            fail(f"utterance {i} contains punctuation tokens {bad}")
        if prev_turn is None or u.turn_id != prev_turn:
            if prev_turn is not None and u.turn_id < prev_turn:
                fail(f"turn ids decrease at utterance {i}")
            if u.sub_turn_id != 0:
                fail(f"turn {u.turn_id} does not start at sub-turn 0")
            if prev_spk is not None and u.speaker_id == prev_spk:
                fail(f"speaker does not alternate between turns at utterance {i}")
            turn_speakers.append(u.speaker_id)
        else:
            if u.speaker_id != prev_spk:
                fail(f"sub-turns of turn {u.turn_id} have different speakers")
            if u.sub_turn_id != prev_sub + 1:
                fail(f"sub-turn ids of turn {u.turn_id} are not consecutive")
        turn_sizes[u.turn_id] = turn_sizes.get(u.turn_id, 0) + 1
        prev_turn, prev_sub, prev_spk = u.turn_id, u.sub_turn_id, u.speaker_id
        if u.speaker_id == AGENT and turn_sizes[u.turn_id] > 1:
            fail(f"agent turn {u.turn_id} has more than one sub-turn")
    if d.turns is not None:
        for a, b in zip(d.turns, d.turns[1:]):
            if a.speaker == b.speaker:
                fail("source turns do not alternate speakers")


def dialogue_from_record(obj, where: str = "") -> Dialogue:
    if not isinstance(obj, dict):
        raise DataError(f"{where}record must be a JSON object")
    did = obj.get("dialogue_id")
    if not isinstance(did, str) or not did:
        raise DataError(f"{where}dialogue_id must be a non-empty string")
    turns = None
    if "turns" in obj:
        if not isinstance(obj["turns"], list):
            raise DataError(f"{where}dialogue {did!r}: turns must be a list")
        try:
            turns = [Turn.from_dict(t) for t in obj["turns"]]
        except DataError as exc:
            raise DataError(f"{where}dialogue {did!r}: {exc}") from None
    if "utterances" in obj:
        if not isinstance(obj["utterances"], list):
            raise DataError(f"{where}dialogue {did!r}: utterances must be a list")
        try:
            utts = [Utterance.from_dict(u) for u in obj["utterances"]]
        except DataError as exc:
            raise DataError(f"{where}dialogue {did!r}: {exc}") from None
    elif turns is not None:
        utts = merged_utterances(turns)
    else:
        raise DataError(f"{where}dialogue {did!r} has neither turns nor utterances")
    split = obj.get("split")
    d = Dialogue(did, utts, turns, split)
    try:
        check_dialogue(d)
    except DataError as exc:
        raise DataError(f"{where}{exc}") from None
    return d


def parse_corpus(path) -> list:
    """Read and validate a corpus file; dialogues keep file order."""
    dialogues = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"line {lineno}: malformed JSON ({exc.msg})") from None
            dialogues.append(dialogue_from_record(obj, where=f"line {lineno}: "))
    return dialogues


def dumps_corpus(dialogues: Iterable[Dialogue]) -> str:
    return "".join(json.dumps(d.to_dict(), ensure_ascii=False, sort_keys=True) + "\n"
                   for d in dialogues)


def write_corpus(dialogues: Iterable[Dialogue], path) -> None:
    Path(path).write_text(dumps_corpus(dialogues), encoding="utf-8")


def utterances_from_json(obj) -> list:
    """History input for decisions: a list of utterance objects (or ``{"utterances": [...]}``)."""
    if isinstance(obj, dict) and "utterances" in obj:
        obj = obj["utterances"]
    if not isinstance(obj, list) or not obj:
        raise DataError("history must be a non-empty list of utterances")
    return [Utterance.from_dict(u) for u in obj]


def split_dialogues(dialogues: Iterable[Dialogue]) -> dict:
    out = {s: [] for s in SPLITS}
    for d in dialogues:
        if d.split is None:
            raise DataError(f"dialogue {d.dialogue_id!r} carries no split designation")
        out[d.split].append(d)
    return out
