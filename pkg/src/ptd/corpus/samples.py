"""Supervised samples cut from constructed dialogues.

Every user utterance that has a successor yields one decision sample whose
label is the successor's speaker (0 = another user sub-turn follows, so wait;
1 = the agent speaks next, so answer). The same decision points feed the two
prediction models: a user successor becomes a user-role target, an agent
successor an agent-role target.
"""
from __future__ import annotations

from .data import AGENT, USER, DecisionSample, Dialogue, PredictionSample

ROLES = ("user", "agent")
_ROLE_SPEAKER = {"user": USER, "agent": AGENT}


def _decision_points(d: Dialogue):
    utts = d.utterances
    for i in range(len(utts) - 1):
        if utts[i].speaker_id == USER:
            yield i, utts[i + 1]


def sample_id(d: Dialogue, index: int) -> str:
    return f"{d.dialogue_id}:{index}"


def extract_decision_samples(d: Dialogue) -> list:
    return [DecisionSample(d.utterances[:i + 1], nxt.speaker_id, sample_id(d, i))
            for i, nxt in _decision_points(d)]


def extract_prediction_samples(d: Dialogue, role: str) -> list:
    if role not in _ROLE_SPEAKER:
        raise ValueError(f"role must be 'user' or 'agent', got {role!r}")
    want = _ROLE_SPEAKER[role]
    return [PredictionSample(d.utterances[:i + 1], nxt, role, sample_id(d, i))
            for i, nxt in _decision_points(d) if nxt.speaker_id == want]


def decision_samples(dialogues) -> list:
    return [s for d in dialogues for s in extract_decision_samples(d)]


def prediction_samples(dialogues, role: str) -> list:
    return [s for d in dialogues for s in extract_prediction_samples(d, role)]


def corpus_stats(dialogues) -> dict:
    """Table-style summary: dialogue count, average turns, user sub-turns, sample counts."""
    dialogues = list(dialogues)
    n = len(dialogues)
    user_turns = {}
    utt_lens, user_lens, agent_lens = [], [], []
    for d in dialogues:
        for u in d.utterances:
            utt_lens.append(len(u.tokens))
            if u.speaker_id == USER:
                user_turns[(d.dialogue_id, u.turn_id)] = user_turns.get((d.dialogue_id, u.turn_id), 0) + 1
                user_lens.append(len(u.tokens))
            else:
                agent_lens.append(len(u.tokens))
    samples = decision_samples(dialogues)
    waits = sum(1 for s in samples if s.label == 0)

    def mean(xs):
        return round(sum(xs) / len(xs), 4) if xs else 0.0

    return {
        "dialogues": n,
        "avg_turns": mean([d.n_turns for d in dialogues]),
        "avg_user_sub_turns": mean(list(user_turns.values())),
        "avg_utterance_length": mean(utt_lens),
        "avg_agent_utterance_length": mean(agent_lens),
        "avg_user_utterance_length": mean(user_lens),
        "wait_samples": waits,
        "answer_samples": len(samples) - waits,
    }
