"""BLEU for generated utterances and the wait/answer classification report.

Answer (label 1) is the positive class throughout.
"""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Sequence

MAX_ORDER = 4


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def _clipped(candidate, reference, n):
    cand = _ngrams(candidate, n)
    ref = _ngrams(reference, n)
    matched = sum(min(c, ref[g]) for g, c in cand.items())
    return matched, max(len(candidate) - n + 1, 0)


def modified_precisions(candidates, references, max_order: int = MAX_ORDER) -> list:
    """Corpus-aggregated (matched, total) n-gram counts for n = 1..max_order."""
    out = []
    for n in range(1, max_order + 1):
        matched = total = 0
        for c, r in zip(candidates, references):
            m, t = _clipped(list(c), list(r), n)
            matched += m
            total += t
        out.append((matched, total))
    return out


def brevity_penalty(cand_len: int, ref_len: int) -> float:
    if cand_len == 0:
        return 0.0
    return min(1.0, math.exp(1.0 - ref_len / cand_len))


def bleu_cumulative(candidates, references, max_order: int = MAX_ORDER) -> float:
    """Corpus BLEU-1..4 cumulative score in [0, 100], one reference per candidate, no smoothing."""
    candidates, references = list(candidates), list(references)
    if len(candidates) != len(references):
        raise ValueError(f"{len(candidates)} candidates but {len(references)} references")
    if not candidates:
        raise ValueError("BLEU needs at least one candidate")
    precisions = modified_precisions(candidates, references, max_order)
    if any(m == 0 or t == 0 for m, t in precisions):
        return 0.0
    log_p = sum(math.log(m / t) for m, t in precisions) / max_order
    c = sum(len(x) for x in candidates)
    r = sum(len(x) for x in references)
    return 100.0 * brevity_penalty(c, r) * math.exp(log_p)


def sentence_bleu_smoothed(candidate, reference, max_order: int = MAX_ORDER) -> float:
    """Sentence BLEU with +1 added to every n-gram count; useful when most scores would be 0."""
    candidate, reference = list(candidate), list(reference)
    if not candidate:
        return 0.0
    log_p = 0.0
    for n in range(1, max_order + 1):
        m, t = _clipped(candidate, reference, n)
        log_p += math.log((m + 1) / (t + 1))
    return 100.0 * brevity_penalty(len(candidate), len(reference)) * math.exp(log_p / max_order)


def mean_sentence_bleu(candidates, references) -> float:
    candidates, references = list(candidates), list(references)
    if len(candidates) != len(references) or not candidates:
        raise ValueError("need equal, non-zero numbers of candidates and references")
    return sum(sentence_bleu_smoothed(c, r) for c, r in zip(candidates, references)) / len(candidates)


@dataclass
class ClassificationReport:
    accuracy: float
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    fn: int
    tn: int
    flags: list = field(default_factory=list)

    @property
    def n(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def to_dict(self) -> dict:
        return asdict(self)


def classification_report(preds, golds) -> ClassificationReport:
    preds, golds = [int(p) for p in preds], [int(g) for g in golds]
    if len(preds) != len(golds):
        raise ValueError(f"{len(preds)} predictions but {len(golds)} gold labels")
    if not preds:
        raise ValueError("classification_report needs at least one prediction")
    if any(v not in (0, 1) for v in preds + golds):
        raise ValueError("labels must be 0 (wait) or 1 (answer)")
    tp = sum(p == 1 and g == 1 for p, g in zip(preds, golds))
    fp = sum(p == 1 and g == 0 for p, g in zip(preds, golds))
    fn = sum(p == 0 and g == 1 for p, g in zip(preds, golds))
    tn = len(preds) - tp - fp - fn
    flags = []
    if tp + fp == 0:
        flags.append("precision_undefined")
    if tp + fn == 0:
        flags.append("recall_undefined")
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    if precision + recall == 0:
        f1 = 0.0
        flags.append("f1_undefined")
    else:
        f1 = 2 * precision * recall / (precision + recall)
    return ClassificationReport((tp + tn) / len(preds), precision, recall, f1, tp, fp, fn, tn, flags)
