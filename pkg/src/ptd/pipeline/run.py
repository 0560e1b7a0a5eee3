"""Training and inference orchestration.

Training order: user prediction model, agent prediction model, simulated
futures for every decision sample (generated once by the frozen prediction
models and cached to ``generations.jsonl``), decision model, baselines, and
a test-split report.
"""
from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..baselines import ATLUClassifier, HistoryClassifier, PTSUClassifier
from ..base import check_decision_point
from ..corpus import (
    SlotTable,
    build_dataset,
    build_vocabulary,
    corpus_stats,
    decision_samples,
    parse_corpus,
    prediction_samples,
    split_dialogues,
)
from ..corpus.data import DataError
from ..decision import Decision, DecisionModel, label_from_p_answer
from ..metrics import bleu_cumulative, classification_report, mean_sentence_bleu
from ..seq2seq import PredictionModel
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import ExperimentConfig

log = logging.getLogger(__name__)

CHECKPOINT_NAMES = {"user": "user.ckpt", "agent": "agent.ckpt", "decision": "decision.ckpt",
                    "baseline": "baseline.ckpt"}


class StageError(RuntimeError):
    """A training stage failed; ``stage`` names it."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class Generation:
    sample_id: str
    r_u: list
    r_a: list
    logp_u: float
    logp_a: float

    def to_dict(self) -> dict:
        return {"sample_id": self.sample_id, "r_u": self.r_u, "r_a": self.r_a,
                "logp_u": self.logp_u, "logp_a": self.logp_a}


@dataclass
class RunResult:
    out_dir: Path
    checkpoints: dict
    report: dict
    timing: dict = field(default_factory=dict)


class PTD:
    """The trained framework: two prediction models plus the decision model.

    ``decide`` simulates both futures with beam search and classifies; the
    batch methods accept histories and return numpy arrays.
    """

    def __init__(self, user_model: PredictionModel, agent_model: PredictionModel, decision_model: DecisionModel):
        hashes = {m.vocab_.fingerprint() for m in (user_model, agent_model, decision_model)}
        if len(hashes) != 1:
            raise CheckpointError("checkpoints were trained with different vocabularies")
        if user_model.role != "user" or agent_model.role != "agent":
            raise CheckpointError("prediction checkpoints have the wrong roles")
        self.user_model = user_model
        self.agent_model = agent_model
        self.decision_model = decision_model

    @classmethod
    def from_checkpoints(cls, user_ckpt, agent_ckpt, dec_ckpt) -> "PTD":
        return cls(load_checkpoint(user_ckpt), load_checkpoint(agent_ckpt), load_checkpoint(dec_ckpt))

    @classmethod
    def from_dir(cls, directory) -> "PTD":
        d = Path(directory)
        return cls.from_checkpoints(d / CHECKPOINT_NAMES["user"], d / CHECKPOINT_NAMES["agent"],
                                    d / CHECKPOINT_NAMES["decision"])

    @property
    def vocab(self):
        return self.decision_model.vocab_

    def simulate(self, histories) -> list:
        histories = [check_decision_point(h) for h in histories]
        users = self.user_model.generate_many(histories)
        agents = self.agent_model.generate_many(histories)
        return [(a.tokens, u.tokens, a.log_prob, u.log_prob) for u, a in zip(users, agents)]

    def decide_many(self, histories) -> list:
        histories = list(histories)
        futures = self.simulate(histories)
        proba = self.decision_model.predict_proba([(h, f[0], f[1]) for h, f in zip(histories, futures)])
        return [Decision(label_from_p_answer(float(p)), float(p), list(f[1]), list(f[0]))
                for p, f in zip(proba[:, 1], futures)]

    def decide(self, history) -> Decision:
        return self.decide_many([history])[0]

    def predict_proba(self, histories) -> np.ndarray:
        p = np.array([d.p_answer for d in self.decide_many(histories)])
        return np.stack([1.0 - p, p], axis=1)

    def predict(self, histories) -> np.ndarray:
        return np.array([d.label for d in self.decide_many(histories)], dtype=np.int64)


def infer(user_ckpt, agent_ckpt, dec_ckpt, history) -> Decision:
    """End-to-end decision for one history from three checkpoint files (or loaded models)."""
    models = [load_checkpoint(c) if isinstance(c, (str, Path)) else c for c in (user_ckpt, agent_ckpt, dec_ckpt)]
    return PTD(*models).decide(history)


# ---------------------------------------------------------------- training

def _stage(name: str):
    def wrap(fn):
        def inner(*args, **kwargs):
            log.info("stage %s", name)
            try:
                return fn(*args, **kwargs)
            except StageError:
                raise
            except Exception as exc:  # noqa: BLE001 - re-raised with the stage name
                raise StageError(name, exc) from exc
        return inner
    return wrap


def load_splits(config: ExperimentConfig) -> dict:
    dialogues = parse_corpus(config.corpus)
    if config.construct:
        slots = SlotTable.load(config.slots) if config.slots else None
        dialogues = build_dataset(dialogues, slots, config.fraction, config.seed)
    splits = split_dialogues(dialogues)
    if not splits["train"]:
        raise DataError("the corpus has no train split dialogues")
    if not decision_samples(splits["train"]):
        raise DataError("the train split yields no decision samples")
    return splits


def generate_futures(user_model, agent_model, samples) -> list:
    histories = [s.history for s in samples]
    users = user_model.generate_many(histories)
    agents = agent_model.generate_many(histories)
    return [Generation(s.sample_id, u.tokens, a.tokens, u.log_prob, a.log_prob)
            for s, u, a in zip(samples, users, agents)]


def write_generations(generations, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for g in generations:
            fh.write(json.dumps(g.to_dict(), sort_keys=True) + "\n")


def read_generations(path) -> dict:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                obj = json.loads(line)
                out[obj["sample_id"]] = Generation(**obj)
    return out


def bleu_matrix(samples, generations: dict) -> dict:
    """Corpus BLEU of each model's output against each role's gold continuations.

    User targets are the successors of wait samples, agent targets those of
    answer samples; both models have generated for every decision sample.
    """
    out, smoothed = {}, {}
    for model_role, key in (("user_model", "r_u"), ("agent_model", "r_a")):
        out[model_role], smoothed[model_role] = {}, {}
        for target_role, label in (("user_targets", 0), ("agent_targets", 1)):
            pairs = [(getattr(generations[s.sample_id], key), s.target.tokens)
                     for s in samples if s.label == label]
            if not pairs:
                out[model_role][target_role] = smoothed[model_role][target_role] = None
                continue
            cands, refs = zip(*pairs)
            out[model_role][target_role] = bleu_cumulative(cands, refs)
            smoothed[model_role][target_role] = mean_sentence_bleu(cands, refs)
    return {"corpus": out, "sentence_smoothed": smoothed}


@dataclass
class _LabelledSample:
    sample_id: str
    history: list
    label: int
    target: object


def labelled_samples(dialogues) -> list:
    """Decision samples with their successor utterance attached."""
    out = []
    for d in dialogues:
        for s in decision_samples([d]):
            idx = int(s.sample_id.rsplit(":", 1)[1])
            out.append(_LabelledSample(s.sample_id, s.history, s.label, d.utterances[idx + 1]))
    return out


def evaluate_models(ptd: PTD, dialogues, baseline: HistoryClassifier = None, generations: dict = None) -> dict:
    """Classification reports and the BLEU matrix over ``dialogues``."""
    samples = labelled_samples(dialogues)
    if not samples:
        raise DataError("no decision samples to evaluate")
    if generations is None:
        generations = {g.sample_id: g for g in generate_futures(ptd.user_model, ptd.agent_model, samples)}
    golds = [s.label for s in samples]
    X = [(s.history, generations[s.sample_id].r_a, generations[s.sample_id].r_u) for s in samples]
    preds = ptd.decision_model.predict(X)
    result = {
        "n_samples": len(samples),
        "wait_samples": golds.count(0),
        "answer_samples": golds.count(1),
        "ptd": classification_report(preds, golds).to_dict(),
        "baselines": {
            "atlu": classification_report(ATLUClassifier().predict([s.history for s in samples]), golds).to_dict(),
            "ptsu": classification_report(PTSUClassifier().predict([s.history for s in samples]), golds).to_dict(),
        },
        "bleu": bleu_matrix(samples, generations),
    }
    if baseline is not None:
        result["baselines"][f"history_{baseline.encoder}"] = classification_report(
            baseline.predict([s.history for s in samples]), golds).to_dict()
    return result


def run_training(config: ExperimentConfig) -> RunResult:
    """Train every model of the framework and write checkpoints, generations and a report.

    ``report.json`` is a pure function of the config and corpus; wall-clock
    timings go to ``timing.json`` so reports of repeated runs compare equal.
    """
    config.validate()
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    timing = {}
    t_start = time.perf_counter()

    def timed(name, fn, *args):
        t0 = time.perf_counter()
        result = _stage(name)(fn)(*args)
        timing[name] = round(time.perf_counter() - t0, 3)
        return result

    splits = timed("load", load_splits, config)
    train_dialogues = splits["train"]
    vocab = timed("vocabulary", lambda: build_vocabulary(train_dialogues, config.min_freq))

    def train_prediction(role):
        tr = prediction_samples(train_dialogues, role)
        va = prediction_samples(splits["valid"], role)
        if not tr:
            raise DataError(f"no {role}-role prediction samples in the train split")
        model = PredictionModel(**config.prediction_params(role)).fit(tr, va, vocab=vocab)
        save_checkpoint(model, out / CHECKPOINT_NAMES[role])
        return model

    user_model = timed("user-prediction", train_prediction, "user")
    agent_model = timed("agent-prediction", train_prediction, "agent")
    digests_before = {"user": user_model.weights_digest(), "agent": agent_model.weights_digest()}

    samples = {name: labelled_samples(ds) for name, ds in splits.items()}

    def materialise():
        gens = []
        for name in ("train", "valid", "test"):
            gens.extend(generate_futures(user_model, agent_model, samples[name]))
        write_generations(gens, out / "generations.jsonl")
        return {g.sample_id: g for g in gens}

    generations = timed("generate", materialise)

    def xy(name):
        ss = samples[name]
        return ([(s.history, generations[s.sample_id].r_a, generations[s.sample_id].r_u) for s in ss],
                [s.label for s in ss])

    def train_decision():
        X, y = xy("train")
        Xv, yv = xy("valid")
        model = DecisionModel(**config.decision_params()).fit(X, y, Xv or None, yv or None, vocab=vocab)
        save_checkpoint(model, out / CHECKPOINT_NAMES["decision"])
        return model

    decision_model = timed("decision", train_decision)
    digests_after = {"user": user_model.weights_digest(), "agent": agent_model.weights_digest()}
    if digests_after != digests_before:
        raise StageError("decision", RuntimeError("prediction models changed during decision training"))

    baseline = None
    if config.run_baselines:
        def train_baseline():
            ss, sv = samples["train"], samples["valid"]
            model = HistoryClassifier(**config.baseline_params()).fit(
                [s.history for s in ss], [s.label for s in ss],
                [s.history for s in sv] or None, [s.label for s in sv] or None, vocab=vocab)
            save_checkpoint(model, out / CHECKPOINT_NAMES["baseline"])
            return model

        baseline = timed("baseline", train_baseline)

    ptd = PTD(user_model, agent_model, decision_model)
    test = timed("evaluate", lambda: evaluate_models(ptd, splits["test"], baseline, generations)
                 if samples["test"] else None)

    report = {
        "config": config.to_dict(),
        "seeds": config.seeds(),
        "corpus": {name: corpus_stats(ds) for name, ds in splits.items()},
        "vocab_size": len(vocab),
        "vocab_hash": vocab.fingerprint(),
        "test": test,
        "training": {
            "user_prediction": user_model.history_,
            "agent_prediction": agent_model.history_,
            "decision": decision_model.history_,
            "baseline": baseline.history_ if baseline is not None else None,
        },
        "weights": {
            "user_prediction": digests_before["user"],
            "agent_prediction": digests_before["agent"],
            "decision": decision_model.weights_digest(),
            "baseline": baseline.weights_digest() if baseline is not None else None,
            "prediction_models_frozen": digests_after == digests_before,
        },
    }
    (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    timing["total"] = round(time.perf_counter() - t_start, 3)
    (out / "timing.json").write_text(json.dumps(timing, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    checkpoints = {k: out / v for k, v in CHECKPOINT_NAMES.items() if (out / v).exists()}
    return RunResult(out, checkpoints, report, timing)
