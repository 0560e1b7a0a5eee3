"""Experiment configuration (JSON file, overridable field by field)."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

PREDICTION_DEFAULTS = {"epochs": 30, "learning_rate": 2e-3, "token_dim": 64, "tag_dim": 8, "hidden_size": 128,
                       "max_len": 40, "max_grad_norm": 5.0}
DECISION_DEFAULTS = {"epochs": 30, "widths": [3, 4, 5], "n_filters": 100, "fusion_dim": 100,
                     "hidden_dim": 100, "dropout": 0.3, "encoder": "textcnn", "max_len": 64}
BASELINE_DEFAULTS = {"epochs": 30, "encoder": "textcnn", "widths": [3, 4, 5], "n_filters": 100,
                     "dropout": 0.3, "max_len": 64}


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    corpus: str = ""
    out_dir: str = "ptd-run"
    seed: int = 7
    construct: bool = False  # run delexicalisation + segmentation on a raw corpus first
    slots: Optional[str] = None
    fraction: float = 0.5
    min_freq: int = 1
    learning_rate: float = 1e-3
    decay_factor: float = 0.5
    batch_size: int = 64
    patience: int = 6
    beam_size: int = 4
    max_gen_len: int = 30
    max_turn: int = 20
    max_sub_turn: int = 8
    run_baselines: bool = True
    prediction: dict = field(default_factory=dict)
    decision: dict = field(default_factory=dict)
    baseline: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, obj: dict) -> "ExperimentConfig":
        if not isinstance(obj, dict):
            raise ConfigError("config must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(obj) - known)
        if unknown:
            raise ConfigError(f"unknown config fields: {unknown}")
        return cls(**obj)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            with open(path, encoding="utf-8") as fh:
                obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: malformed JSON ({exc.msg})") from None
        return cls.from_dict(obj)

    def to_dict(self) -> dict:
        return asdict(self)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")

    def override(self, key: str, value) -> None:
        """Set ``field`` or ``section.param`` (section in prediction/decision/baseline)."""
        if "." in key:
            section, name = key.split(".", 1)
            if section not in ("prediction", "decision", "baseline"):
                raise ConfigError(f"unknown config section {section!r}")
            getattr(self, section)[name] = value
            return
        if key not in {f.name for f in fields(self)}:
            raise ConfigError(f"unknown config field {key!r}")
        setattr(self, key, value)

    def validate(self) -> "ExperimentConfig":
        if not self.corpus:
            raise ConfigError("config.corpus is required")
        for p in (self.corpus, self.slots):
            if p and not Path(p).exists():
                raise ConfigError(f"path does not exist: {p}")
        if not 0.0 <= self.fraction <= 1.0:
            raise ConfigError("fraction must lie in [0, 1]")
        if self.beam_size < 1 or self.max_gen_len < 1:
            raise ConfigError("beam_size and max_gen_len must be >= 1")
        return self

    # per-model constructor arguments ------------------------------------

    def _shared(self) -> dict:
        return {"learning_rate": self.learning_rate, "decay_factor": self.decay_factor,
                "batch_size": self.batch_size, "max_turn": self.max_turn,
                "max_sub_turn": self.max_sub_turn, "min_freq": self.min_freq}

    def prediction_params(self, role: str) -> dict:
        seed = self.seed + (0 if role == "user" else 1)
        out = {**self._shared(), **PREDICTION_DEFAULTS, "beam_size": self.beam_size,
               "max_gen_len": self.max_gen_len, "role": role, "random_state": seed}
        out.update(self.prediction)
        return out

    def decision_params(self) -> dict:
        out = {**self._shared(), **DECISION_DEFAULTS, "patience": self.patience,
               "random_state": self.seed + 2}
        out.update(self.decision)
        out["widths"] = tuple(out["widths"])
        return out

    def baseline_params(self) -> dict:
        out = {**self._shared(), **BASELINE_DEFAULTS, "patience": self.patience,
               "random_state": self.seed + 3}
        out.update(self.baseline)
        out["widths"] = tuple(out["widths"])
        return out

    def seeds(self) -> dict:
        return {"seed": self.seed, "user_prediction": self.seed, "agent_prediction": self.seed + 1,
                "decision": self.seed + 2, "baseline": self.seed + 3}
