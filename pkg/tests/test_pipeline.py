import dataclasses
import json
import random

import numpy as np
import pytest

from conftest import utt
from ptd.corpus import DataError, build_vocabulary, write_corpus
from ptd.pipeline import (
    CHECKPOINT_NAMES,
    MAGIC,
    PTD,
    CheckpointError,
    ConfigError,
    ExperimentConfig,
    StageError,
    dumps_checkpoint,
    generate_futures,
    infer,
    inspect_checkpoint,
    labelled_samples,
    load_checkpoint,
    loads_checkpoint,
    read_generations,
    run_training,
    save_checkpoint,
)

TINY = {"prediction": {"token_dim": 8, "tag_dim": 2, "hidden_size": 8, "epochs": 1},
        "decision": {"token_dim": 8, "tag_dim": 2, "n_filters": 4, "fusion_dim": 4, "hidden_dim": 4,
                     "epochs": 2},
        "baseline": {"token_dim": 8, "tag_dim": 2, "n_filters": 4, "epochs": 2}}


@pytest.fixture(scope="module")
def small_path(tmp_path_factory, small_corpus):
    path = tmp_path_factory.mktemp("small") / "small.jsonl"
    write_corpus(small_corpus, path)
    return path


@pytest.fixture(scope="module")
def small_run(tmp_path_factory, small_path):
    out = tmp_path_factory.mktemp("small_run") / "run"
    config = ExperimentConfig(corpus=str(small_path), out_dir=str(out), seed=3, beam_size=2, max_gen_len=12, **TINY)
    return run_training(config)


# ------------------------------------------------------------ checkpoints

@pytest.mark.parametrize("name", ["user", "agent", "decision"])
def test_checkpoint_round_trip_is_byte_identical(tiny_models, tmp_path, name):
    model = tiny_models[name]
    path = save_checkpoint(model, tmp_path / "a.ckpt")
    data = path.read_bytes()
    assert data.startswith(MAGIC)
    loaded = load_checkpoint(path)
    assert dumps_checkpoint(loaded) == data
    for key, p in model.params_.items():
        assert np.array_equal(loaded.params_[key].data, p.data)
    assert loaded.get_params() == model.get_params()


def test_baseline_checkpoint_round_trip(small_run):
    data = small_run.checkpoints["baseline"].read_bytes()
    assert dumps_checkpoint(loads_checkpoint(data)) == data


def test_corrupted_magic_is_rejected(tiny_models):
    data = bytearray(dumps_checkpoint(tiny_models["decision"]))
    data[:4] = b"XXXX"
    with pytest.raises(CheckpointError, match="bad magic"):
        loads_checkpoint(bytes(data))


def test_truncated_files_are_rejected(tiny_models):
    data = dumps_checkpoint(tiny_models["user"])
    with pytest.raises(CheckpointError, match="truncated blob"):
        loads_checkpoint(data[:-4])
    with pytest.raises(CheckpointError, match="truncated header"):
        loads_checkpoint(data[:12])
    with pytest.raises(CheckpointError, match="truncated header"):
        loads_checkpoint(data[:40])


def _rewrite_header(data: bytes, edit) -> bytes:
    n = int.from_bytes(data[8:16], "little")
    header = json.loads(data[16:16 + n])
    edit(header)
    raw = json.dumps(header, sort_keys=True).encode()
    return MAGIC + len(raw).to_bytes(8, "little") + raw + data[16 + n:]


@pytest.mark.parametrize("edit, message", [
    (lambda h: h.update(format_version=99), "unknown checkpoint version"),
    (lambda h: h.update(kind="transformer"), "unknown model kind"),
    (lambda h: h["tensors"][1].update(offset=h["tensors"][1]["offset"] + 1), "offset mismatch"),
    (lambda h: h["tensors"].append(dict(h["tensors"][0])), "listed twice"),
    (lambda h: h["tensors"].pop(), "does not cover"),
])
def test_inconsistent_headers_are_rejected(tiny_models, edit, message):
    data = _rewrite_header(dumps_checkpoint(tiny_models["decision"]), edit)
    with pytest.raises(CheckpointError, match=message):
        loads_checkpoint(data)


def test_load_under_other_vocabulary_fails(tiny_models):
    data = dumps_checkpoint(tiny_models["user"])
    other = build_vocabulary([["just", "a", "few", "words"]])
    with pytest.raises(CheckpointError, match="vocabulary size"):
        loads_checkpoint(data, vocab=other)
    assert loads_checkpoint(data, vocab=tiny_models["user"].vocab_) is not None


def test_inspection_reads_only_the_header(tiny_models, tmp_path):
    path = save_checkpoint(tiny_models["decision"], tmp_path / "d.ckpt")
    full = inspect_checkpoint(path)
    # chop the blob off entirely: inspection must still work
    n = int.from_bytes(path.read_bytes()[8:16], "little")
    path.write_bytes(path.read_bytes()[:16 + n])
    assert inspect_checkpoint(path) == full
    assert full["kind"] == "decision"
    assert full["vocab_size"] == len(tiny_models["decision"].vocab_)
    names = [t["name"] for t in full["tensors"]]
    assert names == list(tiny_models["decision"].params_)
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_missing_checkpoint_file(tmp_path):
    with pytest.raises(CheckpointError, match="cannot read"):
        load_checkpoint(tmp_path / "nope.ckpt")


def test_unfitted_model_cannot_be_saved():
    from ptd.decision import DecisionModel

    with pytest.raises(Exception):
        dumps_checkpoint(DecisionModel())
    with pytest.raises(CheckpointError):
        dumps_checkpoint(object())


# ------------------------------------------------------------ inference

def test_infer_matches_loaded_framework(tiny_ckpt_dir, tiny_models, small_corpus):
    paths = [tiny_ckpt_dir / CHECKPOINT_NAMES[k] for k in ("user", "agent", "decision")]
    ptd = PTD(tiny_models["user"], tiny_models["agent"], tiny_models["decision"])
    for s in labelled_samples(small_corpus[:3]):
        d = infer(*paths, s.history)
        assert d == ptd.decide(s.history)
        assert set(d.to_dict()) == {"label", "p_answer", "r_u", "r_a"}


def test_framework_batch_methods_agree(tiny_ckpt_dir, small_corpus):
    ptd = PTD.from_dir(tiny_ckpt_dir)
    hs = [s.history for s in labelled_samples(small_corpus[:2])]
    proba = ptd.predict_proba(hs)
    assert np.allclose(proba.sum(axis=1), 1.0, atol=1e-10)
    assert ptd.predict(hs).tolist() == [d.label for d in ptd.decide_many(hs)]
    sims = ptd.simulate(hs)
    assert [d.r_a for d in ptd.decide_many(hs)] == [list(s[0]) for s in sims]


def test_infer_rejects_agent_final_history(tiny_ckpt_dir):
    ptd = PTD.from_dir(tiny_ckpt_dir)
    with pytest.raises(DataError, match="must end with a user utterance"):
        ptd.decide([utt("hello", 0, 0, 1)])


def test_mismatched_vocabularies_are_rejected(tiny_models, small_corpus):
    from ptd.seq2seq import PredictionModel

    other = PredictionModel(role="agent", hidden_size=4, token_dim=4, tag_dim=2, random_state=0)
    other.initialize(build_vocabulary(small_corpus[:2]))
    with pytest.raises(CheckpointError, match="different vocabularies"):
        PTD(tiny_models["user"], other, tiny_models["decision"])
    with pytest.raises(CheckpointError, match="roles"):
        PTD(tiny_models["agent"], tiny_models["user"], tiny_models["decision"])


# ------------------------------------------------------------ config

def test_config_overrides_and_errors(tmp_path, small_path):
    c = ExperimentConfig(corpus=str(small_path))
    c.override("beam_size", 2)
    c.override("decision.n_filters", 7)
    assert c.beam_size == 2 and c.decision_params()["n_filters"] == 7
    assert c.prediction_params("agent")["random_state"] == c.seed + 1
    with pytest.raises(ConfigError):
        c.override("nonsense", 1)
    with pytest.raises(ConfigError):
        c.override("optimizer.lr", 1)
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"corpus": "x", "colour": "red"})
    with pytest.raises(ConfigError):
        ExperimentConfig().validate()
    with pytest.raises(ConfigError):
        ExperimentConfig(corpus=str(tmp_path / "missing.jsonl")).validate()
    with pytest.raises(ConfigError):
        ExperimentConfig(corpus=str(small_path), fraction=2.0).validate()
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError, match="malformed"):
        ExperimentConfig.load(bad)
    good = tmp_path / "good.json"
    c.save(good)
    assert ExperimentConfig.load(good) == c


def test_empty_train_split_fails_at_load_stage(tmp_path, small_corpus):
    path = tmp_path / "no_train.jsonl"
    write_corpus([dataclasses.replace(d, split="test") for d in small_corpus[:3]], path)
    with pytest.raises(StageError) as info:
        run_training(ExperimentConfig(corpus=str(path), out_dir=str(tmp_path / "out")))
    assert info.value.stage == "load"
    assert isinstance(info.value.cause, DataError)


# ------------------------------------------------------------ small run

def test_small_run_writes_artifacts(small_run):
    out = small_run.out_dir
    for name in ("user", "agent", "decision", "baseline"):
        assert (out / CHECKPOINT_NAMES[name]).exists()
    report = json.loads((out / "report.json").read_text())
    assert report["weights"]["prediction_models_frozen"] is True
    assert report["test"]["n_samples"] == report["test"]["wait_samples"] + report["test"]["answer_samples"]
    assert "history_textcnn" in report["test"]["baselines"]
    assert set(json.loads((out / "timing.json").read_text())) >= {"load", "decision", "total"}


def test_prediction_models_stay_frozen(small_run):
    # digests recorded before decision training equal those of the saved checkpoints
    w = small_run.report["weights"]
    assert load_checkpoint(small_run.checkpoints["user"]).weights_digest() == w["user_prediction"]
    assert load_checkpoint(small_run.checkpoints["agent"]).weights_digest() == w["agent_prediction"]


def test_generations_replay_matches_generate(small_run, small_corpus):
    gens = read_generations(small_run.out_dir / "generations.jsonl")
    user = load_checkpoint(small_run.checkpoints["user"])
    agent = load_checkpoint(small_run.checkpoints["agent"])
    samples = labelled_samples(small_corpus)
    assert {s.sample_id for s in samples} == set(gens)
    picked = random.Random(0).sample(samples, 50)
    for g in generate_futures(user, agent, picked):
        stored = gens[g.sample_id]
        assert (stored.r_u, stored.r_a) == (g.r_u, g.r_a)
        assert stored.logp_u == pytest.approx(g.logp_u, abs=1e-9)
        assert stored.logp_a == pytest.approx(g.logp_a, abs=1e-9)


def test_generations_file_schema(small_run):
    with open(small_run.out_dir / "generations.jsonl") as fh:
        first = json.loads(fh.readline())
    assert set(first) == {"sample_id", "r_u", "r_a", "logp_u", "logp_a"}
    assert isinstance(first["r_u"], list) and isinstance(first["logp_a"], float)
