from pathlib import Path

import pytest

from ptd.corpus import Utterance, parse_corpus, prediction_samples, split_dialogues, write_corpus
from ptd.corpus.vocab import build_vocabulary
from ptd.synth import synth_corpus

DATA = Path(__file__).parent / "data"

# acceptance outcomes collected for the terminal summary, keyed by criterion number
ACCEPTANCE_RESULTS: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_RESULTS):
        ok, detail = ACCEPTANCE_RESULTS[key]
        terminalreporter.write_line(f"criterion {key}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture
def booking_path():
    return DATA / "booking_dialogue.jsonl"


@pytest.fixture
def booking(booking_path):
    return parse_corpus(booking_path)[0]


def utt(tokens, turn, sub, spk):
    if isinstance(tokens, str):
        tokens = tokens.split()
    return Utterance(list(tokens), turn, sub, spk)


@pytest.fixture(scope="session")
def small_corpus():
    return synth_corpus(40, seed=3)


@pytest.fixture(scope="session")
def small_vocab(small_corpus):
    return build_vocabulary(small_corpus)


@pytest.fixture(scope="session")
def tiny_models(small_corpus, small_vocab):
    """Briefly trained small models; enough for API and round-trip tests."""
    from ptd.decision import DecisionModel
    from ptd.seq2seq import PredictionModel

    splits = split_dialogues(small_corpus)
    models = {}
    for seed, role in enumerate(("user", "agent")):
        samples = prediction_samples(splits["train"], role)
        models[role] = PredictionModel(role=role, token_dim=12, tag_dim=4, hidden_size=16, epochs=2,
                                       batch_size=32, random_state=seed).fit(samples, vocab=small_vocab)
    from ptd.pipeline import generate_futures, labelled_samples

    samples = labelled_samples(splits["train"])
    gens = generate_futures(models["user"], models["agent"], samples)
    X = [(s.history, g.r_a, g.r_u) for s, g in zip(samples, gens)]
    y = [s.label for s in samples]
    models["decision"] = DecisionModel(token_dim=12, tag_dim=4, n_filters=8, fusion_dim=8, hidden_dim=8,
                                       epochs=2, random_state=5).fit(X, y, vocab=small_vocab)
    return models


@pytest.fixture(scope="session")
def tiny_ckpt_dir(tmp_path_factory, tiny_models):
    from ptd.pipeline import CHECKPOINT_NAMES, save_checkpoint

    d = tmp_path_factory.mktemp("tiny_ckpts")
    for name in ("user", "agent", "decision"):
        save_checkpoint(tiny_models[name], d / CHECKPOINT_NAMES[name])
    return d


# ------------------------------------------------------------ full run

SYNTH_DIALOGUES = 600
SYNTH_SEED = 7


@pytest.fixture(scope="session")
def synth_path(tmp_path_factory):
    path = tmp_path_factory.mktemp("synth") / "synth.jsonl"
    write_corpus(synth_corpus(SYNTH_DIALOGUES, SYNTH_SEED), path)
    return path


@pytest.fixture(scope="session")
def trained_run(tmp_path_factory, synth_path):
    """One default-config training run on the 600-dialogue synthetic corpus."""
    import time

    from ptd.pipeline import ExperimentConfig, run_training

    out = tmp_path_factory.mktemp("run")
    config = ExperimentConfig(corpus=str(synth_path), out_dir=str(out / "ptd"), seed=SYNTH_SEED)
    t0 = time.perf_counter()
    result = run_training(config)
    result.elapsed = time.perf_counter() - t0
    result.config = config
    result.report_bytes = (Path(config.out_dir) / "report.json").read_bytes()
    return result

