import io
import json
import subprocess
import sys

import pytest

from ptd.cli import EXIT_DATA, EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, main
from ptd.corpus import decision_samples, parse_corpus


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def raw_corpus(path, n=10):
    lines = []
    for i in range(n):
        lines.append({"dialogue_id": f"d{i}", "split": "train", "turns": [
            {"speaker": "agent", "sentences": ["Hello, how can I help?"]},
            {"speaker": "user", "sentences": [f"I need a taxi to stop {i}.", "It should leave at noon."]},
            {"speaker": "agent", "sentences": ["Booked."]}]})
    path.write_text("".join(json.dumps(x) + "\n" for x in lines))
    return path


def test_no_command_is_usage_error(capsys):
    code, _, err = run(capsys)
    assert code == EXIT_USAGE and "usage" in err


def test_unknown_flag_is_usage_error(capsys):
    with pytest.raises(SystemExit) as info:
        main(["synth", "--dialogues", "2", "--out", "-", "--colour"])
    assert info.value.code == EXIT_USAGE
    assert "usage" in capsys.readouterr().err


def test_missing_input_is_usage_error(capsys, tmp_path):
    with pytest.raises(SystemExit) as info:
        main(["build-dataset", "--out", str(tmp_path / "x.jsonl")])
    assert info.value.code == EXIT_USAGE


def test_build_dataset_on_booking_dialogue(capsys, booking_path, tmp_path):
    code, out, _ = run(capsys, "build-dataset", "--in", booking_path, "--out", tmp_path / "c.jsonl")
    assert code == EXIT_OK
    stats = json.loads(out)
    assert (stats["dialogues"], stats["wait_samples"], stats["answer_samples"]) == (1, 3, 2)


def test_build_dataset_fraction_zero(capsys, tmp_path):
    src = raw_corpus(tmp_path / "raw.jsonl")
    code, out, _ = run(capsys, "build-dataset", "--in", src, "--fraction", 0, "--out", tmp_path / "c.jsonl")
    assert code == EXIT_OK and json.loads(out)["avg_user_sub_turns"] == 1.0


def test_build_dataset_counts_match_written_corpus(capsys, tmp_path):
    src = raw_corpus(tmp_path / "raw.jsonl")
    _, out, _ = run(capsys, "build-dataset", "--in", src, "--fraction", 0.5, "--seed", 1, "--out", tmp_path / "c.jsonl")
    stats = json.loads(out)
    samples = decision_samples(parse_corpus(tmp_path / "c.jsonl"))
    assert stats["wait_samples"] == sum(s.label == 0 for s in samples) == 5
    assert stats["answer_samples"] == sum(s.label == 1 for s in samples) == 10


def test_build_dataset_malformed_input_is_data_error(capsys, tmp_path):
    bad = tmp_path / "bad.jsonl"
    bad.write_text("{oops\n")
    code, _, err = run(capsys, "build-dataset", "--in", bad, "--out", tmp_path / "c.jsonl")
    assert code == EXIT_DATA and "line 1" in err
    code, _, _ = run(capsys, "build-dataset", "--in", tmp_path / "missing.jsonl", "--out", tmp_path / "c.jsonl")
    assert code == EXIT_DATA


def test_synth_is_byte_identical(capsys, tmp_path):
    for name in ("a", "b"):
        assert run(capsys, "synth", "--dialogues", 30, "--seed", 7, "--out", tmp_path / f"{name}.jsonl")[0] == 0
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()


def test_synth_labels_and_cues(capsys, tmp_path):
    code, out, _ = run(capsys, "synth", "--dialogues", 200, "--seed", 7, "--out", tmp_path / "s.jsonl")
    stats = json.loads(out)
    share = stats["answer_samples"] / (stats["answer_samples"] + stats["wait_samples"])
    assert 0.45 <= share <= 0.55
    for s in decision_samples(parse_corpus(tmp_path / "s.jsonl")):
        last = s.history[-1].tokens[-1]
        assert last in ({"and", "also", "plus"} if s.label == 0 else {"please", "thanks"})


def test_synth_rejects_zero_dialogues(capsys):
    assert run(capsys, "synth", "--dialogues", 0, "--out", "-")[0] == EXIT_USAGE


def write_history(path, utterances):
    path.write_text(json.dumps([{"tokens": t.split(), "turn_id": turn, "sub_turn_id": sub, "speaker_id": spk}
                                for t, turn, sub, spk in utterances]))
    return path


def test_decide_prints_a_decision(capsys, tiny_ckpt_dir, tmp_path):
    h = write_history(tmp_path / "h.json", [("hello how can i help", 0, 0, 1), ("i need a taxi please", 1, 0, 0)])
    code, out, _ = run(capsys, "decide", "--ckpts", tiny_ckpt_dir, "--history-json", h)
    assert code == EXIT_OK
    d = json.loads(out)
    assert set(d) == {"label", "p_answer", "r_u", "r_a"} and d["label"] in (0, 1)


def test_decide_on_agent_final_history(capsys, tiny_ckpt_dir, tmp_path):
    h = write_history(tmp_path / "h.json", [("i need a taxi", 0, 0, 0), ("where to", 1, 0, 1)])
    code, out, err = run(capsys, "decide", "--ckpts", tiny_ckpt_dir, "--history-json", h)
    assert code == EXIT_DATA and out == ""
    assert "history must end with a user utterance" in err


def test_decide_with_missing_checkpoints_is_runtime_error(capsys, tmp_path):
    h = write_history(tmp_path / "h.json", [("hello", 0, 0, 0)])
    code, _, _ = run(capsys, "decide", "--ckpts", tmp_path, "--history-json", h)
    assert code == EXIT_RUNTIME


def test_evaluate_emits_reports(capsys, tiny_ckpt_dir, tmp_path, small_corpus):
    from ptd.corpus import write_corpus

    path = tmp_path / "c.jsonl"
    write_corpus(small_corpus, path)
    code, out, _ = run(capsys, "evaluate", "--ckpts", tiny_ckpt_dir, "--corpus", path, "--split", "all")
    assert code == EXIT_OK
    report = json.loads(out)
    assert report["n_samples"] == len(decision_samples(small_corpus))
    assert {"ptd", "baselines", "bleu"} <= set(report)
    assert 0.0 <= report["ptd"]["accuracy"] <= 1.0


def test_train_with_bad_config_is_data_error(capsys, tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"corpus": str(tmp_path / "missing.jsonl")}))
    assert run(capsys, "train", "--config", cfg)[0] == EXIT_DATA
    assert run(capsys, "train", "--config", cfg, "--set", "novalue")[0] == EXIT_USAGE


def demo(monkeypatch, capsys, ckpts, lines):
    monkeypatch.setattr(sys, "stdin", io.StringIO("".join(line + "\n" for line in lines)))
    code = main(["demo", "--ckpts", str(ckpts)])
    return code, capsys.readouterr().out


def test_demo_reset_then_quit(monkeypatch, capsys, tiny_ckpt_dir):
    code, out = demo(monkeypatch, capsys, tiny_ckpt_dir, [":reset", ":quit"])
    assert code == EXIT_OK and "(history cleared)" in out


def test_demo_decides_and_ignores_empty_lines(monkeypatch, capsys, tiny_ckpt_dir):
    code, out = demo(monkeypatch, capsys, tiny_ckpt_dir, ["", "i need a taxi and", "   "])
    assert code == EXIT_OK  # EOF ends the session
    assert out.count("p_answer=") == 1
    assert "simulated user" in out and "simulated agent" in out
    assert out.count("user> ") == 4


def test_demo_with_bad_checkpoints(monkeypatch, capsys, tmp_path):
    code, _ = demo(monkeypatch, capsys, tmp_path, [":quit"])
    assert code == EXIT_RUNTIME


def test_console_script_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "ptd.cli", "synth", "--dialogues", "2", "--out", "-"],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert len(proc.stdout.strip().splitlines()) == 2
