import json

import pytest

from xdlm import cli, scalar
from xdlm.sampler import SampleTrace

from conftest import DEMO


def write_config(tmp_path, k=0.1, steps=40, extra=""):
    cfg = tmp_path / "run.ini"
    cfg.write_text(
        f"[kernel]\nk = {k}\n[train]\ncorpus = {DEMO / 'corpus.txt'}\nsteps = {steps}\n"
        f"batch = 8\nseq_len = 32\nd_model = 16\nlr = 0.02\nmomentum = 0.9\n{extra}"
    )
    return cfg


def test_verify_passes(capsys):
    assert cli.main(["verify", "--trials", "60", "--seed", "1"]) == 0
    out = capsys.readouterr().out
    for name in ("posterior", "kl", "mdlm", "udlm", "limit", "gradient"):
        assert f"PASS {name}" in out


def test_verify_json(capsys):
    assert cli.main(["verify", "--trials", "20", "--json"]) == 0
    rows = json.loads(capsys.readouterr().out)
    assert {r["name"] for r in rows} >= {"posterior", "udlm"}


def test_verify_zero_trials_is_usage_error():
    with pytest.raises(SystemExit) as exc:
        cli.main(["verify", "--trials", "0"])
    assert exc.value.code == 2


def test_verify_catches_sign_flip(monkeypatch, capsys):
    original = scalar.h_limit
    monkeypatch.setattr(scalar, "h_limit", lambda *a, **kw: -original(*a, **kw))
    assert cli.main(["verify", "--trials", "20"]) == 1
    captured = capsys.readouterr()
    assert "FAIL udlm" in captured.out
    assert "udlm" in captured.err


def test_train_and_sample(tmp_path, capsys):
    cfg = write_config(tmp_path)
    out = tmp_path / "run"
    assert cli.main(["train", "--config", str(cfg), "--out", str(out), "--json"]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["steps"] == 40
    assert (out / "model.bin").exists() and (out / "model.bin.json").exists()
    history = json.loads((out / "history.json").read_text())
    assert len(history) == 4

    samples = tmp_path / "s"
    assert cli.main(["sample", "--checkpoint", str(out / "model.bin"), "--steps", "8",
                     "--n", "3", "--out", str(samples), "--json"]) == 0
    report = json.loads(capsys.readouterr().out)
    assert {"ngram_tv", "token_entropy", "traces_with_remask"} <= set(report)
    lines = (samples / "samples.txt").read_text().splitlines()
    assert len(lines) == 3 and all(len(s) == 32 for s in lines)
    traces = sorted((samples / "traces").glob("*.jsonl"))
    assert len(traces) == 3
    steps = SampleTrace.from_jsonl(traces[0].read_text(), 0).steps
    assert [s["step"] for s in steps] == list(range(8))

    assert cli.main(["sample", "--checkpoint", str(out / "model.bin"), "--steps", "1",
                     "--n", "1", "--mode", "confidence", "--out", str(tmp_path / "c")]) == 0
    assert len((tmp_path / "c" / "samples.txt").read_text().splitlines()) == 1


def test_train_deterministic(tmp_path):
    cfg = write_config(tmp_path, steps=20)
    for name in ("a", "b"):
        assert cli.main(["train", "--config", str(cfg), "--out", str(tmp_path / name)]) == 0
    a = (tmp_path / "a" / "history.json").read_bytes()
    assert a == (tmp_path / "b" / "history.json").read_bytes()
    assert (tmp_path / "a" / "model.bin").read_bytes() == (tmp_path / "b" / "model.bin").read_bytes()


def test_k0_checkpoint_never_remasks(tmp_path, capsys):
    cfg = write_config(tmp_path, k=0.0, steps=20)
    cli.main(["train", "--config", str(cfg), "--out", str(tmp_path / "r")])
    capsys.readouterr()
    cli.main(["sample", "--checkpoint", str(tmp_path / "r" / "model.bin"), "--steps", "16",
              "--n", "5", "--out", str(tmp_path / "s"), "--json"])
    assert json.loads(capsys.readouterr().out)["traces_with_remask"] == 0


def test_bad_k_names_key(tmp_path, capsys):
    cfg = write_config(tmp_path, k=2.0)
    assert cli.main(["train", "--config", str(cfg), "--out", str(tmp_path / "r")]) == 2
    err = capsys.readouterr().err
    assert "[kernel] k" in err and "run.ini:2" in err


def test_bad_checkpoint(tmp_path, capsys):
    bad = tmp_path / "m.bin"
    bad.write_bytes(b"junk")
    (tmp_path / "m.bin.json").write_text("{}")
    assert cli.main(["sample", "--checkpoint", str(bad), "--out", str(tmp_path)]) == 2
    assert "error" in capsys.readouterr().err


def test_bench_small(tmp_path, capsys):
    assert cli.main(["bench", "--N", "2,16", "--batch", "4", "--out", str(tmp_path), "--json"]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["gate"]["2"]["passed"] and report["gate"]["2"]["posterior_max_err"] <= 1e-12
    assert len(report["rows"]) == 4
    assert (tmp_path / "bench.json").exists()
    assert cli.main(["bench", "--N", "16", "--reps", "3"]) == 2
