import json

import pytest

from invfold.checkpoint import MAGIC
from invfold.cli import main


def run(argv, capsys):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.fixture()
def dataset(tmp_path, capsys):
    path = tmp_path / "d.jsonl"
    assert run(["synth", "--seed", 7, "--n", 30, "--count", 5, "--out", path], capsys)[0] == 0
    return path


@pytest.fixture()
def checkpoint(tmp_path, dataset, capsys):
    path = tmp_path / "m.ckpt"
    argv = ["train", dataset, "--out", path, "--d", 8, "--layers", 1, "--max-steps", 2, "--batch-size", 2]
    code, _, err = run(argv, capsys)
    assert code == 0, err
    return path


def test_synth_then_describe(dataset, capsys):
    assert len(dataset.read_text().splitlines()) == 5
    code, out, _ = run(["featurize", dataset, "--describe"], capsys)
    assert code == 0
    assert "node width 165" in out and "edge width 336" in out
    code, out, _ = run(["featurize", "--describe", "--json"], capsys)
    layout = json.loads(out)
    assert layout["node_width"] == 165


def test_featurize_summary(dataset, capsys):
    code, out, _ = run(["featurize", dataset], capsys)
    rows = [json.loads(line) for line in out.splitlines()]
    assert code == 0 and len(rows) == 5
    assert rows[0]["nodes"] == 30 and rows[0]["edges"] == 30 * 29


def test_unknown_flag_is_usage_error(capsys):
    code, _, err = run(["synth", "--bogus"], capsys)
    assert code == 2 and "usage" in err


def test_missing_checkpoint(dataset, tmp_path, capsys):
    code, _, err = run(["eval", dataset, "--checkpoint", tmp_path / "nope.ckpt"], capsys)
    assert code == 3 and "checkpoint not found" in err


def test_corrupt_checkpoint(dataset, tmp_path, capsys):
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"garbage!")
    assert run(["eval", dataset, "--checkpoint", bad], capsys)[0] == 5


def test_bad_dataset(tmp_path, capsys):
    path = tmp_path / "bad.jsonl"
    path.write_text('{"name": "x", "seq": "AZ", "coords": {}}\n')
    code, _, err = run(["eval", path, "--checkpoint", path], capsys)
    assert code in (4, 5)
    code, _, err = run(["featurize", path], capsys)
    assert code == 4 and "line 1" in err


def test_synth_is_byte_reproducible(tmp_path, capsys):
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    run(["synth", "--seed", 3, "--out", a], capsys)
    run(["synth", "--seed", 3, "--out", b], capsys)
    assert a.read_bytes() == b.read_bytes()
    code, out, _ = run(["synth", "--seed", 3], capsys)
    assert out.encode() == a.read_bytes()


def test_train_is_byte_reproducible(dataset, checkpoint, tmp_path, capsys):
    again = tmp_path / "again.ckpt"
    argv = ["train", dataset, "--out", again, "--d", 8, "--layers", 1, "--max-steps", 2, "--batch-size", 2]
    assert run(argv, capsys)[0] == 0
    assert again.read_bytes() == checkpoint.read_bytes()
    assert checkpoint.read_bytes()[:8] == MAGIC


def test_train_log(dataset, tmp_path, capsys):
    log = tmp_path / "log.jsonl"
    argv = ["train", dataset, "--out", tmp_path / "m.ckpt", "--d", 8, "--layers", 1, "--epochs", 1,
            "--batch-size", 2, "--log", log, "--schedule", "onecycle"]
    assert run(argv, capsys)[0] == 0
    rows = [json.loads(line) for line in log.read_text().splitlines()]
    assert [r["step"] for r in rows] == [1, 2, 3]


def test_design_writes_fasta_and_sidecar(dataset, checkpoint, tmp_path, capsys):
    out = tmp_path / "design.fasta"
    code, _, err = run(["design", dataset, "--checkpoint", checkpoint, "--out", out], capsys)
    assert code == 0, err
    lines = out.read_text().splitlines()
    assert len(lines) == 10 and lines[0].startswith(">")
    assert len(lines[1]) == 30 and set(lines[1]) <= set("ACDEFGHIKLMNPQRSTVWY")
    side = json.loads((tmp_path / "design.fasta.json").read_text())
    first = side["proteins"][lines[0][1:]]
    assert len(first["log_probs"]) == 30 and all(first["scored"])
    again = tmp_path / "again.fasta"
    run(["design", dataset, "--checkpoint", checkpoint, "--out", again], capsys)
    assert again.read_bytes() == out.read_bytes()


def test_eval_report(dataset, checkpoint, capsys):
    code, out, _ = run(["eval", dataset, "--checkpoint", checkpoint], capsys)
    report = json.loads(out)
    assert code == 0 and report["count"] == 5 and report["perplexity"] >= 1
    code, out, _ = run(["eval", dataset, "--checkpoint", checkpoint, "--max-length", 10], capsys)
    assert json.loads(out)["status"] == "empty subset"


def test_split_manifest(dataset, checkpoint, tmp_path, capsys):
    names = [json.loads(line)["name"] for line in dataset.read_text().splitlines()]
    manifest = tmp_path / "split.json"
    manifest.write_text(json.dumps({"train": names[:3], "test": names[3:]}))
    code, out, _ = run(["eval", dataset, "--checkpoint", checkpoint, "--split", manifest], capsys)
    assert code == 0 and json.loads(out)["names"] == names[3:]


def test_config_file(dataset, tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"model": {"features": {"n_virtual": 0}}}))
    code, out, _ = run(["featurize", "--describe", "--json", "--config", cfg], capsys)
    assert json.loads(out)["node_width"] == 6 * 16 + 21
    cfg.write_text("[1, 2]")
    assert run(["featurize", "--describe", "--config", cfg], capsys)[0] == 4


def test_bench_subcommand(capsys):
    code, out, err = run(["bench", "--lengths", "20", "--reps", 2, "--warmup", 0, "--precision", "f32"], capsys)
    report = json.loads(out)
    assert code == 0 and report["precision"] == "f32"
    assert [e["length"] for e in report["entries"]] == [20]
    assert "ratio" in err
