import json
import subprocess
import sys

import pytest

from magfuse import cli

SMALL = ["--set", "model.encoder.d_model=8", "--set", "model.encoder.d_ff=16",
         "--set", "train.epochs=2", "--set", "train.learning_rate=0.01"]


def run(*argv):
    return cli.main([str(a) for a in argv])


def test_gen_writes_corpus_and_manifest(tmp_path):
    assert run("gen", "--n", 100, "--seed", 7, "-o", tmp_path / "out") == 0
    lines = (tmp_path / "out" / "corpus.jsonl").read_text().splitlines()
    assert len(lines) == 100
    man = json.loads((tmp_path / "out" / "manifest.json").read_text())
    assert man["seed"] == 7 and man["n_lines"] == 100
    assert (tmp_path / "out" / "resolved_config.json").is_file()


def test_gen_checksum_is_deterministic(tmp_path):
    run("gen", "--n", 20, "--seed", 3, "-o", tmp_path / "a")
    run("gen", "--n", 20, "--seed", 3, "-o", tmp_path / "b")
    sha = [json.loads((tmp_path / d / "manifest.json").read_text())["sha256"] for d in "ab"]
    assert sha[0] == sha[1]


def test_gen_rejects_weights_not_summing_to_one(tmp_path, capsys):
    code = run("gen", "--w-text", 0.5, "--w-visual", 0.5, "--w-acoustic", 0.5, "-o", tmp_path)
    assert code == 2
    err = capsys.readouterr().err.strip()
    assert err.startswith("ConfigError:") and "sum to 1" in err and "\n" not in err


def test_seed_precedence(tmp_path, monkeypatch):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"seed": 5}))
    monkeypatch.setenv("MAGFUSE_SEED", "9")
    assert cli.resolve_config()["seed"] == 9
    assert cli.resolve_config(cfg)["seed"] == 5
    assert cli.resolve_config(cfg, seed=1)["seed"] == 1
    monkeypatch.delenv("MAGFUSE_SEED")
    assert cli.resolve_config()["seed"] == 0


def test_overrides_beat_config_file(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"train": {"epochs": 3}}))
    resolved = cli.resolve_config(cfg, ["train.epochs=7", "model.encoder.variant=relative_bias"])
    assert resolved["train"]["epochs"] == 7
    assert resolved["model"]["encoder"]["variant"] == "relative_bias"
    with pytest.raises(Exception):
        cli.resolve_config(None, ["no_equals_sign"])


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert run("gen", "--n", 40, "--seed", 1, "--min-len", 3, "--max-len", 6, "-o", root / "data") == 0
    assert run("train", "--data", root / "data" / "corpus.jsonl", "-o", root / "run", *SMALL) == 0
    return root


def test_train_outputs(trained):
    run_dir = trained / "run"
    for name in ("checkpoint/manifest.json", "checkpoint/weights.bin", "runlog.jsonl", "runlog.csv",
                 "resolved_config.json"):
        assert (run_dir / name).is_file(), name
    assert len((run_dir / "runlog.jsonl").read_text().splitlines()) == 2
    resolved = json.loads((run_dir / "resolved_config.json").read_text())
    assert resolved["train"]["epochs"] == 2 and resolved["model"]["encoder"]["d_model"] == 8


def test_eval_reports_table_columns(trained, capsys):
    out = trained / "eval"
    assert run("eval", "--checkpoint", trained / "run" / "checkpoint",
               "--data", trained / "run" / "test.jsonl", "-o", out) == 0
    printed = json.loads(capsys.readouterr().out)
    assert {"accuracy", "f1", "mae", "corr"} <= set(printed)
    assert json.loads((out / "metrics.json").read_text()) == printed


def test_highlight_contract(trained, tmp_path):
    assert run("gen", "--stream-steps", 60, "--span", "20:32:2.8", "--seed", 2, "-o", tmp_path) == 0
    code = run("highlight", "--checkpoint", trained / "run" / "checkpoint", "--stream",
               tmp_path / "stream.jsonl", "--window", 16, "--stride", 4, "--quantile", 0.9,
               "--csv", "-o", tmp_path / "hl")
    assert code == 0
    segs = json.loads((tmp_path / "hl" / "segments.json").read_text())
    assert isinstance(segs, list)
    for s in segs:
        assert set(s) == {"start_step", "end_step", "start_time", "end_time", "peak_score",
                          "mean_score"}
    assert (tmp_path / "hl" / "segments.csv").read_text().startswith("start_step,end_step")
    resolved = json.loads((tmp_path / "hl" / "resolved_config.json").read_text())
    assert resolved["highlight"]["resolved_threshold"] >= 1.0


def test_exit_codes(trained, tmp_path, capsys):
    ck = trained / "run" / "checkpoint"
    assert run("eval", "--checkpoint", tmp_path / "none", "--data", trained / "run" / "test.jsonl",
               "-o", tmp_path) == 6
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"id": "x", "words": ["a"], "visual": [[0]], "acoustic": [[0]], "label": 9}\n')
    assert run("eval", "--checkpoint", ck, "--data", bad, "-o", tmp_path) == 3
    other = tmp_path / "dims"
    run("gen", "--n", 5, "--d-visual", 2, "-o", other)
    assert run("eval", "--checkpoint", ck, "--data", other / "corpus.jsonl", "-o", tmp_path) == 5
    broken = tmp_path / "ck"
    broken.mkdir()
    for name in ("manifest.json", "weights.bin"):
        (broken / name).write_bytes((ck / name).read_bytes())
    (broken / "weights.bin").write_bytes((broken / "weights.bin").read_bytes()[:100])
    assert run("eval", "--checkpoint", broken, "--data", trained / "run" / "test.jsonl",
               "-o", tmp_path) == 3
    assert run("train", "--data", trained / "run" / "test.jsonl", "--set", "train.epochs=0",
               "-o", tmp_path / "t") == 2
    capsys.readouterr()


def test_module_entry_point_exit_code(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "magfuse", "eval", "--checkpoint", str(tmp_path / "x"),
                           "--data", str(tmp_path / "y")], capture_output=True, text=True)
    assert proc.returncode == 6
    assert proc.stderr.startswith("MissingInputError:")
