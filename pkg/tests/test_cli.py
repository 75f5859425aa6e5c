import csv
import json
import os

import numpy as np
import pytest

from ous import train as train_mod
from ous.checkpoint import load_checkpoint, save_checkpoint
from ous.cli import EXIT_CHECKPOINT, EXIT_CONFIG, EXIT_GRADCHECK, EXIT_IO, EXIT_NUMERIC, main
from ous.data import read_clip
from ous.errors import NumericError
from ous.train import read_metrics

from _helpers import tiny_config


def write_config(path, cfg):
    path.write_text(cfg.to_json())
    return str(path)


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg_path = write_config(root / "cfg.json", tiny_config(train={"max_epochs": 2}))
    assert main(["gen-data", "--config", cfg_path, "--out", str(root / "data")]) == 0
    assert main(["train", "--config", cfg_path, "--data", str(root / "data"), "--out", str(root / "run")]) == 0
    return root, cfg_path


def _digest(root):
    out = {}
    for dirpath, _, files in os.walk(root):
        for name in files:
            with open(os.path.join(dirpath, name), "rb") as fh:
                out[os.path.relpath(os.path.join(dirpath, name), root)] = fh.read()
    return out


def test_gen_data_is_repeatable(trained, tmp_path):
    root, cfg_path = trained
    assert os.path.exists(root / "data" / "manifest.json")
    assert main(["gen-data", "--config", cfg_path, "--out", str(tmp_path / "again")]) == 0
    assert _digest(root / "data") == _digest(tmp_path / "again")
    assert main(["gen-data", "--config", cfg_path, "--out", str(tmp_path / "other"), "--seed", "5"]) == 0
    assert _digest(root / "data") != _digest(tmp_path / "other")


def test_malformed_config_writes_nothing(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text('{"data": {"clips_per_class": -3}}')
    assert main(["gen-data", "--config", str(bad), "--out", str(tmp_path / "out")]) == EXIT_CONFIG
    assert not (tmp_path / "out").exists()
    bad.write_text("not json")
    assert main(["gen-data", "--config", str(bad), "--out", str(tmp_path / "out")]) == EXIT_CONFIG


def test_train_outputs(trained):
    root, _ = trained
    run = root / "run"
    _, best = load_checkpoint(str(run / "best.ckpt"))
    _, last = load_checkpoint(str(run / "last.ckpt"))
    assert best["val_loss"] <= last["val_loss"]
    assert os.path.exists(run / "metrics.jsonl")


def test_train_missing_corpus(tmp_path):
    cfg_path = write_config(tmp_path / "c.json", tiny_config())
    assert main(["train", "--config", cfg_path, "--data", str(tmp_path / "none"), "--out", str(tmp_path / "r")]) == EXIT_IO


def test_train_numeric_abort(trained, tmp_path, monkeypatch):
    root, cfg_path = trained

    def boom(*args):
        raise NumericError("non-finite loss")

    monkeypatch.setattr(train_mod, "compute_losses", boom)
    code = main(["train", "--config", cfg_path, "--data", str(root / "data"), "--out", str(tmp_path / "r")])
    assert code == EXIT_NUMERIC


def test_eval_reproduces_logged_metrics(trained, tmp_path):
    root, _ = trained
    report = tmp_path / "rep" / "report.json"
    code = main(["eval", "--checkpoint", str(root / "run" / "best.ckpt"), "--data", str(root / "data"),
                 "--report", str(report), "--dump-features", str(tmp_path / "feat")])
    assert code == 0
    doc = json.loads(report.read_text())
    _, best = load_checkpoint(str(root / "run" / "best.ckpt"))
    _, _, epochs = read_metrics(str(root / "run" / "metrics.jsonl"))
    logged = next(e for e in epochs if e["epoch"] == best["epoch"])
    assert abs(doc["UAR"] - logged["val_UAR"]) < 1e-9
    assert set(doc["silhouette"]) == {"vision_encoder", "frame_encoder", "pre_tfe_aligned", "post_tfe_fused"}
    assert doc["emotions"]["fear"] == 6
    clusters = json.loads((tmp_path / "rep" / "report.clusters.json").read_text())
    assert clusters == doc["silhouette"]
    with open(tmp_path / "rep" / "report.confusion.csv") as fh:
        rows = list(csv.reader(fh))
    n_val = sum(int(x) for row in rows[1:] for x in row[1:])
    assert len(rows) == 8 and n_val == sum(doc["confusion"][i][j] for i in range(7) for j in range(7))
    dump = read_clip(str(tmp_path / "feat" / "post_tfe_fused.ousc"))
    assert dump.shape[:3] == (1, 1, n_val)


def test_eval_rejects_bad_checkpoints(trained, tmp_path):
    root, _ = trained
    blob = (root / "run" / "best.ckpt").read_bytes()
    corrupt = tmp_path / "corrupt.ckpt"
    corrupt.write_bytes(blob[: len(blob) // 2])
    args = ["--data", str(root / "data"), "--report", str(tmp_path / "r.json")]
    assert main(["eval", "--checkpoint", str(corrupt), *args]) == EXIT_CHECKPOINT

    params, trailer = load_checkpoint(str(root / "run" / "best.ckpt"))
    trailer["config"]["text"]["prompt_length"] = 9
    mismatched = tmp_path / "mismatch.ckpt"
    save_checkpoint(str(mismatched), params, trailer)
    assert main(["eval", "--checkpoint", str(mismatched), *args]) == EXIT_CHECKPOINT
    assert main(["eval", "--checkpoint", str(tmp_path / "missing.ckpt"), *args]) == EXIT_IO


def test_eval_mismatch_names_parameter(trained, tmp_path, capsys):
    root, _ = trained
    params, trailer = load_checkpoint(str(root / "run" / "best.ckpt"))
    params["lstm.W_h"] = np.zeros((2, 2), np.float32)
    path = tmp_path / "m.ckpt"
    save_checkpoint(str(path), params, trailer)
    assert main(["eval", "--checkpoint", str(path), "--data", str(root / "data"), "--report", str(tmp_path / "r.json")]) == 5
    assert "lstm.W_h" in capsys.readouterr().err


def test_ablate_is_resumable(trained, tmp_path, monkeypatch):
    root, cfg_path = trained
    monkeypatch.setenv("OUS_THREADS", "1")
    cfg_path = write_config(tmp_path / "c.json", tiny_config(train={"max_epochs": 1}))
    grid = tmp_path / "grid.json"
    grid.write_text(json.dumps({"tfe_blocks": [1, 2], "prompt_length": [2], "loss_strategy": ["ce_only", "global"],
                                "fusion": ["tfe"]}))
    args = ["ablate", "--config", cfg_path, "--data", str(root / "data"), "--grid", str(grid),
            "--out", str(tmp_path / "abl"), "--seeds", "0,1"]
    assert main(args) == 0
    with open(tmp_path / "abl" / "results.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 8 and all(r["status"] == "ok" for r in rows)
    stamps = {p: os.path.getmtime(tmp_path / "abl" / "cells" / p / "result.json")
              for p in os.listdir(tmp_path / "abl" / "cells")}
    assert main(args) == 0
    for p, t in stamps.items():
        assert os.path.getmtime(tmp_path / "abl" / "cells" / p / "result.json") == t


def test_ablate_marks_failed_cells(trained, tmp_path, monkeypatch):
    root, _ = trained
    monkeypatch.setenv("OUS_THREADS", "1")

    def boom(*args):
        raise NumericError("non-finite loss")

    monkeypatch.setattr(train_mod, "compute_losses", boom)
    cfg_path = write_config(tmp_path / "c.json", tiny_config(train={"max_epochs": 1}))
    grid = tmp_path / "grid.json"
    grid.write_text(json.dumps({"tfe_blocks": [1], "prompt_length": [2], "loss_strategy": ["global"], "fusion": ["tfe"]}))
    assert main(["ablate", "--config", cfg_path, "--data", str(root / "data"), "--grid", str(grid),
                 "--out", str(tmp_path / "abl")]) == 0
    with open(tmp_path / "abl" / "results.csv") as fh:
        [row] = list(csv.DictReader(fh))
    assert row["status"].startswith("failed")


def test_ablate_invalid_grid(trained, tmp_path):
    root, cfg_path = trained
    grid = tmp_path / "grid.json"
    grid.write_text('{"depth": [1]}')
    args = ["ablate", "--config", cfg_path, "--data", str(root / "data"), "--grid", str(grid), "--out", str(tmp_path / "a")]
    assert main(args) == EXIT_CONFIG
    assert main(args[:-2] + ["--out", str(tmp_path / "a"), "--seeds", "x"]) == EXIT_CONFIG


def test_gradcheck_scopes(capsys):
    assert main(["gradcheck", "--scope", "op"]) == 0
    assert "softmax" in capsys.readouterr().out
    with pytest.warns(UserWarning):
        assert main(["gradcheck", "--scope", "op", "--dtype", "float32"]) == 0


def test_gradcheck_failure_exit(monkeypatch):
    from ous import gradcheck

    monkeypatch.setitem(gradcheck.SUITES, "op", lambda: [("broken", 1.0, 1e-6)])
    assert main(["gradcheck", "--scope", "op"]) == EXIT_GRADCHECK
