import csv
import json

import numpy as np
import pytest

from convasr.cli import main
from convasr.frontend import load_manifest
from convasr.lm import load_arpa
from convasr.training import read_loss_log
from convasr.transfer import load_checkpoint


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """synth-data + a small trained checkpoint shared by the CLI tests."""
    root = tmp_path_factory.mktemp("cli")
    data = root / "data"
    assert main([
        "synth-data", "--language", "alpha", "--out", str(data),
        "--count", "12", "--seed", "3", "--words-min", "2", "--words-max", "3",
    ]) == 0
    cfg = root / "run.ini"
    cfg.write_text(
        """
[model]
alphabet = alpha
layers = 48:2:24 7:1:24 1:1:head
[frontend]
n_mels = 40
[training]
batch_size = 4
epochs = 200
max_steps = 220
lr = 1e-3
seed = 0
[decoder]
beam_width = 8
""",
        encoding="utf-8",
    )
    run_dir = root / "run"
    assert main([
        "train", "--config", str(cfg), "--manifest", str(data / "manifest.jsonl"),
        "--out-dir", str(run_dir),
    ]) == 0
    return root, cfg, data, run_dir


def test_synth_data_writes_manifest_and_wavs(workspace):
    _, _, data, _ = workspace
    entries = load_manifest(data / "manifest.jsonl")
    assert len(entries) == 12
    for e in entries:
        assert (data / e.audio).exists()


def test_prepare_filters_and_reports(workspace, tmp_path):
    root, cfg, data, _ = workspace
    out = tmp_path / "filtered.jsonl"
    assert main([
        "prepare", "--config", str(cfg),
        "--manifest", str(data / "manifest.jsonl"), "--out", str(out),
    ]) == 0
    assert len(load_manifest(out)) == 12
    report = json.loads((tmp_path / "filtered.jsonl.report.json").read_text())
    assert report == {
        "kept": 12, "too_long": 0, "empty_transcript": 0, "unreadable": 0,
    }


def test_train_artifacts(workspace):
    _, _, _, run_dir = workspace
    rows = read_loss_log(run_dir / "loss_log.csv")
    assert len(rows) == 220
    assert [r[0] for r in rows] == list(range(1, 221))
    # wall clock is cumulative
    walls = [r[1] for r in rows]
    assert all(b >= a for a, b in zip(walls, walls[1:]))
    assert (run_dir / "checkpoints" / "final.ckpt").exists()
    assert (run_dir / "loss_curve.png").exists()


def test_evaluate_writes_report_and_figures(workspace, tmp_path):
    root, cfg, data, run_dir = workspace
    out = tmp_path / "eval"
    assert main([
        "evaluate", "--config", str(cfg),
        "--checkpoint", str(run_dir / "checkpoints" / "final.ckpt"),
        "--manifest", str(data / "manifest.jsonl"),
        "--out-dir", str(out),
    ]) == 0
    with open(out / "report.csv", newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 12
    summary = json.loads((out / "summary.json").read_text())
    # corpus mean equals the mean of the per-row values
    assert summary["greedy"]["ler"] == pytest.approx(
        np.mean([float(r["ler_greedy"]) for r in rows])
    )
    assert (out / "eval_scores.png").exists()
    # an overfit model transcribes its training set
    assert summary["greedy"]["ler"] <= 0.05


def test_decode_prints_transcripts(workspace, capsys):
    root, cfg, data, run_dir = workspace
    entries = load_manifest(data / "manifest.jsonl")
    wav = str(data / entries[0].audio)
    assert main([
        "decode", "--config", str(cfg),
        "--checkpoint", str(run_dir / "checkpoints" / "final.ckpt"),
        "--beam-width", "4", wav,
    ]) == 0
    out = capsys.readouterr().out.strip()
    path, text = out.split("\t")
    assert path == wav
    assert text == entries[0].text


def test_decode_with_lm_flags(workspace, tmp_path, capsys):
    root, cfg, data, run_dir = workspace
    arpa = tmp_path / "lm.arpa"
    assert main([
        "lm-train", "--manifest", str(data / "manifest.jsonl"),
        "--order", "2", "--out", str(arpa),
    ]) == 0
    model = load_arpa(arpa)
    assert model.order == 2
    entries = load_manifest(data / "manifest.jsonl")
    wav = str(data / entries[0].audio)
    assert main([
        "decode", "--config", str(cfg),
        "--checkpoint", str(run_dir / "checkpoints" / "final.ckpt"),
        "--lm", str(arpa), "--beam-width", "8",
        "--w-lm", "0.8", "--w-valid-word", "2.3", wav,
    ]) == 0
    out = capsys.readouterr().out.strip()
    assert out.split("\t")[1] == entries[0].text


def test_transfer_subcommand(workspace, tmp_path):
    root, cfg, data, run_dir = workspace
    beta_data = tmp_path / "beta"
    assert main([
        "synth-data", "--language", "beta", "--out", str(beta_data),
        "--count", "8", "--seed", "5", "--words-min", "2", "--words-max", "3",
    ]) == 0
    out_dir = tmp_path / "transfer"
    assert main([
        "transfer", "--config", str(cfg),
        "--base-checkpoint", str(run_dir / "checkpoints" / "final.ckpt"),
        "--manifest", str(beta_data / "manifest.jsonl"),
        "--out-dir", str(out_dir), "--k", "1", "--new-labels", "äöüß",
        "--set", "training.max_steps=5",
    ]) == 0
    rows = read_loss_log(out_dir / "loss_log.csv")
    assert len(rows) == 5
    assert all(r[3] == 1 for r in rows)
    final = load_checkpoint(out_dir / "checkpoints" / "final.ckpt")
    base = load_checkpoint(run_dir / "checkpoints" / "final.ckpt")
    assert len(final.params.alphabet) == len(base.params.alphabet) + 4
    # frozen layer bit-identical to the base checkpoint
    assert np.array_equal(final.params.weights[0], base.params.weights[0])


def test_introspect_outputs(workspace, tmp_path):
    root, cfg, data, run_dir = workspace
    out = tmp_path / "intro"
    ckpt = str(run_dir / "checkpoints" / "final.ckpt")
    assert main([
        "introspect", "--checkpoint", ckpt, "--other", ckpt,
        "--layer", "1", "--out-dir", str(out),
    ]) == 0
    assert (out / "weight_histograms.csv").exists()
    assert (out / "weight_histograms.png").exists()
    assert (out / "filters_layer1.csv").exists()
    assert (out / "weight_diff.csv").exists()
    with open(out / "weight_diff.csv", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    assert all(float(r["max_abs"]) == 0.0 for r in rows)
    # histogram fractions per layer sum to 1
    with open(out / "weight_histograms.csv", newline="", encoding="utf-8") as fh:
        hist_rows = list(csv.DictReader(fh))
    by_layer = {}
    for r in hist_rows:
        by_layer.setdefault(r["layer"], 0.0)
        by_layer[r["layer"]] += float(r["fraction"])
    assert all(abs(total - 1.0) < 1e-9 for total in by_layer.values())


def test_lm_train_requires_one_source(tmp_path, capsys):
    assert main(["lm-train", "--out", str(tmp_path / "x.arpa")]) == 2
