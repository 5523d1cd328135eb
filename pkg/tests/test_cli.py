"""Command-line surface: every subcommand end to end on tiny settings."""

import json

import pytest

from gtrel.cli import main
from gtrel.data import CLS_TOKEN, load_dataset

TINY_SYNTH = [
    "--n", "10", "--seed", "3",
    "--min-tokens", "8", "--max-tokens", "12",
    "--min-sentences", "1", "--max-sentences", "2",
]
TINY_MODEL = [
    "--width", "8", "--heads", "2", "--ffn-width", "16",
    "--text-blocks", "1", "--graph-blocks", "1", "--max-len", "40",
]
TINY_TRAIN = ["--epochs", "1", "--batch-size", "4", "--val-size", "0"]


@pytest.fixture()
def synth_file(tmp_path):
    path = tmp_path / "data.jsonl"
    assert main(["synth", "--out", str(path)] + TINY_SYNTH) == 0
    return path


def test_synth_writes_loadable_file(synth_file):
    data = load_dataset(synth_file)
    assert len(data) == 10


def test_prep_outputs_processed_records(tmp_path, synth_file):
    out = tmp_path / "prepped.jsonl"
    assert main(["prep", "--data", str(synth_file), "--out", str(out)]) == 0
    processed = load_dataset(out)
    assert len(processed) == 10
    for inst in processed:
        assert inst.tokens[0] == CLS_TOKEN
        assert inst.neighbors is not None


def test_train_eval_roundtrip(tmp_path, synth_file, capsys):
    out_dir = tmp_path / "run"
    code = main(
        ["train", "--data", str(synth_file), "--out-dir", str(out_dir)]
        + TINY_MODEL + TINY_TRAIN
    )
    assert code == 0
    summary = json.loads(capsys.readouterr().out)
    assert (out_dir / "model.ckpt").exists()
    assert (out_dir / "loss_curve.csv").exists()
    assert summary["epochs_run"] == 1

    preds = tmp_path / "preds.jsonl"
    report_path = tmp_path / "report.json"
    code = main([
        "eval", "--checkpoint", str(out_dir / "model.ckpt"),
        "--data", str(synth_file),
        "--predictions", str(preds), "--report", str(report_path),
    ])
    assert code == 0
    report = json.loads(capsys.readouterr().out)
    assert report["all"]["n"] == 10
    rows = [json.loads(line) for line in preds.read_text().splitlines()]
    assert len(rows) == 10
    assert set(rows[0]) == {"id", "gold", "pred", "prob"}
    assert json.loads(report_path.read_text()) == report


def test_config_file_supplies_flags_and_flags_override(tmp_path, synth_file, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({
        "data": str(synth_file), "out_dir": str(tmp_path / "a"),
        "width": 8, "heads": 2, "ffn_width": 16, "text_blocks": 1,
        "graph_blocks": 1, "max_len": 40, "epochs": 1, "batch_size": 4,
        "val_size": 0,
    }))
    assert main(["train", "--config", str(cfg)]) == 0
    capsys.readouterr()
    # the flag overrides the file's out_dir
    assert main(["train", "--config", str(cfg), "--out-dir", str(tmp_path / "b")]) == 0
    assert (tmp_path / "b" / "model.ckpt").exists()


def test_unknown_config_key_rejected(tmp_path, synth_file, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"data": str(synth_file), "bogus_key": 1}))
    code = main(["prep", "--config", str(cfg), "--out", str(tmp_path / "x.jsonl")])
    assert code == 1
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "ConfigError"
    assert "bogus_key" in err["message"]


def test_machine_readable_error_on_missing_file(tmp_path, capsys):
    code = main(["eval", "--checkpoint", "nope.ckpt", "--data", "nope.jsonl"])
    assert code == 1
    err = json.loads(capsys.readouterr().err)
    assert set(err) == {"error", "message"}


def test_kfold_command(tmp_path, synth_file, capsys):
    out = tmp_path / "folds.csv"
    code = main(
        ["kfold", "--data", str(synth_file), "--k", "2", "--out", str(out)]
        + TINY_MODEL + TINY_TRAIN
    )
    assert code == 0
    summary = json.loads(capsys.readouterr().out)
    assert "mean" in summary and "std" in summary
    assert out.read_text().startswith("fold,")


def test_sigtest_command(tmp_path, synth_file, capsys):
    arm_b = tmp_path / "b.json"
    arm_b.write_text(json.dumps({"gt_enabled": False}))
    code = main(
        ["sigtest", "--data", str(synth_file), "--partitions", "2",
         "--train-size", "6", "--test-size", "4", "--config-b", str(arm_b)]
        + TINY_MODEL + TINY_TRAIN
    )
    assert code == 0
    result = json.loads(capsys.readouterr().out)
    assert set(result) >= {"t_stat", "p_value", "scores_a", "scores_b", "degenerate"}
    assert len(result["scores_a"]) == 2


def test_sweep_command(tmp_path, synth_file, capsys):
    out = tmp_path / "sweep.csv"
    code = main(
        ["sweep", "--data", str(synth_file), "--caps", "2,50", "--out", str(out)]
        + TINY_MODEL + TINY_TRAIN
    )
    assert code == 0
    text = out.read_text()
    assert text.splitlines()[0].startswith("cap,")
    assert len(text.splitlines()) == 3


def test_gradcheck_command(capsys):
    assert main(["gradcheck", "--seed", "3"]) == 0
    out = capsys.readouterr().out
    assert "full model" in out
    assert "FAIL" not in out
