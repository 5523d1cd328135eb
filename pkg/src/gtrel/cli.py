"""Command-line harness.

Subcommands: prep, synth, train, eval, kfold, sigtest, sweep, gradcheck.
Every flag can also come from a JSON config file (--config); explicit flags
override the file, the file overrides built-in defaults. Failures emit a
machine-readable {"error", "message"} record on stderr and a nonzero exit.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from . import autodiff as ad
from .checkpoint import load_model, save_model
from .data import TASK_LABELS, Vocab, build_model_inputs, load_dataset, save_dataset
from .encoder import EncoderConfig
from .errors import ConfigError, GtrelError
from .experiments import kfold, significance_test, sweep_neighbor_cap, sweep_to_csv
from .metrics import evaluate_model
from .model import ModelConfig, init_model, loss_and_grads, prepare_instance
from .rng import derive_rng
from .synth import SyntheticSpec, generate_synthetic
from .training import TrainSpec, curve_to_csv, train

REQUIRED = object()

MODEL_DEFAULTS = {
    "width": 64,
    "heads": 4,
    "ffn_width": 128,
    "text_blocks": 2,
    "graph_blocks": 2,
    "dropout": 0.1,
    "max_len": 128,
    "max_neighbors": None,
    "gt_mode": "entity_mean",
    "gt_enabled": True,
}

TRAIN_DEFAULTS = {
    "seed": 7,
    "epochs": 20,
    "batch_size": 16,
    "lr": 5e-4,
    "warmup_frac": 0.05,
    "val_size": 200,
    "early_stop_loss": None,
}


def _add_model_flags(p):
    p.add_argument("--width", type=int, help="model width h")
    p.add_argument("--heads", type=int, help="attention heads")
    p.add_argument("--ffn-width", dest="ffn_width", type=int)
    p.add_argument("--text-blocks", dest="text_blocks", type=int, help="full-attention blocks")
    p.add_argument("--graph-blocks", dest="graph_blocks", type=int, help="neighbor-attention blocks")
    p.add_argument("--dropout", type=float)
    p.add_argument("--max-len", dest="max_len", type=int)
    p.add_argument("--max-neighbors", dest="max_neighbors", type=int)
    p.add_argument("--gt-mode", dest="gt_mode", choices=["entity_mean", "cls"])
    p.add_argument("--no-gt", dest="gt_enabled", action="store_const", const=False,
                   help="ablation: zero the graph branch")


def _add_train_flags(p):
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--warmup-frac", dest="warmup_frac", type=float)
    p.add_argument("--val-size", dest="val_size", type=int, help="0 disables the holdout")
    p.add_argument("--early-stop-loss", dest="early_stop_loss", type=float)


def _merged(args: argparse.Namespace, defaults: dict) -> dict:
    merged = dict(defaults)
    values = {k: v for k, v in vars(args).items() if k not in ("func", "config")}
    config_path = getattr(args, "config", None)
    if config_path:
        with open(config_path, encoding="utf-8") as fh:
            file_cfg = json.load(fh)
        unknown = set(file_cfg) - set(defaults)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        merged.update(file_cfg)
    merged.update({k: v for k, v in values.items() if v is not None})
    missing = sorted(k for k, v in merged.items() if v is REQUIRED)
    if missing:
        raise ConfigError(f"missing required settings: {missing}")
    return merged


def _model_config(opts: dict, dataset) -> ModelConfig:
    task = dataset[0].task
    slots = tuple(e.eid for e in dataset[0].entities)
    return ModelConfig(
        encoder=EncoderConfig(
            width=opts["width"],
            n_heads=opts["heads"],
            ffn_width=opts["ffn_width"],
            n_transformer_blocks=opts["text_blocks"],
            n_graph_blocks=opts["graph_blocks"],
            dropout_rate=opts["dropout"],
            max_len=opts["max_len"],
            vocab_size=2,  # placeholder until the vocabulary is built
        ),
        label_set=tuple(TASK_LABELS[task]),
        entity_slots=slots,
        gt_sentence_mode=opts["gt_mode"],
        gt_branch_enabled=opts["gt_enabled"],
        max_neighbors=opts["max_neighbors"],
    )


def _train_spec(opts: dict) -> TrainSpec:
    return TrainSpec(
        seed=opts["seed"],
        epochs=opts["epochs"],
        batch_size=opts["batch_size"],
        learning_rate=opts["lr"],
        warmup_frac=opts["warmup_frac"],
        validation_size=opts["val_size"],
        early_stop_loss=opts["early_stop_loss"],
    )


def _emit(obj):
    print(json.dumps(obj, indent=2, sort_keys=True))


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_prep(args):
    opts = _merged(args, {"data": REQUIRED, "out": REQUIRED,
                          "max_neighbors": MODEL_DEFAULTS["max_neighbors"]})
    dataset = load_dataset(opts["data"])
    prepared = build_model_inputs(dataset, opts["max_neighbors"])
    save_dataset(opts["out"], [inst for inst, _, _ in prepared])
    _emit({"instances_in": len(dataset), "instances_out": len(prepared), "file": opts["out"]})
    return 0


def cmd_synth(args):
    defaults = {"out": REQUIRED, "n": 512, "seed": 7, "fillers": 20,
                "min_tokens": 10, "max_tokens": 30, "min_sentences": 2, "max_sentences": 3}
    opts = _merged(args, defaults)
    spec = SyntheticSpec(
        n_fillers=opts["fillers"],
        min_tokens=opts["min_tokens"],
        max_tokens=opts["max_tokens"],
        min_sentences=opts["min_sentences"],
        max_sentences=opts["max_sentences"],
    )
    instances = generate_synthetic(opts["n"], opts["seed"], spec)
    save_dataset(opts["out"], instances)
    _emit({"instances": len(instances), "file": opts["out"]})
    return 0


def cmd_train(args):
    opts = _merged(args, {"data": REQUIRED, "out_dir": REQUIRED,
                          **MODEL_DEFAULTS, **TRAIN_DEFAULTS})
    dataset = load_dataset(opts["data"])
    result = train(dataset, _train_spec(opts), _model_config(opts, dataset))
    out_dir = Path(opts["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt = out_dir / "model.ckpt"
    curve = out_dir / "loss_curve.csv"
    save_model(ckpt, result.model)
    curve.write_text(curve_to_csv(result.curve), encoding="utf-8")
    _emit({
        "epochs_run": result.epochs_run,
        "train_size": result.train_size,
        "val_size": result.val_size,
        "final_loss": result.curve[-1]["mean_loss"],
        "final_val_accuracy": result.curve[-1]["val_accuracy"],
        "checkpoint": str(ckpt),
        "loss_curve": str(curve),
    })
    return 0


def cmd_eval(args):
    opts = _merged(args, {"checkpoint": REQUIRED, "data": REQUIRED,
                          "report": None, "predictions": None})
    model = load_model(opts["checkpoint"])
    dataset = load_dataset(opts["data"])
    report, rows = evaluate_model(model, dataset)
    if opts["predictions"]:
        with open(opts["predictions"], "w", encoding="utf-8") as fh:
            for row in rows:
                fh.write(json.dumps(row, sort_keys=True) + "\n")
    if opts["report"]:
        Path(opts["report"]).write_text(
            json.dumps(report.to_dict(), indent=2, sort_keys=True), encoding="utf-8"
        )
    _emit(report.to_dict())
    return 0


def cmd_kfold(args):
    opts = _merged(args, {"data": REQUIRED, "k": 5, "out": None,
                          **MODEL_DEFAULTS, **TRAIN_DEFAULTS})
    dataset = load_dataset(opts["data"])
    result = kfold(dataset, opts["k"], _train_spec(opts), _model_config(opts, dataset))
    if opts["out"]:
        lines = ["fold," + ",".join(result.mean.keys())]
        for i, report in enumerate(result.fold_reports):
            from .experiments import _headline_metrics

            metrics = _headline_metrics(report)
            lines.append(f"{i}," + ",".join(repr(metrics[k]) for k in result.mean.keys()))
        Path(opts["out"]).write_text("\n".join(lines) + "\n", encoding="utf-8")
    _emit({"mean": result.mean, "std": result.std})
    return 0


def cmd_sigtest(args):
    opts = _merged(args, {"data": REQUIRED, "partitions": 10, "train_size": None,
                          "test_size": None, "config_a": None, "config_b": None,
                          **MODEL_DEFAULTS, **TRAIN_DEFAULTS})
    dataset = load_dataset(opts["data"])

    def arm(path):
        arm_opts = dict(opts)
        if path:
            with open(path, encoding="utf-8") as fh:
                overrides = json.load(fh)
            unknown = set(overrides) - set(MODEL_DEFAULTS)
            if unknown:
                raise ConfigError(f"unknown model config keys in {path}: {sorted(unknown)}")
            arm_opts.update(overrides)
        return _model_config(arm_opts, dataset)

    result = significance_test(
        dataset, arm(opts["config_a"]), arm(opts["config_b"]), _train_spec(opts),
        partitions=opts["partitions"], train_size=opts["train_size"],
        test_size=opts["test_size"],
    )
    _emit(result.to_dict())
    return 0


def cmd_sweep(args):
    opts = _merged(args, {"data": REQUIRED, "eval_data": None, "caps": "1,2,4,8",
                          "out": None, **MODEL_DEFAULTS, **TRAIN_DEFAULTS})
    dataset = load_dataset(opts["data"])
    eval_dataset = load_dataset(opts["eval_data"]) if opts["eval_data"] else None
    caps = [int(c) for c in str(opts["caps"]).split(",") if c.strip()]
    rows = sweep_neighbor_cap(dataset, caps, _train_spec(opts),
                              _model_config(opts, dataset), eval_dataset)
    csv_text = sweep_to_csv(rows)
    if opts["out"]:
        Path(opts["out"]).write_text(csv_text, encoding="utf-8")
    sys.stdout.write(csv_text)
    return 0


def cmd_gradcheck(args):
    opts = _merged(args, {"step": 1e-5, "tolerance": 1e-4, "seed": 7})
    step, tol = opts["step"], opts["tolerance"]
    rng = derive_rng(opts["seed"], "gradcheck")
    failures = 0

    def run(name, f, params):
        nonlocal failures
        err = ad.grad_check(f, params, step=step)
        ok = err < tol
        failures += 0 if ok else 1
        print(f"{name}: max relative error {err:.3e} {'OK' if ok else 'FAIL'}")

    a = ad.parameter(rng.normal(size=(3, 4)))
    b = ad.parameter(rng.normal(size=(4, 2)))
    run("matmul", lambda: ad.cross_entropy(ad.matmul(a, b), [0, 1, 0]), [a, b])
    x = ad.parameter(rng.normal(size=(2, 5)))
    run("softmax_rows", lambda: ad.cross_entropy(ad.softmax_rows(x), [1, 3]), [x])
    g = ad.parameter(rng.normal(size=5))
    c = ad.parameter(rng.normal(size=5))
    run("layer_norm", lambda: ad.cross_entropy(ad.layer_norm(x, g, c), [0, 2]), [x, g, c])
    run("gelu", lambda: ad.cross_entropy(ad.gelu(x), [4, 0]), [x])

    from .synth import generate_synthetic as gen

    instances = gen(2, opts["seed"], SyntheticSpec(min_tokens=8, max_tokens=10,
                                                   min_sentences=1, max_sentences=2))
    cfg = ModelConfig(
        encoder=EncoderConfig(width=8, n_heads=2, ffn_width=16, n_transformer_blocks=1,
                              n_graph_blocks=1, dropout_rate=0.0, max_len=16, vocab_size=2),
        label_set=tuple(TASK_LABELS["nary2"]),
        entity_slots=("AGENT", "TARGET"),
    )
    vocab = Vocab.build(instances)
    model = init_model(cfg, vocab, derive_rng(opts["seed"], "init"))
    # draw matrices at a scale that keeps every gradient coordinate above the
    # float64 central-difference noise floor; tiny true gradients would
    # otherwise dominate the relative-error measurement
    from .rng import truncated_normal

    redraw = derive_rng(opts["seed"], "reinit")
    for _, tensor in model.params.named_tensors():
        if tensor.data.ndim == 2:
            tensor.data = truncated_normal(tensor.data.shape, 0.3, redraw)
    prepared = [
        prepare_instance(inst, graph, vocab, model.config, src)
        for inst, graph, src in build_model_inputs(instances)
    ]

    from .model import _forward_prepared

    def whole_model():
        rows = [_forward_prepared(prep, model.params, model.config) for prep in prepared]
        return ad.cross_entropy(ad.concat_rows(rows), [p.gold_index for p in prepared])

    run("full model", whole_model, model.params.tensors())
    return 1 if failures else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gtrel", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name, fn, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="JSON file supplying any flag; flags override it")
        p.set_defaults(func=fn)
        return p

    p = command("prep", cmd_prep, "validate, expand, build graphs, write processed JSONL")
    p.add_argument("--data")
    p.add_argument("--out")
    p.add_argument("--max-neighbors", dest="max_neighbors", type=int)

    p = command("synth", cmd_synth, "generate the synthetic graph-signal dataset")
    p.add_argument("--out")
    p.add_argument("--n", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--fillers", type=int)
    p.add_argument("--min-tokens", dest="min_tokens", type=int)
    p.add_argument("--max-tokens", dest="max_tokens", type=int)
    p.add_argument("--min-sentences", dest="min_sentences", type=int)
    p.add_argument("--max-sentences", dest="max_sentences", type=int)

    p = command("train", cmd_train, "train a model, write checkpoint and loss curve")
    p.add_argument("--data")
    p.add_argument("--out-dir", dest="out_dir")
    _add_model_flags(p)
    _add_train_flags(p)

    p = command("eval", cmd_eval, "evaluate a checkpoint on a dataset")
    p.add_argument("--checkpoint")
    p.add_argument("--data")
    p.add_argument("--report", help="write the report JSON here")
    p.add_argument("--predictions", help="write per-instance predictions JSONL here")

    p = command("kfold", cmd_kfold, "k-fold cross-validation")
    p.add_argument("--data")
    p.add_argument("--k", type=int)
    p.add_argument("--out", help="write per-fold metrics CSV here")
    _add_model_flags(p)
    _add_train_flags(p)

    p = command("sigtest", cmd_sigtest, "paired significance test between two configs")
    p.add_argument("--data")
    p.add_argument("--partitions", type=int)
    p.add_argument("--train-size", dest="train_size", type=int)
    p.add_argument("--test-size", dest="test_size", type=int)
    p.add_argument("--config-a", dest="config_a", help="JSON model-config overrides for arm A")
    p.add_argument("--config-b", dest="config_b", help="JSON model-config overrides for arm B")
    _add_model_flags(p)
    _add_train_flags(p)

    p = command("sweep", cmd_sweep, "retrain across neighbor caps, emit CSV")
    p.add_argument("--data")
    p.add_argument("--eval-data", dest="eval_data")
    p.add_argument("--caps", help="comma-separated caps, e.g. 1,2,4,8")
    p.add_argument("--out")
    _add_model_flags(p)
    _add_train_flags(p)

    p = command("gradcheck", cmd_gradcheck, "verify analytic gradients against central differences")
    p.add_argument("--step", type=float)
    p.add_argument("--tolerance", type=float)
    p.add_argument("--seed", type=int)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except GtrelError as exc:
        sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc)}) + "\n")
        return 1
    except (OSError, json.JSONDecodeError) as exc:
        sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc)}) + "\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
