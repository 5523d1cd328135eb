"""Training loop: adaptive-moment optimizer, warmup, deterministic curves.

All randomness (validation split, parameter init, shuffling, dropout) is
derived from the base seed with documented tags, so two runs with the same
seed produce byte-identical loss curves and checkpoints:

* validation split: (seed, "val")
* parameter init:   (seed, "init")
* epoch shuffling:  (seed, "shuffle", epoch)
* dropout stream:   (seed, "dropout")
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import RelationInstance, Vocab, build_model_inputs
from .errors import ConfigError, TrainingError
from .model import Model, ModelConfig, init_model, loss_and_grads, prepare_instance
from .rng import derive_rng

CURVE_HEADER = "epoch,mean_loss,val_accuracy"


@dataclass
class TrainSpec:
    """Optimization settings. Learning rate warms up linearly over
    ``warmup_frac`` of all steps, then stays constant."""

    seed: int = 7
    epochs: int = 20
    batch_size: int = 16
    learning_rate: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    warmup_frac: float = 0.05
    validation_size: int = 200
    early_stop_loss: float | None = None

    def validate(self):
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.learning_rate < 0:
            raise ConfigError("learning_rate must be nonnegative")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("betas must be in [0, 1)")
        if not 0 <= self.warmup_frac <= 1:
            raise ConfigError("warmup_frac must be in [0, 1]")
        if self.validation_size < 0:
            raise ConfigError("validation_size must be nonnegative")


class Adam:
    """Adaptive moment estimation over the model's named parameters."""

    def __init__(self, params, spec: TrainSpec):
        self.named = list(params.named_tensors())
        self.spec = spec
        self.m = {name: np.zeros_like(t.data) for name, t in self.named}
        self.v = {name: np.zeros_like(t.data) for name, t in self.named}
        self.t = 0

    def step(self, lr: float):
        s = self.spec
        self.t += 1
        correct1 = 1.0 - s.beta1 ** self.t
        correct2 = 1.0 - s.beta2 ** self.t
        for name, tensor in self.named:
            g = tensor.grad
            if g is None:
                continue
            m = self.m[name]
            v = self.v[name]
            m *= s.beta1
            m += (1.0 - s.beta1) * g
            v *= s.beta2
            v += (1.0 - s.beta2) * (g * g)
            update = (m / correct1) / (np.sqrt(v / correct2) + s.adam_eps)
            tensor.data = tensor.data - lr * update


@dataclass
class TrainResult:
    model: Model
    curve: list[dict]
    epochs_run: int
    train_size: int
    val_size: int


def split_validation(instances, spec: TrainSpec):
    """Hold out min(validation_size, 10% of the pool) instances, seeded.

    ``validation_size=0`` disables the holdout entirely.
    """
    n = len(instances)
    if n == 0:
        raise ConfigError("cannot train on an empty dataset")
    val_n = 0 if spec.validation_size == 0 else min(spec.validation_size, n // 10)
    if val_n >= n:
        raise ConfigError(f"validation size {val_n} does not leave any training data")
    order = derive_rng(spec.seed, "val").permutation(n)
    val_idx = set(order[:val_n].tolist())
    train = [instances[i] for i in range(n) if i not in val_idx]
    val = [instances[i] for i in sorted(val_idx)]
    return train, val


def curve_to_csv(curve) -> str:
    lines = [CURVE_HEADER]
    for row in curve:
        val = "" if row["val_accuracy"] is None else repr(row["val_accuracy"])
        lines.append(f"{row['epoch']},{repr(row['mean_loss'])},{val}")
    return "\n".join(lines) + "\n"


def train(dataset: list[RelationInstance], spec: TrainSpec, cfg: ModelConfig) -> TrainResult:
    """Train a fresh model; deterministic for a fixed spec.seed.

    A non-finite batch loss aborts with :class:`TrainingError` carrying the
    parameter snapshot from the last completed epoch and the curve so far.
    With ``early_stop_loss`` set, training stops after the first epoch whose
    mean loss falls at or below it.
    """
    spec.validate()
    train_insts, val_insts = split_validation(dataset, spec)
    vocab = Vocab.build(train_insts)
    model = init_model(cfg, vocab, derive_rng(spec.seed, "init"))
    cfg = model.config

    train_prepared = [
        prepare_instance(inst, graph, vocab, cfg, src)
        for inst, graph, src in build_model_inputs(train_insts, cfg.max_neighbors)
    ]
    val_prepared = [
        prepare_instance(inst, graph, vocab, cfg, src)
        for inst, graph, src in build_model_inputs(val_insts, cfg.max_neighbors)
    ]

    optimizer = Adam(model.params, spec)
    dropout_rng = derive_rng(spec.seed, "dropout")
    steps_per_epoch = math.ceil(len(train_prepared) / spec.batch_size)
    total_steps = steps_per_epoch * spec.epochs
    warmup_steps = max(1, int(round(spec.warmup_frac * total_steps)))

    curve: list[dict] = []
    last_good = model.params.snapshot()
    epochs_run = 0
    for epoch in range(spec.epochs):
        order = derive_rng(spec.seed, "shuffle", epoch).permutation(len(train_prepared))
        losses = []
        for b in range(steps_per_epoch):
            batch = [train_prepared[i] for i in order[b * spec.batch_size:(b + 1) * spec.batch_size]]
            loss, _ = loss_and_grads(batch, model, mode="train", dropout_rng=dropout_rng)
            if not math.isfinite(loss):
                model.params.restore(last_good)
                raise TrainingError(
                    f"loss diverged at epoch {epoch}, step {b}; restored last good parameters",
                    last_good=last_good,
                    curve=curve,
                )
            lr = spec.learning_rate * min(1.0, optimizer.t / warmup_steps if warmup_steps else 1.0)
            optimizer.step(lr)
            losses.append(loss)
        mean_loss = float(np.mean(losses))
        val_accuracy = None
        if val_prepared:
            hits = sum(
                model.predict(p) == p.instance.label for p in val_prepared
            )
            val_accuracy = hits / len(val_prepared)
        curve.append({"epoch": epoch, "mean_loss": mean_loss, "val_accuracy": val_accuracy})
        last_good = model.params.snapshot()
        epochs_run = epoch + 1
        if spec.early_stop_loss is not None and mean_loss <= spec.early_stop_loss:
            break
    return TrainResult(
        model=model,
        curve=curve,
        epochs_run=epochs_run,
        train_size=len(train_insts),
        val_size=len(val_insts),
    )
