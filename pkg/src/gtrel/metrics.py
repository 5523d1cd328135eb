"""Evaluation reports: accuracy, precision/recall/F1, Single vs All splits.

"Single" restricts to instances whose entity mentions all co-occur in one
sentence; "All" is everything. Binary tasks (label set {yes, no}) also get
precision, recall and F1 with "yes" as the positive class; zero
denominators yield 0 by convention.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import RelationInstance, build_model_inputs, is_single_sentence
from .errors import ConfigError
from .model import Model

POSITIVE_LABEL = "yes"


@dataclass
class MetricBlock:
    n: int
    accuracy: float
    per_class_accuracy: dict
    precision: float | None = None
    recall: float | None = None
    f1: float | None = None
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    def to_dict(self):
        return {
            "n": self.n,
            "accuracy": self.accuracy,
            "per_class_accuracy": dict(self.per_class_accuracy),
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "tp": self.tp,
            "fp": self.fp,
            "fn": self.fn,
            "tn": self.tn,
        }


@dataclass
class EvalReport:
    task_labels: tuple[str, ...]
    all: MetricBlock
    single: MetricBlock

    def to_dict(self):
        return {
            "labels": list(self.task_labels),
            "all": self.all.to_dict(),
            "single": self.single.to_dict(),
        }


def metrics_from_predictions(gold, predicted, label_set) -> MetricBlock:
    """Accuracy and per-class accuracy; P/R/F1 when the set is binary.

    All counts come from one pass over the (gold, predicted) pairs, so for
    binary sets tp + fp + fn + tn equals the pair count by construction.
    """
    gold = list(gold)
    predicted = list(predicted)
    if len(gold) != len(predicted):
        raise ConfigError(f"{len(gold)} gold labels but {len(predicted)} predictions")
    for value in gold + predicted:
        if value not in label_set:
            raise ConfigError(f"label {value!r} not in label set {tuple(label_set)}")
    n = len(gold)
    correct = sum(g == p for g, p in zip(gold, predicted))
    per_class = {}
    for label in label_set:
        total = sum(g == label for g in gold)
        hit = sum(g == label and p == label for g, p in zip(gold, predicted))
        per_class[label] = (hit / total) if total else None
    block = MetricBlock(
        n=n,
        accuracy=(correct / n) if n else 0.0,
        per_class_accuracy=per_class,
    )
    if set(label_set) == {"yes", "no"}:
        pos = POSITIVE_LABEL
        block.tp = sum(g == pos and p == pos for g, p in zip(gold, predicted))
        block.fp = sum(g != pos and p == pos for g, p in zip(gold, predicted))
        block.fn = sum(g == pos and p != pos for g, p in zip(gold, predicted))
        block.tn = n - block.tp - block.fp - block.fn
        block.precision = block.tp / (block.tp + block.fp) if block.tp + block.fp else 0.0
        block.recall = block.tp / (block.tp + block.fn) if block.tp + block.fn else 0.0
        denom = block.precision + block.recall
        block.f1 = 2 * block.precision * block.recall / denom if denom else 0.0
    return block


def report_from_pairs(instances, gold, predicted, label_set) -> EvalReport:
    single_idx = [i for i, inst in enumerate(instances) if is_single_sentence(inst)]
    return EvalReport(
        task_labels=tuple(label_set),
        all=metrics_from_predictions(gold, predicted, label_set),
        single=metrics_from_predictions(
            [gold[i] for i in single_idx], [predicted[i] for i in single_idx], label_set
        ),
    )


def predict_dataset(model: Model, instances: list[RelationInstance]):
    """Per-instance predictions with expansion handled internally.

    Each source instance is expanded over its entity ids, every expansion is
    scored, and the per-label probabilities are combined by taking the max
    across expansions before the argmax. Returns a list of prediction dicts
    aligned with ``instances``.
    """
    pairs = build_model_inputs(instances, model.config.max_neighbors)
    by_source: dict[int, np.ndarray] = {}
    for inst, graph, source_index in pairs:
        probs = model.predict_proba(inst, graph)
        if source_index in by_source:
            by_source[source_index] = np.maximum(by_source[source_index], probs)
        else:
            by_source[source_index] = probs
    rows = []
    for i, inst in enumerate(instances):
        probs = by_source[i]
        label = model.config.label_set[int(np.argmax(probs))]
        rows.append(
            {
                "id": inst.id,
                "gold": inst.label,
                "pred": label,
                "prob": {l: float(p) for l, p in zip(model.config.label_set, probs)},
            }
        )
    return rows


def evaluate_model(model: Model, instances: list[RelationInstance]):
    """Score a dataset; returns (EvalReport, prediction rows).

    The dataset's labels must match the model's label set.
    """
    if not instances:
        raise ConfigError("cannot evaluate an empty dataset")
    from .data import TASK_LABELS

    task = instances[0].task
    if tuple(TASK_LABELS[task]) != tuple(model.config.label_set):
        raise ConfigError(
            f"dataset task {task!r} has labels {TASK_LABELS[task]}, "
            f"model was trained with {model.config.label_set}"
        )
    rows = predict_dataset(model, instances)
    gold = [inst.label for inst in instances]
    predicted = [row["pred"] for row in rows]
    return report_from_pairs(instances, gold, predicted, model.config.label_set), rows
