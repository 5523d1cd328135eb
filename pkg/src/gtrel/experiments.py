"""Cross-validation, partition-resampling significance tests, neighbor-cap sweeps.

Folds, partitions and sweep points all derive their seeds from the base
seed with documented tags, so every experiment replays exactly:

* fold assignment:        (seed, "kfold")
* per-fold training seed: (seed, "fold", i)
* partition shuffle:      (seed, "partition", j)
* per-partition training: (seed, "sigtrain", j), shared by both configs,
  so identical configs produce identical scores and a degenerate test
* sweep eval split:       (seed, "sweep-split")
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy import stats

from .data import RelationInstance
from .errors import ConfigError
from .metrics import EvalReport, evaluate_model
from .model import ModelConfig
from .rng import derive_rng, derive_seed
from .training import TrainResult, TrainSpec, train


# ---------------------------------------------------------------------------
# k-fold cross-validation
# ---------------------------------------------------------------------------


def assign_folds(n: int, k: int, seed: int) -> list[np.ndarray]:
    """Disjoint index folds covering range(n), sizes differing by at most 1."""
    if k < 2:
        raise ConfigError(f"k must be >= 2, got {k}")
    if n < k:
        raise ConfigError(f"dataset of {n} instances cannot be split into {k} folds")
    order = derive_rng(seed, "kfold").permutation(n)
    return [np.sort(part) for part in np.array_split(order, k)]


@dataclass
class KfoldResult:
    fold_reports: list[EvalReport]
    fold_indices: list[np.ndarray]
    mean: dict
    std: dict

    def to_dict(self):
        return {
            "folds": [r.to_dict() for r in self.fold_reports],
            "mean": self.mean,
            "std": self.std,
        }


def _headline_metrics(report: EvalReport) -> dict:
    out = {"accuracy": report.all.accuracy, "accuracy_single": report.single.accuracy}
    if report.all.f1 is not None:
        out.update(
            precision=report.all.precision, recall=report.all.recall, f1=report.all.f1
        )
    return out


def kfold(dataset: list[RelationInstance], k: int, spec: TrainSpec,
          cfg: ModelConfig) -> KfoldResult:
    """Train and evaluate once per fold; report mean and sample std (ddof=1)
    of each headline metric across folds. Each fold trains with seed
    (spec.seed, "fold", i) and holds its own validation subset out of the
    non-test folds via the TrainSpec rules."""
    folds = assign_folds(len(dataset), k, spec.seed)
    reports = []
    for i, test_idx in enumerate(folds):
        test_set = set(test_idx.tolist())
        train_insts = [inst for j, inst in enumerate(dataset) if j not in test_set]
        test_insts = [dataset[j] for j in test_idx]
        fold_spec = replace(spec, seed=derive_seed(spec.seed, "fold", i))
        result = train(train_insts, fold_spec, cfg)
        report, _ = evaluate_model(result.model, test_insts)
        reports.append(report)
    keys = _headline_metrics(reports[0]).keys()
    values = {key: np.array([_headline_metrics(r)[key] for r in reports]) for key in keys}
    return KfoldResult(
        fold_reports=reports,
        fold_indices=folds,
        mean={key: float(v.mean()) for key, v in values.items()},
        std={key: float(v.std(ddof=1)) for key, v in values.items()},
    )


# ---------------------------------------------------------------------------
# Paired significance test over resampled partitions
# ---------------------------------------------------------------------------


@dataclass
class SignificanceResult:
    scores_a: list[float]
    scores_b: list[float]
    metric: str
    mean_a: float
    mean_b: float
    mean_diff: float
    std_diff: float
    t_stat: float
    p_value: float
    degenerate: bool

    def to_dict(self):
        return {
            "metric": self.metric,
            "scores_a": self.scores_a,
            "scores_b": self.scores_b,
            "mean_a": self.mean_a,
            "mean_b": self.mean_b,
            "mean_diff": self.mean_diff,
            "std_diff": self.std_diff,
            "t_stat": self.t_stat,
            "p_value": self.p_value,
            "degenerate": self.degenerate,
        }


def paired_t_test(scores_a, scores_b, metric: str = "score") -> SignificanceResult:
    """Two-sided paired t test on per-partition score differences.

    t = mean(d) / (std(d, ddof=1) / sqrt(n)); p from the t distribution
    with n-1 degrees of freedom. Zero-variance differences are degenerate:
    all-zero differences report p = 1.0, constant nonzero differences
    report the limit p = 0.0 with t = +/-inf. Both set the flag.
    """
    a = np.asarray(scores_a, dtype=np.float64)
    b = np.asarray(scores_b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ConfigError(f"score vectors must be 1-D and equal length, got {a.shape}, {b.shape}")
    if a.size < 2:
        raise ConfigError("need at least two paired scores")
    diffs = a - b
    mean_diff = float(diffs.mean())
    std_diff = float(diffs.std(ddof=1))
    degenerate = std_diff == 0.0
    if degenerate:
        if mean_diff == 0.0:
            t_stat, p_value = 0.0, 1.0
        else:
            t_stat = math.inf if mean_diff > 0 else -math.inf
            p_value = 0.0
    else:
        t_stat = mean_diff / (std_diff / math.sqrt(diffs.size))
        p_value = float(2.0 * stats.t.sf(abs(t_stat), df=diffs.size - 1))
    return SignificanceResult(
        scores_a=a.tolist(),
        scores_b=b.tolist(),
        metric=metric,
        mean_a=float(a.mean()),
        mean_b=float(b.mean()),
        mean_diff=mean_diff,
        std_diff=std_diff,
        t_stat=float(t_stat),
        p_value=p_value,
        degenerate=degenerate,
    )


def _score(report: EvalReport) -> tuple[str, float]:
    if report.all.f1 is not None:
        return "f1", report.all.f1
    return "accuracy", report.all.accuracy


def significance_test(dataset: list[RelationInstance], cfg_a: ModelConfig,
                      cfg_b: ModelConfig, spec: TrainSpec, partitions: int = 10,
                      train_size: int | None = None,
                      test_size: int | None = None) -> SignificanceResult:
    """Train both configs on identical resampled partitions and compare.

    Each partition j shuffles the dataset with (seed, "partition", j), takes
    ``train_size`` instances for training and the next ``test_size`` for
    testing, trains each config with the shared seed (seed, "sigtrain", j),
    and scores F1 for binary tasks, accuracy otherwise. The per-partition
    scores feed :func:`paired_t_test`.
    """
    n = len(dataset)
    if partitions < 2:
        raise ConfigError(f"partitions must be >= 2, got {partitions}")
    if train_size is None:
        train_size = int(0.6 * n)
    if test_size is None:
        test_size = n - train_size
    if train_size < 1 or test_size < 1 or train_size + test_size > n:
        raise ConfigError(
            f"train_size {train_size} + test_size {test_size} exceeds dataset size {n}"
        )
    scores_a, scores_b, metric = [], [], "accuracy"
    for j in range(partitions):
        order = derive_rng(spec.seed, "partition", j).permutation(n)
        train_insts = [dataset[i] for i in order[:train_size]]
        test_insts = [dataset[i] for i in order[train_size:train_size + test_size]]
        run_spec = replace(spec, seed=derive_seed(spec.seed, "sigtrain", j))
        for cfg, bucket in ((cfg_a, scores_a), (cfg_b, scores_b)):
            result = train(train_insts, run_spec, cfg)
            report, _ = evaluate_model(result.model, test_insts)
            metric, value = _score(report)
            bucket.append(value)
    return paired_t_test(scores_a, scores_b, metric)


# ---------------------------------------------------------------------------
# Neighbor-cap sweep
# ---------------------------------------------------------------------------


def sweep_neighbor_cap(dataset: list[RelationInstance], caps, spec: TrainSpec,
                       cfg: ModelConfig, eval_dataset=None) -> list[dict]:
    """Retrain once per neighbor cap with the shared seed; rows are
    plot-ready dicts (cap plus headline metrics).

    If no eval split is supplied, a deterministic 80/20 split derived from
    (seed, "sweep-split") is carved out of ``dataset``.
    """
    caps = list(caps)
    if not caps or any((not isinstance(c, (int, np.integer))) or c < 1 for c in caps):
        raise ConfigError(f"caps must be positive integers, got {caps}")
    if eval_dataset is None:
        order = derive_rng(spec.seed, "sweep-split").permutation(len(dataset))
        cut = max(1, int(0.8 * len(dataset)))
        if cut >= len(dataset):
            raise ConfigError("dataset too small to carve an eval split for the sweep")
        train_insts = [dataset[i] for i in order[:cut]]
        eval_insts = [dataset[i] for i in order[cut:]]
    else:
        train_insts, eval_insts = list(dataset), list(eval_dataset)
    rows = []
    for cap in caps:
        result = train(train_insts, spec, replace(cfg, max_neighbors=int(cap)))
        report, _ = evaluate_model(result.model, eval_insts)
        rows.append({"cap": int(cap), **_headline_metrics(report)})
    return rows


def sweep_to_csv(rows) -> str:
    if not rows:
        return ""
    keys = list(rows[0].keys())
    lines = [",".join(keys)]
    for row in rows:
        lines.append(",".join(repr(row[k]) if isinstance(row[k], float) else str(row[k]) for k in keys))
    return "\n".join(lines) + "\n"
