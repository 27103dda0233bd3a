"""Confusion matrices, one-vs-rest rates, patient-wise splits and cross-validation."""

from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .dataset import REPORT_ORDER, ClassLabel
from .model import ClassifierHead, TrainConfig, predict_proba, train_head

log = logging.getLogger(__name__)

_AXIS = {label: i for i, label in enumerate(REPORT_ORDER)}


class DegenerateMetricWarning(RuntimeWarning):
    """A rate had a zero denominator and was reported as 0."""


@dataclass(frozen=True)
class BinaryCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


@dataclass(frozen=True, eq=False)
class ConfusionMatrix:
    """4x4 counts; rows are true classes, columns predictions, both in REPORT_ORDER."""

    counts: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.counts, dtype=np.int64)
        if c.shape != (4, 4) or np.any(c < 0):
            raise ValueError("confusion matrix must be 4x4 non-negative counts")
        c.setflags(write=False)
        object.__setattr__(self, "counts", c)

    def __eq__(self, other):
        return isinstance(other, ConfusionMatrix) and np.array_equal(self.counts, other.counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def __getitem__(self, key) -> int:
        t, p = key
        return int(self.counts[_AXIS[ClassLabel(t)], _AXIS[ClassLabel(p)]])

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(self.counts + other.counts)

    def tolist(self) -> list:
        return self.counts.tolist()


def confusion_matrix(pairs) -> ConfusionMatrix:
    counts = np.zeros((4, 4), dtype=np.int64)
    for true, pred in pairs:
        counts[_AXIS[ClassLabel(true)], _AXIS[ClassLabel(pred)]] += 1
    return ConfusionMatrix(counts)


def one_vs_rest(cm: ConfusionMatrix, c: ClassLabel) -> BinaryCounts:
    i = _AXIS[ClassLabel(c)]
    tp = int(cm.counts[i, i])
    fn = int(cm.counts[i].sum()) - tp
    fp = int(cm.counts[:, i].sum()) - tp
    return BinaryCounts(tp=tp, fp=fp, tn=cm.total - tp - fn - fp, fn=fn)


def _ratio(num: float, den: float, what: str) -> float:
    if den == 0:
        warnings.warn(f"{what}: zero denominator, reported as 0", DegenerateMetricWarning, stacklevel=3)
        return 0.0
    return num / den


def sensitivity(b: BinaryCounts) -> float:
    return _ratio(b.tp, b.tp + b.fn, "sensitivity")


recall = sensitivity


def specificity(b: BinaryCounts) -> float:
    return _ratio(b.tn, b.tn + b.fp, "specificity")


def false_alarm(b: BinaryCounts) -> float:
    """``1 - specificity``; 0 when specificity is undefined."""
    if b.tn + b.fp == 0:
        return _ratio(0, 0, "false alarm rate")
    return 1.0 - specificity(b)


def precision(b: BinaryCounts) -> float:
    return _ratio(b.tp, b.tp + b.fp, "precision")


def f1(b: BinaryCounts) -> float:
    p, r = precision(b), sensitivity(b)
    return _ratio(2 * p * r, p + r, "f1")


def accuracy(cm: ConfusionMatrix) -> float:
    return _ratio(int(np.trace(cm.counts)), cm.total, "accuracy")


def icbhi_score(sens: float, spec: float) -> float:
    return (sens + spec) / 2.0


def class_metrics(b: BinaryCounts) -> dict:
    sens, spec = sensitivity(b), specificity(b)
    return {
        "accuracy": _ratio(b.tp + b.tn, b.total, "class accuracy"),
        "sensitivity": sens,
        "specificity": spec,
        "false_alarm_rate": false_alarm(b),
        "precision": precision(b),
        "recall": sens,
        "f1": f1(b),
        "icbhi_score": icbhi_score(sens, spec),
    }


def matrix_metrics(cm: ConfusionMatrix, context: str = "") -> tuple[dict, list[str]]:
    """Per-class, macro and overall metrics for one matrix, plus warning messages."""
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", DegenerateMetricWarning)
        per_class = {c.display: class_metrics(one_vs_rest(cm, c)) for c in REPORT_ORDER}
        acc = accuracy(cm)
    keys = next(iter(per_class.values())).keys()
    macro = {k: float(np.mean([m[k] for m in per_class.values()])) for k in keys}
    prefix = f"{context}: " if context else ""
    msgs = [prefix + str(w.message) for w in caught if issubclass(w.category, DegenerateMetricWarning)]
    return {"accuracy": acc, "per_class": per_class, "macro": macro,
            "confusion_matrix": cm.tolist(), "n": cm.total}, msgs


# --- splitting ---------------------------------------------------------------

@dataclass(frozen=True)
class FoldAssignment:
    folds: dict  # patient_id -> fold index
    k: int
    seed: int

    def fold_of(self, patient_id: int) -> int:
        return self.folds[patient_id]

    def patients(self, fold: int) -> list:
        return sorted(p for p, f in self.folds.items() if f == fold)


def _patient_counts(cycles) -> dict:
    counts: dict = {}
    for c in cycles:
        counts[c.patient_id] = counts.get(c.patient_id, 0) + 1
    return counts


def _shuffled_patients(counts: dict, seed: int) -> list:
    patients = sorted(counts)
    order = np.random.default_rng(seed).permutation(len(patients))
    return [patients[i] for i in order]


def make_patient_folds(cycles, k: int = 5, seed: int = 0) -> FoldAssignment:
    """Assign whole patients to ``k`` folds.

    Patients are shuffled by ``seed``, then each goes to the fold holding the
    fewest cycles so far (lowest index on ties).
    """
    if k < 2:
        raise ValueError(f"need at least 2 folds, got {k}")
    counts = _patient_counts(cycles)
    if len(counts) < k:
        raise ValueError(f"{len(counts)} patients cannot fill {k} folds")
    load = [0] * k
    folds = {}
    for pid in _shuffled_patients(counts, seed):
        f = min(range(k), key=lambda i: (load[i], i))
        folds[pid] = f
        load[f] += counts[pid]
    return FoldAssignment(folds, k, seed)


def _take_fraction(patients: list, counts: dict, fraction: float, keep: int) -> tuple[list, list]:
    """Take patients in order until their cycles reach ``fraction`` of the total.

    A patient that would overshoot the target by more than the current
    shortfall ends the selection; at least one patient is taken and at least
    ``keep`` are left over.
    """
    target = fraction * sum(counts[p] for p in patients)
    taken, n = [], 0
    for p in patients[:len(patients) - keep]:
        if taken and (n >= target or n + counts[p] - target > target - n):
            break
        taken.append(p)
        n += counts[p]
    return taken, patients[len(taken):]


def split_80_20(cycles: Sequence, seed: int = 0):
    """Patient-level train/validation/test split.

    About 20% of cycles (whole patients, in seeded order) go to test, then
    20% of the remaining cycles to validation.

    Returns:
        ``(train, validation, test)`` lists of cycles.
    """
    counts = _patient_counts(cycles)
    if len(counts) < 5:
        raise ValueError(f"need at least 5 patients for an 80/20 split, got {len(counts)}")
    order = _shuffled_patients(counts, seed)
    test_p, remaining = _take_fraction(order, counts, 0.2, keep=2)
    val_p, train_p = _take_fraction(remaining, counts, 0.2, keep=1)
    groups = (set(train_p), set(val_p), set(test_p))
    return tuple([c for c in cycles if c.patient_id in g] for g in groups)


# --- cross-validation --------------------------------------------------------

@dataclass
class MetricsReport:
    pooled: dict
    folds: list
    mean_of_folds: dict
    warnings: list = field(default_factory=list)
    config: dict = field(default_factory=dict)

    @property
    def confusion_matrix(self) -> ConfusionMatrix:
        return ConfusionMatrix(np.array(self.pooled["confusion_matrix"]))

    @property
    def accuracy(self) -> float:
        """Headline accuracy: the mean over folds."""
        return self.mean_of_folds["accuracy"]

    def to_dict(self) -> dict:
        return {
            "overall_accuracy": self.mean_of_folds["accuracy"],
            "pooled_accuracy": self.pooled["accuracy"],
            "confusion_matrix": self.pooled["confusion_matrix"],
            "per_class": self.pooled["per_class"],
            "macro": self.pooled["macro"],
            "mean_of_folds": self.mean_of_folds,
            "fold_count": len(self.folds),
            "folds": self.folds,
            "class_order": [c.display for c in REPORT_ORDER],
            "warnings": self.warnings,
            "config": self.config,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        pooled = {"accuracy": d["pooled_accuracy"], "per_class": d["per_class"],
                  "macro": d["macro"], "confusion_matrix": d["confusion_matrix"],
                  "n": int(np.sum(d["confusion_matrix"]))}
        return cls(pooled, d["folds"], d["mean_of_folds"], d.get("warnings", []), d.get("config", {}))

    def to_text(self) -> str:
        return format_report(self)


def format_metrics_table(per_class: dict, macro: dict | None = None) -> str:
    cols = [("Accuracy", "accuracy"), ("Precision", "precision"), ("Recall", "recall"),
            ("F1 Score", "f1"), ("Sensitivity", "sensitivity"), ("Specificity", "specificity"),
            ("ICBHI", "icbhi_score")]
    lines = [f"{'Class':<10}" + "".join(f"{name:>13}" for name, _ in cols)]
    # JSON round trips sort keys, so fix the row order here
    order = [c.display for c in REPORT_ORDER if c.display in per_class]
    order += [k for k in per_class if k not in order]
    rows = [(k, per_class[k]) for k in order] + ([("Macro", macro)] if macro else [])
    for name, m in rows:
        lines.append(f"{name:<10}" + "".join(f"{m[key]:>13.4f}" for _, key in cols))
    return "\n".join(lines)


def format_confusion(cm: list) -> str:
    names = [c.display for c in REPORT_ORDER]
    lines = [f"{'true/pred':<10}" + "".join(f"{n:>10}" for n in names)]
    for name, row in zip(names, cm):
        lines.append(f"{name:<10}" + "".join(f"{v:>10d}" for v in row))
    return "\n".join(lines)


def format_report(r: MetricsReport) -> str:
    out = [
        f"{len(r.folds)}-fold patient-wise cross-validation",
        f"Accuracy (mean of folds): {r.mean_of_folds['accuracy']:.4f}",
        f"Accuracy (pooled):        {r.pooled['accuracy']:.4f}",
        "",
        "Per-class metrics (pooled confusion matrix)",
        format_metrics_table(r.pooled["per_class"], r.pooled["macro"]),
        "",
        "Confusion matrix (pooled)",
        format_confusion(r.pooled["confusion_matrix"]),
        "",
        "Per-fold accuracy",
    ]
    out += [f"  fold {f['fold']}: {f['accuracy']:.4f}  (n={f['n']})" for f in r.folds]
    if r.warnings:
        out += ["", "Warnings"] + [f"  {w}" for w in r.warnings]
    return "\n".join(out) + "\n"


def _mean_metrics(fold_metrics: list) -> dict:
    def avg(vals):
        return float(np.mean(vals))
    first = fold_metrics[0]
    return {
        "accuracy": avg([m["accuracy"] for m in fold_metrics]),
        "macro": {k: avg([m["macro"][k] for m in fold_metrics]) for k in first["macro"]},
        "per_class": {
            c: {k: avg([m["per_class"][c][k] for m in fold_metrics]) for k in first["per_class"][c]}
            for c in first["per_class"]
        },
    }


def cross_validate(cycles: Sequence, features, k: int = 5,
                   train_cfg: TrainConfig = TrainConfig(), seed: int = 0,
                   config: dict | None = None) -> MetricsReport:
    """Patient-wise k-fold cross-validation of the softmax head.

    Args:
        cycles: objects with ``patient_id`` and ``label`` (LabeledCycle or
            anything shaped like it), aligned with ``features``.
        features: [N, D] extractor outputs.
        k: number of folds.
        train_cfg: head training settings.
        seed: fold-assignment seed.
        config: echoed verbatim into the report.

    Returns:
        Report with the pooled confusion matrix, per-fold metrics and their mean.
    """
    X = np.asarray(features, dtype=np.float64)
    if len(X) != len(cycles):
        raise ValueError(f"{len(cycles)} cycles but {len(X)} feature vectors")
    y = np.array([int(c.label) for c in cycles], dtype=np.intp)
    assignment = make_patient_folds(cycles, k, seed)
    fold_idx = np.array([assignment.fold_of(c.patient_id) for c in cycles])
    pooled = ConfusionMatrix(np.zeros((4, 4), dtype=np.int64))
    fold_reports, fold_metrics, msgs = [], [], []
    for i in range(k):
        test = fold_idx == i
        head = train_head(X[~test], y[~test], train_cfg)
        pred = predict_proba(X[test], head).argmax(axis=1)
        cm = confusion_matrix(zip(y[test], pred))
        pooled = pooled + cm
        metrics, w = matrix_metrics(cm, f"fold {i}")
        msgs += w
        fold_metrics.append(metrics)
        fold_reports.append({"fold": i, "n": int(test.sum()), "patients": assignment.patients(i),
                             "final_train_loss": head.history[-1] if head.history else None,
                             **metrics})
        log.info("fold %d: accuracy %.4f on %d cycles", i, metrics["accuracy"], int(test.sum()))
    pooled_metrics, w = matrix_metrics(pooled, "pooled")
    msgs += w
    if pooled.total != len(cycles):
        raise AssertionError("pooled confusion matrix does not cover every cycle")
    return MetricsReport(pooled_metrics, fold_reports, _mean_metrics(fold_metrics), msgs, dict(config or {}))


def score_head(X, y, head: ClassifierHead) -> ConfusionMatrix:
    pred = predict_proba(X, head).argmax(axis=1)
    return confusion_matrix(zip(y, pred))
