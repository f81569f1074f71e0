"""Confusion matrices, per-class / macro / weighted scores, and prediction files.

Predictions file (``predictions.jsonl``): one JSON object per line::

    {"sample_id": "...", "logits": [l0, l1, l2, l3], "label": 0..3}

Derived metrics are computed with exact rationals and converted to float at
the end, so identities such as weighted recall == accuracy hold exactly.
"""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from .errors import EmptyMatrix, SchemaError, UnknownSampleId
from .labels import NUM_CLASSES, TRAINABLE_CLASSES

CLASS_NAMES = tuple(c.subtype for c in TRAINABLE_CLASSES)


def argmax_class(logits: Sequence[float]) -> int:
    """Index of the largest logit; ties go to the lowest index."""
    best = 0
    for i in range(1, len(logits)):
        if logits[i] > logits[best]:
            best = i
    return best


class ConfusionMatrix:
    """Rows are ground truth, columns are predictions."""

    def __init__(self, counts=None, n_classes: int = NUM_CLASSES):
        if counts is None:
            counts = np.zeros((n_classes, n_classes), dtype=np.int64)
        counts = np.array(counts, dtype=np.int64)
        if counts.ndim != 2 or counts.shape[0] != counts.shape[1]:
            raise ValueError("confusion matrix must be square")
        if (counts < 0).any():
            raise ValueError("confusion counts must be non-negative")
        self.counts = counts

    @property
    def n_classes(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @classmethod
    def from_pairs(cls, labels, preds, n_classes: int = NUM_CLASSES) -> "ConfusionMatrix":
        labels = np.asarray(labels, dtype=np.int64).ravel()
        preds = np.asarray(preds, dtype=np.int64).ravel()
        if labels.shape != preds.shape:
            raise ValueError("labels and predictions differ in length")
        for arr in (labels, preds):
            if arr.size and (arr.min() < 0 or arr.max() >= n_classes):
                raise ValueError("class code out of range")
        flat = np.bincount(labels * n_classes + preds, minlength=n_classes * n_classes)
        return cls(flat.reshape(n_classes, n_classes))

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(self.counts + other.counts)

    def __eq__(self, other):
        return isinstance(other, ConfusionMatrix) and np.array_equal(self.counts, other.counts)

    def __repr__(self):
        return f"ConfusionMatrix({self.counts.tolist()})"


def accumulate(conf: ConfusionMatrix, label: int, pred: int) -> ConfusionMatrix:
    n = conf.n_classes
    if not (0 <= label < n and 0 <= pred < n):
        raise ValueError(f"class code out of range: label={label} pred={pred}")
    counts = conf.counts.copy()
    counts[label, pred] += 1
    return ConfusionMatrix(counts)


@dataclass(frozen=True)
class ClassScores:
    precision: float
    recall: float
    f1: float
    support: int = 0


@dataclass(frozen=True)
class EvalReport:
    confusion: ConfusionMatrix
    per_class: Tuple[ClassScores, ...]
    accuracy: float
    macro: ClassScores
    weighted: ClassScores
    n_runs: int = 1

    def to_dict(self) -> dict:
        def scores(s: ClassScores) -> dict:
            return {"precision": s.precision, "recall": s.recall, "f1": s.f1, "support": s.support}

        return {
            "n_runs": self.n_runs,
            "total": self.confusion.total,
            "accuracy": self.accuracy,
            "macro": scores(self.macro),
            "weighted": scores(self.weighted),
            "per_class": {name: scores(s) for name, s in zip(CLASS_NAMES, self.per_class)},
            "confusion": self.confusion.counts.tolist(),
        }

    def format_table(self) -> str:
        lines = [f"{'':<14}{'precision':>10}{'recall':>10}{'f1':>10}{'support':>10}"]
        for name, s in zip(CLASS_NAMES, self.per_class):
            lines.append(f"{name:<14}{s.precision:>10.3f}{s.recall:>10.3f}{s.f1:>10.3f}{s.support:>10d}")
        lines.append("")
        for name, s in (("macro", self.macro), ("weighted", self.weighted)):
            lines.append(f"{name:<14}{s.precision:>10.3f}{s.recall:>10.3f}{s.f1:>10.3f}{s.support:>10d}")
        lines.append(f"{'accuracy':<14}{self.accuracy:>30.3f}{self.confusion.total:>10d}")
        lines.append("")
        lines.append("confusion (rows = truth, cols = prediction)")
        lines.append("      " + "".join(f"{j:>9d}" for j in range(self.confusion.n_classes)))
        for i, row in enumerate(self.confusion.counts):
            lines.append(f"{i:>6d}" + "".join(f"{int(v):>9d}" for v in row))
        return "\n".join(lines)


def _ratio(num: int, den: int) -> Fraction:
    return Fraction(num, den) if den else Fraction(0)


def report(conf: ConfusionMatrix, n_runs: int = 1) -> EvalReport:
    """All derived metrics; zero-support classes score 0 and stay in the macro mean."""
    total = conf.total
    if total == 0:
        raise EmptyMatrix("confusion matrix has no samples")
    c = [[int(v) for v in row] for row in conf.counts]
    n = len(c)
    precs, recs, f1s, supports = [], [], [], []
    for k in range(n):
        tp = c[k][k]
        row = sum(c[k])
        col = sum(c[i][k] for i in range(n))
        p, r = _ratio(tp, col), _ratio(tp, row)
        precs.append(p)
        recs.append(r)
        f1s.append(2 * p * r / (p + r) if p + r else Fraction(0))
        supports.append(row)

    def macro(vals):
        return sum(vals, Fraction(0)) / n

    def weighted(vals):
        return sum((v * s for v, s in zip(vals, supports)), Fraction(0)) / total

    per_class = tuple(
        ClassScores(float(p), float(r), float(f), s) for p, r, f, s in zip(precs, recs, f1s, supports)
    )
    return EvalReport(
        confusion=conf,
        per_class=per_class,
        accuracy=float(Fraction(sum(c[k][k] for k in range(n)), total)),
        macro=ClassScores(float(macro(precs)), float(macro(recs)), float(macro(f1s)), total),
        weighted=ClassScores(float(weighted(precs)), float(weighted(recs)), float(weighted(f1s)), total),
        n_runs=n_runs,
    )


def f1_from(precision: float, recall: float) -> float:
    return 2 * precision * recall / (precision + recall) if precision + recall else 0.0


def running_average(values: Iterable[float], window: int = 10) -> Iterator[float]:
    """Mean of the last ``min(window, t)`` values at each step ``t``."""
    if window < 1:
        raise ValueError("window must be >= 1")
    buf = deque(maxlen=window)
    for v in values:
        buf.append(v)
        yield math.fsum(buf) / len(buf)


def aggregate_runs(runs: Sequence, n_classes: int = NUM_CLASSES) -> EvalReport:
    """Pool several evaluation runs into one report.

    Each run is either a :class:`ConfusionMatrix` or a ``(labels, preds)``
    pair. Raw pairs are pooled; metrics are never averaged across runs.
    """
    if not runs:
        raise ValueError("need at least one run")
    pooled = ConfusionMatrix(n_classes=n_classes)
    for run in runs:
        if not isinstance(run, ConfusionMatrix):
            labels, preds = run
            run = ConfusionMatrix.from_pairs(labels, preds, n_classes)
        pooled = pooled + run
    return report(pooled, n_runs=len(runs))


@dataclass(frozen=True)
class PredictionRecord:
    sample_id: str
    logits: Tuple[float, ...]
    label: int

    @property
    def prediction(self) -> int:
        return argmax_class(self.logits)

    def to_json(self) -> str:
        return json.dumps({"sample_id": self.sample_id, "logits": list(self.logits), "label": self.label})


def write_predictions(records: Iterable[PredictionRecord], path) -> int:
    n = 0
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(rec.to_json() + "\n")
            n += 1
    return n


def _parse_prediction(obj, lineno: int) -> PredictionRecord:
    if not isinstance(obj, dict):
        raise SchemaError("record must be a JSON object", line=lineno)
    for key in ("sample_id", "logits", "label"):
        if key not in obj:
            raise SchemaError(f"missing field {key!r}", line=lineno)
    logits = obj["logits"]
    if not isinstance(logits, list) or len(logits) != NUM_CLASSES:
        raise SchemaError(f"expected {NUM_CLASSES} logits", line=lineno)
    if not all(isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v) for v in logits):
        raise SchemaError("logits must be finite numbers", line=lineno)
    label = obj["label"]
    if isinstance(label, bool) or not isinstance(label, int) or not 0 <= label < NUM_CLASSES:
        raise SchemaError(f"label must be an integer in 0..{NUM_CLASSES - 1}", line=lineno)
    return PredictionRecord(str(obj["sample_id"]), tuple(float(v) for v in logits), label)


def ingest_predictions(path, known_ids: Optional[Iterable[str]] = None) -> List[PredictionRecord]:
    known = set(known_ids) if known_ids is not None else None
    records = []
    with open(Path(path), encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"invalid JSON ({exc.msg})", line=lineno) from None
            rec = _parse_prediction(obj, lineno)
            if known is not None and rec.sample_id not in known:
                raise UnknownSampleId(rec.sample_id)
            records.append(rec)
    return records


def confusion_from_predictions(records: Iterable[PredictionRecord]) -> ConfusionMatrix:
    records = list(records)
    return ConfusionMatrix.from_pairs([r.label for r in records], [r.prediction for r in records])
