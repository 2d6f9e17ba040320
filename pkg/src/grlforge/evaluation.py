"""Image-level forgery metrics. Forged (label 1) is the positive class."""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass
from typing import Any

import numpy as np

from .grl_dann import DannModel, domain_logits, predict

CSV_FIELDS = [
    "run_id", "epoch", "lambda", "tp", "fp", "tn", "fn",
    "precision", "recall", "f1", "accuracy", "domain_accuracy",
]


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


@dataclass(frozen=True)
class MetricsReport:
    counts: ConfusionCounts
    precision: float
    recall: float
    f1: float
    accuracy: float
    domain_accuracy: float | None = None

    def row(self, run_id: str = "", epoch: int | str = "", lam: float | str = "") -> dict[str, Any]:
        c = self.counts
        return {
            "run_id": run_id, "epoch": epoch, "lambda": lam,
            "tp": c.tp, "fp": c.fp, "tn": c.tn, "fn": c.fn,
            "precision": repr(self.precision), "recall": repr(self.recall),
            "f1": repr(self.f1), "accuracy": repr(self.accuracy),
            "domain_accuracy": "" if self.domain_accuracy is None else repr(self.domain_accuracy),
        }


def _binary(a, name: str) -> np.ndarray:
    arr = np.asarray(a)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional")
    if arr.size and not np.isin(arr, (0, 1)).all():
        raise ValueError(f"{name} may only contain 0 and 1")
    return arr.astype(np.int64)


def confusion(preds, truth) -> ConfusionCounts:
    p, t = _binary(preds, "preds"), _binary(truth, "truth")
    if p.shape != t.shape:
        raise ValueError(f"preds ({len(p)}) and truth ({len(t)}) differ in length")
    return ConfusionCounts(
        tp=int(((p == 1) & (t == 1)).sum()),
        fp=int(((p == 1) & (t == 0)).sum()),
        tn=int(((p == 0) & (t == 0)).sum()),
        fn=int(((p == 0) & (t == 1)).sum()),
    )


def metrics(counts: ConfusionCounts, domain_accuracy: float | None = None) -> MetricsReport:
    """Precision, recall, F1 and accuracy; any 0/0 ratio is reported as 0."""
    if counts.total == 0:
        raise ValueError("cannot compute metrics over zero samples")
    precision = counts.tp / (counts.tp + counts.fp) if counts.tp + counts.fp else 0.0
    recall = counts.tp / (counts.tp + counts.fn) if counts.tp + counts.fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    accuracy = (counts.tp + counts.tn) / counts.total
    return MetricsReport(counts, precision, recall, f1, accuracy, domain_accuracy)


def domain_accuracy(model: DannModel, source_images, target_images) -> float:
    """Domain-head accuracy balanced over the two domains: the mean of the
    per-domain hit rates, so it does not depend on sample order or on the
    source/target count ratio."""
    src = domain_logits(model, source_images).argmax(axis=1)
    tgt = domain_logits(model, target_images).argmax(axis=1)
    return 0.5 * (float(np.mean(src == 0)) + float(np.mean(tgt == 1)))


def evaluate(model: DannModel, images, labels, domains: tuple[Any, Any] | None = None) -> MetricsReport:
    """Classify every image and score it against ``labels``.

    ``domains`` optionally supplies ``(source_images, target_images)`` for
    the domain-head diagnostic.
    """
    if labels is None or any(lab is None for lab in labels):
        raise ValueError("evaluation needs a ground-truth label for every entry")
    if len(images) == 0:
        raise ValueError("evaluation set is empty")
    counts = confusion(predict(model, images), np.asarray(labels))
    dacc = None
    if domains is not None and len(domains[0]) and len(domains[1]):
        dacc = domain_accuracy(model, *domains)
    return metrics(counts, dacc)


def append_csv(path, rows) -> None:
    """Append metric rows, writing the header first if the file is new or empty."""
    new = not os.path.exists(path) or os.path.getsize(path) == 0
    with open(path, "a", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_FIELDS, lineterminator="\n")
        if new:
            writer.writeheader()
        for row in rows:
            writer.writerow(row)


def read_csv(path) -> list[dict[str, str]]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))
