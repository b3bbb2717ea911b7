"""Confusion matrix and one-vs-rest classification metrics.

Per-class rates treat each class in turn as the positive class. Aggregates
are unweighted (macro) means over classes. A rate whose denominator is zero
is reported as 0 and its name is listed in the class's ``undefined`` field.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .errors import LengthMismatch, UnknownClass

DEFAULT_CLASSES = ("normal", "benign", "malignant")


@dataclass
class ConfusionMatrix:
    classes: tuple
    counts: np.ndarray  # rows = actual, columns = predicted

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def index(self, label) -> int:
        try:
            return self.classes.index(label)
        except ValueError:
            raise UnknownClass(f"{label!r} not in {self.classes}") from None


@dataclass
class ClassMetrics:
    tp: int
    tn: int
    fp: int
    fn: int
    precision: float
    recall: float
    sensitivity: float
    specificity: float
    f1: float
    undefined: list = field(default_factory=list)


@dataclass
class MetricReport:
    classes: tuple
    confusion: list
    per_class: dict
    accuracy: float
    macro_precision: float
    macro_recall: float
    macro_specificity: float
    macro_f1: float

    def to_json(self) -> str:
        d = asdict(self)
        d["classes"] = list(self.classes)
        return json.dumps(d, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "MetricReport":
        d = json.loads(text)
        d["classes"] = tuple(d["classes"])
        d["per_class"] = {k: ClassMetrics(**v) for k, v in d["per_class"].items()}
        return cls(**d)

    def to_text(self) -> str:
        head = f"{'class':<12}{'tp':>6}{'tn':>6}{'fp':>6}{'fn':>6}{'prec':>9}{'recall':>9}{'spec':>9}{'f1':>9}"
        lines = [head, "-" * len(head)]
        for name in self.classes:
            m = self.per_class[name]
            flag = " *" if m.undefined else ""
            lines.append(
                f"{name:<12}{m.tp:>6}{m.tn:>6}{m.fp:>6}{m.fn:>6}"
                f"{m.precision:>9.4f}{m.recall:>9.4f}{m.specificity:>9.4f}{m.f1:>9.4f}{flag}"
            )
        lines.append("-" * len(head))
        lines.append(
            f"{'macro':<36}{self.macro_precision:>9.4f}{self.macro_recall:>9.4f}"
            f"{self.macro_specificity:>9.4f}{self.macro_f1:>9.4f}"
        )
        lines.append(f"accuracy {self.accuracy:.4f}")
        if any(self.per_class[c].undefined for c in self.classes):
            lines.append("* some rates had a zero denominator and are reported as 0")
        return "\n".join(lines)


def confuse(actual: Sequence, predicted: Sequence, classes: Sequence = DEFAULT_CLASSES) -> ConfusionMatrix:
    if len(actual) != len(predicted):
        raise LengthMismatch(f"{len(actual)} actual vs {len(predicted)} predicted labels")
    if len(actual) == 0:
        raise LengthMismatch("no labels to score")
    classes = tuple(classes)
    pos = {c: i for i, c in enumerate(classes)}
    counts = np.zeros((len(classes), len(classes)), dtype=np.int64)
    for a, p in zip(actual, predicted):
        if a not in pos or p not in pos:
            raise UnknownClass(f"label pair ({a!r}, {p!r}) outside {classes}")
        counts[pos[a], pos[p]] += 1
    return ConfusionMatrix(classes, counts)


def one_vs_rest(cm: ConfusionMatrix, label) -> tuple:
    """``(tp, tn, fp, fn)`` with ``label`` as the positive class."""
    c = cm.index(label)
    tp = int(cm.counts[c, c])
    fn = int(cm.counts[c, :].sum()) - tp
    fp = int(cm.counts[:, c].sum()) - tp
    tn = cm.total - tp - fn - fp
    return tp, tn, fp, fn


def _ratio(num, den, name, undefined):
    if den == 0:
        undefined.append(name)
        return 0.0
    return num / den


def f1_score(precision: float, recall: float) -> float:
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def report(cm: ConfusionMatrix) -> MetricReport:
    per = {}
    for name in cm.classes:
        tp, tn, fp, fn = one_vs_rest(cm, name)
        undef = []
        precision = _ratio(tp, tp + fp, "precision", undef)
        recall = _ratio(tp, tp + fn, "recall", undef)
        specificity = _ratio(tn, tn + fp, "specificity", undef)
        f1 = f1_score(precision, recall)
        per[name] = ClassMetrics(tp, tn, fp, fn, precision, recall, recall, specificity, f1, undef)
    k = len(cm.classes)
    return MetricReport(
        classes=cm.classes,
        confusion=cm.counts.tolist(),
        per_class=per,
        accuracy=float(np.trace(cm.counts)) / cm.total if cm.total else 0.0,
        macro_precision=sum(m.precision for m in per.values()) / k,
        macro_recall=sum(m.recall for m in per.values()) / k,
        macro_specificity=sum(m.specificity for m in per.values()) / k,
        macro_f1=sum(m.f1 for m in per.values()) / k,
    )


def confusion_image(cm: ConfusionMatrix, cell: int = 48) -> np.ndarray:
    """Grayscale heat grid, one ``cell``-sized square per entry, darker = more."""
    counts = cm.counts.astype(float)
    # normalise by row so each actual class spans the full range
    rows = counts.sum(axis=1, keepdims=True)
    frac = np.divide(counts, rows, out=np.zeros_like(counts), where=rows > 0)
    grid = (255 - np.round(frac * 255)).astype(np.uint8)
    img = np.kron(grid, np.ones((cell, cell), dtype=np.uint8))
    img[::cell, :] = 0
    img[:, ::cell] = 0
    return np.pad(img, ((0, 1), (0, 1)))
