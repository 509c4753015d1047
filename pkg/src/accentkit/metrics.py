"""Multi-class evaluation metrics computed from a confusion matrix.

Overall block: accuracy, F1 macro, F1 micro and Hamming loss. Per-class block
(one-vs-rest): accuracy, the F-beta style AGF score, balanced AUC and the Gini
index 2*AUC - 1.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .errors import EmptyMatrix, LabelOutOfRange, LengthMismatch, NotADistribution, UndefinedRate


@dataclass(frozen=True)
class ConfusionMatrix:
    counts: np.ndarray  # rows = true class, cols = predicted class
    class_names: tuple

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        if counts.ndim != 2 or counts.shape[0] != counts.shape[1]:
            raise ValueError("confusion matrix must be square")
        if np.any(counts < 0):
            raise ValueError("confusion counts must be non-negative")
        names = tuple(self.class_names) if self.class_names is not None else tuple(
            str(i) for i in range(counts.shape[0]))
        if len(names) != counts.shape[0] or len(names) < 2:
            raise ValueError("need one class name per row and at least two classes")
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "class_names", names)

    @property
    def n_classes(self):
        return self.counts.shape[0]

    @property
    def total(self):
        return int(self.counts.sum())


@dataclass(frozen=True)
class BinaryCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self):
        return self.tp + self.fp + self.fn + self.tn


def confusion_matrix(y_true, y_pred, n_classes, class_names=None) -> ConfusionMatrix:
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.shape != y_pred.shape:
        raise LengthMismatch(f"{len(y_true)} true labels vs {len(y_pred)} predictions")
    for arr in (y_true, y_pred):
        if arr.size and (arr.min() < 0 or arr.max() >= n_classes):
            raise LabelOutOfRange(f"labels must lie in [0, {n_classes})")
    counts = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(counts, (y_true, y_pred), 1)
    return ConfusionMatrix(counts, class_names)


def binary_reduce(cm: ConfusionMatrix, c: int) -> BinaryCounts:
    m = cm.counts
    tp = int(m[c, c])
    fp = int(m[:, c].sum()) - tp
    fn = int(m[c, :].sum()) - tp
    return BinaryCounts(tp, fp, fn, cm.total - tp - fp - fn)


def _require_samples(cm):
    if cm.total < 1:
        raise EmptyMatrix("confusion matrix holds no samples")


def _safe_div(a, b):
    return a / b if b else 0.0


def overall_accuracy(cm: ConfusionMatrix) -> float:
    _require_samples(cm)
    return float(np.trace(cm.counts)) / cm.total


def precision_recall(bc: BinaryCounts):
    return _safe_div(bc.tp, bc.tp + bc.fp), _safe_div(bc.tp, bc.tp + bc.fn)


def f_score(precision, recall, beta=1.0):
    b2 = beta * beta
    denom = b2 * precision + recall
    return (1 + b2) * precision * recall / denom if denom else 0.0


def per_class_f1(cm: ConfusionMatrix):
    return [f_score(*precision_recall(binary_reduce(cm, c))) for c in range(cm.n_classes)]


def f1_macro(cm: ConfusionMatrix) -> float:
    _require_samples(cm)
    scores = per_class_f1(cm)
    return sum(scores) / len(scores)


def f1_micro(cm: ConfusionMatrix) -> float:
    _require_samples(cm)
    reduced = [binary_reduce(cm, c) for c in range(cm.n_classes)]
    tp = sum(b.tp for b in reduced)
    fp = sum(b.fp for b in reduced)
    fn = sum(b.fn for b in reduced)
    return f_score(_safe_div(tp, tp + fp), _safe_div(tp, tp + fn))


def one_hot(labels, n_labels):
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros((len(labels), n_labels), dtype=bool)
    out[np.arange(len(labels)), labels] = True
    return out


def hamming_loss(true_sets, pred_sets, n_labels=None) -> float:
    """Mean XOR over an ``[N, L]`` pair of boolean label-indicator matrices."""
    y = np.asarray(true_sets, dtype=bool)
    x = np.asarray(pred_sets, dtype=bool)
    if y.shape != x.shape or y.ndim != 2:
        raise LengthMismatch(f"label sets have shapes {y.shape} and {x.shape}")
    if n_labels is not None and y.shape[1] != n_labels:
        raise LengthMismatch(f"expected {n_labels} labels per sample, got {y.shape[1]}")
    if y.size == 0:
        raise EmptyMatrix("no samples")
    return float(np.count_nonzero(y ^ x)) / y.size


def hamming_loss_cm(cm: ConfusionMatrix) -> float:
    # each off-diagonal sample flips exactly two of the C one-hot bits
    _require_samples(cm)
    wrong = cm.total - int(np.trace(cm.counts))
    return 2.0 * wrong / (cm.total * cm.n_classes)


def agf(bc: BinaryCounts, beta: float = 1.0) -> float:
    if beta <= 0:
        raise ValueError("beta must be positive")
    return f_score(*precision_recall(bc), beta=beta)


def auc_balanced(bc: BinaryCounts) -> float:
    """(sensitivity + specificity) / 2."""
    if bc.tp + bc.fn == 0 or bc.tn + bc.fp == 0:
        raise UndefinedRate("balanced AUC needs samples on both sides of the one-vs-rest split")
    return (bc.tp / (bc.tp + bc.fn) + bc.tn / (bc.tn + bc.fp)) / 2.0


def gini_auc(auc: float) -> float:
    return 2.0 * auc - 1.0


def gini_impurity(distribution) -> float:
    p = np.asarray(distribution, dtype=np.float64)
    if p.ndim != 1 or p.size == 0 or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
        raise NotADistribution("expected a non-negative vector summing to 1")
    return float(1.0 - np.sum(p * p))


@dataclass
class ClassRow:
    name: str
    acc: float
    agf: float
    auc: float = None  # None when one side of the one-vs-rest split is empty
    gi: float = None


@dataclass
class ClassReport:
    classes: list
    acc: float
    f1_macro: float
    f1_micro: float
    hamming_loss: float
    beta: float = 1.0
    confusion: list = None

    def to_dict(self):
        return {
            "overall": {"acc": self.acc, "f1_macro": self.f1_macro,
                        "f1_micro": self.f1_micro, "hamming_loss": self.hamming_loss},
            "beta": self.beta,
            "classes": [asdict(r) for r in self.classes],
            "confusion_matrix": self.confusion,
        }

    def to_json(self, indent=2):
        return json.dumps(self.to_dict(), indent=indent) + "\n"

    @classmethod
    def from_dict(cls, d):
        o = d["overall"]
        return cls([ClassRow(**r) for r in d["classes"]], o["acc"], o["f1_macro"],
                   o["f1_micro"], o["hamming_loss"], d.get("beta", 1.0), d.get("confusion_matrix"))

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))

    def to_text(self):
        def fmt(v):
            return "n/a" if v is None else f"{v:.5f}"

        overall_head = ["Overall ACC", "F1 Macro", "F1 Micro", "Hamming Loss"]
        overall_vals = [fmt(v) for v in (self.acc, self.f1_macro, self.f1_micro, self.hamming_loss)]
        head = ["Classes", "ACC", "AGF", "AUC", "GI"]
        rows = [[r.name, fmt(r.acc), fmt(r.agf), fmt(r.auc), fmt(r.gi)] for r in self.classes]
        return _table([overall_head, overall_vals]) + "\n" + _table([head] + rows)


def _table(rows):
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    lines = []
    for k, r in enumerate(rows):
        cells = [r[0].ljust(widths[0])] + [c.rjust(w) for c, w in zip(r[1:], widths[1:])]
        lines.append("  ".join(cells).rstrip())
        if k == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def evaluation_report(cm: ConfusionMatrix, beta: float = 1.0) -> ClassReport:
    _require_samples(cm)
    rows = []
    n = cm.total
    for c, name in enumerate(cm.class_names):
        bc = binary_reduce(cm, c)
        try:
            auc = auc_balanced(bc)
            gi = gini_auc(auc)
        except UndefinedRate:
            auc = gi = None
        rows.append(ClassRow(name, (bc.tp + bc.tn) / n, agf(bc, beta), auc, gi))
    return ClassReport(rows, overall_accuracy(cm), f1_macro(cm), f1_micro(cm),
                       hamming_loss_cm(cm), beta, cm.counts.tolist())
