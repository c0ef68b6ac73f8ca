"""Confusion matrices and one-vs-rest classification metrics.

Metrics are computed with exact rational arithmetic (`fractions.Fraction`).
A metric whose denominator is zero is reported as 0 and flagged.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .errors import EcgraphError
from .records import atomic_write


class MetricsError(EcgraphError, ValueError):
    pass


class LengthMismatch(MetricsError):
    pass


class ClassOutOfRange(MetricsError):
    pass


class EmptyMatrix(MetricsError):
    pass


METRICS = ("acc", "pre", "sen", "f1")


@dataclass
class ConfusionMatrix:
    """counts[t, p] = number of samples of true class t predicted as p."""

    counts: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.counts, dtype=np.int64)
        if c.ndim != 2 or c.shape[0] != c.shape[1]:
            raise MetricsError(f"confusion matrix must be square, got {c.shape}")
        if np.any(c < 0):
            raise MetricsError("confusion counts must be non-negative")
        self.counts = c

    @property
    def n_classes(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def one_vs_rest(self, c: int) -> tuple[int, int, int, int]:
        """(TP, TN, FP, FN) for class c."""
        m = self.counts
        tp = int(m[c, c])
        fn = int(m[c, :].sum()) - tp
        fp = int(m[:, c].sum()) - tp
        return tp, self.total - tp - fn - fp, fp, fn


def confusion(preds, labels, n_classes: int | None = None) -> ConfusionMatrix:
    preds = np.asarray(preds, dtype=np.int64).reshape(-1)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if preds.size != labels.size:
        raise LengthMismatch(f"{preds.size} predictions but {labels.size} labels")
    if n_classes is None:
        n_classes = int(max(preds.max(initial=-1), labels.max(initial=-1))) + 1
    both = np.concatenate([preds, labels])
    if both.size and (both.min() < 0 or both.max() >= n_classes):
        raise ClassOutOfRange(f"class ids must lie in [0, {n_classes})")
    counts = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(counts, (labels, preds), 1)
    return ConfusionMatrix(counts)


def _ratio(num: int, den: int, flag: str, flags: list) -> Fraction:
    if den == 0:
        flags.append(flag)
        return Fraction(0)
    return Fraction(num, den)


@dataclass
class ClassReport:
    """Per-class metrics (exact fractions) and support-weighted averages."""

    acc: list[Fraction]
    pre: list[Fraction]
    sen: list[Fraction]
    f1: list[Fraction]
    support: list[int]
    weighted: dict[str, Fraction]
    class_names: list[str] = field(default_factory=list)
    flags: list[str] = field(default_factory=list)

    def per_class(self, metric: str) -> list[Fraction]:
        return getattr(self, metric)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("class",) + METRICS + ("support",))
        for i, name in enumerate(self.class_names):
            w.writerow([name] + [f"{float(getattr(self, m)[i]):.6f}" for m in METRICS]
                       + [self.support[i]])
        w.writerow(["weighted"] + [f"{float(self.weighted[m]):.6f}" for m in METRICS]
                   + [sum(self.support)])
        return buf.getvalue()

    def to_text(self) -> str:
        head = f"{'class':<10}" + "".join(f"{m:>9}" for m in METRICS) + f"{'support':>9}"
        lines = [head, "-" * len(head)]
        for i, name in enumerate(self.class_names):
            lines.append(f"{name:<10}" + "".join(f"{100 * float(getattr(self, m)[i]):>8.2f}%"
                                                 for m in METRICS) + f"{self.support[i]:>9}")
        lines.append("-" * len(head))
        lines.append(f"{'weighted':<10}" + "".join(f"{100 * float(self.weighted[m]):>8.2f}%"
                                                   for m in METRICS) + f"{sum(self.support):>9}")
        if self.flags:
            lines.append("zero denominators (reported as 0): " + ", ".join(self.flags))
        return "\n".join(lines) + "\n"


def weighted_average(values, supports) -> Fraction:
    """sum(support_c * value_c) / sum(support_c), exactly."""
    values = [Fraction(v) if not isinstance(v, float) else Fraction(str(v)) for v in values]
    supports = [int(s) for s in supports]
    if len(values) != len(supports):
        raise LengthMismatch("values and supports differ in length")
    total = sum(supports)
    if total == 0:
        raise EmptyMatrix("supports sum to zero")
    return sum((s * v for s, v in zip(supports, values)), Fraction(0)) / total


def report(cm: ConfusionMatrix, class_names=None) -> ClassReport:
    if cm.total == 0:
        raise EmptyMatrix("confusion matrix has no samples")
    names = list(class_names) if class_names is not None else [str(i) for i in range(cm.n_classes)]
    if len(names) != cm.n_classes:
        raise MetricsError(f"{len(names)} class names for {cm.n_classes} classes")
    flags: list[str] = []
    acc, pre, sen, f1, support = [], [], [], [], []
    for c in range(cm.n_classes):
        tp, tn, fp, fn = cm.one_vs_rest(c)
        acc.append(Fraction(tp + tn, cm.total))
        p = _ratio(tp, tp + fp, f"pre[{names[c]}]", flags)
        s = _ratio(tp, tp + fn, f"sen[{names[c]}]", flags)
        pre.append(p)
        sen.append(s)
        if p + s == 0:
            flags.append(f"f1[{names[c]}]")
            f1.append(Fraction(0))
        else:
            f1.append(2 * p * s / (p + s))
        support.append(tp + fn)
    weighted = {m: weighted_average(v, support) for m, v in zip(METRICS, (acc, pre, sen, f1))}
    return ClassReport(acc, pre, sen, f1, support, weighted, names, flags)


def confusion_csv(cm: ConfusionMatrix, class_names=None) -> str:
    names = list(class_names) if class_names is not None else [str(i) for i in range(cm.n_classes)]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["true\\pred"] + names)
    for name, row in zip(names, cm.counts):
        w.writerow([name] + [int(v) for v in row])
    return buf.getvalue()


def save_heatmap(cm: ConfusionMatrix, path, class_names=None, title: str | None = None) -> None:
    """Render the row-normalised confusion matrix with counts annotated."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    names = list(class_names) if class_names is not None else [str(i) for i in range(cm.n_classes)]
    rows = cm.counts.sum(axis=1, keepdims=True)
    frac = np.divide(cm.counts, rows, out=np.zeros(cm.counts.shape), where=rows > 0)
    fig, ax = plt.subplots(figsize=(1.2 * cm.n_classes + 2, 1.2 * cm.n_classes + 1.5))
    ax.imshow(frac, cmap="Blues", vmin=0, vmax=1)
    ax.set_xticks(range(cm.n_classes), names)
    ax.set_yticks(range(cm.n_classes), names)
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    for t in range(cm.n_classes):
        for p in range(cm.n_classes):
            ax.text(p, t, str(cm.counts[t, p]), ha="center", va="center",
                    color="white" if frac[t, p] > 0.5 else "black")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    buf = io.BytesIO()
    fig.savefig(buf, format="png", dpi=100, metadata={"Software": None})
    plt.close(fig)
    atomic_write(path, buf.getvalue())
