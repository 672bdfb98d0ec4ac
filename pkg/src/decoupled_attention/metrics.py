"""Mask quality scores: per-class IoU, precision and recall, and class means."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .annotate import BACKGROUND, VOID
from .errors import DimensionError

METRICS = ("iou", "prec", "rec")


@dataclass
class ConfusionTally:
    """Per-class tp/fp/fn pixel counts; tallies add like a monoid."""

    n_classes: int
    tp: np.ndarray = field(default=None)
    fp: np.ndarray = field(default=None)
    fn: np.ndarray = field(default=None)

    def __post_init__(self):
        for name in ("tp", "fp", "fn"):
            if getattr(self, name) is None:
                setattr(self, name, np.zeros(self.n_classes, dtype=np.int64))

    def __add__(self, other: "ConfusionTally") -> "ConfusionTally":
        if other.n_classes != self.n_classes:
            raise DimensionError("cannot merge tallies over different class counts")
        return ConfusionTally(self.n_classes, self.tp + other.tp, self.fp + other.fp, self.fn + other.fn)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, ConfusionTally)
            and self.n_classes == other.n_classes
            and all(np.array_equal(getattr(self, k), getattr(other, k)) for k in ("tp", "fp", "fn"))
        )


def accumulate(pred, gt, tally: ConfusionTally) -> ConfusionTally:
    """Add one image's counts. Ground-truth VOID pixels are ignored; a VOID
    prediction is a miss for the ground-truth class."""
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise DimensionError(f"prediction {pred.shape} and ground truth {gt.shape} differ")
    keep = gt != VOID
    p, g = pred[keep].astype(np.int64), gt[keep].astype(np.int64)
    n = tally.n_classes
    hit = p == g
    tp = np.bincount(g[hit], minlength=n)[:n]
    p_valid = p[(p != VOID) & ~hit]
    fp = np.bincount(p_valid[p_valid < n], minlength=n)[:n]
    fn = np.bincount(g[~hit], minlength=n)[:n]
    return tally + ConfusionTally(n, tp, fp, fn)


def _ratio(num, den):
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(den > 0, num / np.maximum(den, 1), np.nan)


def score(tally: ConfusionTally, include_background: bool = False) -> dict:
    """Per-class and mean S_IoU / S_prec / S_rec.

    Classes whose denominator is zero are reported as None and left out of
    the unweighted mean. Background is excluded from means unless asked.
    """
    tp, fp, fn = (x.astype(np.float64) for x in (tally.tp, tally.fp, tally.fn))
    values = {
        "iou": _ratio(tp, tp + fp + fn),
        "prec": _ratio(tp, tp + fp),
        "rec": _ratio(tp, tp + fn),
    }
    classes = [c for c in range(tally.n_classes) if include_background or c != BACKGROUND]
    per_class = {
        c: {m: (None if np.isnan(values[m][c]) else float(values[m][c])) for m in METRICS} for c in classes
    }
    mean = {}
    for m in METRICS:
        vals = [per_class[c][m] for c in classes if per_class[c][m] is not None]
        mean[m] = float(np.mean(vals)) if vals else None
    return {"per_class": per_class, "mean": mean}


def format_table(report: dict, class_names=None, title: str | None = None) -> str:
    """Aligned plain-text table, one row per class plus a mean footer (percent)."""

    def cell(v):
        return "     -" if v is None else f"{100 * v:6.1f}"

    name = lambda c: class_names[c] if class_names and c < len(class_names) else str(c)
    rows = [(name(c), vals) for c, vals in report["per_class"].items()]
    width = max([len("class"), len("mean")] + [len(r[0]) for r in rows])
    lines = [title] if title else []
    lines.append(f"{'class':<{width}}  {'S_IoU':>6}  {'S_prec':>6}  {'S_rec':>6}")
    for label, vals in rows:
        lines.append(f"{label:<{width}}  {cell(vals['iou'])}  {cell(vals['prec'])}  {cell(vals['rec'])}")
    lines.append("-" * len(lines[-1]))
    m = report["mean"]
    lines.append(f"{'mean':<{width}}  {cell(m['iou'])}  {cell(m['prec'])}  {cell(m['rec'])}")
    return "\n".join(lines)


def evaluate(pairs, n_classes: int, include_background: bool = False) -> dict:
    tally = ConfusionTally(n_classes)
    for pred, gt in pairs:
        tally = accumulate(pred, gt, tally)
    return score(tally, include_background)
