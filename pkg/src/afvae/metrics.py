"""Confusion-matrix metrics with AF as the positive class."""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import asdict, dataclass

import numpy as np

from .dataset import Label

POSITIVE_CLASS = "AF"


class UndefinedMetricError(ZeroDivisionError):
    """The metric's denominator is zero for this confusion matrix."""


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def to_dict(self) -> dict:
        return asdict(self)


def confusion(predictions: Sequence, labels: Sequence) -> ConfusionMatrix:
    pred = np.asarray([int(p) for p in predictions])
    true = np.asarray([int(t) for t in labels])
    if pred.shape != true.shape:
        raise ValueError(f"{len(pred)} predictions for {len(true)} labels")
    if pred.size == 0:
        raise ValueError("cannot score an empty prediction set")
    pos_p, pos_t = pred == Label.AF, true == Label.AF
    return ConfusionMatrix(
        tp=int(np.sum(pos_p & pos_t)),
        fp=int(np.sum(pos_p & ~pos_t)),
        tn=int(np.sum(~pos_p & ~pos_t)),
        fn=int(np.sum(~pos_p & pos_t)),
    )


def _ratio(num: int, den: int, name: str) -> float:
    if den == 0:
        raise UndefinedMetricError(f"{name} is undefined: zero denominator")
    return num / den


def sensitivity(cm: ConfusionMatrix) -> float:
    return _ratio(cm.tp, cm.tp + cm.fn, "sensitivity")


def specificity(cm: ConfusionMatrix) -> float:
    return _ratio(cm.tn, cm.tn + cm.fp, "specificity")


def accuracy(cm: ConfusionMatrix) -> float:
    return _ratio(cm.tp + cm.tn, cm.total, "accuracy")


def summarize(cm: ConfusionMatrix) -> dict:
    """All three metrics; undefined ones come back as NaN rather than 0."""
    out = {}
    for name, fn in (("sensitivity", sensitivity), ("specificity", specificity), ("accuracy", accuracy)):
        try:
            out[name] = fn(cm)
        except UndefinedMetricError:
            out[name] = float("nan")
    return out
