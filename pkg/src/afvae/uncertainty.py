"""Repeated stochastic passes -> class decision plus aleatoric uncertainty.

Each input is encoded once; ``n_passes`` latent draws are decoded and
classified. The decision is the argmax of the per-class mean
probability and the uncertainty is the mean over classes of the
per-class population standard deviation.
"""

from __future__ import annotations

import csv
import io
from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import diffnet as dn
from .dataset import FoldPlan, Label
from .model import LatentGaussian, ModelConfig, encode, head_probs

DEFAULT_PASSES = 5
_CHUNK = 256


@dataclass(frozen=True)
class UncertaintyReport:
    prediction: int
    mean_probs: np.ndarray
    per_class_std: np.ndarray
    uncertainty: float
    n_passes: int


@dataclass(frozen=True)
class UncertaintySummary:
    mean_uncertainty: float
    per_segment: list[UncertaintyReport]


@dataclass(frozen=True)
class FoldUncertainty:
    fold: int
    train_mean_uncertainty: float
    test_mean_uncertainty: float
    n_test: int
    n_train_sampled: int


def summarize_passes(probs) -> UncertaintyReport:
    """Report for one input from its ``(n_passes, n_classes)`` softmax outputs.

    Columns are sorted before reducing so the result does not depend on
    pass order. With two classes the columns are complementary and both
    get the spread of the AF column.
    """
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim != 2 or p.shape[0] < 1:
        raise ValueError("need at least one pass of class probabilities")
    p = np.sort(p, axis=0)
    mean = p.mean(axis=0)
    std = np.sqrt(np.mean((p - mean) ** 2, axis=0))
    std[np.all(p == p[0], axis=0)] = 0.0
    if p.shape[1] == 2:
        std = np.full(2, std[Label.AF])
    prediction = int(np.argmax(mean))  # first maximum wins ties
    return UncertaintyReport(prediction, mean, std, float(np.mean(std)), p.shape[0])


def pass_probabilities(x, params: dn.ParamStore, config: ModelConfig, n_passes: int = DEFAULT_PASSES,
                       rng=None) -> np.ndarray:
    """Softmax outputs of shape ``(n_passes, n_inputs, n_classes)``.

    All latent noise is drawn up front as ``(n_passes, n_inputs, latent)``
    so results do not depend on internal chunking.
    """
    if n_passes < 1:
        raise ValueError("n_passes must be at least 1")
    xb = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    eps = rng.standard_normal((n_passes, len(xb), config.latent_dim))
    out = np.empty((n_passes, len(xb), config.n_classes))
    for lo in range(0, len(xb), _CHUNK):
        hi = min(lo + _CHUNK, len(xb))
        latent = encode(xb[lo:hi], params, config)
        for p in range(n_passes):
            out[p, lo:hi] = head_probs(latent, params, config, eps=eps[p, lo:hi])
    return out


def predict_with_uncertainty(x, params: dn.ParamStore, config: ModelConfig,
                             n_passes: int = DEFAULT_PASSES, rng=None) -> UncertaintyReport:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("predict_with_uncertainty takes one segment; use predict_batch")
    return summarize_passes(pass_probabilities(x, params, config, n_passes, rng)[:, 0])


def predict_batch(X, params: dn.ParamStore, config: ModelConfig, n_passes: int = DEFAULT_PASSES,
                  rng=None) -> list[UncertaintyReport]:
    probs = pass_probabilities(X, params, config, n_passes, rng)
    return [summarize_passes(probs[:, i]) for i in range(probs.shape[1])]


def dataset_uncertainty_summary(params: dn.ParamStore, config: ModelConfig, X,
                                n_passes: int = DEFAULT_PASSES, rng=None) -> UncertaintySummary:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or len(X) == 0:
        raise ValueError("need a non-empty (n_segments, input_len) array")
    reports = predict_batch(X, params, config, n_passes, rng)
    return UncertaintySummary(float(np.mean([r.uncertainty for r in reports])), reports)


def train_vs_test_report(fold_results: Sequence, X, fold_plan: FoldPlan, n_passes: int = DEFAULT_PASSES,
                         seed: int = 0) -> list[FoldUncertainty]:
    """Per fold: mean uncertainty on the whole held-out fold versus an
    equally sized seeded random sample of that fold's training data."""
    from .train import load_fold_model

    X = np.asarray(X, dtype=np.float64)
    rows = []
    for result in fold_results:
        fold = result.fold_index
        if result.checkpoint is None or not Path(result.checkpoint).is_file():
            raise FileNotFoundError(f"missing checkpoint for fold {fold}: {result.checkpoint}")
        params, config = load_fold_model(result.checkpoint)
        test_idx = fold_plan.test_indices(fold)
        train_idx = fold_plan.train_indices(fold)
        rng = np.random.default_rng([seed, fold])
        sampled = rng.choice(train_idx, size=min(len(test_idx), len(train_idx)), replace=False)
        test = dataset_uncertainty_summary(params, config, X[test_idx], n_passes, rng)
        train = dataset_uncertainty_summary(params, config, X[sampled], n_passes, rng)
        rows.append(FoldUncertainty(fold, train.mean_uncertainty, test.mean_uncertainty,
                                    len(test_idx), len(sampled)))
    return rows


def _csv_text(header: Sequence[str], rows: Sequence[Sequence]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def fold_summary_csv(rows: Sequence[FoldUncertainty]) -> str:
    return _csv_text(
        ["fold", "train_mean_uncertainty", "test_mean_uncertainty"],
        [[r.fold, repr(r.train_mean_uncertainty), repr(r.test_mean_uncertainty)] for r in rows],
    )


def report_csv(segment_ids: Sequence[str], labels: Sequence, reports: Sequence[UncertaintyReport]) -> str:
    """Per-segment rows; ``label`` may be None when the truth is unknown."""
    rows = []
    for sid, lab, r in zip(segment_ids, labels, reports):
        rows.append([
            sid,
            "" if lab is None else str(Label(int(lab))),
            str(Label(r.prediction)),
            repr(float(r.mean_probs[Label.AF])),
            repr(float(r.mean_probs[Label.NORMAL])),
            repr(r.uncertainty),
        ])
    return _csv_text(["segment_id", "label", "prediction", "prob_af_mean", "prob_normal_mean", "uncertainty"],
                     rows)
