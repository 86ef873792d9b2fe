"""Adam training and k-fold cross-validation of the VAE classifier."""

from __future__ import annotations

import csv
import io
import json
import logging
import os
from collections.abc import Callable
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import diffnet as dn
from .dataset import FoldPlan, make_folds
from .loss import LossBreakdown, objective
from .metrics import confusion, summarize
from .model import ModelConfig, build_graph, init_params
from .uncertainty import predict_batch

log = logging.getLogger(__name__)

LOG_COLUMNS = ["epoch", "mean_total", "mean_classifier", "mean_reconstruction", "mean_kl",
               "test_accuracy", "test_sensitivity", "test_specificity"]


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10
    batch_size: int = 128
    learning_rate: float = 0.001
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    k_folds: int = 10
    seed: int = 0
    classifier_weight: float = 10.0
    eval_passes: int = 5
    patience: int | None = None  # early stopping on training loss; off by default

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.k_folds < 1:
            raise ValueError("epochs, batch_size and k_folds must be positive")
        if self.learning_rate <= 0 or self.adam_eps <= 0 or self.classifier_weight <= 0:
            raise ValueError("learning_rate, adam_eps and classifier_weight must be positive")
        if not (0 < self.adam_beta1 < 1 and 0 < self.adam_beta2 < 1):
            raise ValueError("Adam betas must lie strictly between 0 and 1")
        if self.eval_passes < 1:
            raise ValueError("eval_passes must be at least 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})


class Adam:
    """Bias-corrected Adam; moments are keyed by parameter path."""

    def __init__(self, config: TrainConfig):
        self.lr = config.learning_rate
        self.beta1 = config.adam_beta1
        self.beta2 = config.adam_beta2
        self.eps = config.adam_eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.step_count = 0

    def step(self, params: dn.ParamStore) -> None:
        """Apply one update from ``params.grads`` and zero the gradients."""
        if not params.has_grads:
            raise RuntimeError("Adam step requested before any backward pass")
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for path, theta in params.values.items():
            g = params.grads[path]
            if path not in self.m:
                self.m[path] = np.zeros_like(theta)
                self.v[path] = np.zeros_like(theta)
            m, v = self.m[path], self.v[path]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            theta -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
        params.zero_grad()


@dataclass
class EpochRecord:
    epoch: int
    loss: LossBreakdown
    test_metrics: dict


@dataclass
class FoldResult:
    fold_index: int
    sensitivity: float
    specificity: float
    accuracy: float
    loss_curve: list[LossBreakdown]
    epochs: list[EpochRecord]
    checkpoint: str | None
    train_indices: np.ndarray = field(repr=False)
    test_indices: np.ndarray = field(repr=False)
    params: dn.ParamStore | None = field(default=None, repr=False)

    def metrics(self) -> dict:
        return {"sensitivity": self.sensitivity, "specificity": self.specificity, "accuracy": self.accuracy}


def _mean_breakdown(rows: list[tuple[int, LossBreakdown]], classifier_weight: float) -> LossBreakdown:
    n = sum(k for k, _ in rows)

    def avg(attr):
        return float(sum(k * getattr(b, attr) for k, b in rows) / n)

    return LossBreakdown(avg("classifier_term"), avg("reconstruction_term"), avg("kl_term"),
                         avg("total"), classifier_weight)


def evaluate(params: dn.ParamStore, config: ModelConfig, X, y, n_passes: int = 5, rng=None) -> dict:
    reports = predict_batch(X, params, config, n_passes, rng)
    cm = confusion([r.prediction for r in reports], y)
    return {**summarize(cm), "confusion": cm.to_dict()}


def train_epoch(params, opt, config, X, y, indices, train_config, rng, on_batch=None) -> LossBreakdown:
    order = rng.permutation(indices)
    rows = []
    for lo in range(0, len(order), train_config.batch_size):
        batch = order[lo:lo + train_config.batch_size]
        if on_batch is not None:
            on_batch(batch)
        graph = build_graph(X[batch], params, config, rng=rng)
        total, parts = objective(X[batch], graph, y[batch], train_config.classifier_weight)
        dn.backward(total, params)
        opt.step(params)
        rows.append((len(batch), parts))
    return _mean_breakdown(rows, train_config.classifier_weight)


def train_fold(X, y, fold_plan: FoldPlan, fold_index: int, model_config: ModelConfig,
               train_config: TrainConfig, out_dir=None,
               on_batch: Callable[[np.ndarray], None] | None = None) -> FoldResult:
    """Train on every fold except ``fold_index`` and score on ``fold_index``.

    With ``out_dir`` set, writes ``fold{i}.ckpt`` and ``fold{i}_log.csv``.
    Initialisation is seeded with ``seed + fold_index``.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if X.shape[1] != model_config.input_len:
        raise ValueError(f"inputs have length {X.shape[1]}, model expects {model_config.input_len}")
    train_idx = fold_plan.train_indices(fold_index)
    test_idx = fold_plan.test_indices(fold_index)
    if len(train_idx) == 0:
        raise ValueError(f"fold {fold_index} leaves no training data")

    seed = train_config.seed + fold_index
    params = init_params(model_config, seed)
    opt = Adam(train_config)
    rng = np.random.default_rng([seed, 1])
    epochs: list[EpochRecord] = []
    best, stale = np.inf, 0
    for epoch in range(train_config.epochs):
        parts = train_epoch(params, opt, model_config, X, y, train_idx, train_config, rng, on_batch)
        metrics = {}
        if len(test_idx):
            metrics = evaluate(params, model_config, X[test_idx], y[test_idx], train_config.eval_passes,
                               np.random.default_rng([seed, 2, epoch]))
        epochs.append(EpochRecord(epoch, parts, metrics))
        log.info("fold %d epoch %d total %.4f acc %s", fold_index, epoch, parts.total,
                 metrics.get("accuracy"))
        if train_config.patience is not None:
            if parts.total < best:
                best, stale = parts.total, 0
            else:
                stale += 1
                if stale >= train_config.patience:
                    break

    final = epochs[-1].test_metrics
    ckpt = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        ckpt = str(out_dir / f"fold{fold_index}.ckpt")
        save_fold_model(ckpt, params, model_config, train_config, fold_index)
        write_fold_log(out_dir / f"fold{fold_index}_log.csv", epochs)
    nan = float("nan")
    return FoldResult(fold_index, final.get("sensitivity", nan), final.get("specificity", nan),
                      final.get("accuracy", nan), [e.loss for e in epochs], epochs, ckpt,
                      train_idx, test_idx, params)


def cross_validate(X, y, model_config: ModelConfig, train_config: TrainConfig, out_dir=None,
                   fold_plan: FoldPlan | None = None) -> list[FoldResult]:
    """k independent folds, each from a fresh seeded initialisation."""
    if fold_plan is None:
        fold_plan = make_folds(len(X), train_config.k_folds, train_config.seed)
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        _atomic_text(Path(out_dir) / "folds.json", json.dumps(fold_plan.to_dict()))
    results = [train_fold(X, y, fold_plan, i, model_config, train_config, out_dir)
               for i in range(fold_plan.k)]
    if out_dir is not None:
        _atomic_text(Path(out_dir) / "summary.json", json.dumps(metrics_summary(results), indent=2))
    return results


def aggregate_metrics(results: list[FoldResult]) -> dict:
    """Unweighted mean over folds of each metric."""
    return {name: float(np.mean([getattr(r, name) for r in results]))
            for name in ("sensitivity", "specificity", "accuracy")}


def metrics_summary(results: list[FoldResult]) -> dict:
    return {
        "positive_class": "AF",
        "per_fold": [{"fold": r.fold_index, **r.metrics()} for r in results],
        "mean": aggregate_metrics(results),
    }


# ------------------------------------------------------------------ files


def _atomic_text(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _fmt(v) -> str:
    return "nan" if v is None or (isinstance(v, float) and np.isnan(v)) else repr(float(v))


def write_fold_log(path, epochs: list[EpochRecord]) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(LOG_COLUMNS)
    for e in epochs:
        m = e.test_metrics
        writer.writerow([e.epoch, _fmt(e.loss.total), _fmt(e.loss.classifier_term),
                         _fmt(e.loss.reconstruction_term), _fmt(e.loss.kl_term),
                         _fmt(m.get("accuracy")), _fmt(m.get("sensitivity")), _fmt(m.get("specificity"))])
    _atomic_text(Path(path), buf.getvalue())


def save_fold_model(path, params: dn.ParamStore, model_config: ModelConfig,
                    train_config: TrainConfig | None = None, fold_index: int | None = None) -> None:
    extra = {"model_config": model_config.to_dict()}
    if train_config is not None:
        extra["train_config"] = train_config.to_dict()
    if fold_index is not None:
        extra["fold_index"] = fold_index
    dn.save_checkpoint(path, params, extra)


def load_fold_model(path) -> tuple[dn.ParamStore, ModelConfig]:
    params, header = dn.load_checkpoint(path)
    if "model_config" not in header:
        raise ValueError(f"{path}: checkpoint has no model_config")
    config = ModelConfig.from_dict(header["model_config"])
    expected = init_params(config, 0)
    if set(expected.values) != set(params.values) or any(
            expected[k].shape != params[k].shape for k in expected):
        raise ValueError(f"{path}: parameters do not match the stored model_config")
    return params, config
