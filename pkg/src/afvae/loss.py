"""Training objective: weighted cross-entropy + reconstruction NLL + KL to N(0, I).

All three terms are computed per example and averaged over the batch,
so ``classifier_weight`` means the same thing at any batch size. Each
function accepts plain arrays or graph nodes and returns a graph node;
wrap with ``float()`` for a number.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffnet as dn
from .diffnet import Var

DEFAULT_CLASSIFIER_WEIGHT = 10.0


@dataclass(frozen=True)
class LossBreakdown:
    classifier_term: float
    reconstruction_term: float
    kl_term: float
    total: float
    classifier_weight: float = DEFAULT_CLASSIFIER_WEIGHT


def _batch_mean(per_example: Var) -> Var:
    return dn.mean_all(per_example) if per_example.value.ndim else per_example


def reconstruction_loss(x, x_hat) -> Var:
    """0.5 * sum (x - x_hat)^2 per example: unit-variance Gaussian NLL without the constant."""
    x, x_hat = dn.as_var(x), dn.as_var(x_hat)
    if x.value.shape != x_hat.value.shape:
        raise ValueError(f"reconstruction length mismatch: {x.value.shape} vs {x_hat.value.shape}")
    per_example = dn.scale(dn.sum_last(dn.square(dn.sub(x, x_hat))), 0.5)
    return _batch_mean(per_example)


def kl_divergence(mu, log_var) -> Var:
    """KL(N(mu, exp(log_var)) || N(0, I)) = -0.5 * sum(1 + log_var - mu^2 - exp(log_var))."""
    mu, log_var = dn.as_var(mu), dn.as_var(log_var)
    inner = dn.sub(dn.sub(dn.add(log_var, 1.0), dn.square(mu)), dn.exp(log_var))
    return _batch_mean(dn.scale(dn.sum_last(inner), -0.5))


def classifier_loss(probs, label) -> Var:
    """-ln probs[label]."""
    probs = dn.as_var(probs)
    label = np.asarray(label)
    n_classes = probs.value.shape[-1]
    if not np.issubdtype(label.dtype, np.integer) or np.any(label < 0) or np.any(label >= n_classes):
        raise ValueError(f"labels must be integers in [0, {n_classes})")
    picked = dn.take_last(probs, label)
    return _batch_mean(dn.scale(dn.log(picked), -1.0))


def objective(x, graph, label, classifier_weight: float = DEFAULT_CLASSIFIER_WEIGHT
              ) -> tuple[Var, LossBreakdown]:
    """Differentiable total plus its breakdown, from a :class:`afvae.model.Graph`."""
    ce = classifier_loss(graph.probs, label)
    rec = reconstruction_loss(np.asarray(x, dtype=float).reshape(graph.reconstruction.value.shape),
                              graph.reconstruction)
    kl = kl_divergence(graph.mu, graph.log_var)
    total = dn.add(dn.add(dn.scale(ce, classifier_weight), rec), kl)
    parts = LossBreakdown(float(ce), float(rec), float(kl), float(total), float(classifier_weight))
    return total, parts


def total_loss(x, forward_output, label, classifier_weight: float = DEFAULT_CLASSIFIER_WEIGHT
               ) -> LossBreakdown:
    """Loss breakdown for an already computed :class:`afvae.model.ForwardOutput`."""
    if classifier_weight <= 0:
        raise ValueError("classifier_weight must be positive")
    ce = float(classifier_loss(forward_output.probs, label))
    rec = float(reconstruction_loss(x, forward_output.reconstruction))
    kl = float(kl_divergence(forward_output.latent.mu, forward_output.latent.log_var))
    return LossBreakdown(ce, rec, kl, classifier_weight * ce + rec + kl, float(classifier_weight))
