"""Variational-autoencoder AF classifier with multi-pass aleatoric uncertainty."""

from .dataset import (EcgRecord, FoldPlan, Label, Segment, balance, load_dataset, load_record,
                      make_folds, normalize_segment, segment_record, to_arrays, write_record)
from .diffnet import ParamStore, backward, load_checkpoint, save_checkpoint
from .loss import LossBreakdown, classifier_loss, kl_divergence, reconstruction_loss, total_loss
from .metrics import ConfusionMatrix, accuracy, confusion, sensitivity, specificity
from .model import (ForwardOutput, LatentGaussian, ModelConfig, classify, decode, encode, forward,
                    init_params, sample_latent)
from .synth import SynthConfig, generate_dataset, generate_segment
from .train import Adam, FoldResult, TrainConfig, cross_validate, load_fold_model, train_fold
from .uncertainty import (UncertaintyReport, dataset_uncertainty_summary, predict_batch,
                          predict_with_uncertainty, train_vs_test_report)

__version__ = "0.1.0"
