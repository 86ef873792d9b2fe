"""The fixed-seed synthetic benchmark used for regression floors.

2000 balanced segments at noise 0.05 mV, a 4-block model with latent 32,
10-fold cross-validation for 10 epochs. The CLI equivalent is::

    afvae synth --n 2000 --mix 0.5 --noise 0.05 --seed 7 --out data
    afvae train --data data --folds 10 --epochs 10 --batch 32 --seed 7 \\
        --res-blocks 4 --dense-widths 64 32 --no-normalize --out run
"""

from __future__ import annotations

import numpy as np

from . import dataset as ds
from . import synth
from .model import ModelConfig
from .train import TrainConfig

SEED = 7
SYNTH = synth.SynthConfig(n_segments=2000, class_mix=0.5, noise_sigma_mv=0.05, seed=SEED)
# raw millivolt input: per-segment z-scoring hides the noise level from the
# encoder, which then reads heavy noise as fibrillatory baseline
MODEL = ModelConfig(n_res_blocks=4, latent_dim=32, dense_branch_widths=(64, 32), normalize_input=False)
# batch 32 rather than 128: 10 epochs of 1800 segments give only ~140
# steps at 128, too few for this model to leave the collapsed-latent phase
TRAIN = TrainConfig(epochs=10, batch_size=32, learning_rate=1e-3, k_folds=10, seed=SEED)

NOISE_LEVELS = (0.05, 0.2, 0.4)
SWEEP_SEGMENTS = 300
SWEEP_SEED = 99


def arrays(config: synth.SynthConfig = SYNTH, normalize: bool | None = None) -> tuple[np.ndarray, np.ndarray]:
    if normalize is None:
        normalize = MODEL.normalize_input
    return ds.to_arrays(synth.generate_dataset(config), normalize=normalize)


def noise_sweep_sets(levels=NOISE_LEVELS, n_segments: int = SWEEP_SEGMENTS, seed: int = SWEEP_SEED) -> dict:
    """Evaluation sets that share clean waveforms and differ only in noise."""
    return {level: arrays(synth.SynthConfig(n_segments=n_segments, noise_sigma_mv=level, seed=seed))
            for level in levels}
