"""Synthetic single-lead ECG windows for the two rhythm classes.

Normal rhythm: near-constant RR intervals and a P wave ahead of every
QRS complex. AF: strongly irregular RR intervals, no P wave, plus a
4-9 Hz fibrillatory baseline. Waveforms are sums of Gaussian bumps;
they only need to carry the class-separating structure.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import EcgRecord, Label, Segment, write_manifest, write_record

SAMPLING_RATE_HZ = 250
WINDOW_SECONDS = 5.0
N_SAMPLES = int(SAMPLING_RATE_HZ * WINDOW_SECONDS)
MIN_RR_S = 0.3

# (offset from R peak in s, amplitude in mV, gaussian width in s)
_QRS_T = ((-0.025, -0.12, 0.008), (0.0, 1.0, 0.010), (0.025, -0.22, 0.008), (0.25, 0.30, 0.045))
_P_WAVE = (-0.16, 0.15, 0.022)
FIB_BAND_HZ = (4.0, 9.0)


@dataclass(frozen=True)
class SynthConfig:
    n_segments: int = 2000
    class_mix: float = 0.5
    noise_sigma_mv: float = 0.05
    mean_rr_s: float = 0.8
    rr_jitter_normal_s: float = 0.02
    rr_jitter_af_s: float = 0.18
    fib_wave_amp_mv: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.n_segments < 1:
            raise ValueError("n_segments must be positive")
        if not 0.0 <= self.class_mix <= 1.0:
            raise ValueError("class_mix must lie in [0, 1]")
        if self.mean_rr_s <= 0:
            raise ValueError("mean_rr_s must be positive")
        for name in ("noise_sigma_mv", "rr_jitter_normal_s", "rr_jitter_af_s", "fib_wave_amp_mv"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if not self.rr_jitter_af_s > self.rr_jitter_normal_s:
            raise ValueError("rr_jitter_af_s must exceed rr_jitter_normal_s")

    def n_af(self) -> int:
        return int(np.floor(self.class_mix * self.n_segments + 0.5))


def _beat_times(rng: np.random.Generator, mean_rr: float, jitter: float, duration: float) -> np.ndarray:
    t = -rng.uniform(0.0, mean_rr)
    times = []
    # start early and run late so edge beats still contribute their tails
    while t < duration + 0.5:
        times.append(t)
        t += max(MIN_RR_S, mean_rr + jitter * rng.standard_normal())
    return np.array(times)


def _bumps(t: np.ndarray, centers: np.ndarray, amp: float, width: float) -> np.ndarray:
    d = t[:, None] - centers[None, :]
    return amp * np.exp(-0.5 * (d / width) ** 2).sum(axis=1)


def generate_segment(config: SynthConfig, label, rng: np.random.Generator,
                     record_id: str = "synth", start_index: int = 0) -> Segment:
    """One 5 s window at 250 Hz. Noise is drawn last, so equal rng states
    give the same clean waveform regardless of ``noise_sigma_mv``."""
    label = Label.parse(label) if not isinstance(label, Label) else label
    af = label == Label.AF
    t = np.arange(N_SAMPLES) / SAMPLING_RATE_HZ
    jitter = config.rr_jitter_af_s if af else config.rr_jitter_normal_s
    beats = _beat_times(rng, config.mean_rr_s, jitter, WINDOW_SECONDS)

    x = np.zeros(N_SAMPLES)
    for offset, amp, width in _QRS_T:
        x += _bumps(t, beats + offset, amp, width)
    if af:
        freq = rng.uniform(*FIB_BAND_HZ)
        phase = rng.uniform(0.0, 2 * np.pi)
        x += config.fib_wave_amp_mv * np.sin(2 * np.pi * freq * t + phase)
    else:
        offset, amp, width = _P_WAVE
        x += _bumps(t, beats + offset, amp, width)
    x += config.noise_sigma_mv * rng.standard_normal(N_SAMPLES)

    peaks = np.round(beats * SAMPLING_RATE_HZ).astype(np.int64)
    peaks = np.unique(peaks[(peaks >= 0) & (peaks < N_SAMPLES)])
    annotations = [(int(p), af) for p in peaks]
    frac = (1.0 if af else 0.0) if annotations else 0.0
    return Segment(record_id, start_index, x, frac, label, annotations)


def segment_rngs(seed: int, n: int) -> list[np.random.Generator]:
    """Independent per-segment streams split from one seed."""
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


def dataset_labels(config: SynthConfig) -> np.ndarray:
    n_af = config.n_af()
    labels = np.array([Label.AF] * n_af + [Label.NORMAL] * (config.n_segments - n_af), dtype=np.int64)
    order = np.random.default_rng([config.seed, 0x5EED]).permutation(config.n_segments)
    return labels[order]


def generate_dataset(config: SynthConfig, record_id: str = "synth") -> list[Segment]:
    """``n_segments`` windows laid end to end (start_index = i * 1250), classes shuffled."""
    labels = dataset_labels(config)
    rngs = segment_rngs(config.seed, config.n_segments)
    return [generate_segment(config, Label(int(lab)), rng, record_id, i * N_SAMPLES)
            for i, (lab, rng) in enumerate(zip(labels, rngs))]


def to_record(segments: list[Segment], record_id: str = "synth") -> EcgRecord:
    """Concatenate consecutive windows into one record; annotations shifted to absolute indices."""
    samples = np.concatenate([s.samples for s in segments])
    annotations, offset = [], 0
    for s in segments:
        annotations.extend((offset + i, af) for i, af in s.annotations)
        offset += len(s.samples)
    return EcgRecord(record_id, SAMPLING_RATE_HZ, samples, annotations)


def write_dataset(segments: list[Segment], out_dir, record_id: str = "synth", **manifest_extra):
    """Write one record plus a manifest so ``load_dataset`` recovers the same windows."""
    write_record(to_record(segments, record_id), f"{out_dir}/{record_id}")
    return write_manifest(out_dir, [record_id], WINDOW_SECONDS, 0.5, **manifest_extra)


def rr_intervals(segment: Segment) -> np.ndarray:
    peaks = np.array([i for i, _ in segment.annotations], dtype=float)
    return np.diff(peaks) / SAMPLING_RATE_HZ
