"""Convert MIT-BIH AFIB (PhysioNet ``afdb``) records into the record format.

Requires the optional ``wfdb`` package (``pip install afvae[physionet]``).

Choices made here, since the source database leaves them open:

* one channel is kept (``channel=0`` by default, the first ECG lead);
* beat positions come from the ``qrs`` annotator, the rhythm from the
  ``(AFIB``-style ``aux_note`` entries of the ``atr`` annotator; a beat is
  flagged AF when the rhythm in force at its sample is ``(AFIB``;
* samples missing in the source (NaN) are replaced with 0 mV.

Segment counts will not match published totals exactly: those depend on
channel and gap handling that is not documented in the source.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .dataset import EcgRecord

AF_RHYTHM = "(AFIB"


def _wfdb():
    try:
        import wfdb
    except ImportError as exc:  # pragma: no cover - exercised only without the extra
        raise RuntimeError("PhysioNet ingestion needs the optional 'wfdb' package") from exc
    return wfdb


def beat_flags(beat_samples: np.ndarray, rhythm_samples: np.ndarray, rhythm_notes) -> np.ndarray:
    """AF flag per beat from the rhythm annotation in force at that beat."""
    beat_samples = np.asarray(beat_samples, dtype=np.int64)
    rhythm_samples = np.asarray(rhythm_samples, dtype=np.int64)
    notes = [str(n).strip("\x00 ") for n in rhythm_notes]
    is_af = np.array([n == AF_RHYTHM for n in notes], dtype=bool)
    if not len(is_af):
        return np.zeros(len(beat_samples), dtype=bool)
    pos = np.searchsorted(rhythm_samples, beat_samples, side="right") - 1
    return (pos >= 0) & is_af[np.clip(pos, 0, None)]


def convert_record(source_dir, name: str, channel: int = 0, beat_annotator: str = "qrs",
                   rhythm_annotator: str = "atr") -> EcgRecord:
    wfdb = _wfdb()
    base = str(Path(source_dir) / name)
    rec = wfdb.rdrecord(base, channels=[channel])
    samples = np.nan_to_num(np.asarray(rec.p_signal[:, 0], dtype=np.float64), nan=0.0)
    beats = wfdb.rdann(base, beat_annotator)
    rhythm = wfdb.rdann(base, rhythm_annotator)
    notes = rhythm.aux_note if rhythm.aux_note is not None else [""] * len(rhythm.sample)
    keep = [i for i, n in enumerate(notes) if str(n).startswith("(")]
    flags = beat_flags(beats.sample, rhythm.sample[keep], [notes[i] for i in keep])
    idx = np.asarray(beats.sample, dtype=np.int64)
    valid = (idx >= 0) & (idx < len(samples))
    idx, flags = idx[valid], flags[valid]
    idx, first = np.unique(idx, return_index=True)
    annotations = list(zip(idx.tolist(), flags[first].tolist()))
    return EcgRecord(str(name), int(round(rec.fs)), samples, annotations)
