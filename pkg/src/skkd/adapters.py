"""Dataset-specific readers used by ``skkd prepare``.

An adapter yields ``(stem, EpochedDataset)`` pairs; ``prepare`` writes each
as a container.  Register new readers with :func:`register`.
"""
from __future__ import annotations

from pathlib import Path
from typing import Callable, Iterator

import numpy as np

from .data import (EpochedDataset, RawRecording, epoch, preprocess, read_montage, MONTAGE_DIR,
                   synthetic_dataset)

ADAPTERS: dict[str, Callable[..., Iterator[tuple[str, EpochedDataset]]]] = {}

# BCIC-IV-2a cue codes: left hand, right hand, feet, tongue; 783 = cue of unknown class
BCIC_CLASS_MAP = {769: 0, 770: 1, 771: 2, 772: 3}
BCIC_UNKNOWN_CUE = 783


def register(name: str):
    def deco(fn):
        ADAPTERS[name] = fn
        return fn
    return deco


def recording_from_annotations(
    signal_volts: np.ndarray,
    fs: float,
    annotations: list[tuple[float, str]],
    channel_names,
    subject_id: str,
    session_id: str,
    true_labels: np.ndarray | None = None,
) -> RawRecording:
    """Build a RawRecording from GDF-style annotations (onset seconds, code string).

    Only cue events are kept.  Unknown-class cues are relabelled from
    ``true_labels`` (1-based, as distributed with the evaluation sessions).
    """
    cues = []
    for onset_s, desc in annotations:
        try:
            code = int(float(desc))
        except ValueError:
            continue
        if code in BCIC_CLASS_MAP or code == BCIC_UNKNOWN_CUE:
            cues.append((int(round(onset_s * fs)), code))
    cues.sort()
    if true_labels is not None:
        true_labels = np.asarray(true_labels).ravel().astype(int)
        if len(true_labels) != len(cues):
            raise ValueError(f"{len(true_labels)} true labels for {len(cues)} cues")
        cues = [(onset, 768 + int(lab)) for (onset, _), lab in zip(cues, true_labels)]
    signal = np.nan_to_num(np.asarray(signal_volts, dtype=np.float64) * 1e6)
    return RawRecording(signal, fs, tuple(channel_names), tuple(cues), subject_id, session_id)


@register("bcic4_2a")
def read_bcic4_2a(source: str | Path, subjects, sessions=("T", "E"), labels_dir: str | Path = "",
                  window_start: float = 0.0, window_length: float = 4.0, fs: float = 128.0,
                  band: tuple[float, float] = (4.0, 38.0), **_):
    """Read ``A0xT.gdf`` / ``A0xE.gdf`` with mne; true labels from ``A0xE.mat`` when given."""
    try:
        import mne
    except ImportError as exc:
        raise RuntimeError("the bcic4_2a adapter needs mne (pip install 'artifact[gdf]')") from exc
    from scipy.io import loadmat

    names = read_montage(MONTAGE_DIR / "22.txt").channels
    source = Path(source)
    for subject in subjects:
        for session in sessions:
            stem = f"{subject}{session}"
            raw = mne.io.read_raw_gdf(source / f"{stem}.gdf", preload=True, verbose="error")
            data = raw.get_data()[:22]
            annotations = [(float(a["onset"]), str(a["description"])) for a in raw.annotations]
            labels = None
            mat = Path(labels_dir) / f"{stem}.mat" if labels_dir else None
            if mat is not None and mat.is_file():
                labels = loadmat(mat)["classlabel"]
            rec = recording_from_annotations(data, float(raw.info["sfreq"]), annotations, names,
                                             subject, session, labels)
            rec = preprocess(rec, fs, band)
            yield stem, epoch(rec, window_start, window_length, BCIC_CLASS_MAP, n_classes=4)


@register("synthetic")
def synthetic_subjects(source="", subjects=("A01",), sessions=("T", "E"), n_trials: int = 288,
                       n_classes: int = 4, window_length: float = 4.0, fs: float = 128.0, **_):
    """Toy stand-in with the BCIC-IV-2a layout, for smoke-testing the pipeline."""
    for k, subject in enumerate(subjects):
        for j, session in enumerate(sessions):
            yield f"{subject}{session}", synthetic_dataset(
                n_trials, n_classes, n_samples=int(round(window_length * fs)), fs=fs,
                seed=1000 * k + j, subject_id=subject, session_id=session,
            )
