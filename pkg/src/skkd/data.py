"""EEG ingestion, preprocessing, montages, splits and paired mini-batches.

All arrays handed around here are float32 microvolts.  Preprocessing runs in
float64 internally and casts back on the way out, so containers round-trip
bit-exactly.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterator, Mapping, Sequence

import numpy as np
from scipy import signal as sps

FORMAT_VERSION = 1
CANONICAL_FS = 128.0
BAND = (4.0, 38.0)
MONTAGE_DIR = Path(__file__).parent / "montages"


class IngestionError(ValueError):
    """Malformed or inconsistent container."""


class MontageError(ValueError):
    pass


class EpochingError(ValueError):
    pass


class SplitError(ValueError):
    pass


def _check_unique(names: Sequence[str], what: str = "channel") -> None:
    seen = set()
    for n in names:
        if n in seen:
            raise IngestionError(f"duplicate {what} name {n!r} in channel_names")
        seen.add(n)


@dataclass(frozen=True, eq=False)
class RawRecording:
    signal: np.ndarray  # channels x samples
    fs: float
    channel_names: tuple[str, ...]
    events: tuple[tuple[int, int], ...]  # (onset_sample, event_code)
    subject_id: str = ""
    session_id: str = ""

    def __post_init__(self):
        object.__setattr__(self, "signal", np.ascontiguousarray(self.signal, dtype=np.float32))
        object.__setattr__(self, "channel_names", tuple(self.channel_names))
        object.__setattr__(self, "events", tuple((int(o), int(c)) for o, c in self.events))
        if self.signal.ndim != 2:
            raise IngestionError("signal must be channels x samples")
        if not self.fs > 0:
            raise IngestionError(f"fs must be positive, got {self.fs}")
        if len(self.channel_names) != self.signal.shape[0]:
            raise IngestionError(
                f"channel_names has {len(self.channel_names)} entries, signal has {self.signal.shape[0]} channels"
            )
        _check_unique(self.channel_names)
        prev = -1
        for onset, _ in self.events:
            if onset <= prev or not 0 <= onset < self.signal.shape[1]:
                raise IngestionError(f"event onsets must be strictly increasing and inside the signal (onset {onset})")
            prev = onset

    @property
    def n_samples(self) -> int:
        return self.signal.shape[1]

    def __eq__(self, other):
        if not isinstance(other, RawRecording):
            return NotImplemented
        return (
            self.fs == other.fs
            and self.channel_names == other.channel_names
            and self.events == other.events
            and self.subject_id == other.subject_id
            and self.session_id == other.session_id
            and np.array_equal(self.signal, other.signal)
        )


@dataclass(frozen=True, eq=False)
class EpochedDataset:
    trials: np.ndarray  # n_trials x n_channels x n_samples
    labels: np.ndarray
    fs: float
    channel_names: tuple[str, ...]
    subject_id: str = ""
    session_id: str = ""
    n_classes: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "trials", np.ascontiguousarray(self.trials, dtype=np.float32))
        object.__setattr__(self, "labels", np.asarray(self.labels, dtype=np.int64).reshape(-1))
        object.__setattr__(self, "channel_names", tuple(self.channel_names))
        if self.trials.ndim != 3:
            raise IngestionError("trials must be n_trials x n_channels x n_samples")
        if len(self.labels) != self.trials.shape[0]:
            raise IngestionError(f"{len(self.labels)} labels for {self.trials.shape[0]} trials")
        if len(self.channel_names) != self.trials.shape[1]:
            raise IngestionError(
                f"channel_names has {len(self.channel_names)} entries, trials have {self.trials.shape[1]} channels"
            )
        if not self.fs > 0:
            raise IngestionError(f"fs must be positive, got {self.fs}")
        _check_unique(self.channel_names)
        if self.n_classes is None:
            object.__setattr__(self, "n_classes", int(self.labels.max()) + 1 if len(self.labels) else 0)
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise IngestionError(f"labels must lie in [0, {self.n_classes})")

    @property
    def n_trials(self) -> int:
        return self.trials.shape[0]

    @property
    def n_channels(self) -> int:
        return self.trials.shape[1]

    @property
    def n_samples(self) -> int:
        return self.trials.shape[2]

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.n_classes)

    def subset(self, indices) -> "EpochedDataset":
        idx = np.asarray(indices, dtype=np.int64)
        return dataclasses.replace(self, trials=self.trials[idx], labels=self.labels[idx])

    def __eq__(self, other):
        if not isinstance(other, EpochedDataset):
            return NotImplemented
        return (
            self.fs == other.fs
            and self.channel_names == other.channel_names
            and self.subject_id == other.subject_id
            and self.session_id == other.session_id
            and self.n_classes == other.n_classes
            and np.array_equal(self.labels, other.labels)
            and np.array_equal(self.trials, other.trials)
        )


def concatenate(datasets: Sequence[EpochedDataset], subject_id: str = "", session_id: str = "") -> EpochedDataset:
    """Stack trials of several datasets sharing channels, fs and trial length."""
    first = datasets[0]
    for d in datasets[1:]:
        if d.channel_names != first.channel_names or d.fs != first.fs or d.n_samples != first.n_samples:
            raise IngestionError("datasets to concatenate must share channels, fs and trial length")
    return EpochedDataset(
        trials=np.concatenate([d.trials for d in datasets]),
        labels=np.concatenate([d.labels for d in datasets]),
        fs=first.fs,
        channel_names=first.channel_names,
        subject_id=subject_id,
        session_id=session_id,
        n_classes=max(d.n_classes for d in datasets),
    )


# --------------------------------------------------------------------------
# montages


@dataclass(frozen=True)
class Montage:
    name: str
    channels: tuple[str, ...]
    parent_indices: tuple[int, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(self.channels))
        if len(set(self.channels)) != len(self.channels):
            raise MontageError(f"montage {self.name!r} repeats a channel")
        if self.parent_indices is not None:
            object.__setattr__(self, "parent_indices", tuple(int(i) for i in self.parent_indices))
            if len(self.parent_indices) != len(self.channels):
                raise MontageError("parent_indices must have one entry per channel")

    def __len__(self):
        return len(self.channels)

    def within(self, parent: "Montage | Sequence[str]") -> "Montage":
        """Bind this montage to a parent channel list, resolving parent_indices."""
        names = parent.channels if isinstance(parent, Montage) else tuple(parent)
        lookup = {n: i for i, n in enumerate(names)}
        idx = []
        for ch in self.channels:
            if ch not in lookup:
                raise MontageError(f"unknown channel {ch}")
            idx.append(lookup[ch])
        return Montage(self.name, self.channels, tuple(idx))


def read_montage(path: str | Path, name: str | None = None) -> Montage:
    """Plain text, one channel per line, ``#`` starts a comment."""
    path = Path(path)
    channels = []
    for line in path.read_text(encoding="utf-8").splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            channels.append(line)
    return Montage(name or path.stem, tuple(channels))


def write_montage(m: Montage, path: str | Path) -> None:
    Path(path).write_text("".join(f"{ch}\n" for ch in m.channels), encoding="utf-8")


def load_montage(name_or_path: str, search: Sequence[str | Path] = ()) -> Montage:
    """Resolve a montage by file path, then by name in ``search`` dirs, then the bundled defaults."""
    p = Path(name_or_path)
    if p.suffix and p.is_file():
        return read_montage(p)
    for d in [*search, MONTAGE_DIR]:
        candidate = Path(d) / f"{name_or_path}.txt"
        if candidate.is_file():
            return read_montage(candidate, name_or_path)
    raise MontageError(f"no montage named {name_or_path!r}")


def select_montage(d: EpochedDataset, m: Montage) -> EpochedDataset:
    bound = m.within(d.channel_names)
    return dataclasses.replace(
        d, trials=d.trials[:, list(bound.parent_indices), :], channel_names=bound.channels
    )


# --------------------------------------------------------------------------
# container format
#
# <stem>.hdr: UTF-8 "key = value" lines; <stem>.f32: little-endian float32,
# trial-major [trial][channel][sample] (raw: [channel][sample]).

_EPOCHED_KEYS = ("format_version", "kind", "subject_id", "session_id", "fs", "channel_names",
                 "n_trials", "n_samples", "n_classes", "labels")
_RAW_KEYS = ("format_version", "kind", "subject_id", "session_id", "fs", "channel_names",
             "n_samples", "events")


def _stem(path: str | Path) -> Path:
    path = Path(path)
    return path.with_suffix("") if path.suffix in (".hdr", ".f32") else path


def write_container(obj: EpochedDataset | RawRecording, path: str | Path) -> Path:
    """Write ``obj`` as ``<path>.hdr`` + ``<path>.f32``; returns the header path."""
    stem = _stem(path)
    stem.parent.mkdir(parents=True, exist_ok=True)
    header = {
        "format_version": str(FORMAT_VERSION),
        "subject_id": obj.subject_id,
        "session_id": obj.session_id,
        "fs": repr(float(obj.fs)),
        "channel_names": ",".join(obj.channel_names),
    }
    if isinstance(obj, EpochedDataset):
        header.update(
            kind="epoched",
            n_trials=str(obj.n_trials),
            n_samples=str(obj.n_samples),
            n_classes=str(obj.n_classes),
            labels=",".join(str(int(v)) for v in obj.labels),
        )
        payload = obj.trials
    elif isinstance(obj, RawRecording):
        header.update(
            kind="raw",
            n_samples=str(obj.n_samples),
            events=",".join(f"{o}:{c}" for o, c in obj.events),
        )
        payload = obj.signal
    else:
        raise TypeError(f"cannot write {type(obj).__name__}")
    for k in ("subject_id", "session_id"):
        if any(ch in header[k] for ch in ",\n="):
            raise IngestionError(f"header field {k} contains a forbidden character")
    if any("," in n or "\n" in n or not n.strip() for n in obj.channel_names):
        raise IngestionError("channel names must be non-empty and free of commas")
    hdr = stem.with_suffix(".hdr")
    hdr.write_text("".join(f"{k} = {header[k]}\n" for k in sorted(header)), encoding="utf-8")
    stem.with_suffix(".f32").write_bytes(payload.astype("<f4").tobytes(order="C"))
    return hdr


def _parse_header(text: str) -> dict[str, str]:
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        if "=" not in line:
            raise IngestionError(f"malformed header line {lineno}: {line!r}")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def _int_field(h, key):
    try:
        return int(h[key])
    except KeyError:
        raise IngestionError(f"header is missing field {key!r}") from None
    except ValueError:
        raise IngestionError(f"header field {key!r} is not an integer: {h[key]!r}") from None


def _split_list(value: str) -> list[str]:
    return [v for v in value.split(",")] if value else []


def load_container(path: str | Path) -> EpochedDataset | RawRecording:
    stem = _stem(path)
    hdr_path, payload_path = stem.with_suffix(".hdr"), stem.with_suffix(".f32")
    h = _parse_header(hdr_path.read_text(encoding="utf-8"))
    version = _int_field(h, "format_version")
    if version != FORMAT_VERSION:
        raise IngestionError(f"unknown format_version {version}")
    kind = h.get("kind", "epoched")
    required = _EPOCHED_KEYS if kind == "epoched" else _RAW_KEYS if kind == "raw" else None
    if required is None:
        raise IngestionError(f"unknown kind {kind!r}")
    for key in required:
        if key not in h:
            raise IngestionError(f"header is missing field {key!r}")
    try:
        fs = float(h["fs"])
    except ValueError:
        raise IngestionError(f"header field 'fs' is not a number: {h['fs']!r}") from None
    names = _split_list(h["channel_names"])
    _check_unique(names)
    n_samples = _int_field(h, "n_samples")
    raw = payload_path.read_bytes()
    data = np.frombuffer(raw, dtype="<f4")

    if kind == "epoched":
        n_trials = _int_field(h, "n_trials")
        expected = n_trials * len(names) * n_samples
        if data.size * 4 != len(raw) or data.size != expected:
            raise IngestionError(
                f"payload size mismatch: {len(raw)} bytes, header implies {expected * 4} "
                f"(n_trials={n_trials}, channels={len(names)}, n_samples={n_samples})"
            )
        try:
            labels = np.array([int(v) for v in _split_list(h["labels"])], dtype=np.int64)
        except ValueError:
            raise IngestionError("header field 'labels' must be comma-separated integers") from None
        if labels.size != n_trials:
            raise IngestionError(f"header field 'labels' has {labels.size} entries, n_trials is {n_trials}")
        return EpochedDataset(
            trials=data.reshape(n_trials, len(names), n_samples).astype(np.float32),
            labels=labels,
            fs=fs,
            channel_names=tuple(names),
            subject_id=h["subject_id"],
            session_id=h["session_id"],
            n_classes=_int_field(h, "n_classes"),
        )

    expected = len(names) * n_samples
    if data.size != expected:
        raise IngestionError(f"payload size mismatch: {len(raw)} bytes, header implies {expected * 4}")
    try:
        events = [tuple(int(x) for x in e.split(":")) for e in _split_list(h["events"])]
    except ValueError:
        raise IngestionError("header field 'events' must be onset:code pairs") from None
    return RawRecording(
        signal=data.reshape(len(names), n_samples).astype(np.float32),
        fs=fs,
        channel_names=tuple(names),
        events=tuple(events),
        subject_id=h["subject_id"],
        session_id=h["session_id"],
    )


# --------------------------------------------------------------------------
# preprocessing


def resample(x: np.ndarray, fs_src: float, fs_dst: float) -> np.ndarray:
    """Polyphase rational resampling along the last axis.

    Output length is ``round(n * fs_dst / fs_src)``.
    """
    if not (fs_src > 0 and fs_dst > 0):
        raise ValueError(f"sampling rates must be positive (got {fs_src}, {fs_dst})")
    x = np.asarray(x)
    if fs_src == fs_dst:
        return x.copy()
    ratio = Fraction(fs_dst / fs_src).limit_denominator(10_000)
    n_out = int(round(x.shape[-1] * fs_dst / fs_src))
    y = sps.resample_poly(x.astype(np.float64), ratio.numerator, ratio.denominator, axis=-1)
    if y.shape[-1] < n_out:
        pad = [(0, 0)] * (y.ndim - 1) + [(0, n_out - y.shape[-1])]
        y = np.pad(y, pad, mode="edge")
    return y[..., :n_out].astype(x.dtype if x.dtype.kind == "f" else np.float64)


def bandpass(x: np.ndarray, low: float, high: float, fs: float, order: int = 4) -> np.ndarray:
    """Zero-phase Butterworth band-pass along the last axis."""
    if not 0 < low < high < fs / 2:
        raise ValueError(f"band [{low}, {high}] Hz must satisfy 0 < low < high < fs/2 = {fs / 2}")
    x = np.asarray(x)
    sos = sps.butter(order, [low, high], btype="bandpass", fs=fs, output="sos")
    y = sps.sosfiltfilt(sos, x.astype(np.float64), axis=-1)
    return y.astype(x.dtype if x.dtype.kind == "f" else np.float64)


def preprocess(rec: RawRecording, fs: float = CANONICAL_FS, band: tuple[float, float] = BAND) -> RawRecording:
    """Resample to ``fs`` (event onsets rescaled), then band-pass."""
    sig = resample(rec.signal, rec.fs, fs)
    scale = fs / rec.fs
    events = []
    for onset, code in rec.events:
        new = min(int(round(onset * scale)), sig.shape[1] - 1)
        if events and new <= events[-1][0]:
            new = events[-1][0] + 1
        events.append((new, code))
    sig = bandpass(sig, band[0], band[1], fs)
    return RawRecording(sig, fs, rec.channel_names, tuple(events), rec.subject_id, rec.session_id)


def epoch(
    rec: RawRecording,
    window_start_s: float,
    window_len_s: float,
    class_map: Mapping[int, int],
    n_classes: int | None = None,
) -> EpochedDataset:
    """Cut one trial per event whose code is in ``class_map``, in onset order."""
    n = int(round(window_len_s * rec.fs))
    offset = int(round(window_start_s * rec.fs))
    trials, labels = [], []
    for k, (onset, code) in enumerate(rec.events):
        if code not in class_map:
            continue
        start = onset + offset
        if start < 0 or start + n > rec.n_samples:
            raise EpochingError(
                f"event {k} (code {code}, onset {onset}) window [{start}, {start + n}) "
                f"exceeds signal of {rec.n_samples} samples"
            )
        trials.append(rec.signal[:, start:start + n])
        labels.append(class_map[code])
    if n_classes is None:
        n_classes = max(class_map.values()) + 1
    trials_arr = np.stack(trials) if trials else np.zeros((0, len(rec.channel_names), n), np.float32)
    return EpochedDataset(trials_arr, np.array(labels, dtype=np.int64), rec.fs, rec.channel_names,
                          rec.subject_id, rec.session_id, n_classes)


# --------------------------------------------------------------------------
# splits and batches


def split_train_val(d: EpochedDataset, frac: float, seed: int) -> tuple[EpochedDataset, EpochedDataset]:
    """Class-balanced validation split.

    The validation set gets ``floor(frac * n_trials / n_classes)`` trials of
    every class; everything else stays in train.  Order inside each part follows
    the original trial order.
    """
    if not 0 <= frac < 1:
        raise SplitError(f"val fraction must lie in [0, 1), got {frac}")
    counts = d.class_counts()
    if np.any(counts == 0):
        raise SplitError(f"classes {np.flatnonzero(counts == 0).tolist()} have no trials")
    per_class = int(np.floor(frac * d.n_trials / d.n_classes + 1e-9))
    per_class = min(per_class, int(counts.min()))
    rng = np.random.default_rng(seed)
    val = []
    for c in range(d.n_classes):
        idx = np.flatnonzero(d.labels == c)
        val.extend(rng.permutation(idx)[:per_class].tolist())
    val_idx = np.sort(np.array(val, dtype=np.int64))
    train_idx = np.setdiff1d(np.arange(d.n_trials), val_idx)
    return d.subset(train_idx), d.subset(val_idx)


@dataclass(frozen=True, eq=False)
class PairedBatch:
    x_teacher: np.ndarray
    x_student: np.ndarray
    y: np.ndarray
    trial_indices: np.ndarray

    def __len__(self):
        return len(self.y)


def paired_batches(
    d_hd: EpochedDataset,
    m_student: Montage,
    batch_size: int,
    shuffle_seed: int | None,
) -> Iterator[PairedBatch]:
    """One pass over ``d_hd`` in seeded random order; the last batch may be short.

    ``shuffle_seed=None`` keeps the stored trial order.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    idx = m_student.within(d_hd.channel_names).parent_indices
    order = (np.arange(d_hd.n_trials) if shuffle_seed is None
             else np.random.default_rng(shuffle_seed).permutation(d_hd.n_trials))
    for start in range(0, d_hd.n_trials, batch_size):
        rows = order[start:start + batch_size]
        xt = d_hd.trials[rows]
        yield PairedBatch(xt, xt[:, list(idx), :], d_hd.labels[rows], rows)


# --------------------------------------------------------------------------
# synthetic data for smoke runs


def synthetic_dataset(
    n_trials: int = 64,
    n_classes: int = 3,
    channel_names: Sequence[str] | None = None,
    n_samples: int = 256,
    fs: float = CANONICAL_FS,
    seed: int = 0,
    subject_id: str = "SYN",
    session_id: str = "T",
    noise: float = 1.0,
) -> EpochedDataset:
    """Motor-imagery-like toy data: each class modulates a 10-14 Hz rhythm on its own channel group."""
    if channel_names is None:
        channel_names = tuple(read_montage(MONTAGE_DIR / "22.txt").channels)
    channel_names = tuple(channel_names)
    rng = np.random.default_rng(seed)
    n_ch = len(channel_names)
    t = np.arange(n_samples) / fs
    # fixed class patterns (independent of session seed) so sessions share structure
    pattern_rng = np.random.default_rng(12345)
    patterns = pattern_rng.normal(size=(n_classes, n_ch))
    freqs = 10.0 + 4.0 * np.arange(n_classes) / max(n_classes - 1, 1)
    labels = np.arange(n_trials) % n_classes
    rng.shuffle(labels)
    trials = rng.normal(scale=noise, size=(n_trials, n_ch, n_samples))
    for i, y in enumerate(labels):
        phase = rng.uniform(0, 2 * np.pi)
        rhythm = np.sin(2 * np.pi * freqs[y] * t + phase)
        trials[i] += 1.5 * patterns[y][:, None] * rhythm[None, :]
    return EpochedDataset(trials.astype(np.float32), labels, fs, channel_names, subject_id, session_id, n_classes)
