import numpy as np
import pytest
from hypothesis import given, strategies as st

from skkd.data import (EpochedDataset, EpochingError, IngestionError, Montage, MontageError, RawRecording,
                       SplitError, bandpass, concatenate, epoch, load_container, load_montage,
                       paired_batches, preprocess, read_montage, resample, select_montage,
                       split_train_val, synthetic_dataset, write_container, write_montage)


def small_set(n=24, classes=4, channels=("A", "B", "C", "D", "E"), samples=32, seed=0):
    rng = np.random.default_rng(seed)
    return EpochedDataset(rng.normal(size=(n, len(channels), samples)), np.arange(n) % classes, 128.0,
                          channels, "S01", "T", classes)


# --- containers ------------------------------------------------------------


def test_container_roundtrip_epoched(tmp_path):
    d = small_set()
    hdr = write_container(d, tmp_path / "s01t")
    back = load_container(hdr)
    assert back == d
    assert back.trials.tobytes() == d.trials.tobytes()
    assert (tmp_path / "s01t.f32").stat().st_size == d.trials.size * 4


def test_container_roundtrip_raw(tmp_path):
    rec = RawRecording(np.random.default_rng(1).normal(size=(3, 100)), 250.0, ("a", "b", "c"),
                       ((10, 769), (50, 770)), "S01", "E")
    assert load_container(write_container(rec, tmp_path / "raw")) == rec


def test_container_payload_size_mismatch(tmp_path):
    hdr = write_container(small_set(), tmp_path / "x")
    payload = tmp_path / "x.f32"
    payload.write_bytes(payload.read_bytes()[:-4])
    with pytest.raises(IngestionError, match="payload"):
        load_container(hdr)


def test_container_duplicate_channel(tmp_path):
    hdr = write_container(small_set(), tmp_path / "x")
    text = hdr.read_text().replace("A,B,C,D,E", "A,B,C,D,A")
    hdr.write_text(text)
    with pytest.raises(IngestionError, match="duplicate"):
        load_container(hdr)


def test_container_bad_version_and_missing_field(tmp_path):
    hdr = write_container(small_set(), tmp_path / "x")
    original = hdr.read_text()
    hdr.write_text(original.replace("format_version = 1", "format_version = 99"))
    with pytest.raises(IngestionError, match="format_version"):
        load_container(hdr)
    hdr.write_text("\n".join(l for l in original.splitlines() if not l.startswith("fs")))
    with pytest.raises(IngestionError, match="fs"):
        load_container(hdr)


def test_dataset_invariants():
    with pytest.raises(IngestionError):
        EpochedDataset(np.zeros((2, 3, 4)), [0, 1, 1], 128, ("a", "b", "c"))
    with pytest.raises(IngestionError):
        EpochedDataset(np.zeros((2, 3, 4)), [0, 5], 128, ("a", "b", "c"), n_classes=2)
    with pytest.raises(IngestionError):
        RawRecording(np.zeros((1, 10)), 128, ("a",), ((5, 1), (5, 2)))


def test_concatenate():
    a, b = small_set(8, seed=1), small_set(12, seed=2)
    c = concatenate([a, b], "SI", "X")
    assert c.n_trials == 20 and np.array_equal(c.trials[8:], b.trials)


# --- montages --------------------------------------------------------------


def test_bundled_montages():
    full = load_montage("22")
    assert len(full) == 22 and len(set(full.channels)) == 22
    for name in ("4p", "4b"):
        m = load_montage(name).within(full)
        assert len(m) == 4
        assert [full.channels[i] for i in m.parent_indices] == list(m.channels)
    assert "Fz" in load_montage("4b").channels


def test_montage_file_roundtrip(tmp_path):
    m = Montage("mine", ("C3", "Cz", "C4"))
    write_montage(m, tmp_path / "mine.txt")
    (tmp_path / "mine.txt").write_text("# comment\n" + (tmp_path / "mine.txt").read_text())
    assert read_montage(tmp_path / "mine.txt").channels == m.channels
    assert load_montage("mine", [tmp_path]).channels == m.channels
    with pytest.raises(MontageError):
        load_montage("nope")


def test_select_montage():
    d = small_set()
    assert select_montage(d, Montage("all", d.channel_names)) == d
    sub = select_montage(d, Montage("m", ("D", "B")))
    assert sub.channel_names == ("D", "B")
    assert np.array_equal(sub.trials, d.trials[:, [3, 1]])
    with pytest.raises(MontageError, match="unknown channel XX"):
        select_montage(d, Montage("bad", ("A", "XX")))


def test_montage_composition():
    d = small_set()
    outer = Montage("o", ("E", "C", "B", "A"))
    inner = Montage("i", ("A", "C"))
    twice = select_montage(select_montage(d, outer), inner)
    assert twice == select_montage(d, inner)


# --- filters ---------------------------------------------------------------


def test_resample_identity_and_length():
    x = np.random.default_rng(0).normal(size=(2, 1024))
    assert np.array_equal(resample(x, 128, 128), x)
    assert resample(x, 256, 128).shape == (2, 512)
    assert resample(np.zeros((1, 1000)), 250, 128).shape == (1, 512)
    with pytest.raises(ValueError):
        resample(x, 0, 128)


def test_resample_preserves_sine():
    t256 = np.arange(1024) / 256
    y = resample(np.sin(2 * np.pi * 10 * t256)[None], 256, 128)[0]
    ref = np.sin(2 * np.pi * 10 * np.arange(512) / 128)
    assert np.corrcoef(y[16:-16], ref[16:-16])[0, 1] > 0.99


def _steady_amplitude(freq, fs=128.0, n=4096):
    t = np.arange(n) / fs
    y = bandpass(np.sin(2 * np.pi * freq * t)[None], 4, 38, fs)[0]
    return np.abs(y[n // 4: -n // 4]).max()


def test_bandpass_responses():
    dc = bandpass(np.ones((1, 4096)), 4, 38, 128)[0]
    assert np.abs(dc).max() < 1e-3
    assert 0.9 <= _steady_amplitude(20) <= 1.1
    # 60 Hz is just below Nyquist at 128 Hz
    assert 20 * np.log10(_steady_amplitude(60)) < -20
    with pytest.raises(ValueError):
        bandpass(np.ones((1, 10)), 4, 70, 128)


def test_bandpass_twice_attenuates_more():
    t = np.arange(4096) / 128
    x = np.sin(2 * np.pi * 55 * t)[None]
    once = bandpass(x, 4, 38, 128)
    twice = bandpass(once, 4, 38, 128)
    assert np.abs(twice[0, 1024:-1024]).max() <= np.abs(once[0, 1024:-1024]).max()


# --- epoching --------------------------------------------------------------


def test_epoch_counts_and_lengths():
    fs = 250.0
    n = int(fs * 60)
    onsets = np.arange(8) * int(6 * fs) + 100
    events = tuple((int(o), 769 + k % 4) for k, o in enumerate(onsets))
    rec = RawRecording(np.random.default_rng(0).normal(size=(3, n)), fs, ("a", "b", "c"), events)
    d = epoch(preprocess(rec), 0.0, 4.0, {769: 0, 770: 1, 771: 2, 772: 3})
    assert d.n_samples == 512 and d.n_trials == 8 and d.fs == 128.0
    assert list(d.labels) == [0, 1, 2, 3, 0, 1, 2, 3]


def test_epoch_out_of_bounds_names_event():
    rec = RawRecording(np.zeros((1, 600)), 128, ("a",), ((10, 1), (200, 1)))
    with pytest.raises(EpochingError, match="event 1"):
        epoch(rec, 0, 4, {1: 0}, n_classes=2)


# --- splits and batches ----------------------------------------------------


def test_split_arithmetic_and_determinism():
    d = small_set(288, 4, samples=4)
    tr, va = split_train_val(d, 1 / 8, 3)
    assert va.n_trials == 36 and list(va.class_counts()) == [9] * 4
    tr2, va2 = split_train_val(d, 1 / 8, 3)
    assert tr2 == tr and va2 == va
    tr0, va0 = split_train_val(d, 0, 3)
    assert tr0 == d and va0.n_trials == 0


@given(n=st.integers(8, 80), classes=st.integers(2, 4), frac=st.floats(0, 0.5), seed=st.integers(0, 1000))
def test_split_partitions(n, classes, frac, seed):
    d = EpochedDataset(np.arange(n, dtype=np.float32).reshape(n, 1, 1), np.arange(n) % classes, 128, ("a",))
    tr, va = split_train_val(d, frac, seed)
    ids = np.concatenate([tr.trials.ravel(), va.trials.ravel()])
    assert sorted(ids.tolist()) == list(range(n))
    assert len(set(va.class_counts().tolist())) <= 1


def test_split_missing_class():
    d = EpochedDataset(np.zeros((4, 1, 2)), [0, 0, 1, 1], 128, ("a",), n_classes=3)
    with pytest.raises(SplitError):
        split_train_val(d, 0.25, 0)


def test_paired_batches():
    d = small_set(252, 4, samples=4)
    m = Montage("m", ("E", "B"))
    batches = list(paired_batches(d, m, 128, 5))
    assert [len(b) for b in batches] == [128, 124]
    for b in batches:
        assert np.array_equal(b.x_student, b.x_teacher[:, [4, 1]])
        assert np.array_equal(b.x_teacher, d.trials[b.trial_indices])
    order = np.concatenate([b.trial_indices for b in batches])
    assert sorted(order.tolist()) == list(range(252))
    again = np.concatenate([b.trial_indices for b in paired_batches(d, m, 128, 5)])
    assert np.array_equal(order, again)


def test_synthetic_dataset_shape():
    d = synthetic_dataset(64, 3, seed=0)
    assert d.trials.shape == (64, 22, 256) and list(d.class_counts()) == [22, 21, 21]
