import numpy as np
import pytest

from skkd.adapters import ADAPTERS, BCIC_CLASS_MAP, recording_from_annotations
from skkd.data import epoch, preprocess


def fake_session(n_cues=8, fs=250.0, unknown=False):
    n = int(fs * (8 * n_cues + 10))
    rng = np.random.default_rng(0)
    volts = rng.normal(scale=20e-6, size=(3, n))
    annotations = [(0.0, "32766")]
    for k in range(n_cues):
        t = 2.0 + 8 * k
        annotations += [(t, "768"), (t + 2, "783" if unknown else str(769 + k % 4))]
    return volts, fs, annotations


def test_cues_kept_and_scaled():
    volts, fs, ann = fake_session()
    rec = recording_from_annotations(volts, fs, ann, ("a", "b", "c"), "A01", "T")
    assert [c for _, c in rec.events] == [769 + k % 4 for k in range(8)]
    assert np.allclose(rec.signal, volts * 1e6, rtol=1e-6)
    d = epoch(preprocess(rec), 0, 4, BCIC_CLASS_MAP, 4)
    assert d.trials.shape == (8, 3, 512) and list(d.labels) == [0, 1, 2, 3] * 2


def test_unknown_cues_take_true_labels():
    volts, fs, ann = fake_session(unknown=True)
    labels = np.array([[1], [2], [3], [4], [4], [3], [2], [1]])
    rec = recording_from_annotations(volts, fs, ann, ("a", "b", "c"), "A01", "E", labels)
    assert [c - 769 for _, c in rec.events] == [0, 1, 2, 3, 3, 2, 1, 0]
    with pytest.raises(ValueError):
        recording_from_annotations(volts, fs, ann, ("a", "b", "c"), "A01", "E", labels[:3])


def test_synthetic_adapter():
    out = list(ADAPTERS["synthetic"](subjects=["A01", "A02"], n_trials=12, n_classes=4))
    assert [stem for stem, _ in out] == ["A01T", "A01E", "A02T", "A02E"]
    assert out[0][1].n_samples == 512 and out[0][1].n_classes == 4
