import sys
from pathlib import Path

import numpy as np
import pytest
import torch
from hypothesis import settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", deadline=None, max_examples=40)
settings.load_profile("default")

torch.set_num_threads(1)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture(scope="session")
def smoke_sets():
    """Synthetic 3-class, 64-trial train/test sessions on 8 named channels."""
    from skkd.data import synthetic_dataset
    names = ("Fz", "FC3", "C3", "Cz", "C4", "CP3", "CP4", "Pz")
    train = synthetic_dataset(64, 3, names, n_samples=256, seed=1, subject_id="S01", session_id="T")
    test = synthetic_dataset(64, 3, names, n_samples=256, seed=2, subject_id="S01", session_id="E")
    return train, test


@pytest.fixture(scope="session")
def data_root(tmp_path_factory):
    """Containers for three synthetic subjects (22 channels, 48 trials, 1 s)."""
    from skkd.data import synthetic_dataset, write_container
    root = tmp_path_factory.mktemp("containers")
    for k, subject in enumerate(("A01", "A02", "A03")):
        for j, session in enumerate(("T", "E")):
            d = synthetic_dataset(48, 3, n_samples=128, seed=10 * k + j, subject_id=subject, session_id=session)
            write_container(d, root / f"{subject}{session}")
    return root


def tiny_config_text(root, extra=""):
    return f"""
[data]
root = {root}
subjects = A01, A02
subject = A01

[train]
epochs = 2
batch_size = 16

[experiment]
seeds = 0
teacher_subjects = A01, A02, SI
{extra}
"""


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    outcomes = getattr(mod, "ACCEPTANCE_OUTCOMES", {})
    if not outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(outcomes):
        status, text = outcomes[number]
        terminalreporter.write_line(f"{status:4s} criterion {number:2d}: {text}")
