"""Teacher pretraining, student baselines and student distillation.

Every run follows the same protocol: Adam (lr 5e-4, weight decay 0.1),
mini-batches of 128, a class-balanced 1/8 validation split and the
parameters of the epoch with the lowest validation loss kept as the
checkpoint.  A run is a pure function of its data, config and seed.
"""
from __future__ import annotations

import copy
import csv
import dataclasses
import hashlib
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .data import EpochedDataset, Montage, paired_batches, select_montage, split_train_val
from .distill import DistillConfig, LossBreakdown, total_loss
from .models import (ArchitectureSpec, build_model, forward_with_taps, freeze, load_checkpoint,
                     save_checkpoint)

log = logging.getLogger(__name__)

ROLES = ("teacher", "student-baseline", "student-distilled")


class EvaluationError(ValueError):
    pass


class RunAborted(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 500
    learning_rate: float = 5e-4
    weight_decay: float = 0.1
    batch_size: int = 128
    val_fraction: float = 0.125
    seed: int = 0
    architecture: str = "SCCNet"
    montage: str = "22"
    distill: DistillConfig | None = None
    validate_with: str = "objective"  # or "ce"

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if not 0 <= self.val_fraction < 1:
            raise ValueError("val_fraction must lie in [0, 1)")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.validate_with not in ("objective", "ce"):
            raise ValueError("validate_with must be 'objective' or 'ce'")

    def digest(self) -> str:
        blob = json.dumps(dataclasses.asdict(self), sort_keys=True, default=str)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass
class RunRecord:
    run_id: str
    config_digest: str
    seed: int
    role: str
    test_accuracy: float
    best_val_loss: float
    best_epoch: int
    teacher_run_id: str = ""
    subject_id: str = ""
    architecture: str = ""
    montage: str = ""
    status: str = "ok"
    diagnostic: str = ""
    tags: dict = field(default_factory=dict)
    # wall-clock time is provenance only; it never takes part in equality
    wall_time: float = field(default=0.0, compare=False)

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValueError(f"role must be one of {ROLES}")
        if bool(self.teacher_run_id) != (self.role == "student-distilled"):
            raise ValueError("teacher_run_id must be set exactly for distilled students")
        if self.status == "ok" and not (math.isnan(self.test_accuracy) or 0 <= self.test_accuracy <= 100):
            raise ValueError("test_accuracy must lie in [0, 100]")

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    def to_text(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            if f.name == "tags":
                continue
            lines.append(f"{f.name} = {getattr(self, f.name)!r}" if isinstance(getattr(self, f.name), float)
                         else f"{f.name} = {getattr(self, f.name)}")
        for k in sorted(self.tags):
            lines.append(f"tag.{k} = {self.tags[k]}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "RunRecord":
        raw, tags = {}, {}
        for line in text.splitlines():
            if "=" not in line:
                continue
            k, v = (s.strip() for s in line.split("=", 1))
            if k.startswith("tag."):
                tags[k[4:]] = v
            else:
                raw[k] = v
        kwargs = {}
        for f in dataclasses.fields(cls):
            if f.name == "tags" or f.name not in raw:
                continue
            v = raw[f.name]
            if f.type in ("float",):
                kwargs[f.name] = float(v)
            elif f.type in ("int",):
                kwargs[f.name] = int(v)
            else:
                kwargs[f.name] = v
        return cls(**kwargs, tags=tags)


def _run_id(role: str, cfg: TrainConfig, subject: str, teacher_run_id: str, tags: dict) -> str:
    blob = json.dumps([role, cfg.digest(), cfg.seed, subject, teacher_run_id, sorted(tags.items())])
    return f"{role}-{subject or 'x'}-s{cfg.seed}-{hashlib.sha256(blob.encode()).hexdigest()[:10]}"


# --------------------------------------------------------------------------


def _to_tensor(x: np.ndarray) -> torch.Tensor:
    return torch.from_numpy(np.ascontiguousarray(x))


def _batch_loss(model, teacher, batch, cfg_distill) -> LossBreakdown:
    xs = _to_tensor(batch.x_student)
    y = torch.from_numpy(batch.y)
    t_taps = None
    if teacher is not None:
        with torch.no_grad():
            t_taps = forward_with_taps(teacher, _to_tensor(batch.x_teacher))
    s_taps = forward_with_taps(model, xs)
    return total_loss((t_taps, s_taps, y), cfg_distill)


def _validate(model, teacher, val: EpochedDataset, montage: Montage, cfg: TrainConfig):
    """Trial-weighted mean objective and accuracy over the validation split (eval mode)."""
    model.eval()
    objective = cfg.distill if cfg.validate_with == "objective" else None
    total, correct = 0.0, 0
    with torch.no_grad():
        for batch in paired_batches(val, montage, cfg.batch_size, shuffle_seed=None):
            lb = _batch_loss(model, teacher if objective is not None else None, batch, objective)
            total += lb.total.item() * len(batch)
            pred = predict(model, batch.x_student)
            correct += int((pred == batch.y).sum())
    model.train()
    return total / val.n_trials, 100.0 * correct / val.n_trials


def _write_log(path, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]) if rows else ["epoch"])
        w.writeheader()
        w.writerows(rows)


def _fit(train_hd: EpochedDataset, montage: Montage, cfg: TrainConfig, role: str,
         teacher=None, teacher_run_id: str = "", test: EpochedDataset | None = None,
         log_path=None, checkpoint_path=None, tags: dict | None = None):
    tags = dict(tags or {})
    montage = montage.within(train_hd.channel_names)
    spec = ArchitectureSpec(cfg.architecture, len(montage), train_hd.n_samples, train_hd.n_classes)
    run_id = _run_id(role, cfg, train_hd.subject_id, teacher_run_id, tags)
    record_kwargs = dict(run_id=run_id, config_digest=cfg.digest(), seed=cfg.seed, role=role,
                         teacher_run_id=teacher_run_id, subject_id=train_hd.subject_id,
                         architecture=f"{cfg.architecture}-{montage.name}", montage=montage.name,
                         tags=tags)
    started = time.perf_counter()
    tr, va = split_train_val(train_hd, cfg.val_fraction, cfg.seed)
    epoch_rng = np.random.default_rng(cfg.seed)
    rows = []

    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(cfg.seed)
        model = build_model(spec, cfg.seed)
        model.channel_names = montage.channels
        opt = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate, weight_decay=cfg.weight_decay)
        best = (math.inf, -1, None)
        try:
            for epoch in range(cfg.epochs):
                model.train()
                sums, n_seen = {}, 0
                for batch in paired_batches(tr, montage, cfg.batch_size, int(epoch_rng.integers(2**32))):
                    lb = _batch_loss(model, teacher, batch, cfg.distill)
                    if not torch.isfinite(lb.total):
                        raise RunAborted(f"non-finite training loss at epoch {epoch}: {lb.as_dict()}")
                    opt.zero_grad()
                    lb.total.backward()
                    opt.step()
                    for k in ("total", "ce", "kl", "sk"):
                        sums[k] = sums.get(k, 0.0) + getattr(lb, k).item() * len(batch)
                    n_seen += len(batch)
                row = {"epoch": epoch, **{f"train_{k}": v / n_seen for k, v in sums.items()}}
                if va.n_trials:
                    val_loss, val_acc = _validate(model, teacher, va, montage, cfg)
                    if not math.isfinite(val_loss):
                        raise RunAborted(f"non-finite validation loss at epoch {epoch}")
                else:
                    val_loss, val_acc = math.nan, math.nan
                row.update(val_loss=val_loss, val_accuracy=val_acc)
                rows.append(row)
                # strict '<' keeps the earliest epoch on ties; without a validation split keep the last
                if val_loss < best[0] or (math.isnan(val_loss)):
                    best = (val_loss, epoch, copy.deepcopy(model.state_dict()))
        except RunAborted as exc:
            log.warning("run %s aborted: %s", run_id, exc)
            if log_path:
                _write_log(log_path, rows)
            return None, RunRecord(**record_kwargs, test_accuracy=math.nan, best_val_loss=math.nan,
                                   best_epoch=-1, status="aborted", diagnostic=str(exc),
                                   wall_time=time.perf_counter() - started)

    model.load_state_dict(best[2])
    model.eval()
    if log_path:
        _write_log(log_path, rows)
    acc = math.nan
    if test is not None:
        acc = evaluate(model, test if test.channel_names == montage.channels else select_montage(test, montage))
    record = RunRecord(**record_kwargs, test_accuracy=acc, best_val_loss=best[0], best_epoch=best[1],
                       wall_time=time.perf_counter() - started)
    if checkpoint_path:
        save_checkpoint(model, checkpoint_path, cfg.seed, cfg.digest(), best[1], run_id=run_id,
                        montage=montage.name, channel_names=",".join(montage.channels))
    return model, record


def full_montage(d: EpochedDataset, name: str = "full") -> Montage:
    return Montage(name, d.channel_names, tuple(range(d.n_channels)))


def pretrain_teacher(train: EpochedDataset, cfg: TrainConfig, test: EpochedDataset | None = None,
                     **kwargs):
    """Cross-entropy training on the full montage; returns ``(model, RunRecord)``."""
    if cfg.distill is not None:
        raise ValueError("teacher runs take no distill config")
    return _fit(train, full_montage(train, cfg.montage), cfg, "teacher", test=test, **kwargs)


def train_student_baseline(train_hd: EpochedDataset, m_student: Montage, cfg: TrainConfig,
                           test: EpochedDataset | None = None, **kwargs):
    if cfg.distill is not None:
        cfg = dataclasses.replace(cfg, distill=None)
    return _fit(train_hd, m_student, cfg, "student-baseline", test=test, **kwargs)


def distill_student(train_hd: EpochedDataset, m_student: Montage, teacher, cfg: TrainConfig,
                    test: EpochedDataset | None = None, teacher_run_id: str = "", **kwargs):
    """Train a low-density student against a frozen high-density teacher.

    ``teacher`` is a model or a checkpoint path.  The caller's teacher object
    is never modified; a frozen copy takes part in training.
    """
    if cfg.distill is None:
        raise ValueError("distill_student needs cfg.distill")
    if isinstance(teacher, (str, Path)):
        teacher, manifest = load_checkpoint(teacher)
        teacher_run_id = teacher_run_id or manifest.get("run_id", "")
    else:
        teacher = copy.deepcopy(teacher)
    if teacher.spec.n_channels != train_hd.n_channels or teacher.spec.n_samples != train_hd.n_samples:
        raise ValueError(
            f"teacher expects ({teacher.spec.n_channels}, {teacher.spec.n_samples}) input, "
            f"data is ({train_hd.n_channels}, {train_hd.n_samples})"
        )
    freeze(teacher)
    return _fit(train_hd, m_student, cfg, "student-distilled", teacher=teacher,
                teacher_run_id=teacher_run_id or "teacher", test=test, **kwargs)


# --------------------------------------------------------------------------


def predict(model, x) -> np.ndarray:
    """Argmax class per trial; ties go to the lowest class index."""
    was_training = model.training
    model.eval()
    with torch.no_grad():
        logits = model(_to_tensor(np.asarray(x, dtype=np.float32))).numpy()
    if was_training:
        model.train()
    return np.argmax(logits, axis=1)


def evaluate(model, test: EpochedDataset) -> float:
    """Accuracy in percent over all trials of ``test``."""
    if isinstance(model, (str, Path)):
        model, _ = load_checkpoint(model)
    expected = getattr(model, "channel_names", None)
    if test.n_channels != model.spec.n_channels or (expected is not None and tuple(expected) != test.channel_names):
        raise EvaluationError(
            f"montage mismatch: model takes {expected or model.spec.n_channels} channels, "
            f"test set has {list(test.channel_names)}"
        )
    if test.n_trials == 0:
        raise EvaluationError("empty test set")
    correct = 0
    for start in range(0, test.n_trials, 256):
        pred = predict(model, test.trials[start:start + 256])
        correct += int((pred == test.labels[start:start + 256]).sum())
    return 100.0 * correct / test.n_trials
