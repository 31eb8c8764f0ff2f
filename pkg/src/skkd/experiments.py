"""Study orchestration, the results store, channel elimination and summary tables."""
from __future__ import annotations

import dataclasses
import logging
import math
import os
import tempfile
import threading
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np
from filelock import FileLock

from .data import EpochedDataset, Montage, concatenate, load_container, load_montage, select_montage
from .distill import DistillConfig, layer_pairs_for
from .models import read_manifest
from .stats import significance_stars, wilcoxon_rank_sum, wilcoxon_signed_rank
from .training import (RunRecord, TrainConfig, _run_id, distill_student, evaluate, full_montage,
                       pretrain_teacher, train_student_baseline)

log = logging.getLogger(__name__)

STUDIES = ("layer_sweep", "montage_compare", "cross_subject", "elimination", "ablation")
COMBO_ORDER = ("LF1", "LF2", "LF3", "LF1+2", "LF2+3", "LF1+2+3")
METHOD_ORDER = ("baseline", "sk", "sk_logits", "hkd")
CRITERION_ORDER = ("l2", "plv", "dot", "cosine")


class SchedulingError(RuntimeError):
    pass


class DuplicateRunError(RuntimeError):
    pass


class ImportanceError(ValueError):
    pass


# --------------------------------------------------------------------------
# results store


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-", suffix=path.suffix)
    with os.fdopen(fd, "w", encoding="utf-8") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _comparable(text: str) -> str:
    return "\n".join(line for line in text.splitlines() if not line.startswith("wall_time"))


class ResultsStore:
    """Append-only directory of ``<study>/<run_id>.record`` files plus ``index.csv``."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self._lock = threading.Lock()

    def _file_lock(self):
        self.root.mkdir(parents=True, exist_ok=True)
        return FileLock(str(self.root / ".store.lock"))

    def path(self, study: str, run_id: str) -> Path:
        return self.root / study / f"{run_id}.record"

    def has(self, study: str, run_id: str) -> bool:
        return self.path(study, run_id).is_file()

    def append(self, study: str, record: RunRecord) -> bool:
        """Write ``record``; returns False if an identical record is already stored."""
        path = self.path(study, record.run_id)
        text = record.to_text()
        with self._lock, self._file_lock():
            if path.exists():
                if _comparable(path.read_text(encoding="utf-8")) == _comparable(text):
                    return False
                raise DuplicateRunError(f"run {record.run_id} already stored with different content")
            _atomic_write(path, text)
            with (self.root / "index.csv").open("a", encoding="utf-8") as fh:
                fh.write(f"{study},{record.run_id},{record.role},{record.subject_id},{record.status}\n")
        return True

    def records(self, study: str | None = None) -> list[RunRecord]:
        studies = [study] if study else self.studies()
        out = []
        for s in studies:
            d = self.root / s
            if d.is_dir():
                out.extend(RunRecord.from_text(p.read_text(encoding="utf-8"))
                           for p in sorted(d.glob("*.record")))
        return out

    def studies(self) -> list[str]:
        if not self.root.is_dir():
            return []
        return sorted(p.name for p in self.root.iterdir()
                      if p.is_dir() and (any(p.glob("*.record")) or any(p.glob("*.elim"))))

    def put_artifact(self, study: str, name: str, text: str) -> Path:
        path = self.root / study / name
        with self._lock, self._file_lock():
            _atomic_write(path, text)
        return path

    def artifacts(self, study: str, suffix: str) -> list[Path]:
        return sorted((self.root / study).glob(f"*{suffix}"))


# --------------------------------------------------------------------------
# plans and jobs


@dataclass(frozen=True)
class TeacherKey:
    architecture: str
    subject: str  # a subject id, or "SI-<target>" for a subject-independent teacher
    seed: int

    @property
    def stem(self) -> str:
        return f"{self.architecture}-{self.subject}-s{self.seed}"


@dataclass(frozen=True)
class Job:
    role: str
    subject: str
    montage: str
    cfg: TrainConfig
    teacher: TeacherKey | None = None
    tags: tuple[tuple[str, str], ...] = ()


@dataclass
class ExperimentPlan:
    study: str
    subjects: list[str]
    seeds: list[int]
    pairs: list[tuple[str, str]] = field(default_factory=lambda: [("SCCNet", "SCCNet")])
    montages: list[str] = field(default_factory=lambda: ["4p"])
    base: TrainConfig = field(default_factory=TrainConfig)
    distill: DistillConfig = field(default_factory=DistillConfig)
    teacher_seed: int = 0
    layer_combos: list[str] = field(default_factory=lambda: list(COMBO_ORDER))
    methods: list[str] = field(default_factory=lambda: list(METHOD_ORDER))
    criteria: list[str] = field(default_factory=lambda: list(CRITERION_ORDER))
    centering: list[bool] = field(default_factory=lambda: [True, False])
    teacher_subjects: list[str] = field(default_factory=list)
    elimination_mode: str = "retrain"
    elimination_kd: list[bool] = field(default_factory=lambda: [False, True])
    significance: float = 0.05

    def __post_init__(self):
        if self.study not in STUDIES:
            raise SchedulingError(f"unknown study {self.study!r}; choose from {', '.join(STUDIES)}")
        if not self.subjects:
            raise SchedulingError("plan needs at least one subject")
        if not self.seeds:
            raise SchedulingError("plan needs at least one seed")
        if self.elimination_mode not in ("retrain", "mask"):
            raise SchedulingError("elimination_mode must be 'retrain' or 'mask'")
        unknown = [m for m in self.methods if m not in METHOD_ORDER]
        if unknown:
            raise SchedulingError(f"unknown methods {unknown}")


def plan_from_config(cfg, study: str | None = None) -> ExperimentPlan:
    pairs = []
    for item in cfg["experiment.pairs"]:
        t, _, s = item.partition(":")
        pairs.append((t, s or t))
    return ExperimentPlan(
        study=study or cfg["experiment.study"],
        subjects=list(cfg["data.subjects"]),
        seeds=list(cfg["experiment.seeds"]),
        pairs=pairs,
        montages=list(cfg["experiment.montages"]),
        base=cfg.train_config(),
        distill=cfg.distill_config(),
        teacher_seed=cfg["teacher.seed"],
        layer_combos=list(cfg["experiment.layer_combos"]),
        methods=list(cfg["experiment.methods"]),
        criteria=list(cfg["experiment.criteria"]),
        centering=list(cfg["experiment.centering"]),
        teacher_subjects=list(cfg["experiment.teacher_subjects"]),
        elimination_mode=cfg["experiment.elimination_mode"],
        elimination_kd=list(cfg["experiment.elimination_kd"]),
        significance=cfg["experiment.significance"],
    )


METHOD_CONFIGS: dict[str, Callable[[DistillConfig], DistillConfig | None]] = {
    "baseline": lambda d: None,
    "sk": lambda d: replace(d, use_logits_loss=False),
    "sk_logits": lambda d: replace(d, use_logits_loss=True),
    "hkd": lambda d: replace(d, beta=0.0, use_logits_loss=True, layer_pairs=()),
}


def _tags(**kw) -> tuple[tuple[str, str], ...]:
    return tuple(sorted((k, str(v)) for k, v in kw.items()))


def _student_job(plan, subject, t_arch, s_arch, montage, seed, distill, tkey_subject=None, **tags):
    cfg = replace(plan.base, architecture=s_arch, montage=montage, seed=seed, distill=distill)
    if distill is None:
        return Job("student-baseline", subject, montage, cfg, None,
                   _tags(student=s_arch, montage=montage, **tags))
    teacher = TeacherKey(t_arch, tkey_subject or subject, plan.teacher_seed)
    return Job("student-distilled", subject, montage, cfg, teacher,
               _tags(teacher=t_arch, student=s_arch, montage=montage, **tags))


def plan_jobs(plan: ExperimentPlan) -> list[Job]:
    """Expand a plan into training jobs (elimination studies are driven separately)."""
    jobs: list[Job] = []
    if plan.study == "elimination":
        return jobs
    pairs = plan.pairs if plan.study in ("layer_sweep", "montage_compare") else plan.pairs[:1]
    montages = plan.montages if plan.study in ("layer_sweep", "montage_compare") else plan.montages[:1]
    for subject in plan.subjects:
        for t_arch, s_arch in pairs:
            for montage in montages:
                for seed in plan.seeds:
                    job = lambda distill, **tags: _student_job(plan, subject, t_arch, s_arch, montage,
                                                               seed, distill, **tags)
                    jobs.append(job(None, method="baseline"))
                    if plan.study == "layer_sweep":
                        for combo in plan.layer_combos:
                            d = replace(plan.distill, layer_pairs=layer_pairs_for(combo))
                            jobs.append(job(d, method="sk", combo=combo))
                    elif plan.study == "montage_compare":
                        for method in plan.methods:
                            if method != "baseline":
                                jobs.append(job(METHOD_CONFIGS[method](plan.distill), method=method))
                    elif plan.study == "ablation":
                        for criterion in plan.criteria:
                            for centered in plan.centering:
                                d = replace(plan.distill, criterion=criterion, centered=centered,
                                            use_logits_loss=False)
                                jobs.append(job(d, method="sk", criterion=criterion, centered=centered))
                    elif plan.study == "cross_subject":
                        for ts in plan.teacher_subjects:
                            key_subject = f"SI-{subject}" if ts == "SI" else ts
                            d = replace(plan.distill, use_logits_loss=False)
                            jobs.append(job(d, tkey_subject=key_subject, method="sk", teacher_subject=ts))
    # drop duplicate baselines shared by several teacher architectures
    unique, seen = [], set()
    for j in jobs:
        if j not in seen:
            seen.add(j)
            unique.append(j)
    return unique


# --------------------------------------------------------------------------
# execution


@dataclass
class Context:
    """Where data, montages and teacher checkpoints live."""

    data_root: Path
    out: Path
    teacher_cfg: TrainConfig
    train_session: str = "T"
    test_session: str = "E"
    montage_dirs: tuple = ()
    all_subjects: tuple = ()
    _cache: dict = field(default_factory=dict, repr=False)

    def __getstate__(self):
        # worker processes reload their own data instead of receiving copies
        state = dict(self.__dict__)
        state["_cache"] = {}
        return state

    def load(self, subject: str, session: str) -> EpochedDataset:
        key = (subject, session)
        if key not in self._cache:
            path = Path(self.data_root) / f"{subject}{session}.hdr"
            if not path.is_file():
                raise SchedulingError(f"missing container {path}")
            self._cache[key] = load_container(path)
        return self._cache[key]

    def montage(self, name: str) -> Montage:
        return load_montage(name, self.montage_dirs)

    def teacher_path(self, key: TeacherKey) -> Path:
        return Path(self.out) / "teachers" / key.stem

    def teacher_data(self, key: TeacherKey) -> tuple[EpochedDataset, EpochedDataset | None]:
        if key.subject.startswith("SI-"):
            target = key.subject[3:]
            others = [s for s in self.all_subjects if s != target]
            if not others:
                raise SchedulingError(f"no other subjects available for the SI teacher of {target}")
            parts = [self.load(s, sess) for s in others for sess in (self.train_session, self.test_session)]
            return concatenate(parts, subject_id=key.subject, session_id="SI"), self.load(target, self.test_session)
        return self.load(key.subject, self.train_session), self.load(key.subject, self.test_session)


def ensure_teacher(ctx: Context, key: TeacherKey) -> tuple[Path, RunRecord | None]:
    """Train (or reuse) the teacher for ``key``; returns its checkpoint stem and new record, if any."""
    path = ctx.teacher_path(key)
    cfg = replace(ctx.teacher_cfg, architecture=key.architecture, seed=key.seed)
    manifest_path = path.with_suffix(".manifest")
    if manifest_path.is_file() and read_manifest(path).get("config_digest") == cfg.digest():
        return path, None
    train, test = ctx.teacher_data(key)
    _, record = pretrain_teacher(train, cfg, test=test, checkpoint_path=path,
                                 tags={"teacher_key": key.stem})
    if not record.ok:
        raise SchedulingError(f"teacher {key.stem} aborted: {record.diagnostic}")
    return path, record


def planned_run_id(job: Job, teacher_run_id: str = "") -> str:
    return _run_id(job.role, job.cfg, job.subject, teacher_run_id, dict(job.tags))


def run_job(ctx: Context, job: Job, teacher_run_id: str = "") -> RunRecord:
    train = ctx.load(job.subject, ctx.train_session)
    test = ctx.load(job.subject, ctx.test_session)
    montage = ctx.montage(job.montage)
    if job.role == "student-baseline":
        _, record = train_student_baseline(train, montage, job.cfg, test=test, tags=dict(job.tags))
    else:
        _, record = distill_student(train, montage, ctx.teacher_path(job.teacher), job.cfg, test=test,
                                    teacher_run_id=teacher_run_id, tags=dict(job.tags))
    return record


def _worker_init():
    import torch
    torch.set_num_threads(1)


def _call(args):
    fn, *rest = args
    return fn(*rest)


def parallel_map(fn, items: Sequence, n_jobs: int = 1) -> Iterable:
    """Ordered map; processes when ``n_jobs > 1`` so each run owns its RNG state."""
    if n_jobs <= 1 or len(items) <= 1:
        for item in items:
            yield fn(*item)
        return
    with ProcessPoolExecutor(max_workers=n_jobs, initializer=_worker_init) as pool:
        yield from pool.map(_call, [(fn, *item) for item in items])


def execute(plan: ExperimentPlan, ctx: Context, store: ResultsStore, n_jobs: int = 1) -> list[RunRecord]:
    """Run every job of ``plan`` not already in ``store``; returns the study's records."""
    jobs = plan_jobs(plan)
    teacher_keys = sorted({j.teacher for j in jobs if j.teacher}, key=lambda k: k.stem)
    for path, record in parallel_map(ensure_teacher, [(ctx, k) for k in teacher_keys], n_jobs):
        if record is not None:
            store.append("teachers", record)
    teacher_ids = {k: read_manifest(ctx.teacher_path(k)).get("run_id", "") for k in teacher_keys}
    pending = []
    for job in jobs:
        tid = teacher_ids.get(job.teacher, "")
        if not store.has(plan.study, planned_run_id(job, tid)):
            pending.append((ctx, job, tid))
    log.info("%s: %d jobs, %d pending", plan.study, len(jobs), len(pending))
    for record in parallel_map(run_job, pending, n_jobs):
        store.append(plan.study, record)
        if not record.ok:
            log.warning("run %s aborted: %s", record.run_id, record.diagnostic)
    return store.records(plan.study)


# --------------------------------------------------------------------------
# backward elimination


@dataclass
class EliminationResult:
    channels: tuple[str, ...]
    order: tuple[str, ...]  # least to most important; empty when nothing was eliminated
    curve: tuple[tuple[int, float], ...]  # (number of channels, accuracy)
    steps: tuple[dict, ...] = ()
    label: str = ""

    @property
    def removed(self) -> tuple[str, ...]:
        return self.order[:-1]

    def to_text(self) -> str:
        lines = [f"label = {self.label}", f"channels = {','.join(self.channels)}",
                 f"order = {','.join(self.order)}",
                 "curve = " + ",".join(f"{n}:{acc!r}" for n, acc in self.curve)]
        for k, step in enumerate(self.steps):
            lines.append(f"step.{k} = " + ",".join(f"{ch}:{acc!r}" for ch, acc in step.items()))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "EliminationResult":
        raw = {}
        for line in text.splitlines():
            if "=" in line:
                k, v = (s.strip() for s in line.split("=", 1))
                raw[k] = v
        split = lambda v: tuple(x for x in v.split(",") if x)
        curve = tuple((int(n), float(a)) for n, a in (c.split(":") for c in split(raw.get("curve", ""))))
        steps = []
        k = 0
        while f"step.{k}" in raw:
            steps.append({ch: float(a) for ch, a in (c.split(":") for c in split(raw[f"step.{k}"]))})
            k += 1
        return cls(split(raw["channels"]), split(raw.get("order", "")), curve, tuple(steps),
                   raw.get("label", ""))


def backward_eliminate(evaluator: Callable[[tuple[str, ...]], float], channels: Sequence[str],
                       label: str = "") -> EliminationResult:
    """Greedy backward channel elimination.

    At every step each remaining channel is tentatively dropped and the
    remaining set scored; the channel whose removal costs least is removed for
    good.  Ties go to the channel listed first.  ``order`` lists removed
    channels followed by the last survivor.
    """
    channels = tuple(channels)
    if len(channels) < 2:
        return EliminationResult(channels, (), (), (), label)
    remaining = list(channels)
    try:
        curve = [(len(remaining), float(evaluator(tuple(remaining))))]
    except Exception as exc:
        raise SchedulingError(f"evaluator failed on the full set: {exc}") from exc
    removed, steps = [], []
    while len(remaining) > 1:
        scores = {}
        for ch in remaining:
            subset = tuple(c for c in remaining if c != ch)
            try:
                scores[ch] = float(evaluator(subset))
            except Exception as exc:
                raise SchedulingError(f"evaluator failed at step {len(removed)} removing {ch}: {exc}") from exc
        best = max(remaining, key=lambda c: (scores[c], -remaining.index(c)))
        steps.append(scores)
        remaining.remove(best)
        removed.append(best)
        curve.append((len(remaining), scores[best]))
    return EliminationResult(channels, tuple(removed + remaining), tuple(curve), tuple(steps), label)


def electrode_importance(runs: Sequence[EliminationResult]) -> tuple[dict[str, int], dict[str, float]]:
    """Per channel: number of elimination steps it took part in, summed over runs.

    Returns the raw sums and a min-max normalised copy.
    """
    runs = [r for r in runs if r.order]
    if not runs:
        raise ImportanceError("no elimination runs to aggregate")
    parent = set(runs[0].channels)
    for r in runs[1:]:
        if set(r.channels) != parent:
            raise ImportanceError(f"run {r.label!r} uses a different montage")
    raw = {ch: 0 for ch in runs[0].channels}
    for r in runs:
        n_steps = len(r.channels) - 1
        for k, ch in enumerate(r.order):
            raw[ch] += min(k + 1, n_steps)
    lo, hi = min(raw.values()), max(raw.values())
    norm = {ch: 1.0 if hi == lo else (v - lo) / (hi - lo) for ch, v in raw.items()}
    return raw, norm


def _elimination_evaluator(ctx: Context, plan: ExperimentPlan, subject: str, kd: bool,
                           store: ResultsStore | None):
    t_arch, s_arch = plan.pairs[0]
    seed = plan.seeds[0]
    train = ctx.load(subject, ctx.train_session)
    test = ctx.load(subject, ctx.test_session)
    distill = replace(plan.distill, use_logits_loss=False) if kd else None
    teacher_path = ctx.teacher_path(TeacherKey(t_arch, subject, plan.teacher_seed)) if kd else None
    teacher_id = read_manifest(teacher_path).get("run_id", "") if kd else ""
    cfg = replace(plan.base, architecture=s_arch, seed=seed, distill=distill)

    if plan.elimination_mode == "mask":
        full = full_montage(train, "full")
        cfg_full = replace(cfg, montage="full")
        if kd:
            model, _ = distill_student(train, full, teacher_path, cfg_full, teacher_run_id=teacher_id)
        else:
            model, _ = train_student_baseline(train, full, cfg_full)
        index = {ch: k for k, ch in enumerate(train.channel_names)}

        def evaluate_masked(subset):
            keep = np.zeros(train.n_channels, dtype=bool)
            keep[[index[c] for c in subset]] = True
            masked = dataclasses.replace(test, trials=test.trials * keep[None, :, None])
            return evaluate(model, masked)
        return evaluate_masked

    def evaluate_retrained(subset):
        montage = Montage(f"{len(subset)}ch", subset).within(train.channel_names)
        tags = {"kd": str(kd), "channels": "+".join(subset), "n_channels": str(len(subset))}
        c = replace(cfg, montage=montage.name)
        if kd:
            _, rec = distill_student(train, montage, teacher_path, c, test=test,
                                     teacher_run_id=teacher_id, tags=tags)
        else:
            _, rec = train_student_baseline(train, montage, c, test=test, tags=tags)
        if store is not None:
            store.append("elimination", rec)
        if not rec.ok:
            raise SchedulingError(rec.diagnostic)
        return rec.test_accuracy
    return evaluate_retrained


def _run_elimination(ctx, plan, subject, kd, store_root):
    store = ResultsStore(store_root)
    evaluator = _elimination_evaluator(ctx, plan, subject, kd, store)
    channels = ctx.load(subject, ctx.train_session).channel_names
    label = f"{subject}-{'sk' if kd else 'nokd'}"
    result = backward_eliminate(evaluator, channels, label=label)
    store.put_artifact("elimination", f"{label}.elim", result.to_text())
    return result


def run_elimination(plan: ExperimentPlan, ctx: Context, store: ResultsStore, n_jobs: int = 1):
    if any(plan.elimination_kd):
        keys = [TeacherKey(plan.pairs[0][0], s, plan.teacher_seed) for s in plan.subjects]
        for _, record in parallel_map(ensure_teacher, [(ctx, k) for k in keys], n_jobs):
            if record is not None:
                store.append("teachers", record)
    items = [(ctx, plan, s, kd, store.root) for s in plan.subjects for kd in plan.elimination_kd
             if not (store.root / "elimination" / f"{s}-{'sk' if kd else 'nokd'}.elim").is_file()]
    list(parallel_map(_run_elimination, items, n_jobs))
    return load_elimination(store)


def load_elimination(store: ResultsStore) -> list[EliminationResult]:
    return [EliminationResult.from_text(p.read_text(encoding="utf-8"))
            for p in store.artifacts("elimination", ".elim")]


# --------------------------------------------------------------------------
# summaries (pure functions of the records; order independent)


def _mean(values) -> float:
    values = sorted(values)
    return math.fsum(values) / len(values) if values else math.nan


def _ordered(values, canonical=()):
    rank = {v: k for k, v in enumerate(canonical)}
    return sorted(set(values), key=lambda v: (rank.get(v, len(rank)), v))


def seed_means(records: Iterable[RunRecord], *keys: str) -> dict[tuple, dict[str, list[float]]]:
    """Group ok records by tag ``keys``; per group map subject -> sorted seed accuracies."""
    out: dict[tuple, dict[str, list[float]]] = {}
    for r in records:
        if not r.ok:
            continue
        k = tuple(r.tags.get(key, "") for key in keys)
        out.setdefault(k, {}).setdefault(r.subject_id, []).append(r.test_accuracy)
    for groups in out.values():
        for s in groups:
            groups[s].sort()
    return out


def subject_means(groups: dict[str, list[float]]) -> dict[str, float]:
    return {s: _mean(v) for s, v in sorted(groups.items())}


def aborted(records: Iterable[RunRecord]) -> list[RunRecord]:
    return [r for r in records if not r.ok]


def teacher_accuracy(teacher_records: Iterable[RunRecord], architecture: str) -> float:
    accs = [r.test_accuracy for r in teacher_records
            if r.ok and r.architecture.startswith(f"{architecture}-") and not r.subject_id.startswith("SI-")]
    return _mean(accs)


def _columns(records):
    cols = set()
    for r in records:
        if r.tags.get("method") != "baseline" and "teacher" in r.tags:
            cols.add((r.tags["teacher"], r.tags["student"], r.tags["montage"]))
    return sorted(cols)


def comparison_table(records: Sequence[RunRecord], row_key: str, row_order=(),
                     teacher_records: Sequence[RunRecord] = ()) -> list[dict]:
    """Rows of mean-over-subjects accuracy per (teacher, student, montage) column.

    Each non-baseline cell carries the signed-rank p against the matched
    baseline over per-subject seed means.
    """
    base = seed_means([r for r in records if r.tags.get("method") == "baseline"], "student", "montage")
    cells = seed_means([r for r in records if r.tags.get("method") != "baseline"],
                       "teacher", "student", "montage", row_key)
    rows = []
    for t, s, m in _columns(records):
        column = f"{t}>{s}-{m}"
        b = subject_means(base.get((s, m), {}))
        rows.append({"row": "teacher", "column": column, "accuracy": teacher_accuracy(teacher_records, t),
                     "p": math.nan, "stars": "", "n_subjects": ""})
        rows.append({"row": "baseline", "column": column, "accuracy": _mean(b.values()), "p": math.nan,
                     "stars": "", "n_subjects": len(b)})
        labels = _ordered([k[3] for k in cells if k[:3] == (t, s, m)], row_order)
        for label in labels:
            c = subject_means(cells[(t, s, m, label)])
            shared = sorted(set(c) & set(b))
            p = wilcoxon_signed_rank([c[x] for x in shared], [b[x] for x in shared])[1] if shared else math.nan
            rows.append({"row": label, "column": column, "accuracy": _mean(c.values()), "p": p,
                         "stars": significance_stars(p) if _mean(c.values()) != _mean(b.values()) else "",
                         "n_subjects": len(c)})
    return rows


def layer_sweep_table(records, teacher_records=()):
    return comparison_table(records, "combo", COMBO_ORDER, teacher_records)


def montage_compare_table(records, teacher_records=()):
    return comparison_table(records, "method", METHOD_ORDER, teacher_records)


def ablation_table(records: Sequence[RunRecord]) -> list[dict]:
    base = seed_means([r for r in records if r.tags.get("method") == "baseline"], "student")
    b = _mean(subject_means(next(iter(base.values()), {})).values())
    cells = seed_means([r for r in records if r.tags.get("method") == "sk"], "centered", "criterion")
    rows = []
    for centered in ("True", "False"):
        rows.append({"centered": centered, "criterion": "baseline", "accuracy": b, "delta": math.nan})
        for crit in _ordered([k[1] for k in cells if k[0] == centered], CRITERION_ORDER):
            acc = _mean(subject_means(cells[(centered, crit)]).values())
            rows.append({"centered": centered, "criterion": crit, "accuracy": acc, "delta": acc - b})
    return rows


def cross_subject_grid(records: Sequence[RunRecord], significance: float = 0.05):
    """Relative improvement (%) of SK over the student's own baseline.

    Returns ``(teacher_subjects, student_subjects, values, pvalues)`` where
    ``values[i][j]`` is None when the difference is not significant.
    """
    base = seed_means([r for r in records if r.tags.get("method") == "baseline"], "student")
    base = next(iter(base.values()), {})
    cells = seed_means([r for r in records if r.tags.get("method") == "sk"], "teacher_subject")
    students = sorted({r.subject_id for r in records if r.ok})
    teachers = _ordered([k[0] for k in cells], sorted(k[0] for k in cells if k[0] != "SI") + ["SI"])
    values, pvalues = [], []
    for t in teachers:
        row_v, row_p = [], []
        for s in students:
            sk, bl = cells.get((t,), {}).get(s), base.get(s)
            if not sk or not bl:
                row_v.append(None)
                row_p.append(math.nan)
                continue
            p = wilcoxon_rank_sum(sk, bl)[1]
            rel = 100.0 * (_mean(sk) - _mean(bl)) / _mean(bl) if _mean(bl) else math.nan
            row_v.append(rel if p < significance else None)
            row_p.append(p)
        values.append(row_v)
        pvalues.append(row_p)
    return teachers, students, values, pvalues


def elimination_curve_table(results: Sequence[EliminationResult]) -> list[dict]:
    """Mean accuracy per channel count for runs without KD and with SK, plus a rank-sum p."""
    by_mode: dict[str, dict[int, list[float]]] = {}
    for r in results:
        mode = r.label.rsplit("-", 1)[-1]
        for n, acc in r.curve:
            by_mode.setdefault(mode, {}).setdefault(n, []).append(acc)
    counts = sorted({n for m in by_mode.values() for n in m}, reverse=True)
    rows = []
    for n in counts:
        a = sorted(by_mode.get("nokd", {}).get(n, []))
        b = sorted(by_mode.get("sk", {}).get(n, []))
        p = wilcoxon_rank_sum(b, a)[1] if a and b else math.nan
        rows.append({"n_channels": n, "nokd": _mean(a), "sk": _mean(b), "p": p,
                     "stars": significance_stars(p) if a and b else ""})
    return rows


# thin wrappers matching the study names

def run_layer_sweep(plan, ctx, store, n_jobs=1):
    return layer_sweep_table(execute(plan, ctx, store, n_jobs), store.records("teachers"))


def run_montage_compare(plan, ctx, store, n_jobs=1):
    return montage_compare_table(execute(plan, ctx, store, n_jobs), store.records("teachers"))


def run_cross_subject(plan, ctx, store, n_jobs=1):
    return cross_subject_grid(execute(plan, ctx, store, n_jobs), plan.significance)


def run_ablation(plan, ctx, store, n_jobs=1):
    return ablation_table(execute(plan, ctx, store, n_jobs))


STUDY_RUNNERS = {
    "layer_sweep": run_layer_sweep,
    "montage_compare": run_montage_compare,
    "cross_subject": run_cross_subject,
    "ablation": run_ablation,
    "elimination": lambda plan, ctx, store, n_jobs=1: elimination_curve_table(
        run_elimination(plan, ctx, store, n_jobs)),
}
