"""``skkd`` command-line entry point.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.
Output layout under ``--out``: ``results/`` (run records), ``teachers/``
(teacher checkpoints), ``report/<study>/`` (CSV tables and figures).
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .adapters import ADAPTERS
from .config import Config, ConfigError
from .data import write_container

log = logging.getLogger("skkd")

VERBS = ("prepare", "train-teacher", "distill", "baseline", "sweep", "eliminate", "ablate", "report")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="skkd", description="Similarity-keeping distillation for low-density EEG montages.")
    p.add_argument("verb", choices=VERBS, help="what to do")
    p.add_argument("--config", type=Path, help="INI-style experiment config")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config value, e.g. distill.beta=450 (repeatable)")
    p.add_argument("--out", type=Path, default=Path("out"), help="output directory (default: out)")
    p.add_argument("--jobs", type=int, default=1, help="parallel training processes")
    p.add_argument("--seed-list", help="comma-separated seeds, overrides experiment.seeds")
    p.add_argument("--study", help="study to report (default: every study in the store)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _context(cfg: Config, out: Path):
    from .experiments import Context
    montage_dirs = (cfg["data.montage_dir"],) if cfg["data.montage_dir"] else ()
    subjects = tuple(dict.fromkeys(list(cfg["data.subjects"]) + [cfg["data.subject"]]))
    return Context(cfg.data_root, out, cfg.teacher_config(), cfg["data.train_session"],
                   cfg["data.test_session"], montage_dirs, subjects)


def _print_record(r) -> None:
    print(f"{r.run_id}  {r.role:18s} {r.subject_id:6s} {r.architecture:14s} seed={r.seed} "
          f"acc={r.test_accuracy:.2f} best_epoch={r.best_epoch} status={r.status}")


def cmd_prepare(cfg: Config, args) -> int:
    name = cfg["prepare.adapter"]
    if name not in ADAPTERS:
        raise ConfigError(f"prepare.adapter: unknown adapter {name!r}; choose from {', '.join(sorted(ADAPTERS))}")
    root = cfg.data_root
    kw = dict(source=cfg["prepare.source"], subjects=cfg["data.subjects"],
              sessions=(cfg["data.train_session"], cfg["data.test_session"]),
              labels_dir=cfg["prepare.labels_dir"], window_start=cfg["prepare.window_start"],
              window_length=cfg["prepare.window_length"], fs=cfg["prepare.fs"],
              band=(cfg["prepare.band_low"], cfg["prepare.band_high"]),
              n_trials=cfg["prepare.synthetic_trials"], n_classes=cfg["prepare.synthetic_classes"])
    for stem, dataset in ADAPTERS[name](**kw):
        path = write_container(dataset, root / stem)
        print(f"{path}  trials={dataset.n_trials} channels={dataset.n_channels} samples={dataset.n_samples}")
    return 0


def _seeds(cfg: Config, args, default):
    return list(cfg["experiment.seeds"]) if args.seed_list else [default]


def cmd_train_teacher(cfg: Config, args) -> int:
    from .experiments import ResultsStore, TeacherKey, ensure_teacher
    ctx = _context(cfg, args.out)
    store = ResultsStore(args.out / "results")
    for seed in _seeds(cfg, args, cfg["teacher.seed"]):
        key = TeacherKey(cfg["teacher.architecture"], cfg["data.subject"], seed)
        path, record = ensure_teacher(ctx, key)
        if record is None:
            print(f"{path}: up to date")
        else:
            store.append("teachers", record)
            _print_record(record)
    return 0


def _single_runs(cfg: Config, args, distilled: bool) -> int:
    from .experiments import ResultsStore, TeacherKey, ensure_teacher
    from .models import read_manifest
    from .training import distill_student, train_student_baseline
    ctx = _context(cfg, args.out)
    store = ResultsStore(args.out / "results")
    subject = cfg["data.subject"]
    train = ctx.load(subject, ctx.train_session)
    test = ctx.load(subject, ctx.test_session)
    montage = ctx.montage(cfg["student.montage"])
    distill = cfg.distill_config() if distilled else None
    teacher, teacher_id = None, ""
    if distilled:
        if cfg["teacher.checkpoint"]:
            teacher = Path(cfg["teacher.checkpoint"])
        else:
            teacher, record = ensure_teacher(ctx, TeacherKey(cfg["teacher.architecture"], subject,
                                                             cfg["teacher.seed"]))
            if record is not None:
                store.append("teachers", record)
        teacher_id = read_manifest(teacher).get("run_id", "")
    failed = False
    for seed in _seeds(cfg, args, cfg["train.seed"]):
        tc = cfg.train_config(distill=distill, seed=seed)
        log_path = args.out / "logs" / f"{subject}-{tc.architecture}-{montage.name}-{'sk' if distilled else 'base'}-s{seed}.csv"
        if distilled:
            _, rec = distill_student(train, montage, teacher, tc, test=test, teacher_run_id=teacher_id,
                                     log_path=log_path)
        else:
            _, rec = train_student_baseline(train, montage, tc, test=test, log_path=log_path)
        store.append("runs", rec)
        _print_record(rec)
        failed |= not rec.ok
    return 2 if failed else 0


def _study(cfg: Config, args, study: str) -> int:
    from .experiments import ResultsStore, STUDY_RUNNERS, plan_from_config
    from .report import report
    plan = plan_from_config(cfg, study)
    ctx = _context(cfg, args.out)
    store = ResultsStore(args.out / "results")
    STUDY_RUNNERS[study](plan, ctx, store, args.jobs)
    for path in report(store, study, args.out / "report", plan.significance):
        print(path)
    return 0


def cmd_report(cfg: Config, args) -> int:
    from .experiments import ResultsStore, STUDIES
    from .report import ReportError, report
    store = ResultsStore(args.out / "results")
    studies = [args.study] if args.study else [s for s in store.studies() if s in STUDIES]
    if not studies:
        raise ReportError(f"no study results under {store.root}")
    for study in studies:
        for path in report(store, study, args.out / "report", cfg["experiment.significance"]):
            print(path)
    return 0


def dispatch(cfg: Config, args) -> int:
    if args.verb == "prepare":
        return cmd_prepare(cfg, args)
    if args.verb == "train-teacher":
        return cmd_train_teacher(cfg, args)
    if args.verb in ("distill", "baseline"):
        return _single_runs(cfg, args, args.verb == "distill")
    if args.verb == "sweep":
        study = cfg["experiment.study"]
        if study in ("elimination", "ablation"):
            raise ConfigError(f"experiment.study={study} has its own verb")
        return _study(cfg, args, study)
    if args.verb == "eliminate":
        return _study(cfg, args, "elimination")
    if args.verb == "ablate":
        return _study(cfg, args, "ablation")
    return cmd_report(cfg, args)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(sys.argv[1:] if argv is None else argv)
        overrides = list(args.overrides)
        if args.seed_list:
            overrides.append(f"experiment.seeds={args.seed_list}")
        if args.jobs < 1:
            raise UsageError("--jobs must be >= 1")
        cfg = Config.load(args.config, overrides)
        # surface bad distill/train values before any work starts
        cfg.distill_config()
        cfg.train_config()
    except (UsageError, ConfigError) as exc:
        parser.print_usage(sys.stderr)
        print(f"skkd: error: {exc}", file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        return dispatch(cfg, args)
    except ConfigError as exc:
        print(f"skkd: config error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failures are reported, not raised
        log.debug("failure", exc_info=True)
        print(f"skkd: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
