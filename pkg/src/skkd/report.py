"""Render a study from the results store to CSV tables and PNG figures.

Only reads the store.  Output is a function of the stored records alone, so
rendering twice gives byte-identical CSV files.
"""
from __future__ import annotations

import csv
import math
from pathlib import Path

from . import plotting
from .experiments import (ResultsStore, STUDIES, ablation_table, aborted, cross_subject_grid,
                          electrode_importance, elimination_curve_table, layer_sweep_table,
                          load_elimination, montage_compare_table)


class ReportError(RuntimeError):
    pass


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return "" if math.isnan(v) else f"{v:.4f}"
    return str(v)


def write_csv(path: Path, header, rows) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_cell(row.get(h)) for h in header])
    return path


def _bars(rows, out: Path, title: str):
    columns = sorted({r["column"] for r in rows})
    series = list(dict.fromkeys(r["row"] for r in rows))
    values = {s: {} for s in series}
    for r in rows:
        values[r["row"]][r["column"]] = r["accuracy"]
    fig, ax = plotting.figure(6.0)
    plotting.grouped_bars(ax, columns, series, values)
    ax.set_title(title)
    return plotting.save(fig, out)


def _render_comparison(rows, out_dir, study):
    header = ["column", "row", "accuracy", "p", "stars", "n_subjects"]
    return [write_csv(out_dir / "summary.csv", header, rows),
            _bars(rows, out_dir / "figures" / f"{study}.png", study.replace("_", " "))]


def _render_cross_subject(records, out_dir, significance):
    teachers, students, values, pvalues = cross_subject_grid(records, significance)
    header = ["teacher_subject"] + students
    rows = [[t] + list(v) for t, v in zip(teachers, values)]
    prow = [[t] + list(p) for t, p in zip(teachers, pvalues)]
    paths = [write_csv(out_dir / "summary.csv", header, [dict(zip(header, r)) for r in rows]),
             write_csv(out_dir / "pvalues.csv", header, [dict(zip(header, r)) for r in prow])]
    fig, ax = plotting.figure(6.0, 5.0)
    missing = [[math.isnan(p) for p in row] for row in pvalues]
    plotting.heatmap(ax, values, teachers, students, missing=missing)
    ax.set_xlabel("student subject")
    ax.set_ylabel("teacher subject")
    paths.append(plotting.save(fig, out_dir / "figures" / "cross_subject.png"))
    return paths


def _render_ablation(records, out_dir):
    rows = ablation_table(records)
    paths = [write_csv(out_dir / "summary.csv", ["centered", "criterion", "accuracy", "delta"], rows)]
    series = ["True", "False"]
    groups = list(dict.fromkeys(r["criterion"] for r in rows))
    values = {s: {r["criterion"]: r["accuracy"] for r in rows if r["centered"] == s} for s in series}
    fig, ax = plotting.figure(5.0)
    plotting.grouped_bars(ax, groups, series, values)
    ax.legend(["centered", "uncentered"], frameon=False)
    paths.append(plotting.save(fig, out_dir / "figures" / "ablation.png"))
    return paths


def _render_elimination(store, out_dir):
    results = load_elimination(store)
    if not results:
        return []
    rows = elimination_curve_table(results)
    paths = [write_csv(out_dir / "summary.csv", ["n_channels", "nokd", "sk", "p", "stars"], rows)]

    fig, ax = plotting.figure(5.0)
    ns = [r["n_channels"] for r in rows]
    for key, name in (("nokd", "w/o KD"), ("sk", "SK")):
        ax.plot(ns, [r[key] for r in rows], marker="o", ms=3, label=name)
    for r in rows:
        if r["stars"]:
            top = max(v for v in (r["nokd"], r["sk"]) if not math.isnan(v))
            ax.text(r["n_channels"], top + 1, r["stars"], ha="center", fontsize=7)
    ax.invert_xaxis()
    ax.set_xlabel("number of electrodes")
    ax.set_ylabel("accuracy (%)")
    ax.legend(frameon=False)
    paths.append(plotting.save(fig, out_dir / "figures" / "elimination_curve.png"))

    imp_rows = []
    for mode in sorted({r.label.rsplit("-", 1)[-1] for r in results}):
        runs = [r for r in results if r.label.endswith(f"-{mode}")]
        raw, norm = electrode_importance(runs)
        imp_rows += [{"mode": mode, "channel": ch, "raw": raw[ch], "normalised": norm[ch]}
                     for ch in runs[0].channels]
        fig, ax = plotting.figure(4.5, 4.5)
        plotting.scalp_map(ax, norm, title=mode)
        paths.append(plotting.save(fig, out_dir / "figures" / f"importance_{mode}.png"))
    paths.append(write_csv(out_dir / "importance.csv", ["mode", "channel", "raw", "normalised"], imp_rows))
    orders = [{"label": r.label, "order": " ".join(r.order)} for r in results]
    paths.append(write_csv(out_dir / "orders.csv", ["label", "order"], orders))
    return paths


def report(store: ResultsStore, study: str, out_dir, significance: float = 0.05) -> list[Path]:
    """Write ``summary.csv`` (+ extras) and ``figures/*.png`` for ``study`` under ``out_dir``."""
    if study not in STUDIES:
        raise ReportError(f"unknown study {study!r}")
    records = store.records(study)
    has_elim = study == "elimination" and store.artifacts("elimination", ".elim")
    if not records and not has_elim:
        raise ReportError(f"no records for study {study!r} in {store.root}")
    out_dir = Path(out_dir) / study
    teachers = store.records("teachers")
    if study == "layer_sweep":
        paths = _render_comparison(layer_sweep_table(records, teachers), out_dir, study)
    elif study == "montage_compare":
        paths = _render_comparison(montage_compare_table(records, teachers), out_dir, study)
    elif study == "cross_subject":
        paths = _render_cross_subject(records, out_dir, significance)
    elif study == "ablation":
        paths = _render_ablation(records, out_dir)
    else:
        paths = _render_elimination(store, out_dir)
    bad = sorted(aborted(records), key=lambda r: r.run_id)
    paths.append(write_csv(out_dir / "aborted.csv", ["run_id", "subject_id", "diagnostic"],
                           [{"run_id": r.run_id, "subject_id": r.subject_id, "diagnostic": r.diagnostic}
                            for r in bad]))
    return paths
