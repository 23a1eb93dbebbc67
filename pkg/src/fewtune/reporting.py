"""Rendering of evaluation reports: results/aggregate CSVs and two SVG plots.

CSV writes are atomic (temp file + rename) and byte-deterministic for equal
inputs: re-rendering the same reports reproduces the same files exactly.
"""

from __future__ import annotations

import csv
import io
import os
from collections import defaultdict
from dataclasses import replace
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .errors import DataFormatError, UsageError
from .evaluation import EvalReport, MetaTestPlan, aggregate_report, winner_map

RESULTS_CSV = "results.csv"
AGGREGATE_CSV = "aggregate.csv"
ACCURACY_SVG = "accuracy.svg"
WINNER_SVG = "winner_map.svg"

_ALGORITHM_ORDER = ("zeroshot", "classical", "mamf", "fomaml")


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    try:
        tmp.write_text(text)
        os.replace(tmp, path)
    except OSError as exc:
        raise DataFormatError(f"cannot write {path}: {exc}") from exc
    finally:
        if tmp.exists():
            tmp.unlink(missing_ok=True)


def _fmt(x: float | None) -> str:
    return "" if x is None else repr(float(x))


def write_results_csv(reports, path) -> None:
    """One row per (seed, task) query accuracy."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["dataset", "split", "algorithm", "N", "T", "seed", "task_id", "accuracy"])
    for report in reports:
        for seed, row in zip(report.seeds, report.per_task_accuracy):
            for task_id, acc in enumerate(row):
                writer.writerow([report.dataset, report.split, report.algorithm,
                                 report.n_way, report.n_tasks, seed, task_id, _fmt(acc)])
    _atomic_write(Path(path), buf.getvalue())


def write_aggregate_csv(reports, path) -> None:
    """One row per report; std is the population standard deviation across seeds."""
    buf = io.StringIO()
    buf.write("# std = population standard deviation of per-seed mean accuracy\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["dataset", "algorithm", "N", "T", "mean", "std", "zero_shot_mean"])
    for report in reports:
        writer.writerow([report.dataset, report.algorithm, report.n_way, report.n_tasks,
                         _fmt(report.mean), _fmt(report.std), _fmt(report.zero_shot_mean)])
    _atomic_write(Path(path), buf.getvalue())


def _algorithm_sort_key(name: str):
    try:
        return (0, _ALGORITHM_ORDER.index(name))
    except ValueError:
        return (1, name)


def plot_accuracy(reports, path) -> None:
    """Mean accuracy (with std bars) against the (N, T) configurations."""
    by_group = defaultdict(dict)
    configs = sorted({(r.n_way, r.n_tasks) for r in reports})
    multi = len({(r.dataset, r.split) for r in reports}) > 1
    for r in reports:
        label = r.algorithm if not multi else f"{r.dataset}/{r.split}/{r.algorithm}"
        by_group[label][(r.n_way, r.n_tasks)] = r
    xs = range(len(configs))
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for label in sorted(by_group, key=_algorithm_sort_key):
        cells = by_group[label]
        ys = [cells[c].mean if c in cells else float("nan") for c in configs]
        errs = [cells[c].std if c in cells else 0.0 for c in configs]
        ax.errorbar(xs, ys, yerr=errs, marker="o", capsize=3, label=label)
    ax.set_xticks(list(xs))
    ax.set_xticklabels([f"({n},{t})" for n, t in configs], rotation=45)
    ax.set_xlabel("(N, T) configuration")
    ax.set_ylabel("mean query accuracy")
    ax.set_ylim(0.0, 1.05)
    ax.legend()
    ax.grid(alpha=0.3)
    fig.tight_layout()
    _save_svg(fig, path)


def plot_winner_map(reports, path) -> None:
    """Best algorithm per configuration against its zero-shot accuracy."""
    rows = winner_map(reports)
    algorithms = sorted({w for row in rows for w in row.winners}, key=_algorithm_sort_key)
    cmap = plt.get_cmap("tab10")
    colors = {a: cmap(i % 10) for i, a in enumerate(algorithms)}
    fig, ax = plt.subplots(figsize=(7, 4.5))
    seen = set()
    for row in rows:
        primary = row.winners[0]
        label = primary if primary not in seen else None
        seen.add(primary)
        ax.scatter(row.zero_shot_mean, row.n_way, s=70, color=colors[primary], label=label)
        if len(row.winners) > 1:
            ax.annotate(" tie: " + "/".join(row.winners), (row.zero_shot_mean, row.n_way), fontsize=7)
    ax.set_xlabel("zero-shot mean accuracy")
    ax.set_ylabel("N (classes per task)")
    ax.set_title("best algorithm per configuration")
    ax.grid(alpha=0.3)
    if seen:
        ax.legend()
    fig.tight_layout()
    _save_svg(fig, path)


def _save_svg(fig, path) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp.svg")
    try:
        with plt.rc_context({"svg.fonttype": "path"}):  # self-contained, no font assets
            fig.savefig(tmp, format="svg", metadata={"Date": None})
        os.replace(tmp, path)
    except OSError as exc:
        raise DataFormatError(f"cannot write {path}: {exc}") from exc
    finally:
        plt.close(fig)
        if tmp.exists():
            tmp.unlink(missing_ok=True)


def render_reports(reports, out_dir) -> dict[str, Path]:
    """Write both CSVs and both SVGs into ``out_dir`` (created on demand)."""
    reports = list(reports)
    if not reports:
        raise UsageError("render_reports needs at least one report")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {
        "results": out_dir / RESULTS_CSV,
        "aggregate": out_dir / AGGREGATE_CSV,
        "accuracy": out_dir / ACCURACY_SVG,
        "winner_map": out_dir / WINNER_SVG,
    }
    write_results_csv(reports, paths["results"])
    write_aggregate_csv(reports, paths["aggregate"])
    plot_accuracy(reports, paths["accuracy"])
    if len({r.algorithm for r in reports}) >= 2:
        plot_winner_map(reports, paths["winner_map"])
    else:
        paths.pop("winner_map")
    return paths


def reports_from_results_csv(path) -> list[EvalReport]:
    """Rebuild reports (and their aggregates) from a results CSV."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise DataFormatError(f"cannot read results {path}: {exc}") from exc
    lines = [ln for ln in text.splitlines() if ln and not ln.startswith("#")]
    reader = csv.DictReader(lines)
    cells: dict[tuple, dict[int, dict[int, float]]] = defaultdict(lambda: defaultdict(dict))
    for row in reader:
        try:
            key = (row["dataset"], row["split"], row["algorithm"], int(row["N"]), int(row["T"]))
            cells[key][int(row["seed"])][int(row["task_id"])] = float(row["accuracy"])
        except (KeyError, TypeError, ValueError) as exc:
            raise DataFormatError(f"{path}: malformed results row {row!r}: {exc}") from exc
    reports = []
    for (dataset_name, split, algorithm, n, t), by_seed in cells.items():
        seeds = sorted(by_seed)
        per_task = [[by_seed[s][k] for k in sorted(by_seed[s])] for s in seeds]
        plan = MetaTestPlan(n_way=n, n_tasks=t, seeds=tuple(seeds))
        reports.append(aggregate_report(dataset_name, split, algorithm, plan, per_task))
    zs = {(r.dataset, r.split, r.config): r.mean for r in reports if r.algorithm == "zeroshot"}
    reports = [replace(r, zero_shot_mean=zs.get((r.dataset, r.split, r.config), r.zero_shot_mean))
               for r in reports]
    reports.sort(key=lambda r: (r.dataset, r.split, r.n_way, r.n_tasks, _algorithm_sort_key(r.algorithm)))
    return reports
