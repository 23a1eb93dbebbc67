"""Command-line interface.

Subcommands cover the whole pipeline: ``gen-synthetic``, ``import``,
``sample-tasks``, ``train``, ``meta-test``, ``sweep``, ``report``.

Every flag has a config-file equivalent: pass ``--config file.json`` where
the JSON maps subcommand names to flag values (dashes become underscores),
e.g. ``{"sweep": {"algorithms": "zeroshot,classical,mamf", "jobs": 2}}``.
Explicit flags override the file. ``FEWTUNE_OUTPUT_DIR`` and ``FEWTUNE_JOBS``
override the config file (but not explicit flags) for ``out_dir``/``jobs``.
Commands with an output directory echo their effective configuration to
``<out_dir>/config.json`` for provenance.

Exit codes: 0 success, 2 usage error, 3 data/format error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from pathlib import Path

from .dataset import import_csv_dataset, read_dataset, write_dataset
from .errors import DataFormatError, FewtuneError, UsageError
from .estimators import ALGORITHMS, make_estimator
from .evaluation import MetaTestPlan, meta_test, sweep
from .model import load_model, save_model
from .numerics import child_rng
from .reporting import render_reports, reports_from_results_csv
from .synthetic import SyntheticSpec, gen_synthetic
from .tasks import TEST_SPLIT, TaskConfig, required_tasks, sample_tasks

ENV_OUTPUT_DIR = "FEWTUNE_OUTPUT_DIR"
ENV_JOBS = "FEWTUNE_JOBS"


def _atomic_write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    try:
        tmp.write_text(text)
        os.replace(tmp, path)
    except OSError as exc:
        raise DataFormatError(f"cannot write {path}: {exc}") from exc
    finally:
        if tmp.exists():
            tmp.unlink(missing_ok=True)


def _parse_seeds(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(part) for part in str(text).replace(",", " ").split())
    except ValueError as exc:
        raise UsageError(f"cannot parse seed list {text!r}: {exc}") from exc


def _parse_tasks(value) -> object:
    if value in (None, "auto"):
        return "auto"
    try:
        return int(value)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"--tasks must be an integer or 'auto', got {value!r}") from exc


def _load_config_section(config_path, command: str) -> dict:
    if not config_path:
        return {}
    path = Path(config_path)
    try:
        tree = json.loads(path.read_text())
    except OSError as exc:
        raise DataFormatError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(tree, dict):
        raise DataFormatError(f"{path}: config root must be an object")
    section = tree.get(command, {})
    if not isinstance(section, dict):
        raise DataFormatError(f"{path}: section {command!r} must be an object")
    return section


def _effective(args: argparse.Namespace, defaults: dict) -> dict:
    """Merge defaults < config file < env (out_dir/jobs) < explicit flags."""
    section = _load_config_section(args.config, args.command)
    unknown = set(section) - set(defaults)
    if unknown:
        raise UsageError(f"config section {args.command!r} has unknown keys {sorted(unknown)}")
    merged = dict(defaults)
    merged.update(section)
    if "out_dir" in defaults and os.environ.get(ENV_OUTPUT_DIR):
        merged["out_dir"] = os.environ[ENV_OUTPUT_DIR]
    if "jobs" in defaults and os.environ.get(ENV_JOBS):
        merged["jobs"] = int(os.environ[ENV_JOBS])
    for key in defaults:
        flag_value = getattr(args, key, None)
        if flag_value is not None:
            merged[key] = flag_value
    missing = [k for k, v in merged.items() if v is _REQUIRED]
    if missing:
        raise UsageError(f"missing required option(s): {', '.join('--' + m.replace('_', '-') for m in missing)}")
    return merged


class _Required:
    def __repr__(self):
        return "<required>"


_REQUIRED = _Required()


def _echo_config(out_dir: Path, command: str, cfg: dict) -> None:
    payload = {command: {k: (str(v) if isinstance(v, Path) else v) for k, v in cfg.items()}}
    _atomic_write_text(out_dir / "config.json", json.dumps(payload, indent=2, sort_keys=True) + "\n")


# --- subcommands -----------------------------------------------------------

GEN_DEFAULTS = dict(
    out=_REQUIRED, classes=10, train=60, support=10, query=10,
    d_img=64, d_txt=48, d_joint=32, sigma_between=1.0, sigma_within=0.25,
    spurious=False, spurious_scale=3.0, template="An image of {label}.", seed=0,
)


def cmd_gen_synthetic(args) -> int:
    cfg = _effective(args, GEN_DEFAULTS)
    spec = SyntheticSpec(
        n_classes=cfg["classes"], n_train=cfg["train"], n_support=cfg["support"], n_query=cfg["query"],
        d_img=cfg["d_img"], d_txt=cfg["d_txt"], d_joint=cfg["d_joint"],
        sigma_between=cfg["sigma_between"], sigma_within=cfg["sigma_within"],
        spurious=cfg["spurious"], spurious_scale=cfg["spurious_scale"],
        prompt_template=cfg["template"],
    )
    ds = gen_synthetic(spec, child_rng(cfg["seed"], 0))
    write_dataset(ds, cfg["out"])
    print(f"wrote {cfg['out']}: {ds.n_classes} classes, dims (img={ds.d_img}, txt={ds.d_txt}, joint={ds.d_joint}), "
          f"splits per class (train={ds.n_train}, support={ds.n_support}, query={ds.n_query})")
    return 0


IMPORT_DEFAULTS = dict(manifest=_REQUIRED, out=_REQUIRED)


def cmd_import(args) -> int:
    cfg = _effective(args, IMPORT_DEFAULTS)
    ds = import_csv_dataset(cfg["manifest"])
    write_dataset(ds, cfg["out"])
    print(f"imported {ds.n_classes} classes into {cfg['out']}")
    return 0


SAMPLE_DEFAULTS = dict(dataset=_REQUIRED, n=_REQUIRED, tasks="auto", seed=0, out=_REQUIRED)


def cmd_sample_tasks(args) -> int:
    cfg = _effective(args, SAMPLE_DEFAULTS)
    ds = read_dataset(cfg["dataset"])
    n = int(cfg["n"])
    tasks = _parse_tasks(cfg["tasks"])
    t = required_tasks(ds.n_classes, n) if tasks == "auto" else tasks
    sampled = sample_tasks(ds.n_classes, TaskConfig(n, t), child_rng(cfg["seed"], 0), TEST_SPLIT)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["task_id", "class_indices"])
    for task_id, task in enumerate(sampled):
        writer.writerow([task_id, " ".join(str(i) for i in task.class_indices)])
    _atomic_write_text(Path(cfg["out"]), buf.getvalue())
    print(f"wrote {t} tasks (N={n}) to {cfg['out']}")
    return 0


TRAIN_DEFAULTS = dict(
    dataset=_REQUIRED, algorithm=_REQUIRED, out=_REQUIRED, log=None,
    n=5, tasks="auto", epochs=None, lr=None, batch_size=None,
    inner_steps=None, inner_lr=None, passes=None, support_fraction=None,
    scale=None, normalize=None, seed=0,
)


def _estimator_overrides(cfg: dict, n_classes: int) -> dict:
    algorithm = cfg["algorithm"]
    overrides: dict = {}
    if algorithm != "zeroshot" and cfg.get("seed") is not None:
        overrides["seed"] = cfg["seed"]
    if algorithm in ("mamf", "fomaml") and cfg.get("n") is not None:
        overrides["n_way"] = int(cfg["n"])
        overrides["n_tasks"] = _parse_tasks(cfg.get("tasks"))
    if cfg.get("epochs") is not None:
        if algorithm == "classical":
            overrides["epochs"] = cfg["epochs"]
        elif algorithm == "mamf":
            overrides["epochs_per_task"] = cfg["epochs"]
        elif algorithm == "fomaml":
            overrides["passes"] = cfg["epochs"]
    if cfg.get("lr") is not None:
        if algorithm in ("classical", "mamf"):
            overrides["lr"] = cfg["lr"]
        elif algorithm == "fomaml":
            overrides["outer_lr"] = cfg["lr"]
    for key in ("inner_steps", "inner_lr", "passes", "support_fraction"):
        if cfg.get(key) is not None and algorithm == "fomaml":
            overrides[key] = cfg[key]
    if cfg.get("batch_size") is not None and algorithm in ("classical", "mamf"):
        overrides["batch_size"] = cfg["batch_size"]
    for key in ("scale", "normalize"):
        if cfg.get(key) is not None:
            overrides[key] = cfg[key]
    return overrides


def cmd_train(args) -> int:
    cfg = _effective(args, TRAIN_DEFAULTS)
    if cfg["algorithm"] not in ALGORITHMS:
        raise UsageError(f"unknown algorithm {cfg['algorithm']!r}; choose from {sorted(ALGORITHMS)}")
    ds = read_dataset(cfg["dataset"])
    estimator = make_estimator(cfg["algorithm"], **_estimator_overrides(cfg, ds.n_classes))
    estimator.fit(ds)
    save_model(estimator.model_, cfg["out"])
    if cfg["log"]:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["step", "task_id", "loss"])
        for step, task_id, step_loss in estimator.history_:
            writer.writerow([step, task_id, repr(float(step_loss))])
        _atomic_write_text(Path(cfg["log"]), buf.getvalue())
    print(f"trained {cfg['algorithm']} ({estimator.n_steps_} optimizer steps), checkpoint at {cfg['out']}")
    return 0


META_DEFAULTS = dict(
    dataset=_REQUIRED, algorithm="zeroshot", checkpoint=None, out_dir=_REQUIRED,
    n=_REQUIRED, tasks="auto", adapt_epochs=5, adapt_lr=1e-7, seeds="0,1,2,3,4",
    dataset_name=None, split="test", jobs=1,
    epochs=None, lr=None, batch_size=None, inner_steps=None, inner_lr=None,
    passes=None, support_fraction=None, scale=None, normalize=None, seed=0,
)


def cmd_meta_test(args) -> int:
    cfg = _effective(args, META_DEFAULTS)
    ds = read_dataset(cfg["dataset"])
    n = int(cfg["n"])
    tasks = _parse_tasks(cfg["tasks"])
    t = required_tasks(ds.n_classes, n) if tasks == "auto" else tasks
    plan = MetaTestPlan(n_way=n, n_tasks=t, adapt_lr=cfg["adapt_lr"],
                        adapt_epochs=cfg["adapt_epochs"], seeds=_parse_seeds(cfg["seeds"]))
    dataset_name = cfg["dataset_name"] or Path(cfg["dataset"]).stem
    algorithm = cfg["algorithm"]
    if cfg["checkpoint"]:
        if algorithm == "zeroshot":
            algorithm = "checkpoint"  # report label; zero-shot never uses a checkpoint
        model = load_model(cfg["checkpoint"])
    elif algorithm == "zeroshot":
        model = None
    else:
        if algorithm not in ALGORITHMS:
            raise UsageError(f"unknown algorithm {algorithm!r}; choose from {sorted(ALGORITHMS)}")
        estimator = make_estimator(algorithm, **_estimator_overrides(cfg, ds.n_classes))
        model = estimator.fit(ds).model_
    report = meta_test(model, ds, plan, algorithm, dataset_name, cfg["split"], jobs=cfg["jobs"])
    out_dir = Path(cfg["out_dir"])
    render_reports([report], out_dir)
    _echo_config(out_dir, "meta-test", cfg)
    print(f"{algorithm} (N={n}, T={t}): mean={report.mean:.4f} std={report.std:.4f} -> {out_dir}")
    return 0


SWEEP_DEFAULTS = dict(
    dataset=_REQUIRED, algorithms="zeroshot,classical,mamf,fomaml", out_dir=_REQUIRED,
    n_min=2, n_max=None, adapt_epochs=5, adapt_lr=1e-7, seeds="0,1,2,3,4",
    dataset_name=None, split="test", jobs=1,
    epochs=None, lr=None, batch_size=None, inner_steps=None, inner_lr=None,
    passes=None, support_fraction=None, scale=None, normalize=None,
)


def cmd_sweep(args) -> int:
    cfg = _effective(args, SWEEP_DEFAULTS)
    ds = read_dataset(cfg["dataset"])
    n_max = cfg["n_max"] if cfg["n_max"] is not None else ds.n_classes - 1
    if not 2 <= cfg["n_min"] <= n_max <= ds.n_classes:
        raise UsageError(f"need 2 <= n_min <= n_max <= {ds.n_classes}, got [{cfg['n_min']}, {n_max}]")
    algorithms = [a.strip() for a in str(cfg["algorithms"]).split(",") if a.strip()]
    for algorithm in algorithms:
        if algorithm not in ALGORITHMS:
            raise UsageError(f"unknown algorithm {algorithm!r}; choose from {sorted(ALGORITHMS)}")
    train_params = {}
    for algorithm in algorithms:
        if algorithm == "zeroshot":
            continue
        unit_cfg = dict(cfg)
        unit_cfg["algorithm"] = algorithm
        overrides = _estimator_overrides(unit_cfg, ds.n_classes)
        overrides.pop("seed", None)
        overrides.pop("n_way", None)
        overrides.pop("n_tasks", None)
        train_params[algorithm] = overrides
    dataset_name = cfg["dataset_name"] or Path(cfg["dataset"]).stem
    reports = sweep(
        ds, algorithms, range(cfg["n_min"], n_max + 1), seeds=_parse_seeds(cfg["seeds"]),
        dataset_name=dataset_name, split=cfg["split"],
        adapt_lr=cfg["adapt_lr"], adapt_epochs=cfg["adapt_epochs"],
        train_params=train_params, jobs=cfg["jobs"],
    )
    out_dir = Path(cfg["out_dir"])
    render_reports(reports, out_dir)
    _echo_config(out_dir, "sweep", cfg)
    print(f"swept N={cfg['n_min']}..{n_max} x {len(algorithms)} algorithms -> {out_dir}")
    return 0


REPORT_DEFAULTS = dict(results=_REQUIRED, out_dir=_REQUIRED)


def cmd_report(args) -> int:
    cfg = _effective(args, REPORT_DEFAULTS)
    reports = reports_from_results_csv(cfg["results"])
    if not reports:
        raise DataFormatError(f"{cfg['results']}: no result rows found")
    out_dir = Path(cfg["out_dir"])
    render_reports(reports, out_dir)
    _echo_config(out_dir, "report", cfg)
    print(f"re-rendered {len(reports)} reports -> {out_dir}")
    return 0


# --- parser ----------------------------------------------------------------

def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", default=None, help="JSON config file; flags override it")


def _num(p, *names, **kw):
    for name in names:
        p.add_argument(name, default=None, **kw)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fewtune",
                                     description="Few-shot transfer learning over frozen embeddings")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-synthetic", help="generate a synthetic embedding dataset")
    _add_common(p)
    p.add_argument("--out", default=None)
    _num(p, "--classes", "--train", "--support", "--query", "--d-img", "--d-txt", "--d-joint",
         "--seed", type=int)
    _num(p, "--sigma-between", "--sigma-within", "--spurious-scale", type=float)
    p.add_argument("--spurious", action="store_true", default=None)
    p.add_argument("--template", default=None)
    p.set_defaults(func=cmd_gen_synthetic)

    p = sub.add_parser("import", help="convert a CSV directory + manifest to FEWEMB")
    _add_common(p)
    p.add_argument("--manifest", default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_import)

    p = sub.add_parser("sample-tasks", help="emit an episode manifest CSV for audit")
    _add_common(p)
    p.add_argument("--dataset", default=None)
    _num(p, "--n", "--seed", type=int)
    p.add_argument("--tasks", default=None, help="task count or 'auto'")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_sample_tasks)

    def add_train_flags(p):
        _num(p, "--epochs", "--inner-steps", "--passes", "--batch-size", type=int)
        _num(p, "--lr", "--inner-lr", "--support-fraction", "--scale", type=float)
        p.add_argument("--normalize", action="store_true", default=None)

    p = sub.add_parser("train", help="train one algorithm and write a checkpoint")
    _add_common(p)
    p.add_argument("--dataset", default=None)
    p.add_argument("--algorithm", default=None, choices=sorted(ALGORITHMS))
    _num(p, "--n", "--seed", type=int)
    p.add_argument("--tasks", default=None)
    p.add_argument("--out", default=None, help="checkpoint path")
    p.add_argument("--log", default=None, help="training-log CSV path")
    add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("meta-test", help="meta-test a checkpoint or freshly trained model")
    _add_common(p)
    p.add_argument("--dataset", default=None)
    p.add_argument("--algorithm", default=None, choices=sorted(ALGORITHMS))
    p.add_argument("--checkpoint", default=None)
    _num(p, "--n", "--adapt-epochs", "--jobs", "--seed", type=int)
    p.add_argument("--tasks", default=None)
    _num(p, "--adapt-lr", type=float)
    p.add_argument("--seeds", default=None, help="comma-separated evaluation seeds")
    p.add_argument("--dataset-name", default=None)
    p.add_argument("--split", default=None)
    p.add_argument("--out-dir", default=None)
    add_train_flags(p)
    p.set_defaults(func=cmd_meta_test)

    p = sub.add_parser("sweep", help="train and meta-test every (algorithm, N) cell")
    _add_common(p)
    p.add_argument("--dataset", default=None)
    p.add_argument("--algorithms", default=None, help="comma-separated algorithm names")
    _num(p, "--n-min", "--n-max", "--adapt-epochs", "--jobs", type=int)
    _num(p, "--adapt-lr", type=float)
    p.add_argument("--seeds", default=None)
    p.add_argument("--dataset-name", default=None)
    p.add_argument("--split", default=None)
    p.add_argument("--out-dir", default=None)
    add_train_flags(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report", help="re-render plots and aggregates from a results CSV")
    _add_common(p)
    p.add_argument("--results", default=None)
    p.add_argument("--out-dir", default=None)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except FewtuneError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
