"""Meta-testing protocol, configuration sweeps, and winner-map rows.

Meta-testing samples reduced-label tasks from the dataset's held-out
support/query partitions. Per task, a clone of the trained head is adapted
on the support batch with a small-learning-rate Adam and scored on the query
batch; the zero-shot head skips adaptation entirely. Accuracies aggregate to
one mean per seed, then a cross-seed mean and population standard deviation.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .dataset import EmbeddingDataset
from .errors import UsageError
from .estimators import make_estimator
from .model import ProjectionModel, accuracy, grads, pretrained_model
from .numerics import make_rng
from .optim import AdamState, adam_step, check_finite_params
from .tasks import TEST_SPLIT, TaskConfig, materialize_episode, required_tasks, sample_tasks

DEFAULT_SEEDS = (0, 1, 2, 3, 4)


@dataclass(frozen=True)
class MetaTestPlan:
    n_way: int
    n_tasks: int
    adapt_lr: float = 1e-7
    adapt_epochs: int = 5
    seeds: tuple[int, ...] = DEFAULT_SEEDS

    def __post_init__(self):
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        if not self.seeds:
            raise UsageError("plan needs at least one seed")
        if self.adapt_lr <= 0:
            raise UsageError(f"adapt_lr must be positive, got {self.adapt_lr}")
        if self.adapt_epochs < 0:
            raise UsageError(f"adapt_epochs must be >= 0, got {self.adapt_epochs}")


@dataclass(frozen=True)
class EvalReport:
    dataset: str
    split: str
    algorithm: str
    n_way: int
    n_tasks: int
    seeds: tuple[int, ...]
    per_task_accuracy: tuple[tuple[float, ...], ...]  # [seed][task]
    per_seed_mean: tuple[float, ...]
    mean: float
    std: float
    zero_shot_mean: float | None = None

    @property
    def config(self) -> tuple[int, int]:
        return (self.n_way, self.n_tasks)


def _adapt_and_score(model: ProjectionModel, episode, plan: MetaTestPlan) -> float:
    params = {"w_img": model.w_img, "w_txt": model.w_txt}
    state = AdamState({k: v.shape for k, v in params.items()}, lr=plan.adapt_lr)
    for _ in range(plan.adapt_epochs):
        current = model.with_params(**params)
        g_img, g_txt = grads(current, episode.support)
        params = adam_step(params, {"w_img": g_img, "w_txt": g_txt}, state)
        check_finite_params(params, state.t)
    return accuracy(model.with_params(**params), episode.query)


def _seed_accuracies(model: ProjectionModel, dataset: EmbeddingDataset,
                     plan: MetaTestPlan, seed: int, adapt: bool) -> list[float]:
    rng = make_rng(seed)
    config = TaskConfig(plan.n_way, plan.n_tasks)
    tasks = sample_tasks(dataset.n_classes, config, rng, TEST_SPLIT)
    scores = []
    for task in tasks:
        episode = materialize_episode(dataset, task)
        if adapt:
            scores.append(_adapt_and_score(model, episode, plan))
        else:
            scores.append(accuracy(model, episode.query))
    return scores


def aggregate_report(dataset_name: str, split: str, algorithm: str, plan: MetaTestPlan,
                     per_task: list[list[float]], zero_shot_mean: float | None = None) -> EvalReport:
    per_seed_mean = [float(np.mean(row)) for row in per_task]
    return EvalReport(
        dataset=dataset_name,
        split=split,
        algorithm=algorithm,
        n_way=plan.n_way,
        n_tasks=plan.n_tasks,
        seeds=plan.seeds,
        per_task_accuracy=tuple(tuple(float(a) for a in row) for row in per_task),
        per_seed_mean=tuple(per_seed_mean),
        mean=float(np.mean(per_seed_mean)),
        std=float(np.std(per_seed_mean)),  # population std across seeds
        zero_shot_mean=zero_shot_mean,
    )


def meta_test(model: ProjectionModel | None, dataset: EmbeddingDataset, plan: MetaTestPlan,
              algorithm: str, dataset_name: str = "dataset", split: str = "test",
              jobs: int = 1) -> EvalReport:
    """Run the meta-testing protocol for one model.

    ``algorithm`` is a reporting label, except ``"zeroshot"`` which switches
    to the dataset's pretrained head and skips adaptation (the head is never
    updated at any point).
    """
    TaskConfig(plan.n_way, plan.n_tasks).validate(dataset.n_classes)
    adapt = algorithm != "zeroshot"
    if not adapt:
        model = pretrained_model(dataset)
    if model is None:
        raise UsageError(f"meta_test needs a model for algorithm {algorithm!r}")
    if model.d_img != dataset.d_img or model.d_txt != dataset.d_txt:
        raise UsageError(
            f"model dims ({model.d_img}, {model.d_txt}) do not match dataset "
            f"({dataset.d_img}, {dataset.d_txt})"
        )
    if jobs > 1 and len(plan.seeds) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            per_task = list(pool.map(lambda s: _seed_accuracies(model, dataset, plan, s, adapt), plan.seeds))
    else:
        per_task = [_seed_accuracies(model, dataset, plan, seed, adapt) for seed in plan.seeds]
    zs = None
    report = aggregate_report(dataset_name, split, algorithm, plan, per_task, zs)
    if algorithm == "zeroshot":
        report = replace(report, zero_shot_mean=report.mean)
    return report


def sweep(dataset: EmbeddingDataset, algorithms, n_values, seeds=DEFAULT_SEEDS, *,
          dataset_name: str = "dataset", split: str = "test",
          adapt_lr: float = 1e-7, adapt_epochs: int = 5,
          train_params: dict | None = None,
          jobs: int = 1) -> list[EvalReport]:
    """Train and meta-test every (algorithm, N) cell; T comes from the coverage rule.

    Each seed is one full run: the algorithm trains with that seed and is
    meta-tested with the same seed, so the cross-seed spread reflects both
    training and evaluation randomness. ``train_params`` maps algorithm name
    to estimator parameter overrides. Independent cells run in parallel under
    ``jobs``; results are identical to a serial run because every cell
    derives its own random streams.
    """
    algorithms = list(algorithms)
    n_values = [int(n) for n in n_values]
    seeds = tuple(int(s) for s in seeds)
    if not algorithms or not n_values:
        raise UsageError("sweep needs at least one algorithm and one N value")
    train_params = dict(train_params or {})
    units = []
    for n in n_values:
        t = required_tasks(dataset.n_classes, n)
        for algorithm in algorithms:
            units.append((n, t, algorithm))

    def run_unit(unit):
        n, t, algorithm = unit
        plan = MetaTestPlan(n_way=n, n_tasks=t, adapt_lr=adapt_lr, adapt_epochs=adapt_epochs, seeds=seeds)
        per_task = []
        for seed in seeds:
            if algorithm == "zeroshot":
                model = None
            else:
                overrides = dict(train_params.get(algorithm, {}))
                overrides["seed"] = seed
                if algorithm in ("mamf", "fomaml"):
                    overrides.setdefault("n_way", n)
                    overrides.setdefault("n_tasks", t)
                estimator = make_estimator(algorithm, **overrides)
                model = estimator.fit(dataset).model_
            run_plan = replace(plan, seeds=(seed,))
            per_task.extend(meta_test(model, dataset, run_plan, algorithm, dataset_name, split).per_task_accuracy)
        report = aggregate_report(dataset_name, split, algorithm, plan, [list(row) for row in per_task])
        if algorithm == "zeroshot":
            report = replace(report, zero_shot_mean=report.mean)
        return report

    if jobs > 1 and len(units) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            reports = list(pool.map(run_unit, units))
    else:
        reports = [run_unit(unit) for unit in units]

    zs_by_config = {r.config: r.mean for r in reports if r.algorithm == "zeroshot"}
    return [replace(r, zero_shot_mean=zs_by_config.get(r.config, r.zero_shot_mean)) for r in reports]


@dataclass(frozen=True)
class WinnerRow:
    dataset: str
    split: str
    n_way: int
    n_tasks: int
    zero_shot_mean: float
    winners: tuple[str, ...]


def winner_map(reports) -> list[WinnerRow]:
    """Best algorithm per configuration, rows ordered by zero-shot accuracy."""
    groups: dict[tuple, list[EvalReport]] = {}
    for report in reports:
        groups.setdefault((report.dataset, report.split, report.n_way, report.n_tasks), []).append(report)
    rows = []
    for (dataset_name, split, n, t), members in groups.items():
        if len({m.algorithm for m in members}) < 2:
            raise UsageError(f"winner map needs >= 2 algorithms per config, got {len(members)} for (N={n}, T={t})")
        best = max(m.mean for m in members)
        winners = tuple(m.algorithm for m in members if m.mean == best)
        zs = next((m.mean for m in members if m.algorithm == "zeroshot"),
                  next((m.zero_shot_mean for m in members if m.zero_shot_mean is not None), float("nan")))
        rows.append(WinnerRow(dataset_name, split, n, t, float(zs), winners))
    rows.sort(key=lambda r: (np.isnan(r.zero_shot_mean), r.zero_shot_mean, r.dataset, r.split, r.n_way))
    return rows
