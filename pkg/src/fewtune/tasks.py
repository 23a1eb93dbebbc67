"""Uniform task sampling and episode materialization.

A task restricts the label space to an N-class subset of the dataset's M
classes. Meta-testing tasks draw their support and query batches from the
dataset's fixed support/query partitions; training tasks draw from the train
partition, either whole (sequential fine-tuning) or split into a support and
query half (inner/outer optimization).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dataset import EmbeddingDataset
from .errors import UsageError
from .model import Batch

TRAIN_SPLIT = "train"
TEST_SPLIT = "test"


@dataclass(frozen=True)
class TaskConfig:
    n_way: int
    n_tasks: int

    def validate(self, n_classes: int) -> "TaskConfig":
        if not 2 <= self.n_way <= n_classes:
            raise UsageError(f"n_way={self.n_way} must satisfy 2 <= n_way <= {n_classes}")
        if self.n_tasks < 1:
            raise UsageError(f"n_tasks={self.n_tasks} must be >= 1")
        return self


@dataclass(frozen=True)
class Task:
    class_indices: tuple[int, ...]
    split_source: str  # TRAIN_SPLIT or TEST_SPLIT

    def __post_init__(self):
        object.__setattr__(self, "class_indices", tuple(int(i) for i in self.class_indices))
        if self.split_source not in (TRAIN_SPLIT, TEST_SPLIT):
            raise UsageError(f"unknown split source {self.split_source!r}")
        if len(set(self.class_indices)) != len(self.class_indices):
            raise UsageError(f"task classes must be distinct, got {self.class_indices}")

    @property
    def n_way(self) -> int:
        return len(self.class_indices)


@dataclass(frozen=True)
class Episode:
    task: Task
    support: Batch
    query: Batch


def required_tasks(n_classes: int, n_way: int, p_fail: float = 0.001) -> int:
    """Task count that covers every class with per-class failure below p_fail.

    Rounds log(p_fail)/log(1 - n_way/n_classes) to the nearest integer;
    a task over all classes needs exactly one draw.
    """
    if not 2 <= n_way <= n_classes:
        raise UsageError(f"n_way={n_way} must satisfy 2 <= n_way <= {n_classes}")
    if not 0.0 < p_fail < 1.0:
        raise UsageError(f"p_fail must lie in (0, 1), got {p_fail}")
    if n_way == n_classes:
        return 1
    t = math.log(p_fail) / math.log(1.0 - n_way / n_classes)
    return max(1, int(math.floor(t + 0.5)))


def sample_tasks(n_classes: int, config: TaskConfig, rng: np.random.Generator,
                 split_source: str = TEST_SPLIT) -> list[Task]:
    """Independent uniform N-class subsets; duplicates across tasks allowed.

    Class indices are stored sorted, the canonical representation of the
    sampled subset.
    """
    config.validate(n_classes)
    tasks = []
    for _ in range(config.n_tasks):
        picked = np.sort(rng.choice(n_classes, size=config.n_way, replace=False))
        tasks.append(Task(class_indices=tuple(picked), split_source=split_source))
    return tasks


def _check_task(ds: EmbeddingDataset, task: Task) -> None:
    if task.n_way < 2:
        raise UsageError(f"task needs at least 2 classes, got {task.n_way}")
    bad = [i for i in task.class_indices if not 0 <= i < ds.n_classes]
    if bad:
        raise UsageError(f"task class indices {bad} out of range [0, {ds.n_classes})")


def _stack_split(ds: EmbeddingDataset, task: Task, split: str) -> tuple[np.ndarray, np.ndarray]:
    """Class-major rows of one per-class partition, labels remapped to 0..N-1."""
    rows = [getattr(ds.classes[i], split) for i in task.class_indices]
    labels = np.repeat(np.arange(task.n_way), [r.shape[0] for r in rows])
    return np.concatenate(rows, axis=0), labels


def task_batch(ds: EmbeddingDataset, task: Task) -> Batch:
    """The task's whole train partition as one batch (no support/query split)."""
    _check_task(ds, task)
    images, labels = _stack_split(ds, task, "train")
    return Batch(images=images, labels=labels, texts=ds.text_matrix(task.class_indices))


def materialize_episode(ds: EmbeddingDataset, task: Task, support_fraction: float = 0.5,
                        rng: np.random.Generator | None = None) -> Episode:
    """Build the task's support and query batches.

    Meta-testing tasks use the dataset's fixed support and query partitions.
    Training tasks split each class's train partition by ``support_fraction``,
    shuffling rows first when an rng is supplied.
    """
    _check_task(ds, task)
    texts = ds.text_matrix(task.class_indices)
    if task.split_source == TEST_SPLIT:
        if ds.n_support < 1 or ds.n_query < 1:
            raise UsageError(
                f"dataset has {ds.n_support} support / {ds.n_query} query rows per class; both must be >= 1"
            )
        s_images, s_labels = _stack_split(ds, task, "support")
        q_images, q_labels = _stack_split(ds, task, "query")
    else:
        if not 0.0 < support_fraction < 1.0:
            raise UsageError(f"support_fraction must lie in (0, 1), got {support_fraction}")
        n_rows = ds.n_train
        n_support = int(round(n_rows * support_fraction))
        if n_support < 1 or n_rows - n_support < 1:
            raise UsageError(
                f"train partition of {n_rows} rows per class cannot be split "
                f"{support_fraction:.0%}/{1 - support_fraction:.0%} with both sides non-empty"
            )
        s_parts, q_parts = [], []
        for class_idx in task.class_indices:
            rows = ds.classes[class_idx].train
            order = rng.permutation(n_rows) if rng is not None else np.arange(n_rows)
            s_parts.append(rows[order[:n_support]])
            q_parts.append(rows[order[n_support:]])
        s_images = np.concatenate(s_parts, axis=0)
        q_images = np.concatenate(q_parts, axis=0)
        s_labels = np.repeat(np.arange(task.n_way), n_support)
        q_labels = np.repeat(np.arange(task.n_way), n_rows - n_support)
    return Episode(
        task=task,
        support=Batch(images=s_images, labels=s_labels, texts=texts),
        query=Batch(images=q_images, labels=q_labels, texts=texts),
    )
