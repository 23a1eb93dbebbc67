"""Training algorithms as scikit-learn style estimators.

Every estimator fits the same contrastive projection head to an
``EmbeddingDataset`` and exposes ``predict`` over the dataset's full label
set, so fitted models drop into ordinary sklearn tooling (``get_params``,
``set_params``, ``clone``). What differs is how ``fit`` consumes the data:

* ``ZeroShot`` adopts the dataset's pretrained projection unchanged.
* ``ClassicalFinetune`` trains on the single all-classes task.
* ``MultitaskFinetune`` fine-tunes sequentially across uniformly sampled
  reduced-label tasks, carrying parameters (and by default optimizer
  state) from task to task.
* ``FirstOrderMAML`` adapts a clone on each task's support half and applies
  the query-loss gradient taken at the adapted parameters to the original
  parameters, skipping second-order terms.

Fitted attributes: ``model_`` (the projection head), ``classes_``,
``n_steps_`` (Adam steps taken), and ``history_`` (rows of
(step, task_id, loss) for the training-log CSV).

All randomness derives from ``seed`` through named child streams, so fits
are reproducible and ``MultitaskFinetune(n_way=M, n_tasks=1)`` reproduces
``ClassicalFinetune`` bit for bit under the same seed.
"""

from __future__ import annotations

from typing import Iterator

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .dataset import EmbeddingDataset
from .errors import UsageError
from .model import Batch, ProjectionModel, grads, init_model, loss, predict, pretrained_model
from .numerics import child_rng
from .optim import AdamState, adam_step, check_finite_params
from .tasks import TRAIN_SPLIT, Task, TaskConfig, materialize_episode, required_tasks, sample_tasks, task_batch

# child-stream indices under the fit seed
_STREAM_INIT = 0
_STREAM_TASKS = 1
_STREAM_EPISODE = 2
_STREAM_SHUFFLE = 3


def _resolve_n_tasks(n_tasks, n_classes: int, n_way: int) -> int:
    if n_tasks == "auto":
        return required_tasks(n_classes, n_way)
    if not isinstance(n_tasks, (int, np.integer)) or n_tasks < 1:
        raise UsageError(f"n_tasks must be a positive integer or 'auto', got {n_tasks!r}")
    return int(n_tasks)


def _minibatches(batch: Batch, batch_size: int | None, rng) -> Iterator[Batch]:
    if batch_size is None or batch_size >= batch.size:
        yield batch
        return
    if batch_size < 1:
        raise UsageError(f"batch_size must be positive, got {batch_size}")
    order = rng.permutation(batch.size)
    for start in range(0, batch.size, batch_size):
        idx = order[start:start + batch_size]
        yield Batch(images=batch.images[idx], labels=batch.labels[idx], texts=batch.texts)


class _ProjectionTuner(BaseEstimator):
    """Shared fit/predict plumbing; subclasses implement ``_fit_model``."""

    def fit(self, dataset: EmbeddingDataset, y=None):
        if not isinstance(dataset, EmbeddingDataset):
            raise UsageError(f"fit expects an EmbeddingDataset, got {type(dataset).__name__}")
        dataset.validate()
        self.history_ = []
        self.n_steps_ = 0
        self.model_ = self._fit_model(dataset)
        self.classes_ = np.array([c.name for c in dataset.classes])
        self.text_embeddings_ = dataset.text_matrix()
        return self

    def _fit_model(self, dataset: EmbeddingDataset) -> ProjectionModel:
        raise NotImplementedError

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise NotFittedError(f"{type(self).__name__} must be fitted before calling predict/score")

    def predict(self, images) -> np.ndarray:
        """Class indices for image embedding rows, scored against all classes."""
        self._check_fitted()
        images = np.asarray(images, dtype=np.float64)
        if images.ndim == 1:
            images = images[None, :]
        placeholder = np.zeros(images.shape[0], dtype=np.int64)  # labels unused by predict
        return predict(self.model_, Batch(images=images, labels=placeholder, texts=self.text_embeddings_))

    def score(self, images, labels) -> float:
        self._check_fitted()
        return float(np.mean(self.predict(images) == np.asarray(labels)))

    # internal: shared Adam loop over one task's batches
    def _run_task_epochs(self, model: ProjectionModel, batch: Batch, state: AdamState,
                         epochs: int, task_id: int, batch_size: int | None, shuffle_rng) -> ProjectionModel:
        params = {"w_img": model.w_img, "w_txt": model.w_txt}
        for _ in range(epochs):
            for mini in _minibatches(batch, batch_size, shuffle_rng):
                current = model.with_params(**params)
                step_loss = loss(current, mini)
                g_img, g_txt = grads(current, mini)
                params = adam_step(params, {"w_img": g_img, "w_txt": g_txt}, state)
                self.n_steps_ += 1
                check_finite_params(params, self.n_steps_)
                self.history_.append((self.n_steps_, task_id, step_loss))
        return model.with_params(**params)


class ZeroShot(_ProjectionTuner):
    """The untouched pretrained head; fit only checks it exists."""

    def __init__(self, scale: float = 1.0, normalize: bool = False):
        self.scale = scale
        self.normalize = normalize

    def _fit_model(self, dataset: EmbeddingDataset) -> ProjectionModel:
        return pretrained_model(dataset, scale=self.scale, normalize=self.normalize)


class ClassicalFinetune(_ProjectionTuner):
    """Joint training on the single task containing every class."""

    def __init__(self, epochs: int = 50, lr: float = 1e-6, batch_size: int | None = None,
                 scale: float = 1.0, normalize: bool = False, seed: int = 0):
        self.epochs = epochs
        self.lr = lr
        self.batch_size = batch_size
        self.scale = scale
        self.normalize = normalize
        self.seed = seed

    def _fit_model(self, dataset: EmbeddingDataset) -> ProjectionModel:
        if self.epochs < 0:
            raise UsageError(f"epochs must be >= 0, got {self.epochs}")
        model = init_model(dataset.d_img, dataset.d_txt, dataset.d_joint,
                           child_rng(self.seed, _STREAM_INIT), self.scale, self.normalize)
        if self.epochs == 0:
            return model
        task = Task(class_indices=tuple(range(dataset.n_classes)), split_source=TRAIN_SPLIT)
        batch = task_batch(dataset, task)
        state = AdamState({"w_img": model.w_img.shape, "w_txt": model.w_txt.shape}, lr=self.lr)
        shuffle_rng = child_rng(self.seed, _STREAM_SHUFFLE, 0) if self.batch_size else None
        return self._run_task_epochs(model, batch, state, self.epochs, 0, self.batch_size, shuffle_rng)


class MultitaskFinetune(_ProjectionTuner):
    """Sequential first-order fine-tuning across uniformly sampled tasks.

    Tasks are sampled once per fit; parameters always carry across tasks and
    the Adam state does too unless ``reset_optimizer_per_task`` is set.
    """

    def __init__(self, n_way: int = 5, n_tasks="auto", epochs_per_task: int = 10,
                 lr: float = 1e-6, batch_size: int | None = None,
                 reset_optimizer_per_task: bool = False,
                 scale: float = 1.0, normalize: bool = False, seed: int = 0):
        self.n_way = n_way
        self.n_tasks = n_tasks
        self.epochs_per_task = epochs_per_task
        self.lr = lr
        self.batch_size = batch_size
        self.reset_optimizer_per_task = reset_optimizer_per_task
        self.scale = scale
        self.normalize = normalize
        self.seed = seed

    def _fit_model(self, dataset: EmbeddingDataset) -> ProjectionModel:
        if self.epochs_per_task < 0:
            raise UsageError(f"epochs_per_task must be >= 0, got {self.epochs_per_task}")
        model = init_model(dataset.d_img, dataset.d_txt, dataset.d_joint,
                           child_rng(self.seed, _STREAM_INIT), self.scale, self.normalize)
        config = TaskConfig(self.n_way, _resolve_n_tasks(self.n_tasks, dataset.n_classes, self.n_way))
        tasks = sample_tasks(dataset.n_classes, config, child_rng(self.seed, _STREAM_TASKS, 0), TRAIN_SPLIT)
        shapes = {"w_img": model.w_img.shape, "w_txt": model.w_txt.shape}
        state = AdamState(shapes, lr=self.lr)
        for task_id, task in enumerate(tasks):
            if self.reset_optimizer_per_task:
                state = AdamState(shapes, lr=self.lr)
            batch = task_batch(dataset, task)
            shuffle_rng = child_rng(self.seed, _STREAM_SHUFFLE, task_id) if self.batch_size else None
            model = self._run_task_epochs(model, batch, state, self.epochs_per_task,
                                          task_id, self.batch_size, shuffle_rng)
        return model


class FirstOrderMAML(_ProjectionTuner):
    """First-order MAML: inner plain-gradient adaptation, outer Adam update.

    Per task: clone the parameters, take ``inner_steps`` gradient steps of
    size ``inner_lr`` on the support half, evaluate the query-loss gradient
    at the adapted parameters, and feed that gradient (unchanged, the
    first-order approximation) to the outer Adam update of the original
    parameters. Each pass re-samples a fresh task sequence unless
    ``resample_tasks`` is disabled.
    """

    def __init__(self, n_way: int = 5, n_tasks="auto", passes: int = 10,
                 inner_steps: int = 1, inner_lr: float = 1e-6, outer_lr: float = 1e-6,
                 support_fraction: float = 0.5, resample_tasks: bool = True,
                 scale: float = 1.0, normalize: bool = False, seed: int = 0):
        self.n_way = n_way
        self.n_tasks = n_tasks
        self.passes = passes
        self.inner_steps = inner_steps
        self.inner_lr = inner_lr
        self.outer_lr = outer_lr
        self.support_fraction = support_fraction
        self.resample_tasks = resample_tasks
        self.scale = scale
        self.normalize = normalize
        self.seed = seed

    def _fit_model(self, dataset: EmbeddingDataset) -> ProjectionModel:
        if self.passes < 0:
            raise UsageError(f"passes must be >= 0, got {self.passes}")
        if self.inner_steps < 0:
            raise UsageError(f"inner_steps must be >= 0, got {self.inner_steps}")
        if self.inner_steps > 0 and self.inner_lr <= 0:
            raise UsageError(f"inner_lr must be positive, got {self.inner_lr}")
        model = init_model(dataset.d_img, dataset.d_txt, dataset.d_joint,
                           child_rng(self.seed, _STREAM_INIT), self.scale, self.normalize)
        config = TaskConfig(self.n_way, _resolve_n_tasks(self.n_tasks, dataset.n_classes, self.n_way))
        params = {"w_img": model.w_img, "w_txt": model.w_txt}
        state = AdamState({k: v.shape for k, v in params.items()}, lr=self.outer_lr)
        for pass_idx in range(self.passes):
            sample_stream = pass_idx if self.resample_tasks else 0
            tasks = sample_tasks(dataset.n_classes, config,
                                 child_rng(self.seed, _STREAM_TASKS, sample_stream), TRAIN_SPLIT)
            for task_idx, task in enumerate(tasks):
                episode = materialize_episode(dataset, task, self.support_fraction,
                                              child_rng(self.seed, _STREAM_EPISODE, pass_idx, task_idx))
                adapted = dict(params)
                for _ in range(self.inner_steps):
                    inner_model = model.with_params(**adapted)
                    g_img, g_txt = grads(inner_model, episode.support)
                    adapted = {
                        "w_img": adapted["w_img"] - self.inner_lr * g_img,
                        "w_txt": adapted["w_txt"] - self.inner_lr * g_txt,
                    }
                    check_finite_params(adapted, self.n_steps_ + 1)
                adapted_model = model.with_params(**adapted)
                query_loss = loss(adapted_model, episode.query)
                g_img, g_txt = grads(adapted_model, episode.query)
                params = adam_step(params, {"w_img": g_img, "w_txt": g_txt}, state)
                self.n_steps_ += 1
                check_finite_params(params, self.n_steps_)
                self.history_.append((self.n_steps_, pass_idx * config.n_tasks + task_idx, query_loss))
        return model.with_params(**params)


ALGORITHMS = {
    "zeroshot": ZeroShot,
    "classical": ClassicalFinetune,
    "mamf": MultitaskFinetune,
    "fomaml": FirstOrderMAML,
}


def make_estimator(algorithm: str, **params) -> _ProjectionTuner:
    """Build an estimator by its CLI name, applying keyword overrides."""
    if algorithm not in ALGORITHMS:
        raise UsageError(f"unknown algorithm {algorithm!r}; choose from {sorted(ALGORITHMS)}")
    est = ALGORITHMS[algorithm]()
    valid = est.get_params()
    unknown = set(params) - set(valid)
    if unknown:
        raise UsageError(f"{algorithm} does not accept parameters {sorted(unknown)}")
    return est.set_params(**params)
