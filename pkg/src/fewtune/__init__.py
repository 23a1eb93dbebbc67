"""Few-shot transfer learning over precomputed frozen-encoder embeddings.

The package trains a contrastive linear-projection head with one of three
algorithms (classical joint fine-tuning, sequential multitask fine-tuning,
first-order MAML), evaluates with an episodic meta-testing protocol, and
ships a synthetic data generator plus a binary dataset format so the whole
pipeline runs at desk scale.
"""

from .dataset import (
    ClassRecord,
    EmbeddingDataset,
    fill_prompt,
    import_csv_dataset,
    read_dataset,
    write_dataset,
)
from .errors import (
    CorruptionError,
    DataFormatError,
    FewtuneError,
    NumericError,
    UsageError,
    ValidationError,
)
from .estimators import (
    ALGORITHMS,
    ClassicalFinetune,
    FirstOrderMAML,
    MultitaskFinetune,
    ZeroShot,
    make_estimator,
)
from .evaluation import (
    DEFAULT_SEEDS,
    EvalReport,
    MetaTestPlan,
    WinnerRow,
    meta_test,
    sweep,
    winner_map,
)
from .model import (
    Batch,
    ProjectionModel,
    accuracy,
    grads,
    init_model,
    load_model,
    logits,
    loss,
    predict,
    pretrained_model,
    save_model,
)
from .numerics import child_rng, finite_diff_grad, kaiming_uniform_init, make_rng, matmul
from .optim import AdamState, adam_step
from .reporting import render_reports, reports_from_results_csv
from .synthetic import SyntheticSpec, gen_synthetic, spurious_benchmark_dataset
from .tasks import (
    Episode,
    Task,
    TaskConfig,
    materialize_episode,
    required_tasks,
    sample_tasks,
    task_batch,
)

__version__ = "0.1.0"

__all__ = [
    "ALGORITHMS",
    "AdamState",
    "Batch",
    "ClassRecord",
    "ClassicalFinetune",
    "CorruptionError",
    "DEFAULT_SEEDS",
    "DataFormatError",
    "EmbeddingDataset",
    "Episode",
    "EvalReport",
    "FewtuneError",
    "FirstOrderMAML",
    "MetaTestPlan",
    "MultitaskFinetune",
    "NumericError",
    "ProjectionModel",
    "SyntheticSpec",
    "Task",
    "TaskConfig",
    "UsageError",
    "ValidationError",
    "WinnerRow",
    "ZeroShot",
    "accuracy",
    "adam_step",
    "child_rng",
    "fill_prompt",
    "finite_diff_grad",
    "gen_synthetic",
    "grads",
    "import_csv_dataset",
    "init_model",
    "kaiming_uniform_init",
    "load_model",
    "logits",
    "loss",
    "make_estimator",
    "make_rng",
    "materialize_episode",
    "matmul",
    "meta_test",
    "predict",
    "pretrained_model",
    "read_dataset",
    "render_reports",
    "reports_from_results_csv",
    "required_tasks",
    "sample_tasks",
    "save_model",
    "spurious_benchmark_dataset",
    "sweep",
    "task_batch",
    "winner_map",
    "write_dataset",
]
