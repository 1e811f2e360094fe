"""Robust federated aggregation via residual-based confidence reweighting.

The library has two halves: a numeric core that fits robust lines over the
sorted parameter values of candidate models and turns residuals into
per-parameter confidence weights, and a deterministic simulation harness
that trains federated participants (some adversarial) and scores the
aggregated global model each round.
"""

from .aggregation import (
    AGGREGATION_METHODS,
    ESTIMATORS,
    WEIGHTINGS,
    AggregatorSpec,
    ConfidenceReport,
    ParamMatrix,
    ScalarEnsemble,
    aggregate,
    coord_median,
    coord_repeated_median,
    fedavg,
    residual_reweight_aggregate,
    scalar_confidence,
    scalar_global,
    simplified_confidence,
    trimmed_mean,
)
from .attacks import (
    ATTACK_KINDS,
    AttackSpec,
    batch_poisoner,
    flip_labels,
    gaussian_noise,
    mix_models,
    poison_batch,
    poison_batches,
    replacement_scale,
)
from .config import (
    ConfigError,
    DatasetSpec,
    ExperimentConfig,
    LocalTraining,
    ModelSpec,
    PartitionSpec,
    config_from_dict,
    load_config,
)
from .datasets import (
    BackdoorPattern,
    Dataset,
    IdxParseError,
    Partition,
    embed_backdoor,
    load_mnist_idx,
    partition_dirichlet,
    partition_shards,
    synth_blobs,
)
from .models import (
    EvalResult,
    FlatModel,
    ModelArch,
    TrainConfig,
    attack_success_rate,
    evaluate,
    init_model,
    loss_and_grad,
    predict,
    predict_logits,
    sgd_train,
)
from .regression import (
    ConfidenceParams,
    IndexedColumn,
    RegressionLine,
    ResidualStats,
    compute_residuals,
    correct_extreme,
    fit_median_line,
    fit_repeated_median,
    fit_theil_sen,
    gaussian_confidence,
    hat_diagonal,
    parameter_confidence,
    rank_indices,
)
from .simulation import (
    BoundRow,
    FederatedSimulation,
    MetricsRow,
    aggregate_file,
    bound_experiment,
    run_experiment,
    sweep,
)
from .updatefile import UpdateFileError, read_update_file, write_update_file

__version__ = "0.1.0"

__all__ = [
    "AGGREGATION_METHODS",
    "ATTACK_KINDS",
    "ESTIMATORS",
    "WEIGHTINGS",
    "AggregatorSpec",
    "AttackSpec",
    "BackdoorPattern",
    "BoundRow",
    "ConfidenceParams",
    "ConfidenceReport",
    "ConfigError",
    "Dataset",
    "DatasetSpec",
    "EvalResult",
    "ExperimentConfig",
    "FederatedSimulation",
    "FlatModel",
    "IdxParseError",
    "IndexedColumn",
    "LocalTraining",
    "MetricsRow",
    "ModelArch",
    "ModelSpec",
    "ParamMatrix",
    "Partition",
    "PartitionSpec",
    "RegressionLine",
    "ResidualStats",
    "ScalarEnsemble",
    "TrainConfig",
    "UpdateFileError",
    "aggregate",
    "aggregate_file",
    "attack_success_rate",
    "batch_poisoner",
    "bound_experiment",
    "compute_residuals",
    "config_from_dict",
    "coord_median",
    "coord_repeated_median",
    "correct_extreme",
    "embed_backdoor",
    "evaluate",
    "fedavg",
    "fit_median_line",
    "fit_repeated_median",
    "fit_theil_sen",
    "flip_labels",
    "gaussian_confidence",
    "gaussian_noise",
    "hat_diagonal",
    "init_model",
    "load_config",
    "load_mnist_idx",
    "loss_and_grad",
    "mix_models",
    "parameter_confidence",
    "partition_dirichlet",
    "partition_shards",
    "poison_batch",
    "poison_batches",
    "predict",
    "predict_logits",
    "rank_indices",
    "read_update_file",
    "replacement_scale",
    "residual_reweight_aggregate",
    "run_experiment",
    "scalar_confidence",
    "scalar_global",
    "simplified_confidence",
    "sgd_train",
    "sweep",
    "synth_blobs",
    "trimmed_mean",
    "write_update_file",
]
