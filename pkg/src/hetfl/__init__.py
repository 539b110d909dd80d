"""Knowledge-distillation federated learning across clients of different depths.

A small numpy simulator: dense ReLU classifiers of varying depth, a synthetic
public/local task with Dirichlet client skew, FedMD-style rounds with a
server-side global model (optionally with an LwoF regulariser), and a FedAvg
baseline with client dropout.
"""

__version__ = "0.1.0"

from hetfl.data import (  # noqa: E402
    ClientShard,
    LabeledDataset,
    PartitionSpec,
    generate_synthetic,
    partition_dirichlet,
    partition_report,
    sample_public_subset,
)
from hetfl.errors import (  # noqa: E402
    ConfigError,
    DataError,
    HetFLError,
    ParameterError,
    ProtocolError,
    ShapeError,
)
from hetfl.federation import ExperimentConfig, ExperimentError, run_experiment  # noqa: E402
from hetfl.metrics import EvalReport, RoundRecord, evaluate_accuracy, summarize  # noqa: E402
from hetfl.nn import ModelArch, ModelParams, TrainConfig, forward_logits, init_params, train  # noqa: E402

__all__ = [
    "ClientShard", "ConfigError", "DataError", "EvalReport", "ExperimentConfig",
    "ExperimentError", "HetFLError", "LabeledDataset", "ModelArch", "ModelParams",
    "ParameterError", "PartitionSpec", "ProtocolError", "RoundRecord", "ShapeError",
    "TrainConfig", "evaluate_accuracy", "forward_logits", "generate_synthetic",
    "init_params", "partition_dirichlet", "partition_report", "run_experiment",
    "sample_public_subset", "summarize", "train",
]
