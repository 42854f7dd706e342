"""Federated optimization simulator.

Simulates communication-round training over partitioned synthetic data with
three server algorithms (single-step SGD aggregation, multi-step averaging,
and server-side Nesterov momentum), plus the diagnostics used to check the
algorithms' step-size conditions and convergence guarantees.
"""

from .clients import LocalRunConfig, client_delta, local_sgd
from .data import (
    FederatedDataset,
    PartitionSpec,
    generate_synthetic,
    load_csv_samples,
    partition,
    partition_stats,
)
from .diagnostics import (
    MomentumStepsizeCheck,
    RoundRecord,
    StepsizeCheck,
    TheoreticalBound,
    WindowMean,
    fedavg_gradient_bound,
    fedavg_schedule_bound,
    fedmom_gradient_bound,
    fedmom_noise_constant,
    inner_product_diag,
    max_client_variance,
    momentum_z_residual,
    stepsize_check_fedavg,
    stepsize_check_fedmom,
    variance_estimate,
    windowed_mean,
)
from .errors import ConfigError, DivergenceError, UnsupportedModelError
from .harness import (
    ExperimentConfig,
    MetricsFile,
    load_config,
    parse_config_text,
    read_metrics,
    render_metrics,
    run_experiment,
    sweep,
    write_metrics,
)
from .models import (
    Batch,
    Model,
    Sample,
    finite_diff_gradient,
    full_gradient,
    gradient,
    init_params,
    lipschitz_bound,
    loss,
    loss_lower_bound,
    per_sample_gradients,
)
from .params import ParamVector, axpy, dot, weighted_average
from .server import (
    ActiveSet,
    ServerConfig,
    ServerState,
    TrainingRun,
    biased_gradient,
    fedavg_round,
    fedmom_round,
    run_training,
    sample_active_set,
)

__version__ = "0.1.0"

__all__ = [
    "ActiveSet",
    "Batch",
    "ConfigError",
    "DivergenceError",
    "ExperimentConfig",
    "FederatedDataset",
    "LocalRunConfig",
    "MetricsFile",
    "Model",
    "MomentumStepsizeCheck",
    "ParamVector",
    "PartitionSpec",
    "RoundRecord",
    "Sample",
    "ServerConfig",
    "ServerState",
    "StepsizeCheck",
    "TheoreticalBound",
    "TrainingRun",
    "UnsupportedModelError",
    "WindowMean",
    "axpy",
    "biased_gradient",
    "client_delta",
    "dot",
    "fedavg_gradient_bound",
    "fedavg_round",
    "fedavg_schedule_bound",
    "fedmom_gradient_bound",
    "fedmom_noise_constant",
    "fedmom_round",
    "finite_diff_gradient",
    "full_gradient",
    "generate_synthetic",
    "gradient",
    "init_params",
    "inner_product_diag",
    "lipschitz_bound",
    "load_config",
    "load_csv_samples",
    "local_sgd",
    "loss",
    "loss_lower_bound",
    "max_client_variance",
    "momentum_z_residual",
    "parse_config_text",
    "partition",
    "partition_stats",
    "per_sample_gradients",
    "read_metrics",
    "render_metrics",
    "run_experiment",
    "run_training",
    "sample_active_set",
    "stepsize_check_fedavg",
    "stepsize_check_fedmom",
    "sweep",
    "variance_estimate",
    "weighted_average",
    "windowed_mean",
    "write_metrics",
]
