"""Deterministic simulator for decentralized learning on heterogeneous data.

Implements gossip-based decentralized SGD with a tracked-update family
that corrects local steps toward the global average update (plus its
momentum, bias-correction and memory-efficient formulations), standard
baselines and ablations, an average-consensus harness, a Dirichlet
non-IID data partitioner and synthetic problems with analytically
controlled heterogeneity.
"""

from .algorithms import (
    AgentState,
    AlgorithmSpec,
    DivergenceError,
    HyperparameterCheck,
    comm_cost,
    init_states,
    run_round,
    validate_hyperparameters,
)
from .harness import (
    EquivalenceReport,
    MetricTrace,
    TrainingResult,
    average_model,
    check_equivalence,
    consensus_error,
    run_consensus,
    run_training,
)
from .models import (
    Batch,
    Problem,
    SyntheticProblemSpec,
    evaluate,
    finite_diff_check,
    loss_and_grad,
    make_oracle,
    make_problem,
    make_quadratic,
)
from .partition import Partition, dirichlet_partition, partition_histogram
from .topology import (
    MixingMatrix,
    SpectralStats,
    ValidationReport,
    build_topology,
    spectral_stats,
    validate_mixing,
)

__version__ = "0.1.0"

__all__ = [
    "AgentState",
    "AlgorithmSpec",
    "Batch",
    "DivergenceError",
    "EquivalenceReport",
    "HyperparameterCheck",
    "MetricTrace",
    "MixingMatrix",
    "Partition",
    "Problem",
    "SpectralStats",
    "SyntheticProblemSpec",
    "TrainingResult",
    "ValidationReport",
    "average_model",
    "build_topology",
    "check_equivalence",
    "comm_cost",
    "consensus_error",
    "dirichlet_partition",
    "evaluate",
    "finite_diff_check",
    "init_states",
    "loss_and_grad",
    "make_oracle",
    "make_problem",
    "make_quadratic",
    "partition_histogram",
    "run_consensus",
    "run_round",
    "run_training",
    "spectral_stats",
    "validate_mixing",
    "validate_hyperparameters",
    "__version__",
]
