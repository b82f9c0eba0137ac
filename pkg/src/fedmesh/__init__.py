"""fedmesh: deterministic simulator for hierarchical multi-edge federated
learning with score-based client selection, secure aggregation, and
sample-weighted global model updates."""

__version__ = "0.1.0"

from .aggregation import CrossEdgeConfig, EdgeUpdate, central_aggregate, cross_edge_exchange
from .data import Dataset, Partition, generate_synthetic, ingest_csv, partition_noniid, split
from .metrics import BinaryMetrics, RoundRecord, binary_metrics, jain_fairness
from .orchestrator import (
    MODES,
    AdversaryAssignment,
    DataConfig,
    SecAggConfig,
    SimulationConfig,
    SimulationResult,
    TrainerConfig,
    inject_edge_failure,
    run,
    run_baseline,
)
from .params import ParamVector, clip_elementwise, clip_l2, l2_diff_norm, weighted_sum, zeros
from .secagg import (
    CipherVector,
    DpConfig,
    FixedPointCodec,
    aggregate_encrypted,
    encrypt_update,
    finalize_edge_update,
    keygen,
)
from .selection import (
    ClientEvaluation,
    ScoreWeights,
    SelectionConfig,
    consistency_check,
    estimate_metrics,
    grid_search_init,
    score,
    select_clients,
    update_weights,
)
from .trainer import AdversaryBehavior, ClientReport, LocalModelSpec, build_report, train_local

__all__ = [
    "AdversaryAssignment",
    "AdversaryBehavior",
    "BinaryMetrics",
    "CipherVector",
    "ClientEvaluation",
    "ClientReport",
    "CrossEdgeConfig",
    "DataConfig",
    "Dataset",
    "DpConfig",
    "EdgeUpdate",
    "FixedPointCodec",
    "LocalModelSpec",
    "MODES",
    "ParamVector",
    "Partition",
    "RoundRecord",
    "ScoreWeights",
    "SecAggConfig",
    "SelectionConfig",
    "SimulationConfig",
    "SimulationResult",
    "TrainerConfig",
    "aggregate_encrypted",
    "binary_metrics",
    "build_report",
    "central_aggregate",
    "clip_elementwise",
    "clip_l2",
    "consistency_check",
    "cross_edge_exchange",
    "encrypt_update",
    "estimate_metrics",
    "finalize_edge_update",
    "generate_synthetic",
    "grid_search_init",
    "ingest_csv",
    "inject_edge_failure",
    "jain_fairness",
    "keygen",
    "l2_diff_norm",
    "partition_noniid",
    "run",
    "run_baseline",
    "score",
    "select_clients",
    "split",
    "train_local",
    "update_weights",
    "weighted_sum",
    "zeros",
]
