"""Deterministic desk-scale simulator for multi-center federated learning."""

from .baselines import (
    FedAvg,
    FedDist,
    FedProx,
    FedSgd,
    HypoCluster,
    NoFed,
    feddist_update,
    fedavg_round,
    fedprox_local,
    fedsgd_round,
    hypocluster_assign,
    nofed_train,
)
from .data import (
    DeviceData,
    FederatedDataset,
    IdxCountMismatchError,
    IdxFormatError,
    IdxMagicError,
    IdxTruncatedError,
    dirichlet_partition,
    load_idx,
    synth_mixture,
    train_test_split,
)
from .engine import (
    AlgorithmHandle,
    ClientState,
    HyperParams,
    RoundLog,
    evaluate_clients,
    local_update,
    run_round,
    weighted_average,
)
from .experiment import (
    ALGORITHMS,
    ExperimentConfig,
    IdxSpec,
    MetricsLog,
    SyntheticSpec,
    build_dataset,
    make_algorithm,
    run_experiment,
)
from .fesem import (
    ClusterState,
    FeSem,
    e_step,
    fesem_round,
    init_centers,
    intra_cluster_objective,
    m_step,
    multi_center_objective,
    select_k,
)
from .metrics import (
    DeviceMetric,
    accuracy,
    adjusted_rand_index,
    f1_score,
    macro_aggregate,
    micro_aggregate,
)
from .nn import (
    Batch,
    ModelArch,
    ModelParams,
    forward,
    init_model,
    l2_sq_distance,
    proximal_grad,
    sgd_step,
    supervised_loss_grad,
)

__version__ = "0.1.0"
