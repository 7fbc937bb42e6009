"""Multi-center federated optimization via stochastic EM.

Each round alternates three updates: assign every client model to its
nearest center (E-step), recompute each center as the mean of its members
(M-step), then let each cluster's members train locally from their center
under a center-distance penalty.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .data import FederatedDataset
from .engine import (
    AlgorithmHandle,
    ClientState,
    HyperParams,
    local_update,
    map_updates,
    run_round,
    snapshot_round,
    train_losses,
    train_sizes,
    weighted_average,
)
from .metrics import macro_aggregate, micro_aggregate
from .nn import ModelArch, ModelParams, init_model, l2_sq_distance


@dataclass
class ClusterState:
    """K center parameter vectors plus the device-to-center assignment."""

    centers: list[ModelParams]
    assignment: np.ndarray

    def __post_init__(self):
        self.assignment = np.asarray(self.assignment, dtype=np.int64).ravel()
        k = len(self.centers)
        if k < 1:
            raise ValueError("need at least one center")
        if self.assignment.size and not (
            (self.assignment >= 0).all() and (self.assignment < k).all()
        ):
            raise ValueError(f"assignment entries must lie in [0, {k})")

    @property
    def k(self) -> int:
        return len(self.centers)


def e_step(models: list[ModelParams], centers: list[ModelParams]) -> np.ndarray:
    """Nearest-center assignment by squared parameter distance; ties pick the lowest index."""
    if len(models) == 0 or len(centers) == 0:
        raise ValueError("models and centers must be nonempty")
    dists = np.array([[l2_sq_distance(w, c) for c in centers] for w in models])
    return np.argmin(dists, axis=1).astype(np.int64)


def m_step(
    models: list[ModelParams],
    assignment: np.ndarray,
    prev_centers: list[ModelParams],
    weights=None,
) -> list[ModelParams]:
    """Each center becomes the mean of its members; empty clusters keep the old center.

    The mean is unweighted unless per-model `weights` (e.g. device data
    sizes) are given.
    """
    assignment = np.asarray(assignment, dtype=np.int64)
    if assignment.shape[0] != len(models):
        raise ValueError(f"{len(models)} models but {assignment.shape[0]} assignments")
    if assignment.size and assignment.max() >= len(prev_centers):
        raise ValueError("assignment refers to a missing center")
    if weights is not None:
        weights = np.asarray(weights, dtype=np.float64)
        if weights.shape[0] != len(models):
            raise ValueError(f"{len(models)} models but {weights.shape[0]} weights")
    centers = []
    for k, prev in enumerate(prev_centers):
        member_idx = [i for i in range(len(models)) if assignment[i] == k]
        if not member_idx:
            centers.append(prev)
        elif weights is None:
            centers.append(
                prev.with_values(np.mean([models[i].values for i in member_idx], axis=0))
            )
        else:
            centers.append(
                weighted_average([models[i] for i in member_idx], weights[member_idx])
            )
    return centers


def intra_cluster_objective(
    models: list[ModelParams],
    centers: list[ModelParams],
    assignment: np.ndarray,
) -> float:
    """Mean squared distance from each model to its assigned center."""
    assignment = np.asarray(assignment, dtype=np.int64)
    total = 0.0
    for i, w in enumerate(models):
        total += l2_sq_distance(w, centers[assignment[i]])
    return total / len(models)


def multi_center_objective(
    losses, sizes, models, centers, assignment, lam: float
) -> float:
    """Size-weighted mean training loss plus lam times the intra-cluster distance."""
    return micro_aggregate(losses, sizes) + lam * intra_cluster_objective(
        models, centers, assignment
    )


def init_centers(models: list[ModelParams], k: int, restarts: int, seed) -> ClusterState:
    """Plain k-means over the model vectors, best of `restarts` random starts.

    Each start seeds the centers with k distinct models, then alternates
    assignment and mean updates until the assignment stops changing (at
    most 50 sweeps). The start with the smallest intra-cluster distance
    wins.
    """
    m = len(models)
    if k > m:
        raise ValueError(f"cannot place {k} centers over {m} models")
    if restarts < 1:
        raise ValueError(f"restarts must be >= 1, got {restarts}")
    rng = np.random.default_rng(seed)
    best: ClusterState | None = None
    best_objective = np.inf
    for _ in range(restarts):
        idx = rng.choice(m, size=k, replace=False)
        centers = [models[i] for i in idx]
        assignment = e_step(models, centers)
        for _ in range(50):
            centers = m_step(models, assignment, centers)
            new_assignment = e_step(models, centers)
            if np.array_equal(new_assignment, assignment):
                break
            assignment = new_assignment
        objective = intra_cluster_objective(models, centers, assignment)
        if objective < best_objective:
            best = ClusterState(centers, assignment)
            best_objective = objective
    return best


def fesem_round(
    clients: list[ClientState],
    state: ClusterState,
    hyper: HyperParams,
    *,
    participants=None,
    rngs=None,
    mapper=map,
) -> tuple[ClusterState, list[ModelParams]]:
    """One full round: E-step, M-step, then per-cluster local updates.

    E/M run over every client's last-known model; only the sampled
    participants train this round. Returns the new cluster state and the
    full post-round model list.
    """
    models = [c.model for c in clients]
    assignment = e_step(models, state.centers)
    center_weights = train_sizes(clients) if hyper.size_weighted_centers else None
    centers = m_step(models, assignment, state.centers, weights=center_weights)

    if participants is None:
        participants = np.arange(len(clients))
    if rngs is None:
        rngs = [None] * len(participants)
    m = len(clients)
    total = int(np.sum(train_sizes(clients)))

    def task(i, client, rng):
        return local_update(client, centers[assignment[i]], m, hyper, total, rng)

    updated = map_updates(clients, participants, rngs, mapper, task)
    new_models = list(models)
    for i, params in zip(participants, updated):
        new_models[i] = params
    return ClusterState(centers, assignment), new_models


class FeSem(AlgorithmHandle):
    """Algorithm handle wiring the EM round into the generic engine."""

    name = "fesem"

    def __init__(self):
        self.state: ClusterState | None = None

    def setup(self, clients, hyper, rng):
        # one local pass from the shared init so the models to be clustered differ
        m = len(clients)
        total = int(np.sum(train_sizes(clients)))
        rngs = rng.spawn(m)
        for c, crng in zip(clients, rngs):
            c.model = local_update(c, c.model, m, hyper, total, crng)
        self.state = init_centers([c.model for c in clients], hyper.k, hyper.restarts, rng)

    def round(self, clients, participants, hyper, rngs, mapper):
        self.state, new_models = fesem_round(
            clients, self.state, hyper, participants=participants, rngs=rngs, mapper=mapper
        )
        for c, params in zip(clients, new_models):
            c.model = params

    def assignment(self, m):
        if self.state is None:
            return super().assignment(m)
        return self.state.assignment

    def objective(self, clients, hyper):
        if self.state is None:
            return super().objective(clients, hyper)
        return multi_center_objective(
            train_losses(clients),
            train_sizes(clients),
            [c.model for c in clients],
            self.state.centers,
            self.state.assignment,
            hyper.lam,
        )


def probe_k_scores(
    dataset: FederatedDataset,
    candidate_ks,
    sample_size: int,
    probe_rounds: int,
    arch: ModelArch,
    hyper: HyperParams,
    seed: int,
) -> dict[int, float]:
    """Macro test accuracy of a short run on a device subsample, per candidate K."""
    if len(candidate_ks) == 0:
        raise ValueError("need at least one candidate K")
    if not 1 <= sample_size <= dataset.m:
        raise ValueError(f"sample_size must be in [1, {dataset.m}], got {sample_size}")
    rng = np.random.default_rng(seed)
    chosen = np.sort(rng.choice(dataset.m, size=sample_size, replace=False))
    scores: dict[int, float] = {}
    for k in sorted(set(int(k) for k in candidate_ks)):
        hyper_k = replace(hyper, k=k, rounds=probe_rounds)
        shared = init_model(arch, hyper_k.seed)
        clients = [ClientState(j, dataset.devices[i], shared) for j, i in enumerate(chosen)]
        algo = FeSem()
        run_rng = np.random.default_rng([seed, k])
        algo.setup(clients, hyper_k, run_rng)
        log = snapshot_round(clients, algo, hyper_k, 0)
        for r in range(1, probe_rounds + 1):
            log = run_round(clients, algo, hyper_k, run_rng, round_index=r)
        valid = log.device_sizes > 0
        scores[k] = macro_aggregate(log.per_device_acc[valid])
    return scores


def choose_best_k(scores: dict[int, float]) -> int:
    """Highest-scoring candidate; ties go to the smaller K."""
    best_k, best_score = None, -np.inf
    for k in sorted(scores):
        if scores[k] > best_score:
            best_k, best_score = k, scores[k]
    return best_k


def select_k(
    dataset: FederatedDataset,
    candidate_ks,
    sample_size: int,
    probe_rounds: int,
    arch: ModelArch,
    hyper: HyperParams,
    seed: int,
) -> int:
    """Pick the candidate with the best probe accuracy; ties go to the smaller K."""
    return choose_best_k(
        probe_k_scores(dataset, candidate_ks, sample_size, probe_rounds, arch, hyper, seed)
    )
