"""Round engine: client-side updates, server aggregation, round orchestration.

A round is deterministic in (inputs, seed) no matter how client work is
scheduled: every participant gets its own pre-spawned generator and all
reductions run in ascending device order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import DeviceData
from .metrics import DeviceMetric, accuracy, f1_score, micro_aggregate
from .nn import Batch, ModelParams, forward, sgd_step, supervised_loss_grad


@dataclass
class HyperParams:
    """Knobs shared by every algorithm; field names match the config file."""

    lr: float = 0.5
    rounds: int = 10
    lam: float = 0.0            # weight of the center-distance term in local training
    mu: float = 0.1             # proximal scaler used by fedprox
    local_steps: int = 1
    batch_size: int | None = None
    k: int = 1
    participation: float = 1.0
    weight_local_loss: bool = True
    size_weighted_centers: bool = False  # data-size weighted center update
    beta: float = 1.0           # server interpolation rate for feddist/feddws
    restarts: int = 20          # random restarts when initializing centers
    seed: int = 0

    def __post_init__(self):
        if self.lr <= 0.0:
            raise ValueError(f"lr: must be > 0, got {self.lr}")
        if self.rounds < 0:
            raise ValueError(f"rounds: must be >= 0, got {self.rounds}")
        if self.lam < 0.0:
            raise ValueError(f"lambda: must be >= 0, got {self.lam}")
        if self.mu < 0.0:
            raise ValueError(f"mu: must be >= 0, got {self.mu}")
        if self.local_steps < 1:
            raise ValueError(f"local_steps: must be >= 1, got {self.local_steps}")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError(f"batch_size: must be >= 1 or null, got {self.batch_size}")
        if self.k < 1:
            raise ValueError(f"k: must be >= 1, got {self.k}")
        if not 0.0 < self.participation <= 1.0:
            raise ValueError(f"participation: must be in (0, 1], got {self.participation}")
        if self.beta <= 0.0 or self.beta > 1.0:
            raise ValueError(f"beta: must be in (0, 1], got {self.beta}")
        if self.restarts < 1:
            raise ValueError(f"restarts: must be >= 1, got {self.restarts}")


@dataclass
class ClientState:
    """One device: its private data and its current local model."""

    device_id: int
    data: DeviceData
    model: ModelParams

    def __post_init__(self):
        if self.data.train.dim != self.model.arch.input_dim:
            raise ValueError(
                f"device {self.device_id}: data dim {self.data.train.dim} "
                f"!= model dim {self.model.arch.input_dim}"
            )


@dataclass(frozen=True)
class RoundLog:
    """Per-round record; every vector has one entry per device."""

    round: int
    per_device_acc: np.ndarray
    per_device_f1: np.ndarray
    device_sizes: np.ndarray
    objective: float
    assignment: np.ndarray


def _sample_batch(train: Batch, batch_size: int | None, rng) -> Batch:
    if batch_size is None or batch_size >= train.n:
        return train
    if rng is None:
        raise ValueError("an rng is required when batch_size truncates the training set")
    idx = rng.choice(train.n, size=batch_size, replace=False)
    return Batch(train.inputs[idx], train.labels[idx])


def prox_sgd(
    start: ModelParams,
    train: Batch,
    hyper: HyperParams,
    *,
    data_weight: float,
    prox_coeff: float,
    rng=None,
) -> ModelParams:
    """Run hyper.local_steps SGD steps on data_weight * L + (prox_coeff / 2) * ||W - start||^2.

    The proximal pull is always toward `start`, matching the protocol where
    a client is re-initialized from the model the server just sent.
    """
    params = start
    for _ in range(hyper.local_steps):
        batch = _sample_batch(train, hyper.batch_size, rng)
        _, grad = supervised_loss_grad(params, batch)
        total = data_weight * grad + prox_coeff * (params.values - start.values)
        params = sgd_step(params, total, hyper.lr)
    return params


def local_update(
    client: ClientState,
    center: ModelParams,
    m: int,
    hyper: HyperParams,
    total_train_size: int | None = None,
    rng=None,
    *,
    prox_coeff: float | None = None,
) -> ModelParams:
    """Client-side training pass: initialize from the center, then local SGD.

    The data term is scaled by this device's share of all training data
    when hyper.weight_local_loss is set; the center-distance term is scaled
    by 2 * lambda / m unless an explicit prox_coeff overrides it.
    """
    if hyper.weight_local_loss:
        if total_train_size is None:
            raise ValueError("total_train_size is required when weight_local_loss is set")
        w = client.data.train.n / total_train_size
    else:
        w = 1.0
    coeff = (2.0 * hyper.lam / m) if prox_coeff is None else prox_coeff
    return prox_sgd(center, client.data.train, hyper, data_weight=w, prox_coeff=coeff, rng=rng)


def weighted_average(models: list[ModelParams], weights) -> ModelParams:
    """Convex combination of parameter vectors, summed in list order."""
    if len(models) == 0:
        raise ValueError("cannot average an empty model list")
    w = np.asarray(weights, dtype=np.float64).ravel()
    if w.shape[0] != len(models):
        raise ValueError(f"{len(models)} models but {w.shape[0]} weights")
    if np.any(w < 0.0):
        raise ValueError("weights must be nonnegative")
    total = float(np.sum(w))
    if total <= 0.0:
        raise ValueError("total weight must be positive")
    ref = models[0].values
    acc = np.zeros_like(ref)
    for model, wi in zip(models, w):
        if model.values.shape != ref.shape:
            raise ValueError("models must share one parameter length")
        acc += (wi / total) * model.values
    return models[0].with_values(acc)


def train_sizes(clients: list[ClientState]) -> np.ndarray:
    return np.asarray([c.data.train.n for c in clients], dtype=np.int64)


def train_losses(clients: list[ClientState]) -> np.ndarray:
    return np.asarray(
        [supervised_loss_grad(c.model, c.data.train)[0] for c in clients], dtype=np.float64
    )


def evaluate_clients(clients: list[ClientState]) -> list[DeviceMetric]:
    """Score every client's current model on its own test set."""
    out = []
    for c in clients:
        test = c.data.test
        if test.n == 0:
            out.append(DeviceMetric(c.device_id, math.nan, math.nan, 0))
            continue
        preds = np.argmax(forward(c.model, test.inputs), axis=1)
        out.append(
            DeviceMetric(
                c.device_id,
                accuracy(preds, test.labels),
                f1_score(preds, test.labels, c.model.arch.classes),
                test.n,
            )
        )
    return out


class AlgorithmHandle:
    """Server-side state plus the per-round logic of one algorithm.

    `round` may run client updates through `mapper` (any order-preserving
    map, e.g. a thread pool); it must mutate only client models and its own
    state, reducing results in ascending device order.
    """

    name = "base"

    def setup(self, clients: list[ClientState], hyper: HyperParams, rng) -> None:
        """Initialize server state; runs once before the first round."""

    def round(self, clients, participants, hyper, rngs, mapper) -> None:
        raise NotImplementedError

    def assignment(self, m: int) -> np.ndarray:
        return np.zeros(m, dtype=np.int64)

    def objective(self, clients: list[ClientState], hyper: HyperParams) -> float:
        """Data-size-weighted mean training loss; clustered algorithms add their distance term."""
        return micro_aggregate(train_losses(clients), train_sizes(clients))


def map_updates(clients, participants, rngs, mapper, fn) -> list[ModelParams]:
    """Apply fn(index, client, rng) over participants, results in participant order."""
    pairs = list(zip(participants, rngs))
    return list(mapper(lambda pair: fn(pair[0], clients[pair[0]], pair[1]), pairs))


def run_round(
    clients: list[ClientState],
    algorithm: AlgorithmHandle,
    hyper: HyperParams,
    rng,
    *,
    round_index: int,
    mapper=map,
) -> RoundLog:
    """Sample participants, delegate to the algorithm, evaluate every client."""
    if len(clients) == 0:
        raise ValueError("need at least one client")
    m = len(clients)
    n_part = math.ceil(hyper.participation * m)
    participants = np.sort(rng.choice(m, size=n_part, replace=False))
    rngs = rng.spawn(n_part)
    algorithm.round(clients, participants, hyper, rngs, mapper)
    return snapshot_round(clients, algorithm, hyper, round_index)


def snapshot_round(
    clients: list[ClientState],
    algorithm: AlgorithmHandle,
    hyper: HyperParams,
    round_index: int,
) -> RoundLog:
    """Evaluate current client models and record the round."""
    device_metrics = evaluate_clients(clients)
    return RoundLog(
        round=round_index,
        per_device_acc=np.asarray([d.accuracy for d in device_metrics]),
        per_device_f1=np.asarray([d.f1 for d in device_metrics]),
        device_sizes=np.asarray([d.test_size for d in device_metrics], dtype=np.int64),
        objective=algorithm.objective(clients, hyper),
        assignment=algorithm.assignment(len(clients)).copy(),
    )
