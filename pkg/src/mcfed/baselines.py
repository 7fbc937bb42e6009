"""Comparison algorithms sharing the round engine.

Single-center methods broadcast the freshly aggregated global model to
every device at the end of the round, so evaluation always sees the model
a device would actually run.
"""

from __future__ import annotations

from dataclasses import replace

import numpy as np

from .engine import (
    AlgorithmHandle,
    ClientState,
    HyperParams,
    local_update,
    map_updates,
    train_sizes,
    weighted_average,
)
from .nn import ModelParams, init_model, sgd_step, supervised_loss_grad


def fedavg_round(
    clients: list[ClientState],
    global_model: ModelParams,
    hyper: HyperParams,
    *,
    participants=None,
    rngs=None,
    mapper=map,
) -> ModelParams:
    """Local updates from the global model, then a data-size weighted average."""
    if participants is None:
        participants = np.arange(len(clients))
    if rngs is None:
        rngs = [None] * len(participants)
    plain = replace(hyper, lam=0.0)
    m = len(clients)
    total = int(np.sum(train_sizes(clients)))

    def task(i, client, rng):
        return local_update(client, global_model, m, plain, total, rng)

    updated = map_updates(clients, participants, rngs, mapper, task)
    sizes = [clients[i].data.train.n for i in participants]
    return weighted_average(updated, sizes)


def fedsgd_round(
    clients: list[ClientState],
    global_model: ModelParams,
    hyper: HyperParams,
    *,
    participants=None,
) -> ModelParams:
    """One full-batch gradient per client, one server step on their weighted mean."""
    if participants is None:
        participants = np.arange(len(clients))
    grads = []
    sizes = []
    for i in participants:
        _, g = supervised_loss_grad(global_model, clients[i].data.train)
        grads.append(g)
        sizes.append(clients[i].data.train.n)
    total = float(np.sum(sizes))
    mean_grad = np.zeros_like(global_model.values)
    for g, n in zip(grads, sizes):
        mean_grad += (n / total) * g
    return sgd_step(global_model, mean_grad, hyper.lr)


def fedprox_local(
    client: ClientState,
    global_model: ModelParams,
    hyper: HyperParams,
    total_train_size: int | None = None,
    rng=None,
) -> ModelParams:
    """Local update whose regularizer gradient is mu * (W - global)."""
    # m is irrelevant once prox_coeff overrides the lambda/m scaling
    return local_update(
        client, global_model, 1, hyper, total_train_size, rng, prox_coeff=hyper.mu
    )


def feddist_update(
    local_models: list[ModelParams],
    global_model: ModelParams,
    beta: float,
    weights=None,
) -> ModelParams:
    """Move the global model a fraction beta toward the (weighted) mean of the locals."""
    if len(local_models) == 0:
        raise ValueError("cannot aggregate an empty model list")
    if weights is None:
        weights = np.ones(len(local_models))
    mean = weighted_average(local_models, weights)
    if beta == 1.0:
        return mean
    return global_model.with_values(
        global_model.values + beta * (mean.values - global_model.values)
    )


def hypocluster_assign(client: ClientState, centers: list[ModelParams]) -> int:
    """Index of the center with the lowest training loss on this device; ties pick the lowest."""
    if len(centers) == 0:
        raise ValueError("need at least one center")
    losses = [supervised_loss_grad(c, client.data.train)[0] for c in centers]
    return int(np.argmin(losses))


def nofed_train(clients: list[ClientState], hyper: HyperParams, rngs=None) -> list[ModelParams]:
    """Independent local training, rounds * local_steps plain SGD steps per device."""
    if rngs is None:
        rngs = [None] * len(clients)
    plain = replace(
        hyper,
        lam=0.0,
        weight_local_loss=False,
        local_steps=max(1, hyper.rounds * hyper.local_steps),
    )
    out = []
    for client, rng in zip(clients, rngs):
        if hyper.rounds == 0:
            out.append(client.model)
        else:
            out.append(local_update(client, client.model, len(clients), plain, None, rng))
    return out


class FedAvg(AlgorithmHandle):
    name = "fedavg"

    def __init__(self):
        self.global_model: ModelParams | None = None

    def setup(self, clients, hyper, rng):
        self.global_model = clients[0].model

    def round(self, clients, participants, hyper, rngs, mapper):
        self.global_model = fedavg_round(
            clients, self.global_model, hyper,
            participants=participants, rngs=rngs, mapper=mapper,
        )
        for c in clients:
            c.model = self.global_model


class FedSgd(FedAvg):
    name = "fedsgd"

    def round(self, clients, participants, hyper, rngs, mapper):
        self.global_model = fedsgd_round(
            clients, self.global_model, hyper, participants=participants
        )
        for c in clients:
            c.model = self.global_model


class FedProx(FedAvg):
    name = "fedprox"

    def round(self, clients, participants, hyper, rngs, mapper):
        plain = replace(hyper, lam=0.0)
        total = int(np.sum(train_sizes(clients)))
        global_model = self.global_model

        def task(i, client, rng):
            return local_update(
                client, global_model, len(clients), plain, total, rng,
                prox_coeff=hyper.mu,
            )

        updated = map_updates(clients, participants, rngs, mapper, task)
        sizes = [clients[i].data.train.n for i in participants]
        self.global_model = weighted_average(updated, sizes)
        for c in clients:
            c.model = self.global_model


class FedDist(FedAvg):
    """Server interpolation toward the mean of the local updates.

    `weighted` switches the mean from unweighted to data-size weighted,
    which is the feddws variant.
    """

    name = "feddist"

    def __init__(self, weighted: bool = False):
        super().__init__()
        self.weighted = weighted
        if weighted:
            self.name = "feddws"

    def round(self, clients, participants, hyper, rngs, mapper):
        plain = replace(hyper, lam=0.0)
        m = len(clients)
        total = int(np.sum(train_sizes(clients)))
        global_model = self.global_model

        def task(i, client, rng):
            return local_update(client, global_model, m, plain, total, rng)

        updated = map_updates(clients, participants, rngs, mapper, task)
        weights = (
            [clients[i].data.train.n for i in participants] if self.weighted else None
        )
        self.global_model = feddist_update(updated, global_model, hyper.beta, weights)
        for c in clients:
            c.model = self.global_model


class HypoCluster(AlgorithmHandle):
    """Loss-based clustered aggregation: each device adopts the center that
    fits its training data best, then centers aggregate like fedavg within
    their cluster."""

    name = "hypocluster"

    def __init__(self):
        self.centers: list[ModelParams] | None = None
        self._assignment: np.ndarray | None = None

    def setup(self, clients, hyper, rng):
        arch = clients[0].model.arch
        # center 0 is the shared client init; the rest break symmetry with fresh seeds
        self.centers = [clients[0].model] + [
            init_model(arch, hyper.seed + k) for k in range(1, hyper.k)
        ]
        self._assignment = np.zeros(len(clients), dtype=np.int64)

    def round(self, clients, participants, hyper, rngs, mapper):
        plain = replace(hyper, lam=0.0)
        m = len(clients)
        total = int(np.sum(train_sizes(clients)))
        centers = self.centers
        for i in participants:
            self._assignment[i] = hypocluster_assign(clients[i], centers)
        assignment = self._assignment

        def task(i, client, rng):
            return local_update(client, centers[assignment[i]], m, plain, total, rng)

        updated = map_updates(clients, participants, rngs, mapper, task)
        for k in range(hyper.k):
            members = [
                (params, clients[i].data.train.n)
                for i, params in zip(participants, updated)
                if assignment[i] == k
            ]
            if members:
                self.centers[k] = weighted_average(
                    [p for p, _ in members], [n for _, n in members]
                )
        for i, c in enumerate(clients):
            c.model = self.centers[assignment[i]]

    def assignment(self, m):
        if self._assignment is None:
            return super().assignment(m)
        return self._assignment


class NoFed(AlgorithmHandle):
    name = "nofed"

    def round(self, clients, participants, hyper, rngs, mapper):
        plain = replace(hyper, lam=0.0, weight_local_loss=False)
        m = len(clients)

        def task(i, client, rng):
            return local_update(client, client.model, m, plain, None, rng)

        updated = map_updates(clients, participants, rngs, mapper, task)
        for i, params in zip(participants, updated):
            clients[i].model = params
