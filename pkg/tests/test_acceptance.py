"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with `pytest tests/test_acceptance.py -v -s` to see the lines as they
complete. Every tolerance is pinned here, not configured elsewhere.
"""

import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest

from mcfed import (
    ClientState,
    HyperParams,
    ModelArch,
    ModelParams,
    SyntheticSpec,
    build_dataset,
    e_step,
    init_model,
    intra_cluster_objective,
    m_step,
    proximal_grad,
    run_experiment,
    select_k,
    supervised_loss_grad,
    weighted_average,
)
from mcfed.cli import cmd_run, config_from_dict
from mcfed.experiment import ExperimentConfig
from oracles import (
    brute_force_assignment,
    fd_loss_grad,
    loop_cluster_means,
    loop_intra_objective,
    max_rel_error,
)
from test_nn import random_batch, random_model

SEEDS = (0, 1, 2)

# the label-permuted two-cluster setup used by A3 / A4 / A6 / A10
DATA2 = SyntheticSpec(m=20, k_true=2, per_device=50, input_dim=2, classes=2)
ARCH2 = ModelArch((2, 2))
# the four-cluster analog for A4 / A5; four classes keep all four label
# permutations distinct
DATA4 = SyntheticSpec(m=20, k_true=4, per_device=50, input_dim=2, classes=4)
ARCH4 = ModelArch((2, 4))


def hyper_for(k: int, rounds: int = 30) -> HyperParams:
    return HyperParams(lr=0.05, rounds=rounds, k=k, lam=0.0, weight_local_loss=False)


def _report(name: str, ok: bool, detail: str, started: float, budget: float):
    elapsed = time.monotonic() - started
    status = "PASS" if ok and elapsed < budget else "FAIL"
    print(f"{name}: {status} ({detail}) [{elapsed:.1f}s / budget {budget:.0f}s]")
    assert ok, f"{name} failed: {detail}"
    assert elapsed < budget, f"{name} exceeded runtime budget: {elapsed:.1f}s >= {budget}s"


def final_rows(algorithm, data, arch, k, rounds=30):
    rows = []
    for seed in SEEDS:
        config = ExperimentConfig(algorithm, data, arch, hyper_for(k, rounds))
        rows.append(run_experiment(config, seed=seed).final_row())
    return rows


@pytest.fixture(scope="module")
def a3_runs():
    return {
        "fesem": final_rows("fesem", DATA2, ARCH2, k=2),
        "fedavg": final_rows("fedavg", DATA2, ARCH2, k=1),
    }


@pytest.fixture(scope="module")
def k4_runs():
    return {k: final_rows("fesem", DATA4, ARCH4, k=k) for k in (1, 2, 4)}


def test_a1_oracle_equivalence():
    started = time.monotonic()
    rng = np.random.default_rng(100)
    worst_mean = 0.0
    worst_intra = 0.0
    exact = 0
    for _ in range(100):
        n_params = int(rng.integers(2, 8))
        arch = ModelArch((n_params - 1, 1))
        n_models = int(rng.integers(2, 12))
        k = int(rng.integers(1, min(n_models, 5) + 1))
        models = [ModelParams(rng.normal(size=n_params), arch) for _ in range(n_models)]
        centers = [ModelParams(rng.normal(size=n_params), arch) for _ in range(k)]

        assignment = e_step(models, centers)
        if np.array_equal(assignment, brute_force_assignment(models, centers)):
            exact += 1
        means = m_step(models, assignment, centers)
        for got, want in zip(means, loop_cluster_means(models, assignment, centers)):
            scale = np.maximum(np.abs(want), 1e-300)
            worst_mean = max(worst_mean, float(np.max(np.abs(got.values - want) / scale)))
        got_obj = intra_cluster_objective(models, centers, assignment)
        want_obj = loop_intra_objective(models, centers, assignment)
        worst_intra = max(worst_intra, abs(got_obj - want_obj) / max(abs(want_obj), 1e-300))
    ok = exact == 100 and worst_mean < 1e-12 and worst_intra < 1e-12
    _report(
        "A1 oracle equivalence",
        ok,
        f"assignments exact {exact}/100, mean rel err {worst_mean:.2e}, "
        f"objective rel err {worst_intra:.2e}",
        started,
        budget=5.0,
    )


def test_a2_em_monotonicity():
    started = time.monotonic()
    rng = np.random.default_rng(200)
    violations = 0
    for _ in range(20):
        n_params = int(rng.integers(2, 7))
        arch = ModelArch((n_params - 1, 1))
        models = [ModelParams(rng.normal(size=n_params), arch) for _ in range(12)]
        k = int(rng.integers(1, 5))
        centers = [ModelParams(rng.normal(size=n_params), arch) for _ in range(k)]
        assignment = e_step(models, centers)
        previous = intra_cluster_objective(models, centers, assignment)
        for _ in range(20):
            centers = m_step(models, assignment, centers)
            assignment = e_step(models, centers)
            current = intra_cluster_objective(models, centers, assignment)
            if current > previous * (1.0 + 1e-12) + 1e-15:
                violations += 1
            previous = current
    _report(
        "A2 EM monotonicity",
        violations == 0,
        f"{violations} increases over 20 instances x 20 sweeps",
        started,
        budget=5.0,
    )


def test_a3_multi_center_advantage(a3_runs):
    started = time.monotonic()
    fesem = float(np.mean([r["macro_acc"] for r in a3_runs["fesem"]]))
    fedavg = float(np.mean([r["macro_acc"] for r in a3_runs["fedavg"]]))
    ok = fesem >= fedavg + 0.10 and fesem >= 0.9
    _report(
        "A3 multi-center advantage",
        ok,
        f"fesem {fesem:.3f} vs fedavg {fedavg:.3f}, gap {100 * (fesem - fedavg):.1f}pt",
        started,
        budget=120.0,
    )


def test_a4_cluster_recovery(a3_runs, k4_runs):
    started = time.monotonic()
    hits2 = sum(1 for r in a3_runs["fesem"] if r["ari"] == 1.0)
    hits4 = sum(1 for r in k4_runs[4] if r["ari"] == 1.0)
    ok = hits2 >= 2 and hits4 >= 2
    _report(
        "A4 cluster recovery",
        ok,
        f"ARI=1.0 on {hits2}/3 seeds (k_true=2) and {hits4}/3 seeds (k_true=4)",
        started,
        budget=180.0,
    )


def test_a5_k_ordering(k4_runs):
    started = time.monotonic()
    acc = {k: float(np.mean([r["macro_acc"] for r in rows])) for k, rows in k4_runs.items()}
    ok = acc[4] >= acc[2] >= acc[1] - 0.02
    _report(
        "A5 K-ordering trend",
        ok,
        f"acc(K=4)={acc[4]:.3f} >= acc(K=2)={acc[2]:.3f} >= acc(K=1)-0.02={acc[1] - 0.02:.3f}",
        started,
        budget=300.0,
    )


def test_a6_convergence_shape():
    started = time.monotonic()
    worst = 0.0
    rounds = 40
    for seed in SEEDS:
        config = ExperimentConfig("fesem", DATA2, ARCH2, hyper_for(2, rounds))
        log = run_experiment(config, seed=seed)
        curve = [log.round_row(r)["macro_acc"] for r in log.rounds]
        final = curve[-1]
        tail_start = int(0.75 * rounds) + 1  # rounds 31..40
        worst = max(worst, max(abs(a - final) for a in curve[tail_start:]))
    _report(
        "A6 convergence shape",
        worst <= 0.01,
        f"max deviation from final over last 25% of rounds: {100 * worst:.2f}pt",
        started,
        budget=120.0,
    )


def test_a7_gradient_correctness():
    started = time.monotonic()
    rng = np.random.default_rng(700)
    archs = [
        ModelArch((3, 2)),
        ModelArch((2, 4, 2)),
        ModelArch((4, 3, 3), activation="relu"),
        ModelArch((2, 3, 2, 2)),
    ]
    worst = 0.0
    for trial in range(24):
        arch = archs[trial % len(archs)]
        model = random_model(arch, rng)
        batch = random_batch(arch, int(rng.integers(2, 9)), rng)
        _, grad = supervised_loss_grad(model, batch)
        worst = max(worst, max_rel_error(grad, fd_loss_grad(model, batch)))

        center = random_model(arch, rng)
        lam, m = float(rng.uniform(0.1, 2.0)), int(rng.integers(1, 9))
        analytic = proximal_grad(model, center, lam, m)
        h = 1e-5
        fd = np.zeros(arch.n_params)
        for j in range(arch.n_params):
            plus, minus = model.values.copy(), model.values.copy()
            plus[j] += h
            minus[j] -= h
            fp = lam / m * float(np.sum((plus - center.values) ** 2))
            fm = lam / m * float(np.sum((minus - center.values) ** 2))
            fd[j] = (fp - fm) / (2 * h)
        worst = max(worst, max_rel_error(analytic, fd))
    _report(
        "A7 gradient correctness",
        worst < 1e-4,
        f"max relative error {worst:.2e} over 24 trials",
        started,
        budget=5.0,
    )


def _full_round_logs(algorithm, hyper, seed=17):
    data = SyntheticSpec(m=6, k_true=2, per_device=20, input_dim=2, classes=2)
    config = ExperimentConfig(algorithm, data, ModelArch((2, 2)), hyper)
    return run_experiment(config, seed=seed)


def test_a8_reductions():
    started = time.monotonic()
    hyper = HyperParams(lr=0.2, rounds=6, mu=0.0, k=1)
    fedavg = _full_round_logs("fedavg", hyper)
    fedprox = _full_round_logs("fedprox", hyper)
    hypo = _full_round_logs("hypocluster", hyper)
    prox_ok = all(
        np.array_equal(a.per_device_acc, b.per_device_acc)
        and np.array_equal(a.per_device_f1, b.per_device_f1)
        and a.objective == b.objective
        for a, b in zip(fedavg.rounds, fedprox.rounds)
    )
    hypo_ok = all(
        np.array_equal(a.per_device_acc, b.per_device_acc) and a.objective == b.objective
        for a, b in zip(fedavg.rounds, hypo.rounds)
    )

    # single-center mean update equals the weighted average at equal sizes
    rng = np.random.default_rng(800)
    arch = ModelArch((2, 2))
    models = [ModelParams(rng.normal(size=6), arch) for _ in range(5)]
    mean_center = m_step(models, np.zeros(5, dtype=int), [models[0]])[0]
    weighted = weighted_average(models, np.ones(5))
    m_ok = float(np.max(np.abs(mean_center.values - weighted.values))) <= 1e-12 * float(
        np.max(np.abs(weighted.values))
    )
    ok = prox_ok and hypo_ok and m_ok
    _report(
        "A8 reductions",
        ok,
        f"fedprox(mu=0)==fedavg: {prox_ok}, hypocluster(K=1)==fedavg: {hypo_ok}, "
        f"K=1 mean==weighted avg: {m_ok}",
        started,
        budget=60.0,
    )


def test_a9_determinism(tmp_path):
    started = time.monotonic()
    raw = {
        "algorithm": "fesem",
        "data": {
            "kind": "synthetic", "m": 8, "k_true": 2, "per_device": 24,
            "input_dim": 2, "classes": 2,
        },
        "hyper": {
            "lr": 0.05, "rounds": 5, "k": 2, "batch_size": 8,
            "weight_local_loss": False, "seed": 0,
        },
        "repeats": 2,
    }
    config = config_from_dict(raw)
    outputs = []
    for name, workers in (("first", 1), ("second", 1), ("threaded", 3)):
        out = tmp_path / name
        assert cmd_run(config, out_dir=out, workers=workers) == 0
        outputs.append((out / "metrics.csv").read_bytes())
    ok = outputs[0] == outputs[1] == outputs[2]

    # determinism must also hold for a raw threaded mapper at the library level
    serial = run_experiment(config, seed=0)
    with ThreadPoolExecutor(max_workers=4) as pool:
        threaded = run_experiment(config, seed=0, mapper=pool.map)
    lib_ok = all(
        np.array_equal(a.per_device_acc, b.per_device_acc)
        and np.array_equal(a.assignment, b.assignment)
        and a.objective == b.objective
        for a, b in zip(serial.rounds, threaded.rounds)
    )
    _report(
        "A9 determinism",
        ok and lib_ok,
        f"csv byte-identical across reruns and worker counts: {ok}, "
        f"threaded mapper bit-identical: {lib_ok}",
        started,
        budget=60.0,
    )


def test_a10_select_k():
    started = time.monotonic()
    chosen = []
    for seed in SEEDS:
        dataset = build_dataset(DATA2, seed)
        chosen.append(
            select_k(
                dataset, [1, 2, 3], sample_size=DATA2.m, probe_rounds=3,
                arch=ARCH2, hyper=hyper_for(2), seed=seed,
            )
        )
    hits = sum(1 for k in chosen if k == 2)
    _report(
        "A10 select_k",
        hits >= 2,
        f"chose K=2 on {hits}/3 seeds (choices: {chosen})",
        started,
        budget=60.0,
    )
