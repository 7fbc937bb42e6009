"""Configuration-driven experiment runner.

`run` executes one config over `repeats` seeds and writes metrics.csv plus
summary.json; `sweep-k` probes candidate cluster counts with short runs;
`compare` runs several algorithm configs on an identical dataset.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

from .engine import HyperParams
from .experiment import (
    ALGORITHMS,
    CLUSTERED,
    ExperimentConfig,
    IdxSpec,
    MetricsLog,
    SyntheticSpec,
    build_dataset,
    run_experiment,
)
from .fesem import choose_best_k, probe_k_scores
from .nn import ModelArch

METRIC_COLUMNS = ("micro_acc", "macro_acc", "micro_f1", "macro_f1", "objective", "ari")


class ConfigError(ValueError):
    """Invalid experiment configuration."""


def _check_keys(section: dict, allowed: set[str], context: str) -> None:
    unknown = set(section) - allowed
    if unknown:
        raise ConfigError(f"{context}: unknown field(s) {sorted(unknown)}")


def _data_from_dict(raw: dict) -> SyntheticSpec | IdxSpec:
    if not isinstance(raw, dict) or "kind" not in raw:
        raise ConfigError("data: expected an object with a 'kind' field")
    kind = raw["kind"]
    if kind == "synthetic":
        _check_keys(
            raw,
            {"kind", "m", "k_true", "per_device", "input_dim", "classes", "sep", "noise", "split"},
            "data",
        )
        required = {"m", "k_true", "per_device", "input_dim", "classes"}
        missing = required - set(raw)
        if missing:
            raise ConfigError(f"data: missing field(s) {sorted(missing)}")
        return SyntheticSpec(**{k: v for k, v in raw.items() if k != "kind"})
    if kind == "idx":
        _check_keys(raw, {"kind", "images", "labels", "m", "alpha", "split"}, "data")
        missing = {"images", "labels", "m", "alpha"} - set(raw)
        if missing:
            raise ConfigError(f"data: missing field(s) {sorted(missing)}")
        return IdxSpec(**{k: v for k, v in raw.items() if k != "kind"})
    raise ConfigError(f"data.kind: expected 'synthetic' or 'idx', got {kind!r}")


def _hyper_from_dict(raw: dict) -> HyperParams:
    _check_keys(
        raw,
        {
            "lambda", "mu", "lr", "local_steps", "batch_size", "rounds",
            "k", "participation", "weight_local_loss", "size_weighted_centers",
            "beta", "restarts", "seed",
        },
        "hyper",
    )
    kwargs = {("lam" if k == "lambda" else k): v for k, v in raw.items()}
    return HyperParams(**kwargs)


def _arch_from_dict(raw: dict | None, data: SyntheticSpec | IdxSpec) -> ModelArch:
    if raw is None:
        if isinstance(data, SyntheticSpec):
            return ModelArch((data.input_dim, data.classes))
        raise ConfigError("arch: required for idx data (dims are not known up front)")
    _check_keys(raw, {"layer_sizes", "activation"}, "arch")
    if "layer_sizes" not in raw:
        raise ConfigError("arch: missing field 'layer_sizes'")
    return ModelArch(tuple(raw["layer_sizes"]), raw.get("activation", "tanh"))


def config_from_dict(raw: dict) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config: expected a JSON object")
    _check_keys(raw, {"algorithm", "data", "arch", "hyper", "output_dir", "repeats"}, "config")
    for key in ("algorithm", "data"):
        if key not in raw:
            raise ConfigError(f"config: missing field {key!r}")
    data = _data_from_dict(raw["data"])
    try:
        hyper = _hyper_from_dict(raw.get("hyper", {}))
        arch = _arch_from_dict(raw.get("arch"), data)
        return ExperimentConfig(
            algorithm=raw["algorithm"],
            data=data,
            arch=arch,
            hyper=hyper,
            output_dir=raw.get("output_dir", "runs"),
            repeats=raw.get("repeats", 1),
        )
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def config_to_dict(config: ExperimentConfig) -> dict:
    if isinstance(config.data, SyntheticSpec):
        data = {
            "kind": "synthetic",
            "m": config.data.m,
            "k_true": config.data.k_true,
            "per_device": config.data.per_device,
            "input_dim": config.data.input_dim,
            "classes": config.data.classes,
            "sep": config.data.sep,
            "noise": config.data.noise,
            "split": config.data.split,
        }
    else:
        data = {
            "kind": "idx",
            "images": config.data.images,
            "labels": config.data.labels,
            "m": config.data.m,
            "alpha": config.data.alpha,
            "split": config.data.split,
        }
    h = config.hyper
    return {
        "algorithm": config.algorithm,
        "data": data,
        "arch": {
            "layer_sizes": list(config.arch.layer_sizes),
            "activation": config.arch.activation,
        },
        "hyper": {
            "lambda": h.lam,
            "mu": h.mu,
            "lr": h.lr,
            "local_steps": h.local_steps,
            "batch_size": h.batch_size,
            "rounds": h.rounds,
            "k": h.k,
            "participation": h.participation,
            "weight_local_loss": h.weight_local_loss,
            "size_weighted_centers": h.size_weighted_centers,
            "beta": h.beta,
            "restarts": h.restarts,
            "seed": h.seed,
        },
        "output_dir": config.output_dir,
        "repeats": config.repeats,
    }


def parse_config(path) -> ExperimentConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    try:
        raw = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{p}: invalid JSON: {exc}") from exc
    return config_from_dict(raw)


def _fmt(value) -> str:
    if value is None:
        return ""
    return repr(float(value))


def _make_mapper(workers: int):
    if workers <= 1:
        return None, map
    pool = ThreadPoolExecutor(max_workers=workers)
    return pool, pool.map


def _run_all_seeds(config: ExperimentConfig, base_seed: int, workers: int) -> list[MetricsLog]:
    pool, mapper = _make_mapper(workers)
    try:
        return [
            run_experiment(config, seed=base_seed + r, mapper=mapper)
            for r in range(config.repeats)
        ]
    finally:
        if pool is not None:
            pool.shutdown()


def _write_metrics_csv(path: Path, logs: list[MetricsLog]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("seed", "round") + METRIC_COLUMNS)
        for log in logs:
            for round_log in log.rounds:
                row = log.round_row(round_log)
                writer.writerow(
                    [row["seed"], row["round"]] + [_fmt(row[c]) for c in METRIC_COLUMNS]
                )


def _final_means(logs: list[MetricsLog]) -> dict:
    finals = [log.final_row() for log in logs]
    out = {}
    for col in METRIC_COLUMNS:
        values = [row[col] for row in finals]
        out[col] = None if any(v is None for v in values) else sum(values) / len(values)
    return out


def _write_summary(path: Path, config: ExperimentConfig, logs: list[MetricsLog]) -> None:
    summary = {
        "algorithm": config.algorithm,
        "seeds": [log.seed for log in logs],
        "rounds": config.hyper.rounds,
        "final": _final_means(logs),
    }
    with open(path, "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")


def cmd_run(
    config: ExperimentConfig,
    *,
    out_dir=None,
    seed: int | None = None,
    workers: int = 1,
) -> int:
    """Run `repeats` seeds and write metrics.csv + summary.json."""
    try:
        out = Path(out_dir or config.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        base_seed = config.hyper.seed if seed is None else seed
        logs = _run_all_seeds(config, base_seed, workers)
        _write_metrics_csv(out / "metrics.csv", logs)
        _write_summary(out / "summary.json", config, logs)
        final = _final_means(logs)
        print(
            f"{config.algorithm}: {config.repeats} seed(s), {config.hyper.rounds} rounds, "
            f"final macro_acc={final['macro_acc']:.4f} -> {out}"
        )
        return 0
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def cmd_sweep_k(
    config: ExperimentConfig,
    candidates,
    *,
    out_dir=None,
    seed: int | None = None,
    sample_size: int | None = None,
    probe_rounds: int = 3,
    run_full: bool = False,
    workers: int = 1,
) -> int:
    """Probe each candidate K with a short run, record scores, pick the best."""
    try:
        if config.algorithm != "fesem":
            raise ConfigError(f"sweep-k requires algorithm 'fesem', got {config.algorithm!r}")
        if not candidates:
            raise ConfigError("candidates: need at least one K")
        out = Path(out_dir or config.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        base_seed = config.hyper.seed if seed is None else seed
        dataset = build_dataset(config.data, base_seed)
        size = min(dataset.m, 100) if sample_size is None else sample_size
        hyper = replace(config.hyper, seed=base_seed)
        scores = probe_k_scores(
            dataset, candidates, size, probe_rounds, config.arch, hyper, base_seed
        )
        chosen = None
        best = float("-inf")
        for k in sorted(scores):
            if scores[k] > best:
                chosen, best = k, scores[k]
        with open(out / "sweep.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(("k", "macro_acc", "chosen"))
            for k in sorted(scores):
                writer.writerow([k, _fmt(scores[k]), int(k == chosen)])
        print(f"chosen K = {chosen} (probe macro_acc {best:.4f})")
        if run_full:
            full = replace(config, hyper=replace(config.hyper, k=chosen))
            return cmd_run(full, out_dir=out, seed=seed, workers=workers)
        return 0
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def cmd_compare(
    configs: list[ExperimentConfig],
    *,
    out_dir=None,
    workers: int = 1,
) -> int:
    """Run every config on the identical dataset and tabulate final metrics."""
    try:
        if len(configs) < 2:
            raise ConfigError("compare needs at least two configs")
        first = configs[0]
        for other in configs[1:]:
            if other.data != first.data:
                raise ConfigError("compare: configs must share an identical data spec")
            if other.hyper.seed != first.hyper.seed:
                raise ConfigError("compare: configs must share the same seed")
        out = Path(out_dir or first.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        rows = []
        for config in configs:
            logs = _run_all_seeds(config, config.hyper.seed, workers)
            rows.append((config.algorithm, _final_means(logs)))
        with open(out / "comparison.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(("algorithm",) + METRIC_COLUMNS)
            for name, final in rows:
                writer.writerow([name] + [_fmt(final[c]) for c in METRIC_COLUMNS])
        for name, final in rows:
            print(f"{name}: macro_acc={final['macro_acc']:.4f}")
        return 0
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="mcfed", description="Deterministic multi-center federated learning simulator"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one experiment config")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--out", default=None)
    p_run.add_argument("--seed", type=int, default=None)
    p_run.add_argument("--workers", type=int, default=1)

    p_sweep = sub.add_parser("sweep-k", help="probe candidate cluster counts")
    p_sweep.add_argument("--config", required=True)
    p_sweep.add_argument("--candidates", required=True, help="comma-separated, e.g. 1,2,3,4")
    p_sweep.add_argument("--out", default=None)
    p_sweep.add_argument("--seed", type=int, default=None)
    p_sweep.add_argument("--sample-size", type=int, default=None)
    p_sweep.add_argument("--probe-rounds", type=int, default=3)
    p_sweep.add_argument("--run-full", action="store_true")
    p_sweep.add_argument("--workers", type=int, default=1)

    p_cmp = sub.add_parser("compare", help="run several configs on one dataset")
    p_cmp.add_argument("--configs", required=True, help="comma-separated config paths")
    p_cmp.add_argument("--out", default=None)
    p_cmp.add_argument("--workers", type=int, default=1)

    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            return cmd_run(
                parse_config(args.config),
                out_dir=args.out,
                seed=args.seed,
                workers=args.workers,
            )
        if args.command == "sweep-k":
            candidates = [int(c) for c in args.candidates.split(",") if c.strip()]
            return cmd_sweep_k(
                parse_config(args.config),
                candidates,
                out_dir=args.out,
                seed=args.seed,
                sample_size=args.sample_size,
                probe_rounds=args.probe_rounds,
                run_full=args.run_full,
                workers=args.workers,
            )
        if args.command == "compare":
            configs = [parse_config(p) for p in args.configs.split(",") if p.strip()]
            return cmd_compare(configs, out_dir=args.out, workers=args.workers)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 2


if __name__ == "__main__":
    sys.exit(main())
