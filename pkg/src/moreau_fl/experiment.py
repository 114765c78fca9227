"""Experiment driver: dataset builds, repeated runs, sweeps and comparisons.

Every output file is a pure function of the configuration and seed. Floats
in CSV files are written with 6 significant digits. The ``wall_ms`` column is
informational and is written as 0 when timing is disabled.
"""
from __future__ import annotations

import csv
import json
import logging
import math
import statistics
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

from . import config as cfg
from .data import (SyntheticParams, dataset_hash, generate_synthetic, load_mnist,
                   partition_mnist, read_dataset, write_dataset)
from .data.dataset import FederatedDataset
from .federation import RoundReport, run_training

log = logging.getLogger(__name__)

METRIC_COLUMNS = ("round", "global_test_acc", "personalized_test_acc",
                  "global_train_loss", "personalized_train_loss", "wall_ms")
SWEEP_PARAMS = {"R": "R", "K": "K", "batch_size": "batch_size", "lambda": "lam", "beta": "beta"}

_DATA_CACHE: dict[str, FederatedDataset] = {}
# id -> (dataset, hash); holding the dataset keeps the id from being reused.
_HASH_CACHE: dict[int, tuple] = {}


def fmt(value) -> str:
    """CSV cell text: integers verbatim, floats with 6 significant digits."""
    if isinstance(value, int) and not isinstance(value, bool):
        return str(value)
    return f"{float(value):.6g}"


def report_row(report: RoundReport) -> list[str]:
    return [fmt(getattr(report, name)) for name in METRIC_COLUMNS]


def build_dataset(spec: cfg.DatasetSpec) -> FederatedDataset:
    """Build (or fetch from the in-process cache) the dataset ``spec`` describes."""
    key = json.dumps(spec.to_json(), sort_keys=True)
    cached = _DATA_CACHE.get(key)
    if cached is not None:
        return cached
    extra = {} if spec.N is None else {"N": spec.N}
    if spec.kind == "mnist":
        images, labels = load_mnist(spec.path or cfg.DEFAULT_MNIST_DIR)
        data = partition_mnist(images, labels, labels_per_client=spec.labels_per_client,
                               size_range=tuple(spec.size_range), seed=spec.seed, **extra)
    elif spec.kind == "synthetic":
        try:
            params = SyntheticParams(alpha_bar=spec.alpha_bar, beta_bar=spec.beta_bar,
                                     size_min=spec.size_min, size_max=spec.size_max, **extra)
        except ValueError as err:
            raise cfg.ConfigError(f"dataset: {err}") from None
        data = generate_synthetic(params, spec.seed)
    else:
        if not spec.path:
            raise cfg.ConfigError("dataset.path: required for kind 'file'")
        data = read_dataset(spec.path)
        if spec.N is not None and data.N != spec.N:
            raise cfg.ConfigError(f"dataset.N: file holds {data.N} clients, config says {spec.N}")
    _DATA_CACHE[key] = data
    return data


def content_hash(data: FederatedDataset) -> str:
    hit = _HASH_CACHE.get(id(data))
    if hit is None:
        hit = _HASH_CACHE[id(data)] = (data, dataset_hash(data))
    return hit[1]


@dataclass
class Stat:
    mean: float
    std: float
    values: list

    @classmethod
    def of(cls, values: Sequence[float]) -> "Stat":
        values = [float(v) for v in values]
        std = statistics.stdev(values) if len(values) > 1 else 0.0
        return cls(math.fsum(values) / len(values), std, values)


@dataclass
class RunSummary:
    """Final and best accuracies over repeat seeds.

    ``best`` is the maximum over evaluated rounds, so it can only miss the
    true best by what the evaluation cadence skips.
    """
    name: str
    algorithm: str
    seeds: list
    final_global_acc: Stat
    final_personalized_acc: Stat
    best_global_acc: Stat
    best_personalized_acc: Stat
    dataset_hash: str
    config: dict = field(default_factory=dict)

    @classmethod
    def from_runs(cls, config: cfg.FederationConfig, seeds, runs: Sequence[Sequence[RoundReport]],
                  data_hash: str) -> "RunSummary":
        return cls(
            name=config.label,
            algorithm=config.algorithm,
            seeds=list(seeds),
            final_global_acc=Stat.of([r[-1].global_test_acc for r in runs]),
            final_personalized_acc=Stat.of([r[-1].personalized_test_acc for r in runs]),
            best_global_acc=Stat.of([max(x.global_test_acc for x in r) for r in runs]),
            best_personalized_acc=Stat.of([max(x.personalized_test_acc for x in r) for r in runs]),
            dataset_hash=data_hash,
            config=config.to_json(),
        )

    def to_json(self) -> dict:
        return asdict(self)


class MetricsWriter:
    """metrics.csv that is flushed row by row, so a crash leaves a valid prefix."""

    def __init__(self, path: Path):
        path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = open(path, "w", newline="")
        self._csv = csv.writer(self._fh, lineterminator="\n")
        self._csv.writerow(METRIC_COLUMNS)
        self._fh.flush()

    def __call__(self, report: RoundReport) -> None:
        self._csv.writerow(report_row(report))
        self._fh.flush()
        log.info("round %d  GM %.4f  PM %.4f", report.round, report.global_test_acc,
                 report.personalized_test_acc)

    def close(self) -> None:
        self._fh.close()


def run_one(config: cfg.FederationConfig, data: FederatedDataset, out_dir: Path, *,
            threads: int = 1, record_time: bool = True) -> list[RoundReport]:
    """Run a single seed and write ``out_dir/seed_<seed>/metrics.csv``."""
    writer = MetricsWriter(Path(out_dir) / f"seed_{config.seed}" / "metrics.csv")
    try:
        return run_training(config, data, threads=threads, record_time=record_time,
                            on_report=writer)
    finally:
        writer.close()


def run_repeats(config: cfg.FederationConfig, out_dir, repeats: int = 3, *, threads: int = 1,
                record_time: bool = True, data: Optional[FederatedDataset] = None) -> RunSummary:
    """Run seeds ``seed, seed+1, ...`` on one dataset and write summary.json."""
    if repeats < 1:
        raise ValueError("repeats must be at least 1")
    out_dir = Path(out_dir)
    data = build_dataset(config.dataset) if data is None else data
    seeds = [config.seed + k for k in range(repeats)]
    runs = []
    for s in seeds:
        log.info("%s: seed %d", config.label, s)
        runs.append(run_one(config.with_updates(seed=s), data, out_dir,
                            threads=threads, record_time=record_time))
    summary = RunSummary.from_runs(config, seeds, runs, content_hash(data))
    (out_dir / "summary.json").write_text(json.dumps(summary.to_json(), indent=2, sort_keys=True) + "\n")
    return summary


def run_sweep(config: cfg.FederationConfig, param: str, values: Sequence, out_dir, *,
              threads: int = 1, record_time: bool = True) -> Path:
    """One run per value of ``param`` on a shared dataset; writes sweep.csv.

    Each cell's own metrics.csv lives in ``out_dir/<param>=<value>/seed_<s>/``
    and is identical to a standalone run with that value.
    """
    if param not in SWEEP_PARAMS:
        raise cfg.ConfigError(f"sweep param must be one of {sorted(SWEEP_PARAMS)}, got {param!r}")
    if not values:
        raise cfg.ConfigError("sweep needs at least one value")
    out_dir = Path(out_dir)
    data = build_dataset(config.dataset)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "sweep.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(("param", "param_value") + METRIC_COLUMNS)
        for value in values:
            cell = config.with_updates(**{SWEEP_PARAMS[param]: value})
            text = fmt(value)
            reports = run_one(cell, data, out_dir / f"{param}={text}",
                              threads=threads, record_time=record_time)
            for r in reports:
                writer.writerow([param, text] + report_row(r))
            fh.flush()
    info = {"param": param, "values": list(values), "dataset_hash": content_hash(data),
            "config": config.to_json()}
    (out_dir / "sweep.json").write_text(json.dumps(info, indent=2, sort_keys=True) + "\n")
    return out_dir / "sweep.csv"


def _check_comparable(configs: Sequence[cfg.FederationConfig]) -> None:
    first = configs[0]
    for c in configs[1:]:
        if c.dataset.to_json() != first.dataset.to_json():
            raise cfg.ConfigError(f"{c.label}: dataset differs from {first.label}; refusing to compare")
        if c.seed != first.seed:
            raise cfg.ConfigError(f"{c.label}: seed {c.seed} differs from {first.label}'s {first.seed}")
        if c.N != first.N:
            raise cfg.ConfigError(f"{c.label}: N differs from {first.label}")


def _unique_labels(configs) -> list[str]:
    seen: dict[str, int] = {}
    labels = []
    for c in configs:
        n = seen[c.label] = seen.get(c.label, 0) + 1
        labels.append(c.label if n == 1 else f"{c.label}#{n}")
    return labels


def ranking(configs, labels, finals: Sequence[RoundReport]) -> list[tuple[str, str, float]]:
    """Rows ``(entry, model, accuracy)`` sorted by final accuracy, best first.

    pFedMe contributes both its personalized (PM) and global (GM) model,
    Per-FedAvg its personalized model and FedAvg its global model.
    """
    rows = []
    for c, label, r in zip(configs, labels, finals):
        if c.algorithm in ("pfedme", "perfedavg"):
            rows.append((f"{label}-PM", "personalized", r.personalized_test_acc))
        if c.algorithm in ("pfedme", "fedavg"):
            rows.append((f"{label}-GM", "global", r.global_test_acc))
    # Stable sort keeps config order for ties.
    return sorted(rows, key=lambda row: -row[2])


def run_compare(configs: Sequence[cfg.FederationConfig], out_dir, *, threads: int = 1,
                record_time: bool = True) -> list[tuple[str, str, float]]:
    """Run every config on the same dataset; write compare.csv and ranking.csv."""
    if not configs:
        raise cfg.ConfigError("compare needs at least one config")
    _check_comparable(configs)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    data = build_dataset(configs[0].dataset)
    labels = _unique_labels(configs)
    runs = [run_one(c, data, out_dir / label, threads=threads, record_time=record_time)
            for c, label in zip(configs, labels)]

    metrics = METRIC_COLUMNS[1:]
    by_round = [{r.round: r for r in run} for run in runs]
    rounds = sorted(set().union(*by_round))
    with open(out_dir / "compare.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["round"] + [f"{label}:{m}" for label in labels for m in metrics])
        for t in rounds:
            row = [str(t)]
            for table in by_round:
                r = table.get(t)
                row += [fmt(getattr(r, m)) if r else "" for m in metrics]
            writer.writerow(row)

    table = ranking(configs, labels, [run[-1] for run in runs])
    with open(out_dir / "ranking.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["rank", "entry", "model", "final_test_acc"])
        for k, (entry, model, acc) in enumerate(table, 1):
            writer.writerow([k, entry, model, fmt(acc)])
    return table


def size_histogram(sizes: Sequence[int], width: int = 40) -> list[str]:
    """Per-client size lines with a proportional bar."""
    top = max(sizes)
    return [f"client {i:3d} {n:7d} {'#' * max(1, round(width * n / top))}"
            for i, n in enumerate(sizes)]


def gen_data(spec: cfg.DatasetSpec, out_path) -> tuple[str, FederatedDataset]:
    """Build and serialize a dataset; return its content hash and the dataset."""
    data = build_dataset(spec)
    Path(out_path).parent.mkdir(parents=True, exist_ok=True)
    return write_dataset(data, out_path), data
