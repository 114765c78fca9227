"""Command-line front end: ``moreau-fl {gen-data,run,sweep,compare}``."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import jsonschema

from . import config as cfg
from . import experiment as ex
from .data import IdxParseError
from .data.container import ContainerError
from .prox import DivergenceError

EXIT_CONFIG = 2
EXIT_DIVERGED = 3
EXIT_DATA = 4


def _threads(args) -> int:
    env = os.environ.get("MOREAU_FL_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise cfg.ConfigError(f"MOREAU_FL_THREADS: not an integer: {env!r}") from None
    return args.threads


def _load(path, args) -> cfg.FederationConfig:
    config = cfg.load_config(path)
    if getattr(args, "lazy_clients", False):
        config = config.with_updates(lazy_clients=True)
    return config


def _number(text: str):
    try:
        return int(text)
    except ValueError:
        return float(text)


def _dataset_spec(path) -> cfg.DatasetSpec:
    """A bare dataset object, or the ``dataset`` of a full run config."""
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as err:
        raise cfg.ConfigError(f"{path}: invalid JSON ({err})") from None
    if "dataset" in doc:
        config = cfg.config_from_dict(doc)
        return config.dataset
    return cfg.dataset_spec_from_dict(doc)


def cmd_gen_data(args) -> int:
    spec = _dataset_spec(args.config)
    digest, data = ex.gen_data(spec, args.out)
    print(f"sha256 {digest}")
    print(f"clients {data.N}  d {data.d}  C {data.C}  samples {sum(data.sizes())}")
    for line in ex.size_histogram(data.sizes()):
        print(line)
    return 0


def cmd_run(args) -> int:
    config = _load(args.config, args)
    summary = ex.run_repeats(config, args.out, args.repeats, threads=_threads(args),
                             record_time=not args.no_timing)
    fp, fg = summary.final_personalized_acc, summary.final_global_acc
    print(f"{summary.name}: final PM {fp.mean:.4f} +- {fp.std:.4f}  GM {fg.mean:.4f} +- {fg.std:.4f}")
    return 0


def cmd_sweep(args) -> int:
    config = _load(args.config, args)
    values = [_number(v) for v in args.values.split(",") if v.strip()]
    path = ex.run_sweep(config, args.param, values, args.out, threads=_threads(args),
                        record_time=not args.no_timing)
    print(f"wrote {path}")
    return 0


def cmd_compare(args) -> int:
    configs = [_load(p, args) for p in args.config]
    table = ex.run_compare(configs, args.out, threads=_threads(args),
                           record_time=not args.no_timing)
    for k, (entry, _, acc) in enumerate(table, 1):
        print(f"{k:2d}. {entry:<24s} {acc:.4f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="moreau-fl", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, multi=False):
        if multi:
            p.add_argument("--config", nargs="+", required=True, help="run config JSON files")
        else:
            p.add_argument("--config", required=True, help="run config JSON file")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--threads", type=int, default=1,
                       help="worker threads per run (MOREAU_FL_THREADS overrides)")
        p.add_argument("--lazy-clients", action="store_true",
                       help="only compute updates for sampled clients (same results, faster)")
        p.add_argument("--no-timing", action="store_true",
                       help="write wall_ms as 0 so outputs are byte-reproducible")

    p = sub.add_parser("gen-data", help="build and serialize a dataset")
    p.add_argument("--config", required=True, help="dataset spec or run config JSON")
    p.add_argument("--out", required=True, help="output container path")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("run", help="train one config over repeat seeds")
    common(p)
    p.add_argument("--repeats", type=int, default=3, help="number of seeds (default 3)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="one run per value of a hyperparameter")
    common(p)
    p.add_argument("--param", required=True, choices=sorted(ex.SWEEP_PARAMS))
    p.add_argument("--values", required=True, help="comma-separated values, e.g. 1,2,4")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("compare", help="run several configs on the same dataset")
    common(p, multi=True)
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if getattr(args, "repeats", 1) < 1:
            raise cfg.ConfigError("--repeats: must be at least 1")
        return args.func(args)
    except (cfg.ConfigError, jsonschema.ValidationError) as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as err:
        print(f"diverged: {err}", file=sys.stderr)
        return EXIT_DIVERGED
    except (IdxParseError, ContainerError, FileNotFoundError) as err:
        print(f"data error: {err}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
