"""Command-line interface.

Subcommands cover the full benchmark workflow: ``generate`` synthesizes
ground-motion/oscillator datasets, ``construct`` builds a model sequence
from a dataset, ``predict`` and ``evaluate`` run a saved sequence on new
data, ``sweep`` repeats construction over a parameter grid, and
``inspect`` prints a summary of any artifact.

Configuration starts from the built-in benchmark profile, is overlaid by
an optional JSON file (``--config``), and finally by ``--set key=value``
flags (dotted keys, JSON-parsed values). Every run writes the fully
resolved configuration next to its outputs, and reruns with identical
configuration and seed reproduce outputs byte for byte.

Exit codes: 0 success, 2 configuration errors, 3 data errors, 4 numerical
failures.

The environment variable ``AUTONARX_WORKERS`` caps how many parallel
workers a command may use (the current implementation is serial, which
respects any cap >= 1).
"""

from __future__ import annotations

import argparse
import copy
import json
import math
import os
import sys
from typing import Dict, List, Mapping, Optional

import numpy as np

from .boucwen_bench import (
    BoucWenParams,
    GroundMotionParams,
    IntegratorConfig,
    generate_benchmark,
)
from .errors import ConfigError, DataError, NumericalError
from .fnarx_model import FitConfig
from .mnarx_auto import (
    ModelSequence,
    RankingConfig,
    construct,
    load_sequence,
    predict,
    save_sequence,
)
from .reporting import evaluate_sequence, export_report
from .signals import format_float, load_dataset, save_dataset

WORKERS_ENV = "AUTONARX_WORKERS"

DEFAULT_CONFIG: Dict[str, dict] = {
    "oscillator": {
        "zeta": 0.02,
        "omega": 10.0,
        "rho": 0.2,
        "gamma": 0.5,
        "alpha": 25.0,
        "beta": 25.0,
        "n": 1.0,
    },
    "ground_motion": {
        "arias": 0.109,
        "d595": 7.96,
        "t_mid": 7.78,
        "omega_mid": 4.66 * 2.0 * math.pi,
        "omega_slope": -0.09 * 2.0 * math.pi,
        "zeta_f": 0.24,
        "hp_freq": 0.2,
    },
    "integrator": {"dt": 0.01, "duration": 30.0},
    "generate": {"n_traces": 100, "seed": 2023},
    "ranking": {
        "rho_threshold": 0.2,
        "error_threshold": 0.0,
        "max_iterations": None,
        "max_runtime": None,
        "method": "kendall",
        "subsample": 100000,
        "components_per_quantity": 40,
    },
    "fit": {
        "default": {
            "degree": 3,
            "q_norm": 0.8,
            "max_lars_steps": None,
            "forecast_eval_points": 10,
            "forecast_eval_traces": 50,
            "memory_steps": 40,
        },
        "y": {"memory_steps": 40},
        "z": {"memory_steps": 120},
    },
}


def read_workers_cap() -> int:
    """Validated AUTONARX_WORKERS value (defaults to 1)."""
    raw = os.environ.get(WORKERS_ENV)
    if raw is None:
        return 1
    try:
        value = int(raw)
    except ValueError:
        raise ConfigError(f"{WORKERS_ENV} must be an integer, got {raw!r}")
    if value < 1:
        raise ConfigError(f"{WORKERS_ENV} must be >= 1, got {value}")
    return value


# ---------------------------------------------------------------------------
# Configuration plumbing
# ---------------------------------------------------------------------------


def _deep_update(base: dict, overlay: Mapping) -> dict:
    for key, value in overlay.items():
        if isinstance(value, Mapping) and isinstance(base.get(key), dict):
            _deep_update(base[key], value)
        else:
            base[key] = value
    return base


def _parse_override(text: str) -> Mapping:
    if "=" not in text:
        raise ConfigError(f"override '{text}' is not of the form key=value")
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    node: dict = {}
    leaf = node
    parts = key.split(".")
    for part in parts[:-1]:
        if not part:
            raise ConfigError(f"override '{text}' has an empty key segment")
        leaf[part] = {}
        leaf = leaf[part]
    if not parts[-1]:
        raise ConfigError(f"override '{text}' has an empty key segment")
    leaf[parts[-1]] = value
    return node


def resolve_config(config_path: Optional[str], overrides: List[str]) -> dict:
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    if config_path:
        try:
            with open(config_path) as fh:
                user = json.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {config_path}")
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {config_path} is not valid JSON: {exc}")
        if not isinstance(user, dict):
            raise ConfigError("config file must hold a JSON object")
        _deep_update(cfg, user)
    for text in overrides:
        _deep_update(cfg, _parse_override(text))
    return cfg


def write_snapshot(cfg: dict, out_dir: str, command: str) -> str:
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "config.json")
    snapshot = {"command": command, "workers_cap": read_workers_cap(), **cfg}
    with open(path, "w") as fh:
        json.dump(snapshot, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return path


def _build_params(cfg: dict):
    try:
        bw = BoucWenParams(**cfg["oscillator"])
        gm = GroundMotionParams(**cfg["ground_motion"])
        integ = IntegratorConfig(**cfg["integrator"])
    except TypeError as exc:
        raise ConfigError(f"bad generator configuration: {exc}")
    return bw, gm, integ


def _build_fit_configs(cfg: dict):
    fit_cfg = cfg.get("fit", {})
    if not isinstance(fit_cfg, Mapping):
        raise ConfigError("'fit' section must be an object")
    base = dict(DEFAULT_CONFIG["fit"]["default"])
    base.update(fit_cfg.get("default", {}))
    try:
        default = FitConfig(**base)
    except TypeError as exc:
        raise ConfigError(f"bad default fit configuration: {exc}")
    per_channel = {}
    for channel, entry in fit_cfg.items():
        if channel == "default":
            continue
        merged = dict(base)
        merged.update(entry)
        try:
            per_channel[channel] = FitConfig(**merged)
        except TypeError as exc:
            raise ConfigError(f"bad fit configuration for '{channel}': {exc}")
    return per_channel, default


def _build_ranking(cfg: dict) -> RankingConfig:
    try:
        return RankingConfig(**cfg.get("ranking", {}))
    except TypeError as exc:
        raise ConfigError(f"bad ranking configuration: {exc}")


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_generate(args: argparse.Namespace) -> int:
    cfg = resolve_config(args.config, args.set)
    if args.n_traces is not None:
        cfg["generate"]["n_traces"] = args.n_traces
    if args.seed is not None:
        cfg["generate"]["seed"] = args.seed
    bw, gm, integ = _build_params(cfg)
    n_traces = int(cfg["generate"]["n_traces"])
    seed = int(cfg["generate"]["seed"])
    dataset = generate_benchmark(n_traces, seed, bw=bw, gm=gm, integ=integ)
    save_dataset(dataset, args.out)
    write_snapshot(cfg, args.out, "generate")
    print(f"wrote {n_traces} traces x {dataset.n_steps} steps to {args.out}")
    return 0


def cmd_construct(args: argparse.Namespace) -> int:
    cfg = resolve_config(args.config, args.set)
    dataset = load_dataset(args.data)
    fit_configs, default_fit = _build_fit_configs(cfg)
    ranking = _build_ranking(cfg)
    result = construct(
        dataset,
        fit_configs,
        config=ranking,
        target=args.target,
        default_fit_config=default_fit,
    )
    os.makedirs(args.out, exist_ok=True)
    seq_path = os.path.join(args.out, "sequence.json")
    save_sequence(result.sequence, seq_path)
    trace_path = os.path.join(args.out, "construction_trace.csv")
    result.trace.to_csv(trace_path)
    write_snapshot(cfg, args.out, "construct")
    stages = result.sequence.model_targets
    print(f"constructed {len(stages)} model stage(s): {', '.join(stages)}")
    print(f"mean normalized training error: {format_float(result.final_error)}")
    print(f"sequence written to {seq_path}")
    return 0


def _load_sequence_arg(path: str) -> ModelSequence:
    if os.path.isdir(path):
        path = os.path.join(path, "sequence.json")
    if not os.path.exists(path):
        raise DataError(f"sequence file not found: {path}")
    return load_sequence(path)


def cmd_predict(args: argparse.Namespace) -> int:
    sequence = _load_sequence_arg(args.model)
    dataset = load_dataset(args.data)
    inputs = {ch: dataset.stack(ch) for ch in sequence.exogenous}
    seeds = None
    if not args.no_seed:
        seeds = {}
        for ch in sequence.model_targets:
            t0 = sequence.model_for(ch).t0_steps
            if ch in dataset.channel_names and t0 > 0:
                seeds[ch] = dataset.stack(ch)[:, :t0]
        if not seeds:
            seeds = None
    result = predict(sequence, inputs, dataset.dt, seeds)
    os.makedirs(args.out, exist_ok=True)
    channels = sequence.model_targets
    for pos, real in enumerate(dataset.realizations):
        path = os.path.join(args.out, f"pred_{real.id}.csv")
        with open(path, "w") as fh:
            fh.write("step,time," + ",".join(channels) + "\n")
            for k in range(dataset.n_steps):
                row = [str(k), format_float(k * dataset.dt)]
                row += [format_float(result.channels[ch][pos, k]) for ch in channels]
                fh.write(",".join(row) + "\n")
    failed = result.failed_traces()
    if failed.size:
        ids = [dataset.realizations[i].id for i in failed]
        print(f"warning: {failed.size} trace(s) diverged: {', '.join(ids)}")
    print(f"wrote predictions for {dataset.n_ed} trace(s) to {args.out}")
    return 0


def cmd_evaluate(args: argparse.Namespace) -> int:
    sequence = _load_sequence_arg(args.model)
    dataset = load_dataset(args.data)
    report = evaluate_sequence(sequence, dataset, seed_with_truth=not args.no_seed)
    written = export_report(report, args.out, dataset=dataset)
    for ch, rep in report.channels.items():
        print(
            f"{ch}: mean normalized error {format_float(rep.metrics.mean)} "
            f"over {len(report.trace_ids) - rep.metrics.n_excluded} trace(s)"
            + (f", {rep.metrics.n_excluded} excluded" if rep.metrics.n_excluded else "")
        )
    print(f"report files: {', '.join(os.path.basename(p) for p in written)}")
    return 0


def cmd_sweep(args: argparse.Namespace) -> int:
    cfg = resolve_config(args.config, args.set)
    dataset = load_dataset(args.data)
    try:
        values = json.loads(args.values)
    except json.JSONDecodeError:
        raise ConfigError(f"--values must be a JSON array, got {args.values!r}")
    if not isinstance(values, list) or not values:
        raise ConfigError("--values must be a non-empty JSON array")
    os.makedirs(args.out, exist_ok=True)
    summary_rows = []
    for value in values:
        run_cfg = copy.deepcopy(cfg)
        _deep_update(run_cfg, _parse_override(f"{args.param}={json.dumps(value)}"))
        fit_configs, default_fit = _build_fit_configs(run_cfg)
        ranking = _build_ranking(run_cfg)
        tag = f"{args.param.split('.')[-1]}={value}"
        run_dir = os.path.join(args.out, tag)
        result = construct(
            dataset,
            fit_configs,
            config=ranking,
            target=args.target,
            default_fit_config=default_fit,
        )
        os.makedirs(run_dir, exist_ok=True)
        save_sequence(result.sequence, os.path.join(run_dir, "sequence.json"))
        result.trace.to_csv(os.path.join(run_dir, "construction_trace.csv"))
        write_snapshot(run_cfg, run_dir, "sweep")
        summary_rows.append(
            (value, result.final_error, len(result.sequence.model_targets))
        )
        print(f"{tag}: error {format_float(result.final_error)}")
    summary = os.path.join(args.out, "sweep_summary.csv")
    with open(summary, "w") as fh:
        fh.write(f"{args.param},mean_error,n_models\n")
        for value, err, n_models in summary_rows:
            fh.write(f"{json.dumps(value)},{format_float(err)},{n_models}\n")
    print(f"summary written to {summary}")
    return 0


def _inspect_dataset(path: str) -> None:
    ds = load_dataset(path)
    print(f"dataset: {ds.n_ed} trace(s), {ds.n_steps} steps, dt={format_float(ds.dt)}")
    for name in ds.channel_names:
        stacked = ds.stack(name)
        print(
            f"  {name} [{ds.roles[name].value}] "
            f"range [{format_float(stacked.min())}, {format_float(stacked.max())}]"
        )
    if ds.transforms:
        for name, spec in ds.transforms.items():
            print(f"  transform {name} = {spec.kind}({', '.join(spec.sources)})")


def _inspect_sequence(path: str) -> None:
    seq = load_sequence(path)
    print(f"sequence target: {seq.target}")
    print(f"exogenous inputs: {', '.join(seq.exogenous)}")
    for stage in seq.stages:
        if hasattr(stage, "spec"):
            spec = stage.spec
            print(f"  transform {spec.output} = {spec.kind}({', '.join(spec.sources)})")
        else:
            model = stage.model
            n_active = int(np.sum(model.coefficients != 0.0))
            print(
                f"  model {model.target}: {len(model.input_columns)} feature(s), "
                f"{n_active} active term(s), t0={model.t0_steps}"
            )


def cmd_inspect(args: argparse.Namespace) -> int:
    path = args.path
    if os.path.isdir(path):
        if os.path.exists(os.path.join(path, "manifest.json")):
            _inspect_dataset(path)
            return 0
        if os.path.exists(os.path.join(path, "sequence.json")):
            _inspect_sequence(os.path.join(path, "sequence.json"))
            return 0
        raise DataError(f"nothing inspectable in directory {path}")
    if not os.path.exists(path):
        raise DataError(f"no such file: {path}")
    with open(path) as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError:
            raise DataError(f"{path} is not a JSON artifact")
    if "stages" in payload:
        _inspect_sequence(path)
    elif "coefficients" in payload:
        from .fnarx_model import load_model

        model = load_model(path)
        print(
            f"model {model.target}: {len(model.input_columns)} feature(s), "
            f"basis {model.basis.n_terms} term(s), t0={model.t0_steps}"
        )
    else:
        raise DataError(f"unrecognized artifact: {path}")
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="autonarx",
        description="Automatic NARX surrogate chains for driven dynamical systems",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", help="JSON configuration file")
        p.add_argument(
            "--set",
            action="append",
            default=[],
            metavar="KEY=VALUE",
            help="override a configuration entry (dotted keys, JSON values)",
        )

    p = sub.add_parser("generate", help="synthesize a benchmark dataset")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--n-traces", type=int, help="number of traces")
    p.add_argument("--seed", type=int, help="base seed")
    add_common(p)
    p.set_defaults(fn=cmd_generate)

    p = sub.add_parser("construct", help="build a model sequence from a dataset")
    p.add_argument("--data", required=True, help="training dataset directory")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--target", help="target channel (defaults to the target role)")
    add_common(p)
    p.set_defaults(fn=cmd_construct)

    p = sub.add_parser("predict", help="run a sequence on a dataset's inputs")
    p.add_argument("--model", required=True, help="sequence file or its directory")
    p.add_argument("--data", required=True, help="dataset directory with inputs")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument(
        "--no-seed",
        action="store_true",
        help="start forecasts from zeros instead of recorded initial values",
    )
    p.set_defaults(fn=cmd_predict)

    p = sub.add_parser("evaluate", help="score a sequence against recorded traces")
    p.add_argument("--model", required=True, help="sequence file or its directory")
    p.add_argument("--data", required=True, help="validation dataset directory")
    p.add_argument("--out", required=True, help="report directory")
    p.add_argument(
        "--no-seed",
        action="store_true",
        help="start forecasts from zeros instead of recorded initial values",
    )
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("sweep", help="repeat construction over a parameter grid")
    p.add_argument("--data", required=True, help="training dataset directory")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--param", required=True, help="dotted configuration key to vary")
    p.add_argument("--values", required=True, help="JSON array of values")
    p.add_argument("--target", help="target channel (defaults to the target role)")
    add_common(p)
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("inspect", help="summarize a dataset, sequence, or model")
    p.add_argument("path", help="artifact path")
    p.set_defaults(fn=cmd_inspect)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        read_workers_cap()
        return args.fn(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
