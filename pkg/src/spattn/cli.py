"""Command-line surface.

Subcommands: ``attn-matrix`` (build one attention operator and dump its
A/D/P/B parts), ``kernel-evolve`` (propagate a kernel through a configured
stack and dump per-block matrices plus metrics), ``schedule`` (dump a depth
schedule), ``validate`` (run a named validation suite).

Exit codes: 0 success, 1 validation failure, 2 configuration error,
3 numeric failure. Matrix CSV files carry no header, one row per line, with
shortest round-trip decimal encoding; metrics and schedule CSVs carry a
header row. A ``manifest.json`` is written for every file-producing command,
even on failure.
"""

from __future__ import annotations

import argparse
import configparser
import json
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, validation
from .errors import (
    ConfigError,
    DegenerateDiagonal,
    DimensionMismatch,
    ExactnessViolated,
    GammaOutOfRange,
    NotPositiveDefinite,
    NotSymmetric,
    OrderViolation,
    RhoOutOfRange,
    ShortcutTooLarge,
    SingularFactor,
    ZeroRowSum,
)
from .kernels import espa_attention_analytic, uspa_attention
from .propagation import BlockSpec, StackConfig, run_stack
from .schedules import espa_schedule, uspa_schedule

CONFIG_ERRORS = (
    ConfigError,
    RhoOutOfRange,
    GammaOutOfRange,
    OrderViolation,
    ShortcutTooLarge,
    DimensionMismatch,
    ValueError,
)
NUMERIC_ERRORS = (
    NotPositiveDefinite,
    NotSymmetric,
    SingularFactor,
    ZeroRowSum,
    DegenerateDiagonal,
    ExactnessViolated,
)

STACK_KEYS = {
    "depth",
    "seq_len",
    "repeated_fraction",
    "seed",
    "method",
    "heads",
    "shortcut_weight",
    "residual_weight",
    "norm_placement",
    "gamma_final",
    "rho_final",
}
BLOCK_KEYS = {"heads", "shortcut_weight", "residual_weight", "norm_placement"}
OUTPUT_KEYS = {"dump_blocks"}


def _fmt(value: float) -> str:
    """Shortest decimal that parses back to the same float."""
    return repr(float(value))


def write_matrix_csv(path: Path, matrix: np.ndarray) -> None:
    matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
    with open(path, "w") as fh:
        for row in matrix:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def read_matrix_csv(path: Path) -> np.ndarray:
    rows = []
    with open(path) as fh:
        for line in fh:
            if line.strip():
                rows.append([float(tok) for tok in line.strip().split(",")])
    return np.asarray(rows, dtype=float)


def write_matrix_json(path: Path, matrix: np.ndarray) -> None:
    matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
    with open(path, "w") as fh:
        json.dump([[float(v) for v in row] for row in matrix], fh)
        fh.write("\n")


def read_matrix_json(path: Path) -> np.ndarray:
    with open(path) as fh:
        return np.asarray(json.load(fh), dtype=float)


def _write_matrix(out_dir: Path, stem: str, matrix: np.ndarray, fmt: str) -> str:
    name = f"{stem}.{fmt}"
    if fmt == "csv":
        write_matrix_csv(out_dir / name, matrix)
    else:
        write_matrix_json(out_dir / name, matrix)
    return name


def _write_manifest(out_dir: Path, command: str, config: dict, seed: int, status: str, started: float) -> None:
    manifest = {
        "version": __version__,
        "command": command,
        "config": config,
        "seed": seed,
        "status": status,
        "timings": {"total_s": time.monotonic() - started},
    }
    with open(out_dir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, default=str)
        fh.write("\n")


def _parse_gamma(text: str) -> float:
    if text.strip().lower() == "inf":
        return math.inf
    return float(text)


def load_run_config(path: Path) -> tuple[StackConfig, list[int]]:
    """Parse a kernel-evolve config file.

    One ``[stack]`` section holds the stack fields; optional ``[block N]``
    sections override per-block spec fields; an optional ``[output]`` section
    lists ``dump_blocks``. Unknown sections or keys are rejected.
    """
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    read = parser.read(path)
    if not read:
        raise ConfigError(f"cannot read config file {path}")
    if "stack" not in parser:
        raise ConfigError("config needs a [stack] section")
    stack = dict(parser["stack"])
    unknown = set(stack) - STACK_KEYS
    if unknown:
        raise ConfigError(f"unknown keys in [stack]: {sorted(unknown)}")
    if "method" not in stack or "depth" not in stack or "seq_len" not in stack:
        raise ConfigError("[stack] needs at least method, depth and seq_len")

    def block_spec(base: BlockSpec | None, fields: dict) -> BlockSpec:
        current = base or BlockSpec(method=stack["method"])
        kwargs = {
            "method": current.method,
            "heads": int(fields.get("heads", current.heads)),
            "shortcut_weight": float(fields.get("shortcut_weight", current.shortcut_weight)),
            "residual_weight": float(fields.get("residual_weight", current.residual_weight)),
            "norm_placement": fields.get("norm_placement", current.norm_placement),
        }
        return BlockSpec(**kwargs)

    try:
        shared = block_spec(None, stack)
        overrides = {}
        dump_blocks: list[int] = []
        for section in parser.sections():
            if section == "stack":
                continue
            if section == "output":
                fields = dict(parser[section])
                unknown = set(fields) - OUTPUT_KEYS
                if unknown:
                    raise ConfigError(f"unknown keys in [output]: {sorted(unknown)}")
                if "dump_blocks" in fields:
                    dump_blocks = [int(tok) for tok in fields["dump_blocks"].split(",") if tok.strip()]
                continue
            parts = section.split()
            if len(parts) != 2 or parts[0] != "block":
                raise ConfigError(f"unknown section [{section}]")
            fields = dict(parser[section])
            unknown = set(fields) - BLOCK_KEYS
            if unknown:
                raise ConfigError(f"unknown keys in [{section}]: {sorted(unknown)}")
            overrides[int(parts[1])] = block_spec(shared, fields)
        config = StackConfig(
            depth=int(stack["depth"]),
            seq_len=int(stack["seq_len"]),
            block=shared,
            gamma_final=float(stack.get("gamma_final", 0.005)),
            rho_final=float(stack.get("rho_final", 0.8)),
            repeated_fraction=float(stack.get("repeated_fraction", 0.0)),
            seed=int(stack.get("seed", 0)),
            block_overrides=overrides,
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad config value: {exc}") from exc
    config.validate()
    for block in dump_blocks:
        if not 0 <= block <= config.depth:
            raise ConfigError(f"dump block {block} outside 0..{config.depth}")
    return config, dump_blocks


def cmd_attn_matrix(args: argparse.Namespace) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    started = time.monotonic()
    config = {
        "method": args.method,
        "T": args.T,
        "gamma_in": str(args.gamma_in),
        "gamma_out": args.gamma_out,
        "rho_in": args.rho_in,
        "rho_out": args.rho_out,
    }
    try:
        if args.method == "espa":
            if args.gamma_in is None or args.gamma_out is None:
                raise ConfigError("espa needs --gamma-in and --gamma-out")
            operator = espa_attention_analytic(args.T, args.gamma_in, args.gamma_out)
        else:
            if args.rho_in is None or args.rho_out is None:
                raise ConfigError("uspa needs --rho-in and --rho-out")
            operator = uspa_attention(args.T, args.rho_in, args.rho_out)
    except Exception as exc:
        _write_manifest(out_dir, "attn-matrix", config, args.seed, f"error: {type(exc).__name__}", started)
        raise
    for stem, value in (
        ("A", operator.matrix),
        ("D", operator.rescale),
        ("P", operator.stochastic),
        ("B", operator.bias),
    ):
        _write_matrix(out_dir, stem, value, args.format)
    _write_manifest(out_dir, "attn-matrix", config, args.seed, "ok", started)
    return 0


def _stack_config_echo(config: StackConfig, dump_blocks: list, path) -> dict:
    echo = {
        "file": str(path),
        "depth": config.depth,
        "seq_len": config.seq_len,
        "block": vars(config.block).copy(),
        "gamma_final": config.gamma_final,
        "rho_final": config.rho_final,
        "repeated_fraction": config.repeated_fraction,
        "dump_blocks": dump_blocks,
    }
    if config.block_overrides:
        echo["block_overrides"] = {
            str(index): vars(spec).copy() for index, spec in config.block_overrides.items()
        }
    return echo


def cmd_kernel_evolve(args: argparse.Namespace) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    started = time.monotonic()
    try:
        config, dump_blocks = load_run_config(Path(args.config))
    except CONFIG_ERRORS as exc:
        _write_manifest(
            out_dir,
            "kernel-evolve",
            {"file": str(args.config)},
            args.seed,
            f"error: {type(exc).__name__}: {exc}",
            started,
        )
        raise
    config_echo = _stack_config_echo(config, dump_blocks, args.config)
    try:
        trace = run_stack(config)
    except NUMERIC_ERRORS as exc:
        _write_manifest(
            out_dir, "kernel-evolve", config_echo, config.seed, f"error: {type(exc).__name__}: {exc}", started
        )
        raise
    for block in dump_blocks:
        _write_matrix(out_dir, f"block_{block:03d}_raw", trace.kernels[block], args.format)
        _write_matrix(out_dir, f"block_{block:03d}_normalized", trace.normalized[block], args.format)
    with open(out_dir / "metrics.csv", "w") as fh:
        fh.write("block,mean_offdiag_cosine,min_offdiag_cosine,max_diag,min_diag,collapse_distance\n")
        for block, m in enumerate(trace.metrics):
            fh.write(
                ",".join(
                    [
                        str(block),
                        _fmt(m.mean_offdiag_cosine),
                        _fmt(m.min_offdiag_cosine),
                        _fmt(m.max_diag),
                        _fmt(m.min_diag),
                        _fmt(m.collapse_distance),
                    ]
                )
                + "\n"
            )
    _write_manifest(out_dir, "kernel-evolve", config_echo, config.seed, "ok", started)
    return 0


def cmd_schedule(args: argparse.Namespace) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    started = time.monotonic()
    config = {"family": "espa" if args.espa else "uspa", "L": args.L}
    try:
        if args.espa:
            if args.gamma_L is None:
                raise ConfigError("--espa needs --gamma-L")
            config["gamma_L"] = args.gamma_L
            schedule = espa_schedule(args.L, args.gamma_L)
            rows = [
                (str(l), _fmt(schedule.gammas[l]), _fmt(schedule.a_values[l]))
                for l in range(args.L + 1)
            ]
            header = "block,gamma,a\n"
        else:
            if args.rho_L is None:
                raise ConfigError("--uspa needs --rho-L")
            config.update({"rho_L": args.rho_L, "r": args.r})
            schedule = uspa_schedule(args.L, args.rho_L, args.r)
            rows = [(str(l), _fmt(schedule.rhos[l])) for l in range(args.L + 1)]
            header = "block,rho\n"
    except Exception as exc:
        _write_manifest(out_dir, "schedule", config, args.seed, f"error: {type(exc).__name__}", started)
        raise
    with open(out_dir / "schedule.csv", "w") as fh:
        fh.write(header)
        for row in rows:
            fh.write(",".join(row) + "\n")
    _write_manifest(out_dir, "schedule", config, args.seed, "ok", started)
    return 0


def cmd_validate(args: argparse.Namespace) -> int:
    results = validation.run_suite(args.suite)
    print(validation.format_results(results))
    failed = [r.name for r in results if not r.passed]
    if failed:
        print(f"failed: {', '.join(failed)}", file=sys.stderr)
        return 1
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="rng seed recorded in the manifest")
    common.add_argument("--out", default=".", help="output directory")
    common.add_argument("--format", choices=("csv", "json"), default="csv", help="matrix file format")

    parser = argparse.ArgumentParser(prog="spattn", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    attn = sub.add_parser("attn-matrix", parents=[common], help="build one attention operator")
    attn.add_argument("--method", choices=("espa", "uspa"), required=True)
    attn.add_argument("--T", type=int, required=True)
    attn.add_argument("--gamma-in", type=_parse_gamma, default=None, help="input decay rate (or 'inf')")
    attn.add_argument("--gamma-out", type=float, default=None)
    attn.add_argument("--rho-in", type=float, default=None)
    attn.add_argument("--rho-out", type=float, default=None)
    attn.set_defaults(func=cmd_attn_matrix)

    evolve = sub.add_parser("kernel-evolve", parents=[common], help="propagate a kernel through a stack")
    evolve.add_argument("config", help="stack config file")
    evolve.set_defaults(func=cmd_kernel_evolve)

    sched = sub.add_parser("schedule", parents=[common], help="dump a depth schedule")
    family = sched.add_mutually_exclusive_group(required=True)
    family.add_argument("--espa", action="store_true")
    family.add_argument("--uspa", action="store_true")
    sched.add_argument("--L", type=int, required=True)
    sched.add_argument("--gamma-L", type=float, default=None)
    sched.add_argument("--rho-L", type=float, default=None)
    sched.add_argument("--r", type=float, default=0.0)
    sched.set_defaults(func=cmd_schedule)

    val = sub.add_parser("validate", parents=[common], help="run a validation suite")
    val.add_argument("suite", choices=validation.SUITE_NAMES)
    val.set_defaults(func=cmd_validate)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except NUMERIC_ERRORS as exc:
        print(f"numeric failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3
    except CONFIG_ERRORS as exc:
        print(f"config error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


def entrypoint() -> None:
    sys.exit(main())
