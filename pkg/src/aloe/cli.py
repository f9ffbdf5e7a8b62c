"""Batch command line: load problems, run estimations and benchmarks, emit
machine-readable reports with figures rendered beside them.

Subcommands
-----------
estimate   union probability of a problem file (whitened or raw Gaussian)
polygon    circumscribed-polygon benchmark with analytic reference values
highdim    random high-dimensional family hugging the union bound
grid       DC power-grid case: assemble, whiten, estimate
verify     run the invariant battery; nonzero exit on any failure

Reports are deterministic given the seed (the timestamp comment can be
suppressed with --no-timestamp for byte-identical reruns).  Exit codes:
0 ok, 1 invalid input, 2 infeasible deterministic constraint, 3 empty
mixture (the union probability is exactly 0), 4 verification failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from dataclasses import dataclass, replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import benchmarks as bench
from . import figures
from .errors import (
    AloeError,
    EmptyMixtureError,
    InfeasibleConstraintError,
)
from .estimator import AloeEstimate, estimate
from .events import load_problem
from .grid import (
    DEFAULT_DROP_THRESHOLD,
    assemble_constraints,
    load_grid_case,
    reduce_constraints,
)
from .streams import RandomStream
from .verify import run_verification

__all__ = ["RunConfig", "DEFAULT_SEED", "build_parser", "run", "main"]

# int.from_bytes(b"ALOE", "big"); override with ALOE_SEED or --seed.
DEFAULT_SEED = 1095520069

REPORT_COLUMNS = [
    "case",
    "theta_or_tau",
    "n",
    "mu_hat",
    "se",
    "se_over_mu",
    "mu_lower",
    "mu_bar",
    "s_ge_2_fraction",
    "seed",
]

BENCHMARK_COLUMNS = [
    "tau",
    "mu_hat",
    "se",
    "mu_bar",
    "reference_lo",
    "reference_hi",
    "rel_mse",
]

EXIT_OK = 0
EXIT_INVALID_INPUT = 1
EXIT_INFEASIBLE = 2
EXIT_EMPTY_MIXTURE = 3
EXIT_VERIFY_FAILED = 4


@dataclass
class RunConfig:
    """Everything one invocation needs; flags map onto fields 1:1."""

    subcommand: str
    input: str | None = None
    n: int = 10_000
    reps: int = 1
    seed: int = DEFAULT_SEED
    fmt: str = "csv"
    block_size: int = 1024
    threads: int = 1
    output: str | None = None
    timestamp: bool = True
    render_figures: bool = True
    # polygon
    sides: int = 360
    taus: tuple[float, ...] = (6.0,)
    prime_angles: bool = False
    # highdim
    dimension: int | None = None
    count: int | None = None
    target: float | None = None
    cases: int = 20
    # grid
    theta_bar: float | None = None
    drop_below: float = DEFAULT_DROP_THRESHOLD
    add_dropped_to_bound: bool = False

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be at least 1")
        if self.reps < 1:
            raise ValueError("reps must be at least 1")


def _env_seed() -> int:
    raw = os.environ.get("ALOE_SEED")
    if raw is None:
        return DEFAULT_SEED
    try:
        return int(raw)
    except ValueError:
        raise SystemExit(f"ALOE_SEED must be an integer, got {raw!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="aloe",
        description="Mixture importance sampling for unions of rare events.",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def common(p: argparse.ArgumentParser, default_n: int) -> None:
        p.add_argument("--n", type=int, default=default_n, help="samples per run")
        p.add_argument("--reps", type=int, default=1, help="independent replications")
        p.add_argument(
            "--seed",
            type=int,
            default=None,
            help=f"stream seed (default {DEFAULT_SEED}, or ALOE_SEED if set)",
        )
        p.add_argument("--format", choices=("json", "csv"), default="csv", dest="fmt")
        p.add_argument("--block-size", type=int, default=1024)
        p.add_argument("--threads", type=int, default=1)
        p.add_argument("--output", type=Path, default=None, help="write report here")
        p.add_argument(
            "--no-timestamp",
            action="store_true",
            help="omit the timestamp so reruns are byte-identical",
        )
        p.add_argument(
            "--no-figures",
            action="store_true",
            help="skip rendering figures beside the report file",
        )

    p_est = sub.add_parser("estimate", help="estimate a problem file")
    p_est.add_argument("problem", type=Path, help="JSON problem file")
    common(p_est, 10_000)

    p_poly = sub.add_parser("polygon", help="circumscribed polygon benchmark")
    p_poly.add_argument("--input", type=Path, default=None, help="polygon spec file")
    p_poly.add_argument("--J", type=int, default=360, dest="sides", help="sides")
    p_poly.add_argument(
        "--tau", type=float, nargs="+", default=[6.0], help="one or more thresholds"
    )
    p_poly.add_argument(
        "--prime-angles",
        action="store_true",
        help="use the 72 prime angles out of 360 instead of all sides",
    )
    common(p_poly, 1_000)

    p_high = sub.add_parser("highdim", help="random high-dimensional family")
    p_high.add_argument("--input", type=Path, default=None, help="spec file")
    p_high.add_argument("--d", type=int, default=None, dest="dimension")
    p_high.add_argument("--J", type=int, default=None, dest="count")
    p_high.add_argument(
        "--target", type=float, default=None, help="log10 of the union bound to hit"
    )
    p_high.add_argument(
        "--cases", type=int, default=20, help="random cases when no spec is given"
    )
    common(p_high, 1_000)

    p_grid = sub.add_parser("grid", help="DC power-grid case")
    p_grid.add_argument("--case", type=Path, required=True, help="grid case file")
    p_grid.add_argument(
        "--theta-bar", type=float, default=None, help="override the case's phase limit"
    )
    p_grid.add_argument(
        "--drop-below",
        type=float,
        default=DEFAULT_DROP_THRESHOLD,
        help="drop whitened rows with threshold above this",
    )
    p_grid.add_argument(
        "--add-dropped-to-bound",
        action="store_true",
        help="add dropped rows' probabilities to the estimate and bound "
        "(conservative correction)",
    )
    common(p_grid, 10_000)

    p_verify = sub.add_parser("verify", help="run the invariant battery")
    p_verify.add_argument("--seed", type=int, default=None)

    return parser


def _config_from_args(args: argparse.Namespace) -> RunConfig:
    seed = args.seed if getattr(args, "seed", None) is not None else _env_seed()
    cfg = RunConfig(subcommand=args.subcommand, seed=seed)
    if args.subcommand == "verify":
        return cfg
    cfg.n = args.n
    cfg.reps = args.reps
    cfg.fmt = args.fmt
    cfg.block_size = args.block_size
    cfg.threads = args.threads
    cfg.output = str(args.output) if args.output else None
    cfg.timestamp = not args.no_timestamp
    cfg.render_figures = not args.no_figures and cfg.output is not None
    if args.subcommand == "estimate":
        cfg.input = str(args.problem)
    elif args.subcommand == "polygon":
        cfg.input = str(args.input) if args.input else None
        cfg.sides = args.sides
        cfg.taus = tuple(args.tau)
        cfg.prime_angles = args.prime_angles
    elif args.subcommand == "highdim":
        cfg.input = str(args.input) if args.input else None
        cfg.dimension = args.dimension
        cfg.count = args.count
        cfg.target = args.target
        cfg.cases = args.cases
    elif args.subcommand == "grid":
        cfg.input = str(args.case)
        cfg.theta_bar = args.theta_bar
        cfg.drop_below = args.drop_below
        cfg.add_dropped_to_bound = args.add_dropped_to_bound
    return cfg


def _timestamp_line(cfg: RunConfig) -> list[str]:
    if not cfg.timestamp:
        return []
    return [f"# generated {datetime.now(timezone.utc).isoformat(timespec='seconds')}"]


def _emit(cfg: RunConfig, text: str) -> None:
    if cfg.output:
        Path(cfg.output).write_text(text)
    else:
        sys.stdout.write(text)


def _format_value(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _csv_report(cfg: RunConfig, columns: list[str], rows: list[dict], comments=()) -> str:
    buf = io.StringIO()
    for line in [*_timestamp_line(cfg), *comments]:
        buf.write(line + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_format_value(row[c]) for c in columns])
    return buf.getvalue()


def _json_report(cfg: RunConfig, payload) -> str:
    if cfg.timestamp:
        payload = {
            "timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds"),
            **payload,
        }
    return json.dumps(payload, indent=2) + "\n"


def _report_row(case: str, theta_or_tau, est: AloeEstimate) -> dict:
    return {
        "case": case,
        "theta_or_tau": theta_or_tau,
        "n": est.n,
        "mu_hat": est.mu_hat,
        "se": est.se,
        "se_over_mu": est.se / est.mu_hat if est.mu_hat > 0 else 0.0,
        "mu_lower": est.lower_bound,
        "mu_bar": est.union_bound,
        "s_ge_2_fraction": est.s_ge_2_fraction,
        "seed": f"{est.seed[0]}:{est.seed[1]}",
    }


def _figure_path(cfg: RunConfig, suffix: str) -> Path:
    out = Path(cfg.output)
    return out.with_name(out.stem + suffix + ".png")


def _run_estimate(cfg: RunConfig) -> int:
    problem = load_problem(cfg.input)
    case_name = Path(cfg.input).stem
    estimates = [
        estimate(
            problem,
            cfg.n,
            RandomStream(cfg.seed, r),
            block_size=cfg.block_size,
            threads=cfg.threads,
        )
        for r in range(cfg.reps)
    ]
    if cfg.fmt == "json":
        payload = {"case": case_name, "runs": [e.to_dict() for e in estimates]}
        _emit(cfg, _json_report(cfg, payload))
    else:
        rows = [_report_row(case_name, "", e) for e in estimates]
        _emit(cfg, _csv_report(cfg, REPORT_COLUMNS, rows))
    if cfg.render_figures:
        pooled = np.sum([e.s_histogram for e in estimates], axis=0)
        figures.s_histogram_figure(
            pooled, _figure_path(cfg, "_s_histogram"), title=case_name
        )
    return EXIT_OK


def _run_polygon(cfg: RunConfig) -> int:
    if cfg.input:
        spec = bench.load_polygon_spec(cfg.input)
        sides, taus, angle_set = spec.sides, (spec.tau,), spec.angle_set
    else:
        sides = cfg.sides
        taus = cfg.taus
        angle_set = "prime" if cfg.prime_angles else "full"
    rows = bench.run_polygon_benchmark(
        taus,
        cfg.n,
        cfg.reps,
        cfg.seed,
        sides=sides,
        angle_set=angle_set,
        block_size=cfg.block_size,
        threads=cfg.threads,
    )
    note = (
        f"# rel_mse reference: upper bound for tau >= {bench.UPPER_BOUND_EXACT_TAU:g}, "
        "sandwich midpoint below"
    )
    records = [{c: getattr(r, c) for c in BENCHMARK_COLUMNS} for r in rows]
    if cfg.fmt == "json":
        _emit(cfg, _json_report(cfg, {"rows": records}))
    else:
        _emit(cfg, _csv_report(cfg, BENCHMARK_COLUMNS, records, comments=[note]))
    if cfg.render_figures:
        figures.replication_histogram(
            {f"tau={r.tau:g}": r.estimates / r.reference for r in rows},
            _figure_path(cfg, "_replications"),
        )
    return EXIT_OK


def _run_highdim(cfg: RunConfig) -> int:
    if cfg.input or cfg.dimension is not None:
        if cfg.input:
            spec = bench.load_highdim_spec(cfg.input)
        else:
            if cfg.count is None or cfg.target is None:
                raise AloeError("--d requires --J and --target")
            spec = bench.HighDimSpec(
                dimension=cfg.dimension,
                count=cfg.count,
                target_log10_union_bound=cfg.target,
                seed=cfg.seed,
            )
        build = bench.build_highdim(spec)
        est = estimate(
            build.problem,
            cfg.n,
            RandomStream(cfg.seed, 0),
            block_size=cfg.block_size,
            threads=cfg.threads,
        )
        name = f"highdim-d{spec.dimension}-J{spec.count}"
        labels, ratios = [name], np.array([est.mu_hat / est.union_bound])
        rows = [_report_row(name, build.tau, est)]
        json_payload = {
            "case": name,
            "tau": build.tau,
            "tau_unrounded": build.tau_unrounded,
            "union_bound_unrounded": build.union_bound_unrounded,
            "runs": [est.to_dict()],
        }
    else:
        case_rows = bench.run_highdim_family(
            cfg.cases,
            cfg.n,
            cfg.seed,
            block_size=cfg.block_size,
            threads=cfg.threads,
        )
        labels = [r.name for r in case_rows]
        ratios = np.array([r.bound_ratio for r in case_rows])
        rows = [_report_row(r.name, r.tau, r.estimate) for r in case_rows]
        json_payload = {
            "rows": [
                {"case": r.name, "tau": r.tau, **r.estimate.to_dict()}
                for r in case_rows
            ]
        }
    if cfg.fmt == "json":
        _emit(cfg, _json_report(cfg, json_payload))
    else:
        _emit(cfg, _csv_report(cfg, REPORT_COLUMNS, rows))
    if cfg.render_figures:
        figures.bound_ratio_figure(labels, ratios, _figure_path(cfg, "_ratios"))
    return EXIT_OK


def _run_grid(cfg: RunConfig) -> int:
    case = load_grid_case(cfg.input)
    if cfg.theta_bar is not None:
        case = replace(case, theta_bar=cfg.theta_bar)
    constraints = assemble_constraints(case)
    reduction = reduce_constraints(constraints, case, cfg.drop_below)
    add_dropped = cfg.add_dropped_to_bound
    correction = reduction.dropped_probability if add_dropped else 0.0
    case_name = Path(cfg.input).stem
    estimates = [
        estimate(
            reduction.problem,
            cfg.n,
            RandomStream(cfg.seed, r),
            block_size=cfg.block_size,
            threads=cfg.threads,
        )
        for r in range(cfg.reps)
    ]
    rows = []
    for est in estimates:
        row = _report_row(case_name, case.theta_bar, est)
        if add_dropped:
            row["mu_hat"] = row["mu_hat"] + correction
            row["mu_bar"] = row["mu_bar"] + correction
        rows.append(row)
    if cfg.fmt == "json":
        payload = {
            "case": case_name,
            "theta_bar": case.theta_bar,
            "constraint_rows": len(constraints.row_labels),
            "kept_rows": len(reduction.kept_labels),
            "dropped_rows": len(reduction.dropped_labels),
            "dropped_probability": reduction.dropped_probability,
            "dropped_added_to_bound": add_dropped,
            "runs": [e.to_dict() for e in estimates],
        }
        if add_dropped:
            for run in payload["runs"]:
                run["mu_hat"] += correction
                run["union_bound"] += correction
        _emit(cfg, _json_report(cfg, payload))
    else:
        _emit(cfg, _csv_report(cfg, REPORT_COLUMNS, rows))
    if cfg.render_figures:
        pooled = np.sum([e.s_histogram for e in estimates], axis=0)
        figures.s_histogram_figure(
            pooled, _figure_path(cfg, "_s_histogram"), title=case_name
        )
    return EXIT_OK


def _run_verify(cfg: RunConfig) -> int:
    checks = run_verification(cfg.seed)
    failed = 0
    for check in checks:
        status = "PASS" if check.passed else "FAIL"
        failed += not check.passed
        print(f"{status}  {check.name}: {check.detail}")
    if failed:
        print(f"{failed} of {len(checks)} checks failed", file=sys.stderr)
        return EXIT_VERIFY_FAILED
    print(f"all {len(checks)} checks passed")
    return EXIT_OK


def run(cfg: RunConfig) -> int:
    """Execute one configured invocation; returns the process exit code."""
    handlers = {
        "estimate": _run_estimate,
        "polygon": _run_polygon,
        "highdim": _run_highdim,
        "grid": _run_grid,
        "verify": _run_verify,
    }
    try:
        return handlers[cfg.subcommand](cfg)
    except InfeasibleConstraintError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except EmptyMixtureError as exc:
        # The union bound is 0, so the union probability is exactly 0.
        print(f"empty mixture: {exc}", file=sys.stderr)
        _emit(cfg, _json_report(cfg, {"mu": 0.0, "union_bound": 0.0}))
        return EXIT_EMPTY_MIXTURE
    except (AloeError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID_INPUT


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _config_from_args(args)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID_INPUT
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
