"""Command-line interface.

Subcommands: amplify, calibrate, eps-s, verify forward|inverse,
oracle kernel|tight|sensitivity, run sampling|suppression, synth, metrics.
A config file of flat key=value lines (matching the long flag names) can seed
any subcommand's defaults; explicit flags win.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import accounting, datasets, harness, oracle
from .core import Database, PrivacyParams, RandomStream, ValueBounds
from .suppression import (
    AbsoluteDifference,
    DeterministicSuppression,
    DiscreteMetric,
    SuppressionKernel,
    suppress_by_avg_threshold,
    suppress_by_set,
    suppress_top_fraction,
)


def _print_json(obj) -> None:
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        obj = dataclasses.asdict(obj)
    json.dump(obj, sys.stdout, indent=2, default=float)
    sys.stdout.write("\n")


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(x) for x in text.split(",") if x.strip())


def _mm_pairs(text: str) -> tuple[tuple[float, float], ...]:
    pairs = []
    for chunk in text.split(","):
        if not chunk.strip():
            continue
        m, M = chunk.split(":")
        pairs.append((float(m), float(M)))
    return tuple(pairs)


def _load_config(path: str) -> dict:
    values: dict[str, str] = {}
    for i, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines()):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise SystemExit(f"config line {i + 1}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        values[key.strip().replace("-", "_")] = value.strip()
    return values


# --- oracle input files --------------------------------------------------------


def read_kernel_file(path: str | Path):
    """Parse the `oracle kernel` input format.

    Lines (comments start with #):
        eps <float>           base mechanism epsilon
        delta <float>         base mechanism delta
        n <int>               number of records in D (records are labeled 0..n-1)
        D <bitmask> <prob>    probability that S(D) keeps exactly that subset
        DP <bitmask> <prob>   same for S(D + y); bit n stands for the added y
    """
    eps = delta = None
    n = None
    d_probs: dict[int, float] = {}
    dp_probs: dict[int, float] = {}
    for raw in Path(path).read_text(encoding="utf-8").splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if parts[0] == "eps":
            eps = float(parts[1])
        elif parts[0] == "delta":
            delta = float(parts[1])
        elif parts[0] == "n":
            n = int(parts[1])
        elif parts[0] in ("D", "DP"):
            target = d_probs if parts[0] == "D" else dp_probs
            target[int(parts[1], 0)] = target.get(int(parts[1], 0), 0.0) + float(parts[2])
        else:
            raise SystemExit(f"unknown kernel directive {parts[0]!r}")
    if eps is None or delta is None or n is None:
        raise SystemExit("kernel file must set eps, delta and n")
    bounds = ValueBounds(-1.0, float(n + 1))
    base_small = Database(np.arange(n, dtype=float), bounds)
    base_big = Database(np.arange(n + 1, dtype=float), bounds)

    def to_kernel(base: Database, probs: dict[int, float], width: int) -> SuppressionKernel:
        table: dict[tuple, float] = {}
        for mask, p in probs.items():
            if mask >= 1 << width:
                raise SystemExit(f"bitmask {mask:#x} out of range for {width} records")
            key = tuple((float(i),) for i in range(width) if mask >> i & 1)
            table[key] = table.get(key, 0.0) + p
        return SuppressionKernel(base, table)

    return (
        to_kernel(base_small, d_probs, n),
        to_kernel(base_big, dp_probs, n + 1),
        (float(n),),
        PrivacyParams(eps, delta),
    )


def read_mechanism_file(path: str | Path):
    """Parse the `oracle tight` input format.

    Lines:  delta <float> | dist <label> <output> <prob> | pair <label> <label>
    """
    delta = 0.0
    tables: dict[str, dict[str, float]] = {}
    pairs: list[tuple[str, str]] = []
    for raw in Path(path).read_text(encoding="utf-8").splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if parts[0] == "delta":
            delta = float(parts[1])
        elif parts[0] == "dist":
            tables.setdefault(parts[1], {})[parts[2]] = float(parts[3])
        elif parts[0] == "pair":
            pairs.append((parts[1], parts[2]))
        else:
            raise SystemExit(f"unknown mechanism directive {parts[0]!r}")
    if not pairs:
        raise SystemExit("mechanism file needs at least one pair line")
    return tables, pairs, delta


# --- subcommand handlers ---------------------------------------------------------


def _cmd_amplify(args) -> None:
    out = accounting.amplify_poisson(PrivacyParams(args.eps, args.delta), args.p)
    _print_json({"epsilon": out.epsilon, "delta": out.delta})


def _cmd_calibrate(args) -> None:
    target = PrivacyParams(args.eps, args.delta)
    try:
        if args.m is not None:
            if args.M is None:
                raise SystemExit("--M is required with --m")
            out = accounting.calibrate_suppression(target, accounting.MMParams(args.m, args.M))
        elif args.p is not None:
            out = accounting.calibrate_sampling(target, args.p)
        else:
            raise SystemExit("pass either --p or --m/--M")
    except accounting.InfeasibleError as exc:
        _print_json({"infeasible": True, "reason": str(exc)})
        return
    _print_json({"epsilon": out.epsilon, "delta": out.delta, "infeasible": False})


def _cmd_eps_s(args) -> None:
    report = accounting.epsilon_s(args.eps, accounting.MMParams(args.m, args.M), delta=args.delta)
    _print_json(report)


def _cmd_verify(args) -> None:
    mm = accounting.MMParams(args.m, args.M)
    if args.direction == "forward":
        report = oracle.verify_bound_forward(
            args.eps, mm, budget=args.budget, rng=RandomStream(args.seed)
        )
    else:
        report = oracle.verify_bound_inverse(args.eps, mm)
    _print_json(report)


def _cmd_oracle_kernel(args) -> None:
    kd, kdp, y, base = read_kernel_file(args.file)
    bounds = oracle.suppression_theorem_bounds(kd, kdp, y, base)
    _print_json(bounds)


def _cmd_oracle_tight(args) -> None:
    tables, pairs, delta = read_mechanism_file(args.file)
    eps = oracle.tight_dp_of_finite_mechanism(tables, pairs, delta)
    _print_json({"tight_epsilon": eps, "delta": delta})


def _cmd_oracle_sensitivity(args) -> None:
    universe = _floats(args.universe)
    if len(universe) > 12:
        raise SystemExit("universe is limited to 12 records")
    lo, hi = min(universe) - 1.0, max(universe) + 1.0
    bounds = ValueBounds(lo, hi)
    members = []
    for mask in range(1 << len(universe)):
        vals = [universe[i] for i in range(len(universe)) if mask >> i & 1]
        members.append(Database(np.array(vals, dtype=float), bounds))
    pairs = [
        (a, b)
        for a in members
        for b in members
        if len(b) == len(a) + 1 and oracle_sym_diff(a, b) == 1
    ]
    if args.algorithm == "set":
        keep = set(_floats(args.keep or ""))
        algo = DeterministicSuppression(lambda db: suppress_by_set(db, lambda r: r[0] in keep))
    elif args.algorithm == "avg-threshold":
        dist = DiscreteMetric() if args.distance == "discrete" else AbsoluteDifference(bounds.width)
        algo = DeterministicSuppression(lambda db: suppress_by_avg_threshold(db, args.K, dist))
    else:
        dist = DiscreteMetric() if args.distance == "discrete" else AbsoluteDifference(bounds.width)
        algo = DeterministicSuppression(lambda db: suppress_top_fraction(db, args.P, dist))
    result = oracle.deterministic_sensitivity(algo, members, pairs)
    _print_json(
        {
            "sensitivity": None if result.infinite else result.value,
            "infinite": result.infinite,
        }
    )


def oracle_sym_diff(a: Database, b: Database) -> int:
    from .core import symmetric_difference_size

    return symmetric_difference_size(a, b)


def _cmd_run(args) -> None:
    cfg = harness.ExperimentConfig(
        dataset=args.dataset,
        column=args.column,
        mechanism=args.mechanism,
        noise=None if args.mechanism in ("dp_lloyd", "k_median") else args.noise,
        epsilons=_floats(args.eps),
        p_grid=_floats(args.p_grid) if args.p_grid else harness.DEFAULT_P_GRID,
        mm_grid=_mm_pairs(args.mm_grid) if args.mm_grid else harness.DEFAULT_MM_GRID,
        reps=args.reps,
        master_seed=args.seed,
        recalibrate=not args.no_recalibrate,
        scale=args.scale,
    )
    if args.kind == "sampling":
        rows = harness.run_sampling_experiment(cfg)
    else:
        rows = harness.run_suppression_experiment(cfg)
    if args.out:
        harness.write_rows(rows, args.out, args.format)
        print(f"wrote {len(rows)} rows to {args.out}")
    else:
        for row in rows:
            print(json.dumps(row.to_json_dict()))
    if args.kind == "suppression" and args.contour:
        harness.write_contour_csv(rows, args.contour)
        print(f"wrote contour data to {args.contour}")


def _cmd_synth(args) -> None:
    if args.what == "clusters":
        db, candidates = harness.gen_synthetic_clusters(RandomStream(args.seed))
        path = Path(args.out or "clusters.csv")
        with path.open("w", encoding="utf-8") as fh:
            fh.write("x,y\n")
            for row in db.values:
                fh.write(f"{row[0]!r},{row[1]!r}\n")
        print(f"wrote {len(db)} points to {path}")
        if args.candidates_out:
            with Path(args.candidates_out).open("w", encoding="utf-8") as fh:
                fh.write("x,y\n")
                for row in candidates:
                    fh.write(f"{row[0]!r},{row[1]!r}\n")
            print(f"wrote {len(candidates)} candidates to {args.candidates_out}")
    else:
        path = Path(args.out or f"{args.what}.csv")
        datasets.write_fixture_csv(args.what, path)
        print(f"wrote {datasets.DATASET_SIZES[args.what]} rows to {path}")


def _cmd_metrics(args) -> None:
    if args.metric == "wilson":
        low, high = harness.wilson_ci(args.successes, args.n, args.level)
        _print_json({"low": low, "high": high})
    else:
        _print_json({"mpe": harness.metric_mpe(args.true, args.noisy)})


# --- parser --------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dpomit",
        description="DP mechanisms with record-omission preprocessing: "
        "parameter accounting, exact oracles, bound verification, experiments.",
    )
    parser.add_argument("--config", help="key=value file supplying flag defaults")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("amplify", help="privacy parameters after Poisson sampling")
    p.add_argument("--eps", type=float, required=True)
    p.add_argument("--delta", type=float, default=0.0)
    p.add_argument("--p", type=float, required=True)
    p.set_defaults(func=_cmd_amplify)

    p = sub.add_parser("calibrate", help="inverse calibration for sampling or suppression")
    p.add_argument("--eps", type=float, required=True)
    p.add_argument("--delta", type=float, default=0.0)
    p.add_argument("--p", type=float)
    p.add_argument("--m", type=float)
    p.add_argument("--M", dest="M", type=float)
    p.set_defaults(func=_cmd_calibrate)

    p = sub.add_parser("eps-s", help="suppression bound report for (eps, m, M)")
    p.add_argument("--eps", type=float, required=True)
    p.add_argument("--m", type=float, required=True)
    p.add_argument("--M", dest="M", type=float, required=True)
    p.add_argument("--delta", type=float, default=None)
    p.set_defaults(func=_cmd_eps_s)

    p = sub.add_parser("verify", help="numerical verification of the suppression bound")
    p.add_argument("direction", choices=["forward", "inverse"])
    p.add_argument("--eps", type=float, required=True)
    p.add_argument("--m", type=float, required=True)
    p.add_argument("--M", dest="M", type=float, required=True)
    p.add_argument("--budget", type=int, default=40_000)
    p.add_argument("--seed", type=int, default=20_250_809)
    p.set_defaults(func=_cmd_verify)

    p = sub.add_parser("oracle", help="exact oracles on explicit inputs")
    osub = p.add_subparsers(dest="oracle_command", required=True)
    k = osub.add_parser("kernel", help="kernel bounds from a kernel description file")
    k.add_argument("file")
    k.set_defaults(func=_cmd_oracle_kernel)
    t = osub.add_parser("tight", help="tight epsilon of a finite mechanism file")
    t.add_argument("file")
    t.set_defaults(func=_cmd_oracle_tight)
    s = osub.add_parser("sensitivity", help="BFS sensitivity of a deterministic suppression")
    s.add_argument("--algorithm", choices=["set", "avg-threshold", "top-fraction"], required=True)
    s.add_argument("--universe", required=True, help="comma-separated record values")
    s.add_argument("--keep", help="values kept by the `set` algorithm")
    s.add_argument("--K", dest="K", type=float, default=0.5)
    s.add_argument("--P", dest="P", type=float, default=0.25)
    s.add_argument("--distance", choices=["abs", "discrete"], default="abs")
    s.set_defaults(func=_cmd_oracle_sensitivity)

    p = sub.add_parser("run", help="sampling / suppression experiment grids")
    p.add_argument("kind", choices=["sampling", "suppression"])
    p.add_argument("--dataset", default="adult")
    p.add_argument("--column", default="age")
    p.add_argument("--mechanism", choices=["mean", "mode", "dp_lloyd", "k_median"], default="mean")
    p.add_argument("--noise", choices=["laplace", "gaussian", "exponential", "exp_mech"], default="laplace")
    p.add_argument("--eps", default="0.25,0.5,1,2", help="comma-separated epsilon grid")
    p.add_argument("--p-grid", dest="p_grid", help="comma-separated sampling rates")
    p.add_argument("--mm-grid", dest="mm_grid", help="comma-separated m:M pairs")
    p.add_argument("--reps", type=int, default=None)
    p.add_argument("--scale", type=float, default=0.2, help="multiplier on default rep counts")
    p.add_argument("--seed", type=int, default=20_250_801)
    p.add_argument("--no-recalibrate", action="store_true")
    p.add_argument("--out", help="output path (stdout when omitted)")
    p.add_argument("--format", choices=["jsonl", "csv"], default="jsonl")
    p.add_argument("--contour", help="also write (m, M, difference) contour CSV")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("synth", help="emit bundled or synthetic datasets as CSV")
    p.add_argument("what", choices=["clusters", "adult", "census", "irish"])
    p.add_argument("--seed", type=int, default=20_250_801)
    p.add_argument("--out")
    p.add_argument("--candidates-out", dest="candidates_out")
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("metrics", help="standalone utility metrics")
    p.add_argument("metric", choices=["wilson", "mpe"])
    p.add_argument("--successes", type=int, default=0)
    p.add_argument("--n", type=int, default=1)
    p.add_argument("--level", type=float, default=0.95)
    p.add_argument("--true", dest="true", type=float, default=1.0)
    p.add_argument("--noisy", dest="noisy", type=float, default=1.0)
    p.set_defaults(func=_cmd_metrics)

    return parser


def _walk_parsers(parser: argparse.ArgumentParser):
    yield parser
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            for child in action.choices.values():
                yield from _walk_parsers(child)


def _apply_config(parser: argparse.ArgumentParser, config: dict) -> None:
    seen: set[str] = set()
    for sp in _walk_parsers(parser):
        defaults = {}
        for action in sp._actions:
            if action.dest not in config:
                continue
            seen.add(action.dest)
            raw = config[action.dest]
            if isinstance(action, argparse._StoreTrueAction):
                defaults[action.dest] = raw.lower() in ("1", "true", "yes", "on")
            elif action.type is not None:
                defaults[action.dest] = action.type(raw)
            else:
                defaults[action.dest] = raw
        sp.set_defaults(**defaults)
    unknown = set(config) - seen
    if unknown:
        raise SystemExit(f"unknown config keys: {sorted(unknown)}")


def main(argv=None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    # config files supply defaults; anything given on the command line wins
    probe, _ = parser.parse_known_args(argv)
    if getattr(probe, "config", None):
        _apply_config(parser, _load_config(probe.config))
    args = parser.parse_args(argv)
    args.func(args)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
