"""Command-line interface: attack, bench, and diagnose subcommands.

Exit codes: 0 completed, 2 configuration error, 3 oracle unavailable,
4 internal numerical failure.
"""

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path

import numpy as np

from .bench import (
    BenchConfig,
    ProbeConfig,
    bo_rank_probe,
    load_image_png,
    nearest_divisible_shape,
    parse_bench_config,
    probe_trace_csv,
    run_benchmark,
    write_report,
)
from .engine import AttackConfig, run_attack
from .errors import ConfigError, NumericalFailureError, OracleUnavailableError
from .image import apply_block_delta, make_grid
from .oracle import (
    LossSpec,
    RemoteOracle,
    SyntheticOracle,
    finite_difference_map,
    make_synthetic_model,
)

ENV_ORACLE_URL = "CORRATTACK_ORACLE_URL"


def _add_oracle_args(parser):
    parser.add_argument("--oracle", default=None, help="remote oracle base URL")
    parser.add_argument(
        "--synthetic", choices=["linear", "mlp"], default=None,
        help="use an in-process synthetic model",
    )
    parser.add_argument("--num-classes", type=int, default=10)


def _resolve_oracle(args, budget, input_shape):
    url = args.oracle or os.environ.get(ENV_ORACLE_URL, "")
    if args.synthetic:
        model = make_synthetic_model(
            args.synthetic, num_classes=args.num_classes, input_shape=input_shape
        )
        return SyntheticOracle(model, budget=budget)
    if url:
        oracle = RemoteOracle(url, budget=budget)
        oracle.health()
        return oracle
    raise ConfigError(
        f"no oracle selected: pass --synthetic, --oracle, or set {ENV_ORACLE_URL}"
    )


def _build_parser():
    parser = argparse.ArgumentParser(prog="corrattack")
    sub = parser.add_subparsers(dest="command", required=True)

    atk = sub.add_parser("attack", help="attack a single image")
    atk.add_argument("--image", required=True, help="input PNG")
    atk.add_argument("--label", type=int, required=True)
    atk.add_argument("--target", type=int, default=None)
    atk.add_argument("--mode", choices=["diff", "flip"], default="flip")
    atk.add_argument("--epsilon", type=float, default=0.05)
    atk.add_argument("--eta", type=float, default=0.03)
    atk.add_argument("--budget", type=int, default=10000)
    atk.add_argument("--seed", type=int, default=0)
    atk.add_argument("--initial-block", type=int, default=32)
    atk.add_argument("--margin", type=float, default=0.05)
    atk.add_argument("--height", type=int, default=32, help="working image height")
    atk.add_argument("--width", type=int, default=32, help="working image width")
    atk.add_argument("--no-validate", action="store_true")
    atk.add_argument("--out", required=True, help="result JSON path")
    _add_oracle_args(atk)

    ben = sub.add_parser("bench", help="run a benchmark from a config file")
    ben.add_argument("--config", required=True)
    ben.add_argument("--out-dir", required=True)
    for fld in dataclasses.fields(BenchConfig):
        ben.add_argument(f"--{fld.name}", default=None, help=f"override {fld.name}")

    diag = sub.add_parser("diagnose", help="emit diagnostic CSV data")
    dsub = diag.add_subparsers(dest="diagnostic", required=True)

    fdm = dsub.add_parser("fdmap", help="per-block finite-difference map")
    fdm.add_argument("--image", required=True)
    fdm.add_argument("--label", type=int, required=True)
    fdm.add_argument("--target", type=int, default=None)
    fdm.add_argument("--block-size", type=int, default=8)
    fdm.add_argument("--eta", type=float, default=0.05)
    fdm.add_argument("--margin", type=float, default=0.05)
    fdm.add_argument("--height", type=int, default=32)
    fdm.add_argument("--width", type=int, default=32)
    fdm.add_argument("--out", required=True)
    _add_oracle_args(fdm)

    chm = dsub.add_parser("changemap", help="map shift after one accepted block step")
    for a in fdm._actions:
        if a.dest not in ("help",):
            chm._add_action(a)

    bor = dsub.add_parser("borank", help="GP+EI rank traces on frozen reward fields")
    bor.add_argument("--seeds", type=int, default=50)
    bor.add_argument("--seed-base", type=int, default=0)
    bor.add_argument("--grid", default="14x14x3", help="HxWxC block grid")
    bor.add_argument("--block-size", type=int, default=2)
    bor.add_argument("--fraction", type=float, default=0.15)
    bor.add_argument("--field", choices=["smooth", "needle", "constant"], default="smooth")
    bor.add_argument("--out", required=True)
    return parser


def _cmd_attack(args):
    input_shape = nearest_divisible_shape((3, args.height, args.width), args.initial_block)
    oracle = _resolve_oracle(args, args.budget, input_shape)
    image = load_image_png(Path(args.image), resize_to=input_shape)
    config = AttackConfig(
        epsilon=args.epsilon,
        eta=args.eta,
        initial_block=args.initial_block,
        query_budget=args.budget,
        margin=args.margin,
        mode=args.mode,
        target=args.target,
        seed=args.seed,
        validate=not args.no_validate,
    )
    result = run_attack(oracle, image, args.label, config)
    payload = json.dumps(result.to_json_dict(), sort_keys=True, indent=2) + "\n"
    Path(args.out).write_text(payload)
    print(
        f"success={result.success} queries={result.queries} "
        f"final_loss={result.final_loss:.6f}"
    )
    return 0


def _cmd_bench(args):
    config = parse_bench_config(Path(args.config))
    overrides = {}
    for fld in dataclasses.fields(BenchConfig):
        raw = getattr(args, fld.name, None)
        if raw is None:
            continue
        if fld.type is bool or isinstance(getattr(config, fld.name), bool):
            overrides[fld.name] = raw.strip().lower() in ("1", "true", "yes")
        else:
            overrides[fld.name] = type(getattr(config, fld.name))(raw)
    config = dataclasses.replace(config, **overrides)
    report = run_benchmark(config)
    csv_path, json_path = write_report(report, Path(args.out_dir))
    agg = report.aggregates()
    print(
        f"attempted={agg['attempted']} success_rate={agg['success_rate']:.3f} "
        f"mean_queries={agg['mean_queries']} -> {csv_path}"
    )
    return 0


def _fdmap_setup(args):
    input_shape = nearest_divisible_shape((3, args.height, args.width), args.block_size)
    grid = make_grid(input_shape, args.block_size)
    budget = 4 * grid.num_blocks + 4
    oracle = _resolve_oracle(args, budget, input_shape)
    image = load_image_png(Path(args.image), resize_to=input_shape)
    spec = LossSpec(label=args.label, target=args.target, margin=args.margin)
    return oracle, image, grid, spec


def _write_block_map(path, header, grid, values):
    lines = [header]
    for blk in grid.blocks():
        lines.append(f"{blk.k},{blk.i},{blk.j},{float(values[blk.k, blk.i, blk.j])!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def _cmd_fdmap(args):
    oracle, image, grid, spec = _fdmap_setup(args)
    delta = finite_difference_map(oracle, image, grid, args.eta, spec)
    _write_block_map(args.out, "k,i,j,delta", grid, delta)
    print(f"wrote {grid.num_blocks} block deltas to {args.out}")
    return 0


def _cmd_changemap(args):
    oracle, image, grid, spec = _fdmap_setup(args)
    before = finite_difference_map(oracle, image, grid, args.eta, spec)
    k, i, j = np.unravel_index(int(np.argmax(before)), before.shape)
    from .image import BlockIndex

    stepped = apply_block_delta(image, grid, BlockIndex(int(i), int(j), int(k)), -args.eta)
    after = finite_difference_map(oracle, stepped, grid, args.eta, spec)
    _write_block_map(args.out, "k,i,j,change", grid, after - before)
    print(f"stepped block (i={i}, j={j}, k={k}); wrote change map to {args.out}")
    return 0


def _cmd_borank(args):
    try:
        h, w, c = (int(p) for p in args.grid.lower().split("x"))
    except ValueError:
        raise ConfigError(f"--grid must look like 14x14x3, got {args.grid!r}")
    traces = []
    for s in range(args.seeds):
        cfg = ProbeConfig(
            grid_h=h, grid_w=w, grid_c=c, block_size=args.block_size,
            seed=args.seed_base + s, query_fraction=args.fraction, field=args.field,
        )
        traces.append((cfg.seed, bo_rank_probe(cfg)))
    Path(args.out).write_text(probe_trace_csv(traces))
    finals = [t[-1][3] for _, t in traces if t]
    print(
        f"wrote {len(traces)} traces to {args.out}; "
        f"median final rank_norm={np.median(finals):.4f}"
    )
    return 0


def main(argv=None):
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "attack":
            return _cmd_attack(args)
        if args.command == "bench":
            return _cmd_bench(args)
        if args.command == "diagnose":
            if args.diagnostic == "fdmap":
                return _cmd_fdmap(args)
            if args.diagnostic == "changemap":
                return _cmd_changemap(args)
            if args.diagnostic == "borank":
                return _cmd_borank(args)
        parser.error(f"unhandled command {args.command}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except OracleUnavailableError as exc:
        print(f"oracle unavailable: {exc}", file=sys.stderr)
        return 3
    except NumericalFailureError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 4
    return 0


if __name__ == "__main__":
    sys.exit(main())
