"""Experiment runner CLI.

Subcommands:

* ``run <config.json> [--seed-offset N] [--jobs K] [--out DIR]`` -- execute
  the configured experiment and write the sweep CSV (plus optional event
  traces and contact-history dumps per seed).
* ``validate <config.json>`` -- report config violations.
* ``gen-streets <config.json> --out graph.json`` -- generate and export the
  street system of the first seed.
* ``thin --a METERS --b METERS graph.json`` -- component census CSV of the
  long-street graph with shortcut edges.

Exit codes: 0 ok, 2 config error, 3 runtime invariant breach.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path as FsPath

from .analysis import (
    SweepResult,
    SweepRow,
    aux_largest_component,
    long_edge_percolation_graph,
    velocity_sweep,
    write_sweep_csv,
    _sweep_one_seed,
)
from .config import ConfigError, ExperimentConfig, build_geometry, build_seed_state, load_config, validate_config
from .engine import initialize, run
from .mobility import RuntimeInvariantError
from .streets import DegenerateTessellation, StreetGraph

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


def _cmd_validate(args) -> int:
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    violations = validate_config(cfg)
    if violations:
        for v in violations:
            print(f"violation: {v}", file=sys.stderr)
        return EXIT_CONFIG
    print("config ok")
    return EXIT_OK


def _load_valid_config(path) -> ExperimentConfig:
    cfg = load_config(path)
    violations = validate_config(cfg)
    if violations:
        raise ConfigError("; ".join(violations))
    return cfg


def _seed_worker(payload) -> list[SweepRow]:
    # seeds arrive already offset-shifted; workers only need the config body
    cfg_path, seed = payload
    cfg = _load_valid_config(cfg_path)
    return _sweep_one_seed(cfg, seed, build_seed_state)


def _emit_side_outputs(cfg: ExperimentConfig, seed: int, out_dir: FsPath) -> None:
    """Re-run one seed with tracing/history dumps enabled."""
    g, devices, _ = build_seed_state(cfg, seed)
    scales = cfg.sweep.values if cfg.sweep is not None else (1.0,)
    base_T = max(scales) * max(cfg.T_s)
    trace_fh = None
    trace_cb = None
    if cfg.outputs.trace:
        trace_fh = open(out_dir / f"trace-seed{seed}.jsonl", "w")

        def trace_cb(ev, state):
            dev = state.devices.get(ev.device) if ev.device is not None else None
            street = dev.pos.street if dev is not None else None
            trace_fh.write(json.dumps(
                {"t": ev.time, "kind": int(ev.kind), "device": ev.device, "street": street}
            ) + "\n")

    state = initialize(g, devices, r=cfg.r_m, rho=cfg.rho_s, T=base_T,
                       record_history=cfg.outputs.history)
    state.trace = trace_cb
    run(state)
    if trace_fh is not None:
        trace_fh.close()
    if cfg.outputs.history:
        with open(out_dir / f"history-seed{seed}.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["pair_i", "pair_j", "u", "w"])
            for i, j, u, w in sorted(state.history):
                writer.writerow([i, j, repr(u), repr(w)])


def _cmd_run(args) -> int:
    try:
        cfg = _load_valid_config(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.seed_offset:
        cfg = dataclasses.replace(cfg, seeds=tuple(s + args.seed_offset for s in cfg.seeds))
    out_dir = FsPath(args.out) if args.out else FsPath(".")
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        if args.jobs > 1:
            result = SweepResult()
            with ProcessPoolExecutor(max_workers=args.jobs) as pool:
                for rows in pool.map(_seed_worker, [(args.config, s) for s in cfg.seeds]):
                    result.rows.extend(rows)
            result.sort()
        else:
            result = velocity_sweep(cfg)
        csv_path = out_dir / cfg.outputs.csv_path
        write_sweep_csv(result, csv_path)
        if cfg.outputs.trace or cfg.outputs.history:
            for seed in cfg.seeds:
                _emit_side_outputs(cfg, seed, out_dir)
    except (RuntimeInvariantError, DegenerateTessellation) as exc:
        print(f"runtime invariant breach: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(f"wrote {csv_path}")
    return EXIT_OK


def _cmd_gen_streets(args) -> int:
    try:
        cfg = _load_valid_config(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        g = build_geometry(cfg, cfg.seeds[0])
    except DegenerateTessellation as exc:
        print(f"runtime invariant breach: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    g.to_json(args.out)
    print(f"wrote {args.out}")
    return EXIT_OK


def _cmd_thin(args) -> int:
    try:
        g = StreetGraph.from_json(args.graph)
    except (OSError, ValueError, KeyError) as exc:
        print(f"config error: cannot read graph: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    aux = long_edge_percolation_graph(g, args.a, args.b)
    fraction, wraps = aux_largest_component(aux)
    writer = csv.writer(sys.stdout if args.out is None else open(args.out, "w", newline=""))
    writer.writerow(["a_m", "b_m", "n_long_streets", "n_endpoints", "n_aux_edges",
                     "largest_fraction_of_long_length", "wraps_torus"])
    writer.writerow([
        repr(float(args.a)), repr(float(args.b)),
        len(aux.street_edges), len(aux.vertices), len(aux.aux_edges),
        repr(float(fraction)), "true" if wraps else "false",
    ])
    return EXIT_OK


def run_experiment(config_path, seed_offset: int = 0, jobs: int = 1, out_dir=None) -> int:
    """Programmatic equivalent of ``streetsim run``; returns the exit status."""
    argv = ["run", str(config_path), "--seed-offset", str(seed_offset), "--jobs", str(jobs)]
    if out_dir is not None:
        argv += ["--out", str(out_dir)]
    return main(argv)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="streetsim",
                                     description="Device connectivity simulator on random street systems")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run an experiment config")
    p_run.add_argument("config")
    p_run.add_argument("--seed-offset", type=int, default=0)
    p_run.add_argument("--jobs", type=int, default=1)
    p_run.add_argument("--out", default=None)
    p_run.set_defaults(func=_cmd_run)

    p_val = sub.add_parser("validate", help="check a config for violations")
    p_val.add_argument("config")
    p_val.set_defaults(func=_cmd_validate)

    p_gen = sub.add_parser("gen-streets", help="generate and export a street graph")
    p_gen.add_argument("config")
    p_gen.add_argument("--out", required=True)
    p_gen.set_defaults(func=_cmd_gen_streets)

    p_thin = sub.add_parser("thin", help="long-street component census")
    p_thin.add_argument("graph")
    p_thin.add_argument("--a", type=float, required=True)
    p_thin.add_argument("--b", type=float, required=True)
    p_thin.add_argument("--out", default=None)
    p_thin.set_defaults(func=_cmd_thin)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
