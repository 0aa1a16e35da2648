"""Command line interface.

Subcommands:
    race          closed-loop run: quadmpcc race --track zigzag --controller mpcc --ref pmm
    plan          point-mass plan only, emitting a trajectory CSV
    ablate-delay  race both controllers across measurement delays
    bench-solver  per-horizon solver timing table
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

import numpy as np

from .dynamics import QuadParams
from .mpc import MpcWeights
from .mpcc import MpccConfig
from .pmm import PmmConfig, plan
from .sim import SimOptions, bench_solver, run_race
from .track import load_track


def _parse_ref(value):
    if value in ("pmm", "minsnap"):
        return value, None
    if value.startswith("file:"):
        return "file", value[5:]
    raise argparse.ArgumentTypeError("reference must be pmm, minsnap, or file:PATH")


def _load_params(path):
    return QuadParams.from_json(path) if path else QuadParams()


def _load_mpcc_cfg(path):
    return MpccConfig.from_json(path) if path else MpccConfig()


def _add_common(p):
    p.add_argument("--track", required=True, help="fixture name (straight|zigzag|figure8) or JSON path")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None, help="output directory")
    p.add_argument("--quad-config", default=None, help="vehicle parameter JSON")


def main(argv=None):
    parser = argparse.ArgumentParser(prog="quadmpcc")
    sub = parser.add_subparsers(dest="command", required=True)

    p_race = sub.add_parser("race", help="run a closed-loop race")
    _add_common(p_race)
    p_race.add_argument("--controller", choices=["mpcc", "mpc"], default="mpcc")
    p_race.add_argument("--ref", type=_parse_ref, default=("pmm", None),
                        help="pmm | minsnap | file:PATH")
    p_race.add_argument("--laps", type=int, default=None)
    p_race.add_argument("--delay-ms", type=float, default=0.0)
    p_race.add_argument("--mpcc-config", default=None)

    p_plan = sub.add_parser("plan", help="generate a point-mass reference plan")
    _add_common(p_plan)
    p_plan.add_argument("--gate-horizon", type=int, default=3)
    p_plan.add_argument("--samples", type=int, default=150)
    p_plan.add_argument("--laps", type=int, default=None)

    p_abl = sub.add_parser("ablate-delay", help="delay sweep for both controllers")
    _add_common(p_abl)
    p_abl.add_argument("--delays", default="0,10,20,30,40,50,60",
                       help="comma-separated delays in ms")
    p_abl.add_argument("--ref", type=_parse_ref, default=("pmm", None))
    p_abl.add_argument("--laps", type=int, default=None)
    p_abl.add_argument("--mpcc-config", default=None)

    p_bench = sub.add_parser("bench-solver", help="solver timing by horizon")
    p_bench.add_argument("--horizons", default="10,20,30,40,50")
    p_bench.add_argument("--reps", type=int, default=30)
    p_bench.add_argument("--out", default=None)
    p_bench.add_argument("--quad-config", default=None)

    args = parser.parse_args(argv)

    if args.command == "race":
        return _cmd_race(args)
    if args.command == "plan":
        return _cmd_plan(args)
    if args.command == "ablate-delay":
        return _cmd_ablate(args)
    if args.command == "bench-solver":
        return _cmd_bench(args)
    return 2


def _cmd_race(args):
    track = load_track(args.track)
    ref, ref_file = args.ref
    options = SimOptions(delay_ms=args.delay_ms, seed=args.seed, laps=args.laps)
    result = run_race(
        track,
        controller=args.controller,
        reference=ref,
        ref_file=ref_file,
        params=_load_params(args.quad_config),
        mpcc_cfg=_load_mpcc_cfg(args.mpcc_config),
        options=options,
        out_dir=args.out,
    )
    print(json.dumps(result.summary, indent=2, sort_keys=True))
    return 0 if result.ok else 1


def _cmd_plan(args):
    track = load_track(args.track)
    cfg = PmmConfig(gate_horizon=args.gate_horizon, samples_per_gate=args.samples)
    tic = time.perf_counter()
    result = plan(track, track.start_position, np.zeros(3), cfg, args.seed, laps=args.laps)
    wall_ms = 1e3 * (time.perf_counter() - tic)
    summary = {
        "track": track.name,
        "total_time": result.total_time,
        "segments": result.segment_times,
        "wall_ms_total": wall_ms,
        "wall_ms_median_window": result.wall_ms_median,
        "gate_horizon": cfg.gate_horizon,
        "samples_per_gate": cfg.samples_per_gate,
        "seed": args.seed,
    }
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        path = os.path.join(args.out, "trajectory.csv")
        with open(path, "w") as fh:
            fh.write("t,x,y,z,vx,vy,vz\n")
            for t, p, v in zip(result.times, result.positions, result.velocities):
                fh.write(",".join(f"{val:.10g}" for val in (t, *p, *v)) + "\n")
        with open(os.path.join(args.out, "summary.json"), "w") as fh:
            json.dump(summary, fh, indent=2, sort_keys=True)
            fh.write("\n")
    print(json.dumps(summary, indent=2, sort_keys=True))
    return 0


def _cmd_ablate(args):
    track = load_track(args.track)
    delays = [float(d) for d in args.delays.split(",")]
    ref, ref_file = args.ref
    table = []
    for delay in delays:
        for controller in ("mpcc", "mpc"):
            options = SimOptions(delay_ms=delay, seed=args.seed, laps=args.laps)
            result = run_race(
                track, controller=controller, reference=ref, ref_file=ref_file,
                params=_load_params(args.quad_config),
                mpcc_cfg=_load_mpcc_cfg(args.mpcc_config),
                options=options,
            )
            table.append({
                "delay_ms": delay,
                "controller": controller,
                "status": result.summary["status"],
                "ok": result.summary["ok"],
                "gates_passed": result.summary["gates_passed"],
                "worst_miss": result.summary["worst_miss"],
            })
            print(f"delay {delay:5.1f} ms  {controller:4s}  "
                  f"{result.summary['status']:8s}  gates {result.summary['gates_passed']}")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "delay_ablation.json"), "w") as fh:
            json.dump(table, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return 0


def _cmd_bench(args):
    horizons = [int(h) for h in args.horizons.split(",")]
    table = bench_solver(horizons=horizons, repetitions=args.reps,
                         params=_load_params(args.quad_config))
    for row in table:
        print(f"N={row['horizon']:3d}  mpcc median {row['mpcc_median_ms']:7.2f} ms  "
              f"p90 {row['mpcc_p90_ms']:7.2f} ms  |  mpc median {row['mpc_median_ms']:7.2f} ms")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "bench_solver.json"), "w") as fh:
            json.dump(table, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
