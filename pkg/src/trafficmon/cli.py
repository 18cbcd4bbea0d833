"""Command line entry points.

Verbs: ``run`` executes an experiment config; ``sweep-threshold`` derives
the tier-selection threshold empirically from a rate sweep;
``calibrate-tau-a`` prints the congestion area threshold for a vehicle
footprint; ``make-trace`` synthesizes a three-segment bandwidth trace.
Output directory precedence everywhere: --out, then $TRAFFICMON_OUT, then
the config value (or ./results).
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace

from . import experiment as exp
from .channel import constant_trace, reference_rate, three_segment, write_trace_csv
from .congestion import calibrate_tau_a
from .metrics import evaluate_run
from .scene import generate_scene
from .tiers import run_cloud, run_edge, verdict_flags

log = logging.getLogger("trafficmon")


def _add_out(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--out", help="output directory (beats $TRAFFICMON_OUT)")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="trafficmon",
        description="two-tier traffic monitoring test bed",
    )
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="verb", required=True)

    run = sub.add_parser("run", help="run an experiment config")
    run.add_argument("--config", required=True, help="YAML experiment config")
    run.add_argument("--strategy", action="append",
                     choices=list(exp.STRATEGIES),
                     help="restrict to a strategy (repeatable)")
    run.add_argument("--seed", type=int, help="run a single seed")
    run.add_argument("--no-figures", action="store_true",
                     help="skip PNG rendering, write CSVs only")
    _add_out(run)

    sweep = sub.add_parser(
        "sweep-threshold",
        help="derive the tier threshold from a constant-rate sweep")
    sweep.add_argument("--rates", required=True,
                       help="comma list of rate fractions, e.g. 0.2,0.4,0.6,1.0")
    sweep.add_argument("--duration", type=float, default=30.0)
    sweep.add_argument("--seed", type=int, default=1)
    _add_out(sweep)

    cal = sub.add_parser("calibrate-tau-a",
                         help="area threshold for a stopped-vehicle footprint")
    cal.add_argument("--vehicle-width-m", type=float, default=1.8)
    cal.add_argument("--vehicle-length-m", type=float, default=4.2)
    cal.add_argument("--meters-per-pixel", type=float,
                     default=exp.METERS_PER_PIXEL)
    cal.add_argument("--vehicles", type=int, default=3)

    mk = sub.add_parser("make-trace",
                        help="write a three-segment bandwidth trace CSV")
    mk.add_argument("--duration", type=float, default=96.0)
    mk.add_argument("--base-rate", type=float,
                    help="bytes/s outside the limited window "
                         "(default: the reference rate)")
    mk.add_argument("--limit-rate", type=float, required=True,
                    help="bytes/s inside the limited window")
    mk.add_argument("--limit-window", type=float, nargs=2, required=True,
                    metavar=("T0", "T1"))
    mk.add_argument("--file", default="trace.csv",
                    help="file name inside the output directory")
    _add_out(mk)
    return p


def cmd_run(args) -> int:
    cfg = exp.load_config(args.config)
    if args.strategy:
        cfg = replace(cfg, strategies=tuple(dict.fromkeys(args.strategy)))
    if args.seed is not None:
        cfg = replace(cfg, seeds=(args.seed,))
    out = exp.resolve_out_dir(cfg, args.out)
    log.info("running %s: %d weathers x %d strategies x %d seeds -> %s",
             cfg.name, len(cfg.weathers), len(cfg.strategies),
             len(cfg.seeds), out)
    bundle = exp.run_experiment(cfg)
    paths = exp.write_reports(bundle, out, figures=not args.no_figures)
    for p in paths:
        print(p)
    return 0


def cmd_sweep_threshold(args) -> int:
    try:
        fracs = sorted(float(r) for r in args.rates.split(","))
    except ValueError:
        print(f"could not parse --rates {args.rates!r}", file=sys.stderr)
        return 2
    if not fracs or any(f <= 0 for f in fracs):
        print("--rates must be positive fractions", file=sys.stderr)
        return 2
    cfg = exp.ExperimentConfig(name="sweep", scene_preset="free_flow",
                               duration_s=args.duration, weathers=("sunny",),
                               seeds=(args.seed,))
    site = exp.build_site(cfg)
    script = exp.build_script(cfg, args.seed)
    frames, truth = generate_scene(script, exp.SOURCE_VIDEO,
                                   cfg.weather_model("sunny"), args.seed)
    ref = reference_rate(exp.SOURCE_VIDEO)
    dt = exp.SOURCE_VIDEO.dt
    n = len(frames)
    edge = run_edge(frames, site)
    edge_eps = evaluate_run(verdict_flags(edge.verdicts, n), edge.reports,
                            truth, dt).eps_s
    rows = []
    for frac in fracs:
        trace = constant_trace(args.duration, frac * ref)
        cloud = run_cloud(frames, trace, site)
        rep = evaluate_run(verdict_flags(cloud.verdicts, n), cloud.reports,
                           truth, dt)
        rows.append((frac, min(frac, 1.0), edge_eps, rep.eps_s))
        log.info("rate %.3f: cloud eps_s %.4f (edge %.4f)",
                 frac, rep.eps_s, edge_eps)
    out = exp.resolve_out_dir(cfg, args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "threshold.csv"
    with open(path, "w") as fh:
        fh.write("rate_frac,c_mean,eps_s_edge,eps_s_cloud\n")
        for frac, c, ee, ce in rows:
            fh.write(f"{frac:.6f},{c:.6f},{ee:.6f},{ce:.6f}\n")
    c_hat = derive_c_hat(rows)
    print(path)
    if c_hat is None:
        print("no crossover found in the swept range; "
              "cloud never beat edge, keep beta_e = 1 everywhere")
    else:
        print(f"derived c_hat = {c_hat:.4f} "
              f"(cloud error crosses edge error there)")
    return 0


def derive_c_hat(rows) -> float | None:
    """Midpoint of the rate step where cloud error first drops to edge's."""
    for i, (frac, c, ee, ce) in enumerate(rows):
        if ce <= ee:
            if i == 0:
                return c
            return (rows[i - 1][1] + c) / 2.0
    return None


def cmd_calibrate_tau_a(args) -> int:
    tau = calibrate_tau_a(args.vehicle_width_m, args.vehicle_length_m,
                          args.meters_per_pixel, vehicles=args.vehicles)
    print(f"tau_a = {tau} px "
          f"({args.vehicles} vehicles of {args.vehicle_width_m}x"
          f"{args.vehicle_length_m} m at {args.meters_per_pixel} m/px)")
    return 0


def cmd_make_trace(args) -> int:
    base = args.base_rate
    if base is None:
        base = reference_rate(exp.SOURCE_VIDEO)
    t0, t1 = args.limit_window
    if not 0.0 <= t0 < t1 <= args.duration:
        print(f"--limit-window {t0} {t1} must lie inside "
              f"[0, {args.duration}]", file=sys.stderr)
        return 2
    trace = three_segment(args.duration, base, args.limit_rate, (t0, t1))
    out = exp.resolve_out_dir(exp.ExperimentConfig(), args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / args.file
    write_trace_csv(trace, path)
    print(path)
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        if args.verb == "run":
            return cmd_run(args)
        if args.verb == "sweep-threshold":
            return cmd_sweep_threshold(args)
        if args.verb == "calibrate-tau-a":
            return cmd_calibrate_tau_a(args)
        if args.verb == "make-trace":
            return cmd_make_trace(args)
    except exp.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    raise AssertionError(f"unhandled verb {args.verb}")


if __name__ == "__main__":
    sys.exit(main())
