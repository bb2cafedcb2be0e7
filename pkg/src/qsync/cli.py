"""Command-line entry point: ``qsync run|optimize-t|attack-demo|drift|serve``."""
from __future__ import annotations

import argparse
import json
import logging
import sys

from . import harness
from .link import TransportError, ProtocolError, serve


def _config(args) -> dict:
    cfg = harness.load_config(args.config, getattr(args, "preset", None))
    run = cfg["run"]
    if getattr(args, "seed", None) is not None:
        run["seed"] = args.seed
    if getattr(args, "mode", None) is not None:
        run["count_mode"] = args.mode
    if getattr(args, "method", None) is not None:
        run["method"] = args.method
    harness.validate(cfg)
    return cfg


def cmd_run(args) -> int:
    bundle = harness.run_scenario(_config(args), args.out, source=args.source)
    print(json.dumps(bundle.summary, indent=2, sort_keys=True))
    return 0


def cmd_optimize_t(args) -> int:
    cfg = _config(args)
    grid = range(args.t_min, args.t_max + 1, args.t_step)
    rows, (t, cost) = harness.optimize_t(cfg, grid, args.out)
    print(f"optimal coarse step t = {t} ps, calibration time = {cost:g} ms ({len(rows)} grid points)")
    return 0


def cmd_attack_demo(args) -> int:
    results = harness.attack_demo(_config(args), args.t0, args.t1, args.out)
    for method, s in results.items():
        m = s["mismatch"]
        print(f"{method:8s} windows={s['windows_ps']} skew={m['max_pairwise_skew_ps']} ps "
              f"mismatch_ratio={m['mismatch_ratio']}")
    return 0


def cmd_drift(args) -> int:
    cfg = _config(args)
    d = cfg["drift"]
    rows = harness.drift_experiment(
        days=args.days if args.days is not None else d["days"],
        common_drift_ps=args.drift_ps if args.drift_ps is not None else d["common_drift_ps"],
        jitter_ps=args.jitter_ps if args.jitter_ps is not None else d["jitter_ps"],
        seed=d["seed"], step_ps=d["step_ps"], cfg=cfg, out_dir=args.out)
    print(f"wrote {len(rows)} rows to {args.out}/drift.csv")
    return 0


def cmd_serve(args) -> int:
    cfg = _config(args)
    serve(harness.build_scenario(cfg), args.listen)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qsync", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, presets=True):
        p.add_argument("--config", help="JSON scenario config")
        if presets:
            p.add_argument("--preset", choices=sorted(harness.PRESETS))
        return p

    p = common(sub.add_parser("run", help="run one calibration and write a report bundle"))
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--mode", choices=["expected", "sampled"])
    p.add_argument("--method", choices=["legacy", "method1", "method2"])
    p.add_argument("--source", help="remote pulse source endpoint (host:port or socket path)")
    p.set_defaults(func=cmd_run)

    p = common(sub.add_parser("optimize-t", help="tabulate calibration cost over the coarse step"))
    p.add_argument("--out", required=True)
    p.add_argument("--t-min", type=int, default=10)
    p.add_argument("--t-max", type=int, default=500)
    p.add_argument("--t-step", type=int, default=10)
    p.set_defaults(func=cmd_optimize_t)

    p = common(sub.add_parser("attack-demo", help="compare methods under a two-state shift attack"))
    p.add_argument("--t0", type=int, required=True)
    p.add_argument("--t1", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_attack_demo)

    p = common(sub.add_parser("drift", help="daily calibrations under a drifting common delay"))
    p.add_argument("--days", type=int)
    p.add_argument("--drift-ps", type=float)
    p.add_argument("--jitter-ps", type=float)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_drift)

    p = common(sub.add_parser("serve", help="serve a scenario over the framed link"))
    p.add_argument("--listen", required=True)
    p.add_argument("--mode", choices=["expected", "sampled"])
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except harness.ConfigError as exc:
        print(f"qsync: {exc}", file=sys.stderr)
        return 2
    except (TransportError, ProtocolError) as exc:
        print(f"qsync: link error: {exc}", file=sys.stderr)
        return 3
    except KeyboardInterrupt:
        return 130


if __name__ == "__main__":
    sys.exit(main())
