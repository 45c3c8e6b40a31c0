"""``scalepool`` command line: run, validate, table, hpa-status."""
from __future__ import annotations

import argparse
import json
import logging
import sys

from ..autoscaler import STATUS_HEADER, status_row
from ..balancer import render_table
from ..descriptors import DescriptorError, load_descriptor
from ..errors import InvariantViolation
from .config import ConfigError, load_scenario
from .experiment import write_outputs

EXIT_OK, EXIT_INVALID, EXIT_CONFIG, EXIT_INVARIANT = 0, 1, 2, 3


def _flags(args) -> dict:
    profile = {"target_users": args.users, "hatch_rate": args.hatch_rate,
               "run_duration": args.duration, "stream_hold": args.hold}
    overrides = {"sync_period": args.sync_period, "stabilization": args.stabilization,
                 "tolerance": args.tolerance, "capacity": args.capacity,
                 "scheduler": args.scheduler}
    return {"mode": args.mode, "seed": args.seed, "output_dir": args.output_dir,
            "profile": {k: v for k, v in profile.items() if v is not None},
            "overrides": {k: v for k, v in overrides.items() if v is not None}}


def _add_scenario_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("scenario", help="scenario JSON file")
    p.add_argument("--mode", choices=["simulated", "realtime"])
    p.add_argument("--seed", type=int)
    p.add_argument("--output-dir")
    p.add_argument("--users", type=int, help="target user count")
    p.add_argument("--hatch-rate", type=float, help="users spawned per second")
    p.add_argument("--duration", type=float, help="load phase length in seconds")
    p.add_argument("--hold", type=float, help="stream hold time in seconds")
    p.add_argument("--sync-period", type=float, help="autoscaler period in seconds")
    p.add_argument("--stabilization", type=float, help="scale-down window in seconds")
    p.add_argument("--tolerance", type=int, help="dead band in millis of ratio (100 = 0.1)")
    p.add_argument("--capacity", type=int, help="concurrent streams per pod")
    p.add_argument("--scheduler", choices=["rr", "wrr", "lc"])


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="scalepool", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run an experiment and write trace.csv, loadstats.csv, report.json")
    _add_scenario_flags(p)

    p = sub.add_parser("validate", help="validate a *.vnfd.json or *.nsd.json descriptor")
    p.add_argument("descriptor")

    for name, what in (("table", "ipvsadm-style service table"),
                       ("hpa-status", "autoscaler status rows")):
        p = sub.add_parser(name, help=f"print the {what} of a simulated scenario at a given time")
        _add_scenario_flags(p)
        p.add_argument("--at", type=float, help="simulated seconds (default: middle of the load phase)")
        if name == "hpa-status":
            p.add_argument("--watch", action="store_true", help="one row per autoscaler tick up to --at")
    return parser


def cmd_run(args) -> int:
    config = load_scenario(args.scenario, _flags(args))
    if config.mode == "realtime":
        from .realtime import run_realtime as runner
    else:
        from .simulation import run_simulation as runner
    result = runner(config)
    paths = write_outputs(result, config.output_dir)
    report = result.report
    print(f"max replicas {report['max_replicas_reached']}, denials {report['total_denials']}, "
          f"settle {report['settle_time_s']} s, audits {'pass' if report['audits'] == 'pass' else 'FAIL'}")
    for name, path in paths.items():
        print(f"  {name}: {path}")
    if report["audits"] != "pass":
        name, detail = next(iter(report["audits"].items()))
        raise InvariantViolation(name, detail)
    return EXIT_OK


def _simulate_to(args):
    from .simulation import Simulation
    config = load_scenario(args.scenario, _flags(args))
    sim = Simulation(config)
    sim.keep_snapshots = True
    at = args.at if args.at is not None else (sim.load_start + sim.load_end) / 2000
    sim.run_until(round(at * 1000))
    return sim


def cmd_table(args) -> int:
    sim = _simulate_to(args)
    sys.stdout.write(render_table(sim.exp.vs))
    return EXIT_OK


def cmd_hpa_status(args) -> int:
    sim = _simulate_to(args)
    spec = sim.exp.spec
    if spec is None:
        print("no autoscaler configured for this plan")
        return EXIT_OK
    print("\t".join(STATUS_HEADER))
    if args.watch:
        from ..autoscaler import HpaStatus
        for _, _, avg, replicas in sim.snapshots:
            print(status_row(spec, HpaStatus(current_replicas=replicas, current_average=avg)))
    else:
        print(status_row(spec, sim.exp.status, len(sim.exp.deployment.live_pods())))
    return EXIT_OK


def cmd_validate(args) -> int:
    try:
        load_descriptor(args.descriptor)
    except DescriptorError as exc:
        print(json.dumps(exc.to_dict()))
        return EXIT_INVALID
    except OSError as exc:
        print(json.dumps({"error": "io", "path": "$", "message": str(exc)}))
        return EXIT_INVALID
    print("OK")
    return EXIT_OK


COMMANDS = {"run": cmd_run, "validate": cmd_validate, "table": cmd_table,
            "hpa-status": cmd_hpa_status}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (DescriptorError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InvariantViolation as exc:
        print(f"invariant violated: {exc}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
