"""Command line front end for the scenario harness.

Two subcommands:

    sara-sim run <scenario.json> [--seed N] [--transport tcp|ws|udp]
                 [--report out.json] [--virtual-time]
    sara-sim gen [--clients N] [--ops M] [--model X] [--seed N] [--out path]

``run`` exits 0 when every check passes, 1 when the live system and the
serial replay disagree (or a scenario expectation fails), and 2 when the
scenario cannot be read at all.  ``gen`` prints a fresh random scenario
(or writes it with ``--out``); the model argument is a preset name or a
comma-separated mix, for example ``turn,ownership``.
"""

from __future__ import annotations

import argparse
import json
import sys

from sara.errors import ExpectationFailed, SaraError
from sara.sim.runner import run_scenario
from sara.sim.scenario import generate_scenario


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sara-sim",
        description="replay collaboration scenarios against a live server")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="play one scenario end to end")
    run.add_argument("scenario", help="path to a scenario JSON file")
    run.add_argument("--seed", type=int, default=0,
                     help="seed recorded in the report (default 0)")
    run.add_argument("--transport", choices=("tcp", "ws", "udp"),
                     help="force every consumer onto one transport")
    run.add_argument("--report", metavar="PATH",
                     help="write the full JSON report here")
    run.add_argument("--virtual-time", action="store_true",
                     help="drive timestamps from the timeline instead of "
                          "sleeping through it")

    gen = sub.add_parser("gen", help="emit a seeded random scenario")
    gen.add_argument("--clients", type=int, default=4,
                     help="participant count including the provider")
    gen.add_argument("--ops", type=int, default=100,
                     help="timeline length")
    gen.add_argument("--model", default="unconstrained",
                     help="collaboration model preset or comma mix")
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", metavar="PATH",
                     help="write the scenario here instead of stdout")
    return parser


def _cmd_run(args) -> int:
    try:
        report = run_scenario(args.scenario, seed=args.seed,
                              transport=args.transport,
                              virtual_time=args.virtual_time,
                              report_path=args.report)
    except ExpectationFailed as error:
        print(f"FAIL {args.scenario}: {error}", file=sys.stderr)
        report = getattr(error, "report", None)
        if report is not None:
            _summary(report, file=sys.stderr)
        return 1
    except SaraError as error:
        print(f"ERROR {args.scenario}: {error}", file=sys.stderr)
        return 2
    _summary(report)
    return 0


def _summary(report: dict, file=None) -> None:
    # bind stdout at call time so test harnesses can capture it
    file = file or sys.stdout
    convergence = report["convergence"]
    states = ", ".join(f"{name}={state}"
                       for name, state in sorted(convergence.items()))
    print(f"scenario {report['scenario']}: {report['accepted']} accepted, "
          f"{report['rejected']} rejected, revision {report['revision']}",
          file=file)
    print(f"state {report['final_state_hash'][:16]} "
          f"(replay {report['oracle_state_hash'][:16]}), {states}", file=file)
    print(f"wall time {report['wall_ms']:.1f} ms", file=file)


def _cmd_gen(args) -> int:
    try:
        scenario = generate_scenario(clients=args.clients, ops=args.ops,
                                     model=args.model, seed=args.seed)
    except SaraError as error:
        print(f"ERROR: {error}", file=sys.stderr)
        return 2
    text = json.dumps(scenario.to_doc(), indent=2) + "\n"
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    if args.command == "run":
        return _cmd_run(args)
    return _cmd_gen(args)


if __name__ == "__main__":
    sys.exit(main())
