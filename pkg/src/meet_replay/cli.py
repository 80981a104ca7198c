"""Command line entry point: ``run`` a strategy sweep, ``summarize`` its CSV."""

from __future__ import annotations

import argparse
import logging
import sys

from .agent import AgentConfig
from .harness import ExperimentSpec, format_summary, parse_config_file, read_csv, run_experiment, summarize

EXIT_OK, EXIT_USAGE, EXIT_RUN_FAILED = 0, 1, 2

# flag name -> (AgentConfig field, type); the same names are accepted in --config files
AGENT_FLAGS = {
    "steps": ("steps", int),
    "heads": ("heads", int),
    "mask-prob": ("mask_prob", float),
    "gamma": ("gamma", float),
    "replay-period": ("replay_period", int),
    "batch": ("batch", int),
    "capacity": ("capacity", int),
    "tau": ("tau", float),
    "actor-lr": ("actor_lr", float),
    "critic-lr": ("critic_lr", float),
    "momentum": ("momentum", float),
    "noise": ("noise", float),
    "priority-floor": ("priority_floor", float),
    "visit-scaling": ("visit_scaling", str),
}
SPEC_FLAGS = {
    "env": str,
    "strategy": str,
    "seeds": str,
    "eval-interval": int,
    "eval-episodes": int,
    "out": str,
    "workers": int,
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="meet-replay", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    run = sub.add_parser("run", help="train every (strategy, seed) pair and write a CSV of evaluations")
    run.add_argument("--config", help="file of 'key = value' lines using the flag names below")
    run.add_argument("--env", choices=["pendulum", "pointmass"])
    run.add_argument("--strategy", help="comma-separated subset of meet,per,uniform")
    run.add_argument("--seeds", help="comma-separated integers")
    for flag, (_, typ) in AGENT_FLAGS.items():
        run.add_argument(f"--{flag}", type=typ)
    run.add_argument("--eval-interval", type=int)
    run.add_argument("--eval-episodes", type=int)
    run.add_argument("--out")
    run.add_argument("--workers", type=int, help="parallel runs (output is identical for any value)")
    run.add_argument("--record-timing", action="store_true", help="fill wall_secs (makes the CSV non-reproducible)")

    summ = sub.add_parser("summarize", help="print per-strategy statistics of a run CSV")
    summ.add_argument("--in", dest="path", required=True)
    return parser


def _merge(args) -> dict:
    """Config-file values overlaid by explicit command line flags."""
    values: dict = {}
    if args.config:
        for key, raw in parse_config_file(args.config).items():
            if key in AGENT_FLAGS:
                values[key] = AGENT_FLAGS[key][1](raw)
            elif key in SPEC_FLAGS:
                values[key] = SPEC_FLAGS[key](raw)
            elif key == "record-timing":
                values[key] = raw.lower() in ("1", "true", "yes")
            else:
                raise UsageError(f"unknown config key {key!r}")
    for key in list(AGENT_FLAGS) + list(SPEC_FLAGS) + ["record-timing"]:
        value = getattr(args, key.replace("-", "_"))
        if value is not None and value is not False:
            values[key] = value
    return values


def spec_from_args(args) -> tuple[ExperimentSpec, int]:
    values = _merge(args)
    agent_kwargs = {AGENT_FLAGS[k][0]: v for k, v in values.items() if k in AGENT_FLAGS}
    strategies = [s.strip() for s in values.get("strategy", "meet,per,uniform").split(",") if s.strip()]
    try:
        seeds = [int(s) for s in str(values.get("seeds", "0,1,2,3,4")).split(",") if s.strip()]
        agent = AgentConfig(strategy=strategies[0] if strategies else "meet", **agent_kwargs)
        spec = ExperimentSpec(
            env=values.get("env", "pendulum"),
            strategies=strategies,
            seeds=seeds,
            agent=agent,
            eval_interval=values.get("eval-interval", 1000),
            eval_episodes=values.get("eval-episodes", 10),
            out=values.get("out"),
            record_timing=bool(values.get("record-timing", False)),
        )
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from exc
    if spec.out is None:
        raise UsageError("--out is required")
    return spec, int(values.get("workers", 1))


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")

    if args.command == "summarize":
        try:
            records = read_csv(args.path)
            print(format_summary(summarize(records)))
        except (OSError, ValueError) as exc:
            print(f"meet-replay: {exc}", file=sys.stderr)
            return EXIT_USAGE
        return EXIT_OK

    try:
        spec, workers = spec_from_args(args)
    except (UsageError, OSError) as exc:
        print(f"meet-replay: {exc}", file=sys.stderr)
        return EXIT_USAGE
    records = run_experiment(spec, workers=workers)
    summary = summarize(records)
    print(format_summary(summary))
    if any(r.failed for r in records):
        return EXIT_RUN_FAILED
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
