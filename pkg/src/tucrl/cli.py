"""Command-line entry point: ``run``, ``verify`` and ``env export``."""

import argparse
import sys
from pathlib import Path

from .envs import make_env, parse_env_spec
from .harness import load_config, run_experiment, verify_logs
from .mdp import to_text


def _run(args):
    config = load_config(args.config)
    result = run_experiment(config, workers=args.workers, out_dir=args.out)
    for label, agg in result.aggregates.items():
        print(f"{label}: final regret {agg.mean[-1]:.6g} +- {agg.half_width[-1]:.3g}, "
              f"max Z_T {agg.max_z}, max m {agg.max_m}")
    for check in result.report.failures:
        print(check.line(), file=sys.stderr)
    print(f"artifacts written to {result.out_dir}")
    return 0 if result.passed else 1


def _verify(args):
    report = verify_logs(args.logs)
    sys.stdout.write(report.text())
    return 0 if report.passed else 1


def _export(args):
    text = to_text(make_env(parse_env_spec(args.spec)))
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="tucrl", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a multi-seed regret experiment")
    run.add_argument("--config", required=True, help="key = value experiment file")
    run.add_argument("--workers", type=int, default=1)
    run.add_argument("--out", default=None, help="output directory (overrides the config)")
    run.set_defaults(func=_run)

    verify = sub.add_parser("verify", help="recheck lemma inequalities on saved logs")
    verify.add_argument("--logs", required=True)
    verify.set_defaults(func=_verify)

    env = sub.add_parser("env", help="environment utilities")
    env_sub = env.add_subparsers(dest="env_command", required=True)
    export = env_sub.add_parser("export", help="print an environment in the MDP text format")
    export.add_argument("--spec", required=True, help="e.g. three_state:delta=0.005")
    export.add_argument("--out", default=None)
    export.set_defaults(func=_export)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (OSError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
