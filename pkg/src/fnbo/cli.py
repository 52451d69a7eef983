"""Command-line entry points: `fnbo run` and `fnbo summarize`."""

import argparse
import sys

from .harness import (
    ALGOS,
    ExperimentConfig,
    load_config,
    load_results,
    run_experiment,
    summarize,
    write_summary,
)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="fnbo",
        description="Cost-aware Bayesian optimization of function networks",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one experiment (all trials)")
    run.add_argument("--config", help="JSON experiment configuration file")
    run.add_argument("--problem", help="builtin problem name or JSON problem path")
    run.add_argument("--algo", choices=ALGOS)
    run.add_argument("--trials", type=int)
    run.add_argument("--seed", type=int)
    run.add_argument("--budget", type=float)
    run.add_argument("--out", help="output directory for trace/meta files")

    summ = sub.add_parser("summarize", help="aggregate trace files into curves")
    summ.add_argument("--in", dest="in_dir", required=True)
    summ.add_argument("--out", dest="out_dir", required=True)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.command == "run":
        config = load_config(args.config) if args.config else ExperimentConfig()
        overrides = {
            "problem": args.problem,
            "algo": args.algo,
            "trials": args.trials,
            "seed": args.seed,
            "budget": args.budget,
            "out_dir": args.out,
        }
        for key, val in overrides.items():
            if val is not None:
                setattr(config, key, val)
        results = run_experiment(config)
        for res in results:
            print(
                f"trial {res.trial}: {len(res.records)} evaluations, "
                f"final ground truth {res.final_truth:.6g}"
            )
        print(f"traces written to {config.out_dir}")
        return 0
    if args.command == "summarize":
        results = load_results(args.in_dir)
        if not results:
            print(f"no trace/meta files found in {args.in_dir}", file=sys.stderr)
            return 1
        summary = summarize(results)
        write_summary(summary, args.out_dir)
        for algo, s in sorted(summary.items()):
            print(
                f"{algo}: final {s['final_mean']:.6g} +- {s['final_stderr']:.2g}, "
                f"acq {s['runtime_mean']:.3g}s/iter"
            )
        print(f"summary written to {args.out_dir}")
        return 0
    return 1


if __name__ == "__main__":
    raise SystemExit(main())
