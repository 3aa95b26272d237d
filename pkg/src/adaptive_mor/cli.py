"""Command line entry point ``admor``.

Subcommands map onto pipelines::

    admor fom-sim   CONFIG        FOM outputs over the training set
    admor greedy    CONFIG        standard POD-Greedy(-(D)EIM)
    admor adaptive  CONFIG        adaptive POD-Greedy-(D)EIM
    admor twoway    CONFIG        two-way adaptive POD-(D)EIM
    admor infsup    CONFIG        surrogate vs direct inf-sup sweep
    admor compare   RUN RUN ...   comparison table of finished runs

Fields are overridden with ``--set key=value`` (dotted keys reach nested
blocks) or the shortcut flags. The exit status is 0 only when the run
terminated in the zone of acceptance or below the tolerance (``completed``
for the non-iterative pipelines), 1 otherwise, 2 for invalid input.
"""

import argparse
import logging
import sys

from .config import apply_overrides, load_config
from .errors import InvalidInputError
from .runner import compare_runs, run_experiment

log = logging.getLogger(__name__)

_PIPELINE = {
    "fom-sim": "fom-sim",
    "adaptive": "adaptive-greedy",
    "twoway": "twoway",
    "infsup": "infsup-validate",
}


def _parser():
    p = argparse.ArgumentParser(prog="admor", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("fom-sim", "greedy", "adaptive", "twoway", "infsup"):
        s = sub.add_parser(name)
        s.add_argument("config")
        s.add_argument("--set", dest="overrides", action="append", default=[],
                       metavar="KEY=VALUE")
        s.add_argument("--output-dir")
        s.add_argument("--seed", type=int)
        s.add_argument("--tol", type=float)
        s.add_argument("--method", choices=["EIM", "DEIM"])
        s.add_argument("--max-iter", type=int)
        s.add_argument("--jobs", type=int, help="worker processes for the indicator sweep")
        if name == "greedy":
            s.add_argument("--no-interp", action="store_true",
                           help="plain POD-Greedy without hyper-reduction")
    c = sub.add_parser("compare")
    c.add_argument("runs", nargs="+", help="run directories (first is the reference)")
    c.add_argument("--output-dir", default=".")
    return p


def _overrides(args):
    ov = list(args.overrides)
    if args.output_dir:
        ov.append(f"output_dir={args.output_dir}")
    if args.seed is not None:
        ov.append(f"seed={args.seed}")
    for flag, key in (("tol", "tol"), ("method", "method"), ("max_iter", "max_iter"),
                      ("jobs", "jobs")):
        val = getattr(args, flag)
        if val is not None:
            ov.append(f"greedy.{key}={val}")
    if args.command == "greedy":
        ov.append("pipeline=" + ("standard" if args.no_interp else "standard-deim"))
    else:
        ov.append(f"pipeline={_PIPELINE[args.command]}")
    return ov


def main(argv=None):
    args = _parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "compare":
            table, _ = compare_runs(args.runs, args.output_dir)
            for row in table:
                print(f"{row['name']:<24} {row['pipeline']:<16} it={row['iterations']:<4} "
                      f"sizes=({row['ell_rb']}, {row['ell_ei']}) {row['seconds']:.1f}s "
                      f"{row['cause']}")
            return 0
        cfg = apply_overrides(load_config(args.config), _overrides(args))
        summary = run_experiment(cfg)
    except InvalidInputError as exc:
        print(f"admor: error: {exc}", file=sys.stderr)
        return 2
    print(f"{summary.name}: {summary.pipeline} {summary.cause} after {summary.iterations} "
          f"iterations, sizes {tuple(summary.sizes)}, {summary.seconds:.1f}s -> {summary.output_dir}")
    if summary.error:
        print(f"admor: {summary.error}", file=sys.stderr)
    return 0 if summary.success else 1


if __name__ == "__main__":
    sys.exit(main())
