"""Run experiment configs and write a comparison table.

Usage::

    python3 scripts/run_experiments.py configs/burgers_standard.yaml configs/burgers_adaptive.yaml
    python3 scripts/run_experiments.py --all --output-root runs

With ``--all`` every top-level YAML file in ``configs/`` is run. Runs that
share a model are compared, with the first config of each model as the
reference.
"""

import argparse
import logging
from pathlib import Path

from adaptive_mor.config import apply_overrides, load_config
from adaptive_mor.runner import compare_runs, run_experiment

ROOT = Path(__file__).resolve().parents[1]


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("configs", nargs="*")
    p.add_argument("--all", action="store_true", help="run every config in configs/")
    p.add_argument("--output-root", default="runs")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("-v", "--verbose", action="store_true")
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    paths = [Path(c) for c in args.configs]
    if args.all:
        paths += sorted((ROOT / "configs").glob("*.yaml"))
    if not paths:
        p.error("give config files or --all")
    by_model = {}
    for path in paths:
        cfg = load_config(path)
        cfg = apply_overrides(cfg, [f"output_dir={Path(args.output_root) / cfg.name}",
                                    *args.overrides])
        s = run_experiment(cfg)
        print(f"{s.name:<28} {s.cause:<10} it={s.iterations:<4} sizes={tuple(s.sizes)} "
              f"{s.seconds:.1f}s")
        if s.pipeline not in ("fom-sim", "infsup-validate"):
            by_model.setdefault(s.model, []).append(s.output_dir)
    for model, runs in by_model.items():
        if len(runs) > 1:
            out = Path(args.output_root) / f"compare_{model}"
            table, _ = compare_runs(runs, out)
            print(f"\n{model}: comparison written to {out}")
            for row in table:
                print(f"  {row['name']:<26} it={row['iterations']:<4} "
                      f"sizes=({row['ell_rb']}, {row['ell_ei']}) {row['seconds']:.1f}s")


if __name__ == "__main__":
    main()
