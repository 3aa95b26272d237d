"""Adaptive greedy runs over several initial-parameter seeds.

Prints one line per seed (termination cause, iterations, final sizes, rho,
wall time) so the sensitivity of the adaptive loop to its starting point can
be inspected::

    python3 scripts/seed_sweep.py configs/burgers_adaptive.yaml --seeds 0 1 2 3 4
"""

import argparse

import numpy as np

from adaptive_mor.config import build_model, build_training, load_config
from adaptive_mor.greedy import adaptive_pod_greedy_deim


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("config")
    p.add_argument("--seeds", type=int, nargs="+", default=list(range(5)))
    args = p.parse_args()
    cfg = load_config(args.config)
    fom = build_model(cfg)
    training = build_training(cfg, fom)
    rows = []
    for seed in args.seeds:
        gcfg = cfg.greedy_config()
        gcfg.seed = seed
        st = adaptive_pod_greedy_deim(fom, training, gcfg)
        rows.append((st.iterations, *st.sizes))
        print(f"seed {seed:>3}: {st.cause:<10} it={st.iterations:<3} sizes={st.sizes} "
              f"rho={st.rho:.2f} fom_calls={st.fom_calls} {st.timings['total']:.1f}s")
    it, lr, le = np.array(rows).T
    print(f"median iterations {np.median(it):.0f}, median sizes ({np.median(lr):.0f}, "
          f"{np.median(le):.0f})")


if __name__ == "__main__":
    main()
