"""RL vs GSP vs Random on the synthetic market, 10 seed triples.

    python3 scripts/compare_allocators.py --out runs/compare [--repeat 10]
"""

import argparse

from flmarket import experiments
from flmarket.config import SimConfig

SETUP = dict(n_clients=10, seller_ratio=0.7, k=3, training_rounds=200, total_rounds=100, d_repr=8)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/compare")
    ap.add_argument("--repeat", type=int, default=10)
    ap.add_argument("--strategy", default="stochastic", choices=["stochastic", "greedy", "eps_greedy"])
    args = ap.parse_args()
    cfg = SimConfig().replace(strategy=args.strategy, **SETUP)
    experiments.compare(cfg, args.out, args.repeat)
    _, txt = experiments.report([args.out], args.out)
    print(txt.read_text(), end="")


if __name__ == "__main__":
    main()
