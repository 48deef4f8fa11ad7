"""Grid over the copy limit k and the seller ratio on the synthetic market.

Writes one directory per cell plus sweep.csv.
"""

import argparse

from flmarket import experiments
from flmarket.config import SimConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/sweep")
    ap.add_argument("--n-clients", type=int, default=20)
    ap.add_argument("--k", default="3,5,10,15")
    ap.add_argument("--ratio", default="0.2,0.4,0.6,0.8")
    ap.add_argument("--allocator", default="rl", choices=["rl", "gsp", "random"])
    ap.add_argument("--repeat", type=int, default=1)
    args = ap.parse_args()
    cfg = SimConfig().replace(n_clients=args.n_clients, allocator=args.allocator, d_repr=8)
    grid = experiments.parse_grid([f"k={args.k}", f"seller_ratio={args.ratio}"])
    print(f"sweep table written to {experiments.sweep(cfg, grid, args.out, args.repeat)}")


if __name__ == "__main__":
    main()
