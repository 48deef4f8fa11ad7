"""Bottom-decile revenue with and without reward shaping (eta=0.005 vs eta=0)."""

import argparse
import json

import numpy as np

from flmarket.config import SimConfig
from flmarket.experiments import collect_test_summaries

SETUP = dict(n_clients=10, seller_ratio=0.7, k=3, training_rounds=200, total_rounds=100, d_repr=8)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeat", type=int, default=10)
    ap.add_argument("--seeds", default="1,2,3", help="base train,eval,test seeds")
    args = ap.parse_args()
    base = SimConfig().replace(seeds=[int(s) for s in args.seeds.split(",")], **SETUP)
    rows = {}
    for eta in (0.005, 0.0):
        runs = collect_test_summaries(base.replace(eta=eta), args.repeat)
        rows[eta] = {
            "median_bottom10_volume": float(np.median([r["bottom10_volume"] for r in runs])),
            "median_cumulative_volume": float(np.median([r["cumulative_volume"] for r in runs])),
            "median_bottom10_accuracy": float(np.median([r["bottom10_accuracy"] for r in runs])),
        }
    print(json.dumps({f"eta={k}": v for k, v in rows.items()}, indent=2))


if __name__ == "__main__":
    main()
