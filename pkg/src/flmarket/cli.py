"""Command line entry point.

    flmarket run     --config cfg.json --out runs/a [--seeds 1,2,3] [--repeat 10]
    flmarket compare --config cfg.json --out runs/cmp [--repeat 10]
    flmarket sweep   --config cfg.json --out runs/sw --grid k=3,5 --grid seller_ratio=0.4,0.6
    flmarket report  runs/cmp [more dirs] --out runs/cmp

Exit codes: 0 success, 2 configuration error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import logging
import sys

from . import experiments
from .config import SimConfig, load_config
from .core import ConfigError

log = logging.getLogger("flmarket")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


def _seeds(text: str):
    try:
        seeds = [int(s) for s in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"--seeds expects three integers a,b,c, got {text!r}")
    if len(seeds) != 3:
        raise argparse.ArgumentTypeError(f"--seeds expects exactly three integers, got {len(seeds)}")
    return seeds


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="flmarket", description="Auction-based federated learning market simulator")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file (omitted keys take defaults)")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seeds", type=_seeds, help="train,eval,test seeds")
        p.add_argument("--repeat", type=int, default=1, help="repetitions with shifted seed triples")

    common(sub.add_parser("run", help="run a single experiment"))
    common(sub.add_parser("compare", help="RL vs GSP vs Random on shared seeds"))
    sw = sub.add_parser("sweep", help="grid over mechanism parameters")
    common(sw)
    sw.add_argument("--grid", action="append", default=[], metavar="KEY=v1,v2,...")
    rp = sub.add_parser("report", help="summarize finished runs into mean±std tables")
    rp.add_argument("dirs", nargs="+")
    rp.add_argument("--out", help="where to write report.csv/report.txt (default: first dir)")
    return parser


def _config(args) -> SimConfig:
    config = load_config(args.config) if args.config else SimConfig().validate()
    if args.seeds:
        config = config.replace(seeds=args.seeds)
    if args.repeat < 1:
        raise ConfigError(f"--repeat must be >= 1, got {args.repeat}")
    return config


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "report":
            csv_path, txt_path = experiments.report(args.dirs, args.out or args.dirs[0])
            sys.stdout.write(txt_path.read_text())
            return EXIT_OK
        config = _config(args)
        if args.command == "sweep":
            grid = experiments.parse_grid(args.grid)
            path = experiments.sweep(config, grid, args.out, args.repeat)
            print(f"sweep table written to {path}")
            return EXIT_OK
        if args.command == "run":
            experiments.run_repeats(config, args.out, args.repeat)
        else:
            experiments.compare(config, args.out, args.repeat)
        _, txt_path = experiments.report([args.out], args.out)
        sys.stdout.write(txt_path.read_text())
        return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - map everything else to the runtime exit code
        log.debug("runtime failure", exc_info=True)
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
