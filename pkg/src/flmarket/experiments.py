"""Multi-run drivers: seed repeats, allocator comparison, grid sweeps and reports."""

from __future__ import annotations

import csv
import itertools
import json
from pathlib import Path

import numpy as np

from .config import ALIASES, SimConfig
from .core import ConfigError
from .sim import run_experiment, write_outputs

REPEAT_SEED_STRIDE = 1000
REPORT_METRICS = ("final_mean_accuracy", "cumulative_volume", "bottom10_accuracy", "bottom10_volume")
# fields allowed to differ between runs aggregated into one report
ROW_KEYS = ("allocator", "strategy")


def repeat_seeds(seeds, rep: int) -> tuple:
    return tuple(int(s) + REPEAT_SEED_STRIDE * rep for s in seeds)


def run_repeats(config: SimConfig, out_dir, repeat: int = 1) -> list[Path]:
    """One output directory per repetition (``rep_000``, ...), each with its own seed triple."""
    out = Path(out_dir)
    dirs = []
    for rep in range(repeat):
        cfg = config.replace(seeds=list(repeat_seeds(config.seeds, rep)))
        dirs.append(write_outputs(run_experiment(cfg), out / f"rep_{rep:03d}"))
    return dirs


def collect_test_summaries(config: SimConfig, repeat: int) -> list[dict]:
    """Test-phase summaries of ``repeat`` seed repetitions, without writing files."""
    return [run_experiment(config.replace(seeds=list(repeat_seeds(config.seeds, rep)))).test.summary()
            for rep in range(repeat)]


def compare(config: SimConfig, out_dir, repeat: int = 1, allocators=("rl", "gsp", "random")) -> list[Path]:
    """Run every allocator on the same seed triples."""
    dirs = []
    for name in allocators:
        dirs += run_repeats(config.replace(allocator=name), Path(out_dir) / name, repeat)
    return dirs


def parse_grid(specs) -> dict:
    """``["k=3,5", "seller_ratio=0.4,0.6"]`` -> ``{"copies_k": [3, 5], ...}``."""
    grid = {}
    for spec in specs or []:
        if "=" not in spec:
            raise ConfigError(f"grid entry {spec!r} must look like KEY=v1,v2,...")
        key, values = spec.split("=", 1)
        key = ALIASES.get(key.strip(), key.strip())
        grid[key] = [_parse_value(v.strip()) for v in values.split(",") if v.strip()]
        if not grid[key]:
            raise ConfigError(f"grid entry {spec!r} lists no values")
    return grid


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def grid_cells(config: SimConfig, grid: dict) -> list[tuple[dict, SimConfig]]:
    """Cartesian product of the grid; every cell is validated before any runs."""
    keys = list(grid)
    cells = []
    errors = []
    for values in itertools.product(*(grid[k] for k in keys)):
        params = dict(zip(keys, values))
        try:
            cells.append((params, config.replace(**params)))
        except (ConfigError, TypeError) as exc:
            errors.append(f"{params}: {exc}")
    if errors:
        raise ConfigError("invalid sweep cells:\n  " + "\n  ".join(errors))
    return cells


def cell_name(params: dict) -> str:
    return "_".join(f"{k}={v}" for k, v in params.items()) or "base"


def sweep(config: SimConfig, grid: dict, out_dir, repeat: int = 1) -> Path:
    cells = grid_cells(config, grid)
    out = Path(out_dir)
    rows = []
    for idx, (params, cfg) in enumerate(cells):
        for rep_dir in run_repeats(cfg, out / f"cell_{idx:03d}_{cell_name(params)}", repeat):
            summary = json.loads((rep_dir / "summary.json").read_text())
            rows.append({"cell": idx, **params, "seeds": " ".join(map(str, summary["seeds"])),
                         **{m: summary["test"][m] for m in REPORT_METRICS}})
    path = out / "sweep.csv"
    fields = ["cell", *grid, "seeds", *REPORT_METRICS]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    return path


def find_runs(paths) -> list[Path]:
    runs = []
    for p in paths:
        p = Path(p)
        found = [p] if (p / "summary.json").exists() else sorted(s.parent for s in p.rglob("summary.json"))
        runs += found
    if not runs:
        raise ConfigError(f"no completed runs (summary.json) under {', '.join(map(str, paths))}")
    return sorted(set(runs))


def _flatten(d: dict, prefix: str = "") -> dict:
    out = {}
    for k, v in d.items():
        if isinstance(v, dict):
            out.update(_flatten(v, f"{prefix}{k}."))
        else:
            out[prefix + k] = v
    return out


def aggregate(paths) -> list[dict]:
    """Mean and std per (allocator, strategy) across seed repetitions."""
    runs = find_runs(paths)
    configs = [_flatten(json.loads((r / "config.json").read_text())) for r in runs]
    ignored = set(ROW_KEYS) | {"seeds"}
    differing = sorted(k for k in configs[0] if k not in ignored and len({json.dumps(c.get(k)) for c in configs}) > 1)
    if differing:
        raise ConfigError(f"runs have incompatible configs; differing fields: {', '.join(differing)}")
    groups: dict[tuple, list] = {}
    for run, cfg in zip(runs, configs):
        summary = json.loads((run / "summary.json").read_text())
        groups.setdefault(tuple(cfg[k] for k in ROW_KEYS), []).append(summary["test"])
    rows = []
    for key in sorted(groups):
        tests = groups[key]
        row = dict(zip(ROW_KEYS, key), runs=len(tests))
        for m in REPORT_METRICS:
            vals = np.array([t[m] for t in tests], dtype=np.float64)
            row[m + "_mean"] = float(vals.mean())
            row[m + "_std"] = float(vals.std())
        rows.append(row)
    return rows


def format_table(rows: list[dict]) -> str:
    header = f"{'method':<8} {'strategy':<12} {'runs':>4}  {'Accuracy':>18}  {'Trading Volumes':>20}  {'Bottom10 Acc':>18}  {'Bottom10 Vol':>18}"
    lines = [header, "-" * len(header)]
    for r in rows:
        cells = [f"{r[m + '_mean']:.4f}±{r[m + '_std']:.4f}" for m in REPORT_METRICS]
        lines.append(f"{r['allocator']:<8} {r['strategy']:<12} {r['runs']:>4}  {cells[0]:>18}  {cells[1]:>20}  {cells[2]:>18}  {cells[3]:>18}")
    return "\n".join(lines) + "\n"


def report(paths, out_dir) -> tuple[Path, Path]:
    rows = aggregate(paths)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path, txt_path = out / "report.csv", out / "report.txt"
    fields = list(rows[0])
    with open(csv_path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    txt_path.write_text(format_table(rows))
    return csv_path, txt_path
