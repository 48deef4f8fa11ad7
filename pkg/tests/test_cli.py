import csv
import json

import numpy as np
import pytest

from flmarket import cli, experiments
from flmarket.config import SimConfig, load_config, save_config
from flmarket.core import ConfigError

SMALL = dict(n_clients=5, total_rounds=8, training_rounds=8, copies_k=2, seller_ratio=0.6, d_repr=4)


def write_cfg(path, **kw):
    data = dict(SMALL)
    data.update(kw)
    path.write_text(json.dumps(data))
    return str(path)


def test_empty_config_gives_defaults(tmp_path):
    p = tmp_path / "c.json"
    p.write_text("")
    cfg = load_config(p)
    assert (cfg.copies_k, cfg.seller_ratio, cfg.alpha, cfg.beta, cfg.epsilon) == (5, 0.7, 5e-4, 5e-4, 0.1)
    assert cfg.eta == 0.005 and cfg.training_rounds == 200
    p.write_text("{}")
    assert load_config(p) == cfg


@pytest.mark.parametrize("data, where", [({"copies": 3}, "copies"), ({"synthetic": {"widht": 2}}, "synthetic.widht")])
def test_unknown_keys_rejected(tmp_path, data, where):
    p = tmp_path / "c.json"
    p.write_text(json.dumps(data))
    with pytest.raises(ConfigError, match=where):
        load_config(p)


def test_bad_json_and_missing_file(tmp_path):
    p = tmp_path / "c.json"
    p.write_text("{nope")
    with pytest.raises(ConfigError, match="not valid JSON"):
        load_config(p)
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.json")


def test_copy_limit_rejected_with_constraint(tmp_path, capsys):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"n_clients": 100, "copies_k": 100}))
    with pytest.raises(ConfigError, match="k < N"):
        load_config(p)
    assert cli.main(["run", "--config", str(p), "--out", str(tmp_path / "o")]) == 2
    assert "k < N" in capsys.readouterr().err
    assert not (tmp_path / "o").exists()


def test_seller_ratio_rejected_with_constraint(tmp_path, capsys):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"seller_ratio": 1.0}))
    with pytest.raises(ConfigError, match="random seller authorization"):
        load_config(p)
    assert cli.main(["run", "--config", str(p), "--out", str(tmp_path / "o")]) == 2
    assert "random seller authorization" in capsys.readouterr().err


def test_config_roundtrip(tmp_path):
    cfg = SimConfig().replace(k=3, ratio=0.4, **{"synthetic.width": 4.0, "mlp.hidden": 32})
    save_config(cfg, tmp_path / "c.json")
    assert load_config(tmp_path / "c.json") == cfg


def test_seeds_must_be_distinct():
    with pytest.raises(ConfigError, match="distinct"):
        SimConfig(seeds=(1, 1, 2)).validate()


def test_run_writes_resolved_config_and_summary(tmp_path):
    out = tmp_path / "run"
    assert cli.main(["run", "--config", write_cfg(tmp_path / "c.json"), "--out", str(out), "--seeds", "4,5,6"]) == 0
    rep = out / "rep_000"
    cfg = load_config(rep / "config.json")
    assert cfg.seeds == (4, 5, 6) and cfg.n_clients == 5
    summary = json.loads((rep / "summary.json").read_text())
    assert summary["schema"] == "flmarket.summary/1" and summary["seeds"] == [4, 5, 6]
    for name in ("metrics_test.csv", "ledger_test.jsonl", "report.txt"):
        assert (rep / name).exists() or (out / name).exists()


def test_repeat_shifts_seeds(tmp_path):
    out = tmp_path / "run"
    cli.main(["run", "--config", write_cfg(tmp_path / "c.json", allocator="gsp"), "--out", str(out), "--repeat", "2"])
    seeds = [json.loads((out / f"rep_{r:03d}" / "summary.json").read_text())["seeds"] for r in range(2)]
    assert seeds == [[1, 2, 3], [1001, 1002, 1003]]


def test_bad_seeds_flag(tmp_path):
    with pytest.raises(SystemExit):
        cli.main(["run", "--out", str(tmp_path), "--seeds", "1,2"])


def test_sweep_four_cells_and_determinism(tmp_path):
    cfg = write_cfg(tmp_path / "c.json", allocator="gsp")
    args = ["sweep", "--config", cfg, "--grid", "k=1,3", "--grid", "seller_ratio=0.4,0.6"]
    assert cli.main(args + ["--out", str(tmp_path / "a")]) == 0
    assert cli.main(args + ["--out", str(tmp_path / "b")]) == 0
    cells = sorted(p.name for p in (tmp_path / "a").iterdir() if p.is_dir())
    assert len(cells) == 4
    rows = list(csv.DictReader(open(tmp_path / "a" / "sweep.csv")))
    assert len(rows) == 4 and {(r["copies_k"], r["seller_ratio"]) for r in rows} == {
        ("1", "0.4"), ("1", "0.6"), ("3", "0.4"), ("3", "0.6")}
    assert (tmp_path / "a" / "sweep.csv").read_bytes() == (tmp_path / "b" / "sweep.csv").read_bytes()


def test_sweep_k_changes_volume(tmp_path):
    cfg = SimConfig().replace(**dict(SMALL, n_clients=6, allocator="gsp", total_rounds=20))
    experiments.sweep(cfg, experiments.parse_grid(["k=1,5"]), tmp_path)
    rows = list(csv.DictReader(open(tmp_path / "sweep.csv")))
    assert rows[0]["cumulative_volume"] != rows[1]["cumulative_volume"]


def test_sweep_rejects_invalid_cell_before_running(tmp_path):
    cfg = write_cfg(tmp_path / "c.json")
    code = cli.main(["sweep", "--config", cfg, "--out", str(tmp_path / "s"), "--grid", "k=2,5"])
    assert code == 2
    assert not (tmp_path / "s").exists()


def test_parse_grid():
    assert experiments.parse_grid(["k=3,5", "utility=uniform01,absnormal01"]) == {
        "copies_k": [3, 5], "utility_distribution": ["uniform01", "absnormal01"]}
    with pytest.raises(ConfigError):
        experiments.parse_grid(["k"])


def test_report_mean_std_and_single_run(tmp_path):
    cfg = SimConfig().replace(**dict(SMALL, allocator="gsp"))
    experiments.run_repeats(cfg, tmp_path / "many", repeat=3)
    experiments.run_repeats(cfg, tmp_path / "one", repeat=1)
    [row] = experiments.aggregate([tmp_path / "many"])
    vols = [json.loads((tmp_path / "many" / f"rep_{r:03d}" / "summary.json").read_text())["test"]["cumulative_volume"]
            for r in range(3)]
    assert row["runs"] == 3
    assert row["cumulative_volume_mean"] == pytest.approx(sum(vols) / 3)
    assert row["cumulative_volume_std"] == pytest.approx(float(np.std(vols)))
    [single] = experiments.aggregate([tmp_path / "one"])
    assert all(single[m + "_std"] == 0.0 for m in experiments.REPORT_METRICS)


def test_report_rejects_incompatible_runs(tmp_path, capsys):
    base = SimConfig().replace(**dict(SMALL, allocator="gsp"))
    experiments.run_repeats(base, tmp_path / "k2")
    experiments.run_repeats(base.replace(k=3), tmp_path / "k3")
    with pytest.raises(ConfigError, match="copies_k"):
        experiments.aggregate([tmp_path / "k2", tmp_path / "k3"])
    assert cli.main(["report", str(tmp_path / "k2"), str(tmp_path / "k3")]) == 2


def test_report_groups_by_allocator_and_is_idempotent(tmp_path, capsys):
    out = tmp_path / "cmp"
    assert cli.main(["compare", "--config", write_cfg(tmp_path / "c.json"), "--out", str(out)]) == 0
    table = capsys.readouterr().out
    for name in ("rl", "gsp", "random"):
        assert name in table
    first = [(out / f).read_bytes() for f in ("report.csv", "report.txt")]
    assert cli.main(["report", str(out)]) == 0
    assert [(out / f).read_bytes() for f in ("report.csv", "report.txt")] == first
    rows = list(csv.DictReader(open(out / "report.csv")))
    assert sorted(r["allocator"] for r in rows) == ["gsp", "random", "rl"]


def test_report_without_runs(tmp_path):
    assert cli.main(["report", str(tmp_path)]) == 2


def test_runtime_error_exit_code(tmp_path):
    cfg = write_cfg(tmp_path / "c.json", learner="mlp", mlp={"dataset": "csv", "csv_path": str(tmp_path / "nope.csv")})
    assert cli.main(["run", "--config", cfg, "--out", str(tmp_path / "o")]) == 3
