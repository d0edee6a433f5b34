import json
from pathlib import Path

import pytest

from affordance import report
from affordance.cli import EXIT_CONFIG, EXIT_DATA, main
from affordance.config import RunConfig, dump_config, load_config, loads_config
from affordance.errors import ConfigError, SchemaError

SMALL = """
[world]
n_episodes = 6

[model]
epochs = 1

[paradigm]
embedding = pixel
n0 = 10
ns = 10
k = 10
j = 1
n_queries = 4
n_imitation = 20
bc_k = 10
bc_epochs = 5
bc_runs = 2
q = 40
dqn_steps = 12
"""


def tree_bytes(root):
    root = Path(root)
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


# -------------------------------------------------------------------------- config


def test_config_round_trip():
    cfg = RunConfig().with_overrides(seed=7, out_dir="x", goal="drawer:<2.5")
    text = dump_config(cfg)
    back = loads_config(text)
    assert back == cfg and dump_config(back) == text


def test_config_unknown_key_and_section():
    with pytest.raises(ConfigError):
        loads_config("[world]\nbogus = 1\n")
    with pytest.raises(ConfigError):
        loads_config("[extra]\na = 1\n")
    with pytest.raises(ConfigError):
        loads_config("[model]\nepochs = many\n")


def test_config_digest_ignores_out_dir():
    a = RunConfig().with_overrides(out_dir="a")
    b = RunConfig().with_overrides(out_dir="b")
    assert a.digest() == b.digest() != a.with_overrides(seed=1).digest()


def test_config_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "none.ini")


# -------------------------------------------------------------------------- report


def _stats(path, rows):
    report.write_csv(path, report.STATS_COLUMNS, rows)
    return path


def test_report_single_row(tmp_path):
    s = _stats(tmp_path / "s.csv", [["r0", "explore", "success_rate", 0, 0.5]])
    assert main(["report", str(s), "--out", str(tmp_path / "o")]) == 0
    svg = (tmp_path / "o" / "success_rate.svg").read_text()
    assert svg.startswith("<?xml") or svg.startswith("<svg")
    assert "<circle" in svg


def test_report_deterministic(tmp_path):
    rows = [["r0", "goal", "success_rate", i, 0.1 * i] for i in range(3)]
    s = _stats(tmp_path / "s.csv", rows)
    main(["report", str(s), "--out", str(tmp_path / "a")])
    main(["report", str(s), "--out", str(tmp_path / "b")])
    assert tree_bytes(tmp_path / "a") == tree_bytes(tmp_path / "b")


def test_report_missing_column(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("run_id,paradigm,metric,step\nr,g,m,0\n")
    with pytest.raises(SchemaError, match="value"):
        report.read_stats(p)
    assert main(["report", str(p), "--out", str(tmp_path / "o")]) == EXIT_DATA


def test_summary_takes_last_step():
    rows = [{"run_id": "a", "paradigm": "p", "metric": "m", "step": s, "value": v} for s, v in [(0, 1.0), (2, 3.0)]]
    rows.append({"run_id": "b", "paradigm": "p", "metric": "m", "step": 1, "value": 5.0})
    assert report.summary_rows(rows) == [["p", "m", 2, "4", "3", "5"]]


# -------------------------------------------------------------------------- CLI


@pytest.fixture(scope="module")
def small_cfg(tmp_path_factory):
    p = tmp_path_factory.mktemp("cfg") / "small.ini"
    p.write_text(SMALL)
    return p


def test_gen_data_twice_identical(tmp_path, small_cfg):
    for name in ("a", "b"):
        assert main(["gen-data", "--config", str(small_cfg), "--seed", "3", "--out", str(tmp_path / name)]) == 0
    assert tree_bytes(tmp_path / "a") == tree_bytes(tmp_path / "b")
    manifest = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert manifest["seed"] == 3 and manifest["n_episodes"] == 6


def test_gen_data_zero_episodes(tmp_path):
    cfg = tmp_path / "z.ini"
    cfg.write_text("[world]\nn_episodes = 0\n")
    assert main(["gen-data", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    assert json.loads((tmp_path / "o" / "manifest.json").read_text())["n_episodes"] == 0


def test_gen_data_bad_path(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert main(["gen-data", "--out", str(blocker / "sub")]) == EXIT_DATA


def test_exit_codes(tmp_path, small_cfg):
    bad = tmp_path / "bad.ini"
    bad.write_text("[world]\nnope = 1\n")
    assert main(["gen-data", "--config", str(bad), "--out", str(tmp_path / "o")]) == EXIT_CONFIG
    assert main(["extract", str(tmp_path / "missing"), "--out", str(tmp_path / "o")]) == EXIT_DATA
    assert main(["train", str(tmp_path / "missing"), "--out", str(tmp_path / "o")]) == EXIT_DATA


def test_pipeline_deterministic(tmp_path, small_cfg, capsys):
    cfg = ["--config", str(small_cfg), "--seed", "1"]
    for run in ("a", "b"):
        root = tmp_path / run
        assert main(["gen-data", *cfg, "--out", str(root / "data")]) == 0
        assert main(["extract", str(root / "data"), *cfg, "--out", str(root / "ext")]) == 0
        assert main(["train", str(root / "ext"), *cfg, "--out", str(root / "model")]) == 0
        stats = []
        for mode in ("explore", "goal", "imitate", "dqn"):
            out = root / mode
            assert main(["paradigm", str(root / "model" / "model.ckpt"), "--mode", mode, *cfg, "--out", str(out)]) == 0
            stats.append(str(out / "stats.csv"))
        assert main(["report", *stats, *cfg, "--out", str(root / "report")]) == 0
    counts = json.loads((tmp_path / "a" / "ext" / "counts.json").read_text())
    assert counts["extracted"] + counts["discarded_no_contact"] + counts["discarded_out_of_frame"] \
        + counts["discarded_other"] == 6
    a, b = tree_bytes(tmp_path / "a"), tree_bytes(tmp_path / "b")
    assert a.keys() == b.keys()
    for key in a:
        assert a[key] == b[key], key
    # wrong goal object is a configuration error
    ckpt = str(tmp_path / "a" / "model" / "model.ckpt")
    assert main(["paradigm", ckpt, "--mode", "goal", "--goal", "cupboard:3", "--out", str(tmp_path / "x")]) \
        == EXIT_CONFIG
