import json

import pytest

from conftest import random_feeder_doc
from evflex import cli
from evflex.config import DEFAULTS, ConfigError, build_config, load_config
from evflex.network import bundled_path


@pytest.fixture
def tiny_inputs(tmp_path):
    """A 6-node feeder with one pool, small enough for end-to-end CLI runs."""
    net = random_feeder_doc(2, 6, periods=4)
    pools = {"utilities": {"u": {"alpha": [0.0, 20.0, 80.0], "h": [0.3, 0.6], "b": [1.0, -5.0]}},
             "pools": [{"id": "A", "node": "6", "p_max_kw": 40.0, "price": 0.2, "utility": "u",
                        "tasks": [{"id": "A1", "mean_arrival": 1, "mean_duration_rate": 0.5, "e_min": 5.0,
                                   "e_max": 40.0, "x_max": 22.0}]}]}
    (tmp_path / "net.json").write_text(json.dumps(net))
    (tmp_path / "pools.json").write_text(json.dumps(pools))
    cfg = {"paths": {"network": "net.json", "pools": "pools.json", "out": str(tmp_path / "out")},
           "scenarios": {"count": 3, "seed": 4}, "validation": {"sims": 40},
           "payment": {"count": 2}, "solver": {"heuristic_only": False}}
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    return path


def test_defaults_use_bundled_data():
    cfg = build_config()
    assert cfg.mode == "full" and cfg.network_path.is_file() and cfg.pools_path.is_file()
    assert cfg.doc["scenarios"] == DEFAULTS["scenarios"]


def test_shipped_default_file_matches_defaults():
    assert json.loads(bundled_path("default_config.json").read_text()) == DEFAULTS


def test_flags_beat_file(tiny_inputs):
    cfg = load_config(tiny_inputs, {"scenarios.seed": 99, "beta": 0.3})
    assert cfg.doc["scenarios"] == {"count": 3, "seed": 99}
    assert cfg.beta == 0.3
    assert cfg.network_path == tiny_inputs.parent / "net.json"


def test_beta_table_keys():
    cfg = build_config({"beta": {"16": 0.2, "20:3": 0.7}})
    assert cfg.beta == {"16": 0.2, ("20", 3): 0.7}


@pytest.mark.parametrize("doc", [{"nope": 1}, {"scenarios": {"cnt": 2}}, {"beta": 1.5}, {"beta": "x"},
                                 {"scenarios": {"count": 0}}, {"scenarios": {"seed": -1}}, {"mode": "fly"},
                                 {"schema_version": 9}, {"solver": {"gap_tol": -1}}, {"solver": {"bogus": 1}},
                                 {"build": {"loss_price": -0.1}}, {"paths": {"network": "missing.json"}},
                                 {"scenarios": 3}, {"validation": {"sims": True}}])
def test_invalid_configs(doc):
    with pytest.raises(ConfigError):
        build_config(doc)


def test_unreadable_config_files(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.json")
    (tmp_path / "bad.json").write_text("{")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "bad.json")
    (tmp_path / "list.json").write_text("[]")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "list.json")


def _error(capsys):
    return json.loads(capsys.readouterr().err.strip().splitlines()[-1])["error"]


def test_cli_config_error_is_json(tmp_path, capsys):
    (tmp_path / "c.json").write_text(json.dumps({"beta": 3}))
    assert cli.main(["plan", "--config", str(tmp_path / "c.json"), "-q"]) == cli.EXIT_CONFIG
    err = _error(capsys)
    assert err["stage"] == "config" and err["exit_code"] == 2


def test_cli_input_error(tiny_inputs, capsys):
    pools = json.loads((tiny_inputs.parent / "pools.json").read_text())
    pools["pools"][0]["node"] = "99"
    (tiny_inputs.parent / "pools.json").write_text(json.dumps(pools))
    assert cli.main(["plan", "--config", str(tiny_inputs), "-q"]) == cli.EXIT_CONFIG
    assert _error(capsys)["stage"] == "inputs"


def test_cli_infeasible_exit_code(tiny_inputs, capsys):
    net = json.loads((tiny_inputs.parent / "net.json").read_text())
    for b in net["branches"]:
        b["i_max"] = 1e-3  # no load can be carried
    (tiny_inputs.parent / "net.json").write_text(json.dumps(net))
    assert cli.main(["plan", "--config", str(tiny_inputs), "-q"]) == cli.EXIT_INFEASIBLE
    assert _error(capsys)["type"] in ("solver", "infeasible")


def test_cli_bad_beta_flag():
    with pytest.raises(SystemExit):
        cli.main(["plan", "--beta", "{oops"])


def test_cli_full_run_writes_everything(tiny_inputs):
    out = tiny_inputs.parent / "out"
    assert cli.main(["full", "--config", str(tiny_inputs), "-q"]) == cli.EXIT_OK
    names = {p.name for p in out.iterdir()}
    for f in ("plan.json", "areas.csv", "areas.json", "base.json", "base_trace.csv", "validation.json",
              "validation_sweep.csv", "payments.csv", "manifest.json", "areas.png", "validation.png"):
        assert f in names, f
    man = json.loads((out / "manifest.json").read_text())
    assert man["stages"] == ["base", "plan", "validate", "payment", "report"]
    assert set(man["files"]) == names - {"manifest.json"}
    plan = json.loads((out / "plan.json").read_text())
    assert plan["exactness"]["max_gap"] <= 1e-6 and plan["limits"]["met"]


def test_cli_report_only_renders_existing(tiny_inputs):
    out = tiny_inputs.parent / "out"
    assert cli.main(["base", "--config", str(tiny_inputs), "-q"]) == cli.EXIT_OK
    assert cli.main(["report", "--config", str(tiny_inputs), "-q"]) == cli.EXIT_OK
    assert (out / "base_case.png").is_file() and not (out / "areas.png").exists()


def test_cli_invalid_beta_writes_nothing(tmp_path, capsys):
    out = tmp_path / "never"
    assert cli.main(["plan", "--beta", "1.5", "--out", str(out), "-q"]) == cli.EXIT_CONFIG
    assert not out.exists()
    assert _error(capsys)["type"] == "config"


def test_cli_bundled_plan_area_rows(tmp_path):
    out = tmp_path / "bundled"
    assert cli.main(["plan", "--scenarios", "3", "--beta", "0.9", "--out", str(out), "-q"]) == cli.EXIT_OK
    rows = (out / "areas.csv").read_text().strip().splitlines()
    assert len(rows) == 1 + 4 * 24
