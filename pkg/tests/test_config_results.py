import json

import numpy as np
import pytest

from bcgm import CODE_VERSION
from bcgm.config import ConfigError, build_plant, load_config, parse_config
from bcgm.results import ResultLog, SeedMismatchError, format_value, read_rows, write_table


def test_minimal_config_defaults():
    cfg = parse_config({"experiment": "converge", "seed": 4})
    assert cfg.T_ini == 8 and cfg.T == 10
    assert cfg.converge.N_values == (128, 256, 512, 1024, 2048, 4096) and cfg.converge.trials == 30
    assert cfg.plant_setup().name == "stable_demo"
    assert cfg.with_seed(9).seed == 9 and cfg.seed == 4


@pytest.mark.parametrize("doc", [
    {"experiment": "converge"},
    {"experiment": "nope", "seed": 1},
    {"experiment": "converge", "seed": 1, "typo": 3},
    {"experiment": "converge", "seed": -1},
    {"experiment": "converge", "seed": 1, "converge": {"N_values": [256, 128]}},
    {"experiment": "converge", "seed": 1, "converge": {"modes": ["double"]}},
    {"experiment": "converge", "seed": 1, "noise": {"kind": "cauchy"}},
    {"experiment": "converge", "seed": 1, "plant": {"name": "unknown_plant"}},
    {"experiment": "converge", "seed": 1, "plant": {"A": [[0.5]], "B": [[1]], "C": [[1]], "Q": [[0.1]]}},
    {"experiment": "converge", "seed": 1, "plant": {"A": [[1.5]], "B": [[1]], "C": [[1]], "Q": [[0.1]],
                                                     "R": [[0.1]]}},
    {"experiment": "tini_gap", "seed": 1, "tini_gap": {"T_ini_values": [2, 3]}},
    {"experiment": "control_bench", "seed": 1},
    {"experiment": "control_bench", "seed": 1, "control_bench": {"controllers": [{"kind": "spc"}]}},
    {"experiment": "control_bench", "seed": 1, "control_bench": {"controllers": [{"kind": "kf_dmpc"}],
                                                                   "steps": 8}},
    {"experiment": "control_bench", "seed": 1, "control_bench": {"controllers": [{"kind": "kf_dmpc", "M": 0}]}},
])
def test_invalid_configs_rejected(doc):
    with pytest.raises(ConfigError):
        parse_config(doc)


def test_explicit_plant_matrices():
    setup = build_plant({"A": [[0.5]], "B": [[1.0]], "C": [[1.0]], "Q": [[0.1]], "R": [[0.2]],
                         "controller": {"excitation": 2.0}})
    # stationary variance of x+ = 0.5 x + u + w with var(u) = 2, var(w) = 0.1
    assert setup.initial_cov[0, 0] == pytest.approx(2.1 / 0.75)


def test_load_config_file_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "none.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(bad)
    good = tmp_path / "good.json"
    good.write_text(json.dumps({"experiment": "control_bench", "seed": 2, "description": "x",
                                "control_bench": {"controllers": [{"kind": "sspc_gen", "N": 100}], "trials": 3}}))
    cfg = load_config(good)
    assert cfg.bench.controllers[0].label == "sspc_gen_N100" and cfg.bench.trials == 3


def test_shipped_configs_parse():
    from pathlib import Path

    configs = sorted((Path(__file__).parents[1] / "scripts" / "configs").glob("*.json"))
    assert configs
    for path in configs:
        load_config(path)


def test_format_value():
    assert format_value(0.1) == "0.10000000000000001"
    assert format_value(True) == "1" and format_value(None) == "" and format_value(float("nan")) == "nan"
    assert float(format_value(np.float64(1 / 3))) == 1 / 3


@pytest.mark.parametrize("fmt", ["csv", "jsonl"])
def test_log_resume_and_seed_guard(tmp_path, fmt):
    path = tmp_path / f"log.{fmt}"
    log = ResultLog(path, ["name", "k", "value"], ("name", "k"), seed=5, fmt=fmt)
    log.write([{"name": "a", "k": 1, "value": 0.5}, {"name": "a", "k": 2, "value": float("nan")}])
    again = ResultLog(path, ["name", "k", "value"], ("name", "k"), seed=5, fmt=fmt)
    assert again.is_done({"name": "a", "k": 1}) and not again.is_done({"name": "b", "k": 1})
    rows = read_rows(path)
    assert len(rows) == 2 and str(rows[0]["seed"]) == "5" and rows[0]["version"] == CODE_VERSION
    with pytest.raises(SeedMismatchError):
        ResultLog(path, ["name", "k", "value"], ("name", "k"), seed=6, fmt=fmt)
    with pytest.raises(KeyError):
        again.write([{"name": "c"}])


def test_log_rejects_other_columns(tmp_path):
    ResultLog(tmp_path / "l.csv", ["a"], ("a",), seed=1).write([{"a": 1}])
    with pytest.raises(ValueError):
        ResultLog(tmp_path / "l.csv", ["b"], ("b",), seed=1)
    with pytest.raises(ValueError):
        ResultLog(tmp_path / "x.txt", ["a"], ("a",), seed=1, fmt="xml")


def test_write_table(tmp_path):
    path = write_table(tmp_path / "t.csv", ["a", "b"], [{"a": 1, "b": 0.25}])
    assert path.read_text() == "a,b\n1,0.25\n"
