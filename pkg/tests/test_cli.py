import json
import subprocess
import sys

import numpy as np
import pytest

from bcgm import CODE_VERSION
from bcgm.cli import EXIT_CONFIG, EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, main


def run(argv, capsys):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def write_config(path, doc):
    path.write_text(json.dumps(doc))
    return path


def test_pipeline_with_noise_free_predictor(tmp_path, capsys):
    cfg = write_config(tmp_path / "quiet.json", {"experiment": "converge", "seed": 1,
                                                 "noise": {"process": 0.0, "measurement": 0.0}})
    code, out, _ = run(["simulate", "--config", cfg, "--out", tmp_path, "--length", 300], capsys)
    assert code == EXIT_OK
    traj = out.strip()
    assert run(["build-library", traj, "--out", tmp_path], capsys)[0] == EXIT_OK
    code, out, _ = run(["fit", tmp_path / "library", "--out", tmp_path], capsys)
    assert code == EXIT_OK
    z = ",".join(["0"] * 8 + ["1"] * 8 + ["0.5"] * 10)
    code, out, _ = run(["predict", tmp_path / "predictor", "--z", z, "--samples", 3, "--seed", 2], capsys)
    assert code == EXIT_OK
    result = json.loads(out)
    assert len(result["mean"]) == 10 and len(result["samples"]) == 3
    np.testing.assert_array_equal(np.array(result["cov"]), 0.0)
    np.testing.assert_allclose(np.array(result["samples"]), np.array(result["mean"])[None, :].repeat(3, 0))


def test_converge_schema(tmp_path, capsys):
    cfg = write_config(tmp_path / "c.json", {"experiment": "converge", "seed": 3,
                                             "converge": {"N_values": [64, 128], "trials": 2}})
    code, out, _ = run(["converge", "--config", cfg, "--out", tmp_path], capsys)
    assert code == EXIT_OK and "slope" in out
    lines = (tmp_path / "converge.csv").read_text().splitlines()
    header = lines[0].split(",")
    assert header[:6] == ["experiment", "mode", "N", "trial", "err_mean", "err_cov"]
    assert header[-2:] == ["seed", "version"] and lines[1].endswith(CODE_VERSION)
    assert len(lines) == 5
    code, out, _ = run(["plot", tmp_path / "converge.csv", "--output", tmp_path / "c.svg"], capsys)
    assert code == EXIT_OK and (tmp_path / "c.svg").read_text().lstrip().startswith("<?xml")


def test_jsonl_output_and_flags_after_subcommand(tmp_path, capsys):
    code, _, _ = run(["tini-gap", "--seed", 4, "--out", tmp_path, "--format", "jsonl"], capsys)
    assert code == EXIT_OK
    rows = [json.loads(line) for line in (tmp_path / "tini_gap.jsonl").read_text().splitlines()]
    assert len(rows) == 6 * 29 and rows[0]["seed"] == 4


@pytest.mark.parametrize("argv,expected", [
    ([], EXIT_USAGE),
    (["frobnicate"], EXIT_USAGE),
    (["predict"], EXIT_USAGE),
    (["converge", "--threads", "many"], EXIT_USAGE),
    (["converge"], EXIT_CONFIG),
    (["converge", "--config", "/nonexistent/cfg.json"], EXIT_CONFIG),
    (["fit", "/nonexistent/library"], EXIT_RUNTIME),
])
def test_exit_codes(argv, expected, capsys, tmp_path):
    code, _, err = run(argv + ["--out", tmp_path] if argv and argv[0] != "frobnicate" else argv, capsys)
    assert code == expected
    assert err.strip() and (expected != EXIT_USAGE or "usage" in err)
    if expected != EXIT_USAGE:
        assert len(err.strip().splitlines()) == 1


def test_bad_conditioning_vector(tmp_path, capsys, demo_library):
    from bcgm.cgm import fit
    from bcgm.storage import save_predictor

    save_predictor(fit(demo_library), tmp_path / "p")
    assert run(["predict", tmp_path / "p", "--z", "1,2,3"], capsys)[0] == EXIT_USAGE
    assert run(["predict", tmp_path / "p", "--z", "a,b"], capsys)[0] == EXIT_USAGE


def test_config_for_another_experiment(tmp_path, capsys):
    cfg = write_config(tmp_path / "c.json", {"experiment": "converge", "seed": 3})
    assert run(["tini-gap", "--config", cfg, "--out", tmp_path], capsys)[0] == EXIT_CONFIG


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "bcgm.cli", "bogus"], capture_output=True, text=True)
    assert proc.returncode == EXIT_USAGE and "usage" in proc.stderr
    proc = subprocess.run([sys.executable, "-m", "bcgm.cli", "--version"], capture_output=True, text=True)
    assert proc.returncode == 0 and CODE_VERSION in proc.stdout
