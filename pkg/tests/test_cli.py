from __future__ import annotations

import subprocess
import sys

import pytest

from mdis import experiments as ex
from mdis.cli import EXIT_INVALID, EXIT_OK, main


def _kv(text: str) -> dict:
    return dict(line.split("=", 1) for line in text.splitlines() if "=" in line and " " not in line)


def test_constants(capsys):
    assert main(["constants", "--d", "1"]) == EXIT_OK
    out = _kv(capsys.readouterr().out)
    assert f"{float(out['kappa']):.3f}" == "0.408"
    assert f"{float(out['L_hat']):.2f}" == "9.84"


def test_constants_flat_limit(capsys):
    main(["constants", "--d", "1e9"])
    assert abs(float(_kv(capsys.readouterr().out)["kappa"]) - 1.0) <= 1e-6


def test_constants_node_independence(capsys):
    main(["constants", "--d", "1", "--nodes", "4096"])
    a = _kv(capsys.readouterr().out)
    main(["constants", "--d", "1", "--nodes", "8192"])
    assert _kv(capsys.readouterr().out) == a


def test_constants_bad_nodes(capsys):
    assert main(["constants", "--d", "1", "--nodes", "7"]) == EXIT_INVALID
    assert "n_nodes" in capsys.readouterr().err


@pytest.mark.parametrize("example, eps, delta", [(1, 0.5, 0.5), (2, 0.125, 0.04), (3, 0.0625, 0.015)])
def test_verify_passes(capsys, example, eps, delta):
    assert main(["verify-subsolution", "--example", str(example), "--epsilon", str(eps),
                 "--delta", str(delta)]) == EXIT_OK
    out = _kv(capsys.readouterr().out)
    assert out["passed"] == "1"
    assert float(out["min_residual"]) >= -1e-8


def test_verify_fails_for_beta_level(capsys):
    code = main(["verify-subsolution", "--example", "3", "--epsilon", "0.125", "--delta", "0.04",
                 "--variant", "md_beta_level"])
    assert code == EXIT_INVALID
    assert _kv(capsys.readouterr().out)["passed"] == "0"


def test_run_rejects_ld_for_example1(capsys):
    assert main(["run", "--example", "1", "--method", "ld", "--epsilon", "0.5", "--delta", "0.5"]) == EXIT_INVALID
    assert "closed-form" in capsys.readouterr().err


def test_run_writes_row(tmp_path, capsys):
    out = tmp_path / "r.csv"
    code = main(["run", "--example", "1", "--method", "nmc", "--epsilon", "0.5", "--delta", "0.5",
                 "--n-samples", "200", "--seed", "3", "--t-final", "0.1", "--out", str(out)])
    assert code == EXIT_OK
    rows = ex.read_rows(out)
    assert rows[0]["method"] == "nmc" and rows[0]["seed"] == "3" and rows[0]["n_samples"] == "200"
    assert "theta=" in capsys.readouterr().out


def test_run_from_config_file(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("example = 3\nmethod = md\nepsilon = 0.25\ndelta = 0.1\nn_samples = 50\nt = 0.01\n")
    out = tmp_path / "r.csv"
    assert main(["run", "--config", str(cfg), "--seed", "4", "--out", str(out)]) == EXIT_OK
    row = ex.read_rows(out)[0]
    assert row["example"] == "3" and row["seed"] == "4" and row["subsolution_variant"] == "md_matched"


def test_table_schedule_subset(tmp_path):
    out = tmp_path / "t.csv"
    code = main(["table", "--rows", "table4", "--max-rows", "1", "--methods", "nmc,md", "--n-samples", "50",
                 "--t-final", "0.02", "--out", str(out)])
    assert code == EXIT_OK
    rows = ex.read_rows(out)
    assert [(r["epsilon"], r["method"]) for r in rows] == [("0.5", "nmc"), ("0.5", "md")]
    assert rows[0]["regime"] == "2"


def test_table_rows_file(tmp_path):
    rows = tmp_path / "rows.txt"
    rows.write_text("0.5 0.3\n")
    out = tmp_path / "t.csv"
    assert main(["table", "--example", "2", "--rows", str(rows), "--methods", "md", "--n-samples", "20",
                 "--t-final", "0.02", "--out", str(out)]) == EXIT_OK
    assert ex.read_rows(out)[0]["example"] == "2"
    assert main(["table", "--rows", str(rows)]) == EXIT_INVALID


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "mdis", "constants", "--d", "1"], capture_output=True, text=True)
    assert res.returncode == 0 and "kappa=" in res.stdout
    res = subprocess.run([sys.executable, "-m", "mdis", "run", "--example", "2", "--method", "ld",
                          "--epsilon", "0.5", "--delta", "0.5"], capture_output=True, text=True)
    assert res.returncode == 1
