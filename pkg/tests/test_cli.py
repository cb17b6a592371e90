"""End-to-end checks of the command-line runner.

Commands are invoked through main() with an argv list; each writes into its
own tmp_path subdirectory.  The heavyweight physics is exercised elsewhere —
here the configs are small and the focus is config validation, exit codes,
artifact layout, and byte-level reproducibility.
"""

import csv
import hashlib
import json
import os

import numpy as np
import pytest

from geqlab.cli import ConfigError, main
from geqlab.moments import load_moments
from geqlab.replica_solver import SWEEP_CSV_HEADER


def write_config(tmp_path, cfg, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


def run_cli(command, config_path, out_dir, *extra):
    return main([command, "--config", config_path, "--out", str(out_dir), *extra])


def read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def base_identity_config(D=32):
    return {
        "generator": {"type": "identity", "D": D},
        "teacher": {"M": 1, "kind": "erf"},
        "student": {"K": 1, "kind": "erf"},
        "moments": {"exact": True},
        "seeds": {"master": 7},
    }


# ---------------------------------------------------------------------------
# config validation and exit codes


def test_unknown_section_rejected(tmp_path, capsys):
    cfg = {"generator": {"type": "identity", "D": 4}, "grnerator": {},
           "seeds": {"master": 0}, "moments": {"exact": True}}
    code = run_cli("moments", write_config(tmp_path, cfg), tmp_path / "out")
    assert code == 2
    assert "grnerator" in capsys.readouterr().err


def test_unknown_key_in_section_rejected(tmp_path, capsys):
    cfg = base_identity_config()
    cfg["ode"] = {"eta": 0.2, "t_max": 1.0, "dtt": 0.01}
    code = run_cli("ode", write_config(tmp_path, cfg), tmp_path / "out")
    assert code == 2
    err = capsys.readouterr().err
    assert "dtt" in err and "ode" in err


def test_missing_section_rejected(tmp_path, capsys):
    cfg = base_identity_config()
    cfg["ode"] = {"eta": 0.2, "t_max": 1.0}
    del cfg["teacher"]
    code = run_cli("ode", write_config(tmp_path, cfg), tmp_path / "out")
    assert code == 2
    assert "teacher" in capsys.readouterr().err


def test_invalid_json_rejected(tmp_path, capsys):
    path = tmp_path / "broken.json"
    path.write_text("{not json")
    code = run_cli("moments", str(path), tmp_path / "out")
    assert code == 2
    assert "JSON" in capsys.readouterr().err


def test_missing_master_seed_rejected(tmp_path, capsys):
    cfg = base_identity_config()
    del cfg["seeds"]
    code = run_cli("moments", write_config(tmp_path, cfg), tmp_path / "out")
    assert code == 2
    assert "seed" in capsys.readouterr().err


def test_empty_alpha_grid_rejected(tmp_path, capsys):
    cfg = base_identity_config()
    cfg["moments"] = {"n_samples": 400}
    cfg["teacher"]["kind"] = "linear"
    cfg["replica"] = {"alpha_grid": [], "lambda": 0.01}
    cfg["erm"] = {"lambda": 0.01, "seeds": 1, "Ntilde": 32,
                  "feature_kind": "erf"}
    code = run_cli("replica", write_config(tmp_path, cfg), tmp_path / "out")
    assert code == 2
    assert "alpha_grid" in capsys.readouterr().err


def test_unknown_activation_rejected(tmp_path, capsys):
    cfg = base_identity_config()
    cfg["teacher"]["kind"] = "swish"
    cfg["ode"] = {"eta": 0.2, "t_max": 1.0}
    code = run_cli("ode", write_config(tmp_path, cfg), tmp_path / "out")
    assert code == 2
    assert "swish" in capsys.readouterr().err


def test_negative_lambda_rejected(tmp_path):
    cfg = base_identity_config()
    cfg["moments"] = {"n_samples": 400}
    cfg["replica"] = {"alpha_grid": [0.5], "lambda": -1.0}
    cfg["erm"] = {"lambda": 0.01, "seeds": 1, "Ntilde": 16,
                  "feature_kind": "erf"}
    assert run_cli("replica", write_config(tmp_path, cfg), tmp_path / "out") == 2


def test_bad_threads_rejected(tmp_path):
    cfg = base_identity_config()
    code = run_cli("moments", write_config(tmp_path, cfg), tmp_path / "out",
                   "--threads", "0")
    assert code == 2


def test_exact_moments_need_identity_generator(tmp_path, capsys):
    cfg = base_identity_config()
    cfg["generator"] = {"type": "single_layer", "D": 8, "N": 16, "kind": "sign"}
    code = run_cli("moments", write_config(tmp_path, cfg), tmp_path / "out")
    assert code == 2
    assert "exact" in capsys.readouterr().err


def test_unwritable_output_dir_is_io_error(tmp_path):
    blocker = tmp_path / "blocker"
    blocker.write_text("")
    cfg = base_identity_config()
    code = run_cli("moments", write_config(tmp_path, cfg), blocker / "sub")
    assert code == 4


# ---------------------------------------------------------------------------
# moments command


def test_moments_identity_exact_artifacts(tmp_path):
    out = tmp_path / "out"
    code = run_cli("moments", write_config(tmp_path, base_identity_config(12)), out)
    assert code == 0

    ms = load_moments(out / "moments.geqmat")
    np.testing.assert_array_equal(ms.Omega, np.eye(12))

    header, rows = read_csv(out / "spectrum.csv")
    assert header == ["index", "rho"]
    assert len(rows) == 12
    assert all(float(r[1]) == 1.0 for r in rows)

    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["command"] == "moments"
    assert set(manifest["artifacts"]) == {
        "moments.geqmat", "spectrum.csv", "resolved_config.json"}
    for name, digest in manifest["artifacts"].items():
        actual = hashlib.sha256((out / name).read_bytes()).hexdigest()
        assert actual == digest


def test_moments_rerun_is_byte_identical(tmp_path):
    cfg = {
        "generator": {"type": "single_layer", "D": 8, "N": 16, "kind": "sign"},
        "moments": {"n_samples": 400},
        "seeds": {"master": 3},
    }
    path = write_config(tmp_path, cfg)
    out1, out2 = tmp_path / "a", tmp_path / "b"
    assert run_cli("moments", path, out1) == 0
    assert run_cli("moments", path, out2) == 0
    for name in ("moments.geqmat", "spectrum.csv", "resolved_config.json",
                 "manifest.json"):
        assert (out1 / name).read_bytes() == (out2 / name).read_bytes()


def test_seed_flag_overrides_config(tmp_path):
    cfg = {
        "generator": {"type": "single_layer", "D": 8, "N": 16, "kind": "sign"},
        "moments": {"n_samples": 400},
        "seeds": {"master": 3},
    }
    path = write_config(tmp_path, cfg)
    out1, out2 = tmp_path / "a", tmp_path / "b"
    assert run_cli("moments", path, out1) == 0
    assert run_cli("moments", path, out2, "--seed", "99") == 0
    resolved = json.loads((out2 / "resolved_config.json").read_text())
    assert resolved["seeds"]["master"] == 99
    assert (out1 / "moments.geqmat").read_bytes() != (out2 / "moments.geqmat").read_bytes()


# ---------------------------------------------------------------------------
# dynamics commands


def test_ode_command_writes_trajectory(tmp_path):
    cfg = base_identity_config()
    cfg["ode"] = {"eta": 0.2, "t_max": 0.5, "dt": 0.01, "record_every": 0.1}
    out = tmp_path / "out"
    assert run_cli("ode", write_config(tmp_path, cfg), out) == 0
    header, rows = read_csv(out / "ode_trajectory.csv")
    assert header == ["t", "pmse", "Q11", "R11", "v1"]
    assert len(rows) == 6
    assert float(rows[0][0]) == 0.0
    assert all(np.isfinite(float(cell)) for row in rows for cell in row)


def test_sgd_command_writes_trajectory(tmp_path):
    cfg = base_identity_config()
    cfg["sgd"] = {"eta": 0.2, "steps": 100, "n_test": 500}
    out = tmp_path / "out"
    assert run_cli("sgd", write_config(tmp_path, cfg), out) == 0
    header, rows = read_csv(out / "sgd_trajectory.csv")
    assert header[:2] == ["t", "pmse"]
    assert header[-2:] == ["pmse_mc", "pmse_mc_stderr"]
    assert float(rows[-1][0]) == pytest.approx(100 / 32)


def test_compare_command_aligns_grids_and_reports_gaps(tmp_path):
    cfg = base_identity_config(64)
    cfg["ode"] = {"eta": 0.3, "dt": 0.01}
    cfg["sgd"] = {"eta": 0.3, "steps": 320, "n_test": 2000}
    out = tmp_path / "out"
    assert run_cli("compare", write_config(tmp_path, cfg), out) == 0

    _, ode_rows = read_csv(out / "ode_trajectory.csv")
    _, sgd_rows = read_csv(out / "sgd_trajectory.csv")
    assert len(ode_rows) == len(sgd_rows)
    for ro, rs in zip(ode_rows, sgd_rows):
        assert float(ro[0]) == pytest.approx(float(rs[0]), abs=0.011)

    summary = json.loads((out / "compare_summary.json").read_text())
    assert set(summary) == {"n_points", "t_max", "max_abs_pmse_gap",
                            "max_abs_gap_Q", "max_abs_gap_R", "max_abs_gap_v"}
    assert summary["t_max"] == pytest.approx(5.0)
    # single-unit erf on a 64-dim identity generator: the deterministic
    # description already tracks one run to a few times 1/sqrt(N)
    assert summary["max_abs_pmse_gap"] < 0.5


def test_compare_rejects_mismatched_learning_rates(tmp_path, capsys):
    cfg = base_identity_config()
    cfg["ode"] = {"eta": 0.1}
    cfg["sgd"] = {"eta": 0.2, "steps": 50}
    code = run_cli("compare", write_config(tmp_path, cfg), tmp_path / "out")
    assert code == 2
    assert "eta" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# fixed-point and fitting commands


def ridge_compare_config(tmp_path):
    return {
        "generator": {"type": "identity", "D": 32},
        "teacher": {"M": 1, "kind": "linear"},
        "moments": {"n_samples": 2000},
        "replica": {"alpha_grid": [0.5], "lambda": 0.01},
        "erm": {"lambda": 0.01, "seeds": 2, "Ntilde": 32,
                "feature_kind": "erf", "n_test": 1000},
        "seeds": {"master": 11},
    }


def test_replica_command_writes_sweep(tmp_path):
    out = tmp_path / "out"
    cfg = ridge_compare_config(tmp_path)
    assert run_cli("replica", write_config(tmp_path, cfg), out) == 0
    header, rows = read_csv(out / "replica_sweep.csv")
    assert header == SWEEP_CSV_HEADER.split(",")
    assert len(rows) == 1
    row = dict(zip(header, rows[0]))
    assert row["converged"] == "true"
    assert float(row["alpha"]) == 0.5
    assert float(row["eps_g"]) > 0.0


def test_replica_non_convergence_flags_and_exit_3(tmp_path):
    out = tmp_path / "out"
    cfg = ridge_compare_config(tmp_path)
    cfg["replica"]["max_iter"] = 2
    assert run_cli("replica", write_config(tmp_path, cfg), out) == 3
    header, rows = read_csv(out / "replica_sweep.csv")
    assert dict(zip(header, rows[0]))["converged"] == "false"
    # the run still leaves a complete, audited output directory behind
    assert (out / "manifest.json").exists()


def test_erm_command_writes_sweep(tmp_path):
    out = tmp_path / "out"
    cfg = ridge_compare_config(tmp_path)
    cfg["erm"]["T_grid"] = [24]
    assert run_cli("erm", write_config(tmp_path, cfg), out) == 0
    header, rows = read_csv(out / "erm_sweep.csv")
    assert header[0] == "alpha"
    assert len(rows) == 2
    for row in rows:
        r = dict(zip(header, row))
        assert float(r["alpha"]) == 0.75
        assert float(r["eps_mc"]) >= 0.0
        assert float(r["q_star"]) >= 0.0


def test_erm_requires_single_unit_teacher(tmp_path, capsys):
    cfg = ridge_compare_config(tmp_path)
    cfg["erm"]["T_grid"] = [16]
    cfg["teacher"]["M"] = 2
    code = run_cli("erm", write_config(tmp_path, cfg), tmp_path / "out")
    assert code == 2
    assert "teacher" in capsys.readouterr().err


def test_replica_compare_summary(tmp_path):
    out = tmp_path / "out"
    cfg = ridge_compare_config(tmp_path)
    assert run_cli("replica-compare", write_config(tmp_path, cfg), out) == 0
    summary = json.loads((out / "replica_compare_summary.json").read_text())
    assert summary["all_converged"] is True
    assert len(summary["per_alpha"]) == 1
    entry = summary["per_alpha"][0]
    assert set(entry) == {"alpha", "eps_replica", "eps_erm_mean",
                          "relative_error", "converged"}
    assert entry["eps_replica"] > 0.0
    assert np.isfinite(entry["relative_error"])
    assert (out / "replica_sweep.csv").exists()
    assert (out / "erm_sweep.csv").exists()


# ---------------------------------------------------------------------------
# audit command


def test_get_audit_report_and_scaling(tmp_path):
    cfg = {
        "generator": {"type": "single_layer", "D": 64, "N": 32, "kind": "sign",
                      "law": {"kind": "iid", "normalize_rows": True}},
        "teacher": {"M": 1, "kind": "sign"},
        "student": {"K": 2, "kind": "erf", "rows": "orthonormal"},
        "audit": {"mu": 0.5, "N_list": [32, 64], "scaling_seeds": 2,
                  "cumulant_samples": 4000},
        "seeds": {"master": 5},
    }
    out = tmp_path / "out"
    assert run_cli("get-audit", write_config(tmp_path, cfg), out) == 0

    report = json.loads((out / "get_audit_report.json").read_text())
    assert set(report["bound_terms"]) == {"t1", "t2", "t3", "t4"}
    assert report["bound_total"] >= 0.0
    for entry in report["deterministic_spectra"]["matrices"].values():
        assert entry["max_rel_err"] <= 1e-10
        assert entry["leading_cosine"] >= 1.0 - 1e-10
    assert set(report["scaling_slopes"]) == {"K11", "K12", "K21", "K22"}
    assert np.isfinite(report["cumulants"]["max_abs_kurtosis"])

    header, rows = read_csv(out / "scaling.csv")
    assert header == ["matrix", "N", "seed", "lambda1", "lambda2", "lambda6",
                      "ones_corr"]
    assert len(rows) == 4 * 2 * 2


def test_get_audit_needs_single_layer(tmp_path, capsys):
    cfg = base_identity_config()
    code = run_cli("get-audit", write_config(tmp_path, cfg), tmp_path / "out")
    assert code == 2
    assert "single_layer" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# entry point


def test_console_entry_point_runs(tmp_path):
    import subprocess
    import sys

    path = write_config(tmp_path, base_identity_config(8))
    out = tmp_path / "out"
    proc = subprocess.run(
        [sys.executable, "-m", "geqlab.cli", "moments", "--config", path,
         "--out", str(out), "--threads", "1"],
        capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert (out / "manifest.json").exists()


def test_config_error_is_exception_type(tmp_path):
    with pytest.raises(ConfigError):
        from geqlab.cli import _load_config
        _load_config(str(tmp_path / "missing.json"))
