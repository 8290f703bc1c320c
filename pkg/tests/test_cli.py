"""CLI subcommands: validation, determinism, caching, exit codes."""

import json
import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fkhomog import cli
from fkhomog.macro import Profile


def base_model(m0=None, A=1.0, L=0.0):
    if m0 is None:
        m0 = 1.0 / (2.0 * (4.0 + 4.0 * math.pi) * 1.2)
    return {"m0": m0, "force": {"kind": "classical_fk", "theta": [1.0],
                                "amplitude": A, "drive": L}}


def write_config(tmp_path: Path, cfg: dict, name="cfg.json") -> str:
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return str(p)


def run_cli(tmp_path, cfg, command, extra=()):
    path = write_config(tmp_path, cfg)
    out = tmp_path / "out"
    return cli.main([command, "--config", path, "--out", str(out), *extra]), out


def test_check_valid_model_exits_zero(tmp_path, capsys):
    rc, out = run_cli(tmp_path, {"model": base_model()}, "check")
    assert rc == 0
    report = json.loads((out / "assumptions.json").read_text())
    assert report["core_holds"] is True
    assert "critical_mass" in capsys.readouterr().out


def test_check_heavy_mass_exits_nonzero(tmp_path):
    rc, out = run_cli(tmp_path, {"model": base_model(m0=0.05)}, "check")
    assert rc == cli.EXIT_VALIDATION
    report = json.loads((out / "assumptions.json").read_text())
    assert report["a3"]["holds"] is False
    assert report["a3"]["witness"] is not None


def test_check_a6_advisory_between_thresholds(tmp_path, capsys):
    # theta = (1, 2): a1-a5 need alpha0 >= 6 + 4 pi, a6 needs >= 8 + 4 pi
    alpha0 = 7.0 + 4.0 * math.pi
    cfg = {"model": {"alpha0": alpha0,
                     "force": {"kind": "classical_fk", "theta": [1.0, 2.0],
                               "amplitude": 1.0, "drive": 0.0}}}
    rc, out = run_cli(tmp_path, cfg, "check")
    assert rc == 0
    report = json.loads((out / "assumptions.json").read_text())
    assert report["core_holds"] and not report["a6"]["holds"]
    assert "advisory" in capsys.readouterr().out


def test_simulate_writes_outputs(tmp_path):
    cfg = {"model": base_model(),
           "simulate": {"p": [1, 1], "cells": 4, "T": 5.0, "sample_dt": 0.5}}
    rc, out = run_cli(tmp_path, cfg, "simulate")
    assert rc == 0
    assert (out / "trajectory.csv").read_text().startswith("tau,j,U_j,Xi_j")
    assert (out / "final_snapshot.csv").read_text().startswith("i,U,Xi")
    inv = json.loads((out / "invariants.json").read_text())
    assert inv["ordering_violation"] == 0.0


def test_effham_linear_chain_single_row(tmp_path, capsys):
    cfg = {"model": base_model(A=0.0),
           "effham": {"p_grid": [[1, 1]], "L_grid": [0.8], "tol": 1e-3,
                      "T_cap": 2000.0}}
    rc, out = run_cli(tmp_path, cfg, "effham")
    assert rc == 0
    lines = (out / "effective_table.csv").read_text().strip().splitlines()
    assert lines[0] == "L,p,lambda,halfwidth,converged"
    L, p, lam, hw, conv = lines[1].split(",")
    assert p == "1/1" and abs(float(lam) - 0.8) < 1e-8 and conv == "1"
    assert "monotonicity in L" in capsys.readouterr().out


def test_effham_partial_exit_when_tol_unreachable(tmp_path):
    cfg = {"model": base_model(A=0.0),
           "effham": {"p_grid": [[1, 1]], "L_grid": [0.8], "tol": 1e-12,
                      "T_cap": 8.0}}
    rc, _ = run_cli(tmp_path, cfg, "effham")
    assert rc == cli.EXIT_PARTIAL


def test_effham_rerun_byte_identical(tmp_path):
    cfg = {"model": base_model(),
           "effham": {"p_grid": [[1, 1], [1, 2]], "L_grid": [0.0, 2.0],
                      "tol": 2e-3}}
    rc1, out = run_cli(tmp_path, cfg, "effham")
    text1 = (out / "effective_table.csv").read_bytes()
    rc2, out = run_cli(tmp_path, cfg, "effham")
    text2 = (out / "effective_table.csv").read_bytes()
    assert rc1 == rc2 == 0
    assert text1 == text2


def test_effham_threads_do_not_change_bytes(tmp_path):
    cfg = {"model": base_model(),
           "effham": {"p_grid": [[1, 1], [1, 2]], "L_grid": [0.0, 2.0],
                      "tol": 2e-3}}
    _, out1 = run_cli(tmp_path, cfg, "effham", extra=["--threads", "1"])
    t1 = (out1 / "effective_table.csv").read_bytes()
    _, out2 = run_cli(tmp_path, cfg, "effham", extra=["--threads", "4"])
    t2 = (out2 / "effective_table.csv").read_bytes()
    assert t1 == t2


def test_hull_command(tmp_path):
    cfg = {"model": base_model(),
           "hull": {"p": [1, 1], "L": 2.0, "Z": 16, "snapshots": 400,
                    "tol": 2e-3}}
    rc, out = run_cli(tmp_path, cfg, "hull")
    assert rc == 0
    header = json.loads((out / "hull.json").read_text())
    assert header["p"] == "1/1"
    assert (out / "hull.csv").read_text().startswith("j,z,h,g")
    axioms = json.loads((out / "hull_axioms.json").read_text())
    assert axioms["monotone_ok"] and axioms["ordering_ok"]


def _pipeline_cfg(tmp_path):
    u0 = Profile.linear(1.0, -5.0, 5.0)
    u0_path = tmp_path / "u0.csv"
    u0_path.write_text(u0.to_csv())
    return {
        "model": base_model(A=0.0),
        "effham": {"p_grid": [[4, 5], [1, 1], [5, 4]], "L_grid": [0.5],
                   "tol": 1e-4, "T_cap": 500.0},
        "homogenize": {"u0_file": str(u0_path), "T": 1.0, "dx": 0.05, "L": 0.5},
        "converge": {"u0_file": str(u0_path), "eps_list": [0.1, 0.05], "T": 1.0,
                     "window": [-5.0, 5.0], "L": 0.5},
        "seed": 0,
    }


def test_pipeline_linear_chain(tmp_path, capsys):
    cfg = _pipeline_cfg(tmp_path)
    rc, out = run_cli(tmp_path, cfg, "pipeline")
    assert rc == 0
    report = json.loads((out / "convergence.json").read_text())
    # quantization-dominated: errors <= (p + 1) eps
    for eps, err in zip(report["eps"], report["error"]):
        assert err <= (1.0 + 1.0) * eps
    assert (out / "macro.csv").exists()
    assert (out / "effective_table.csv").exists()


def test_pipeline_rerun_hits_cache(tmp_path, capsys):
    cfg = _pipeline_cfg(tmp_path)
    rc1, out = run_cli(tmp_path, cfg, "pipeline")
    capsys.readouterr()
    rc2, out = run_cli(tmp_path, cfg, "pipeline")
    log = capsys.readouterr().out
    assert rc1 == rc2 == 0
    assert "[cache] hit effham" in log
    assert "[cache] hit converge" in log


def test_homogenize_from_table_file(tmp_path):
    cfg = _pipeline_cfg(tmp_path)
    rc, out = run_cli(tmp_path, cfg, "pipeline")
    table_path = out / "effective_table.csv"
    cfg2 = dict(cfg)
    cfg2["homogenize"] = dict(cfg["homogenize"], table_file=str(table_path))
    del cfg2["effham"], cfg2["converge"]
    rc2, out2 = run_cli(tmp_path, cfg2, "homogenize")
    assert rc2 == 0
    assert (out2 / "macro.csv").read_text().startswith("t,x,u")


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------

BAD_CONFIGS = [
    ({}, "model"),
    ({"model": {}}, "force"),
    ({"model": {"m0": 0.01, "force": {"kind": "mystery"}}}, "kind"),
    ({"model": {"m0": -1, "force": {"kind": "classical_fk", "theta": [1.0]}}}, "m0"),
    ({"model": {"m0": 0.01, "force": {"kind": "classical_fk", "theta": [0.0]}}}, "theta"),
    ({"model": {"force": {"kind": "classical_fk", "theta": [1.0]}}}, "m0 or alpha0"),
    ({"model": base_model(), "simulate": {"p": [0, 1], "T": 1.0, "sample_dt": 0.1}}, "p"),
    ({"model": base_model(), "simulate": {"p": [1, 1], "T": -1.0, "sample_dt": 0.1}}, "T"),
    ({"model": base_model(), "converge": {"u0_file": "x", "eps_list": [0.1, 0.2],
                                          "T": 1.0, "window": [0, 1], "L": 0.0}}, "eps_list"),
    ({"model": base_model(), "unknown_block": {}}, "unknown"),
]


@pytest.mark.parametrize("cfg,needle", BAD_CONFIGS)
def test_malformed_configs_rejected_with_path(tmp_path, capsys, cfg, needle):
    rc, _ = run_cli(tmp_path, cfg, "check")
    assert rc == cli.EXIT_VALIDATION
    err = capsys.readouterr().err
    assert needle in err or "config" in err


json_scalars = st.one_of(st.none(), st.booleans(), st.integers(-5, 5),
                         st.floats(-2, 2, allow_nan=False), st.text(max_size=6))


@given(garbage=st.dictionaries(
    st.sampled_from(["model", "simulate", "effham", "seed", "out_dir", "junk"]),
    st.one_of(json_scalars, st.dictionaries(st.text(max_size=8), json_scalars,
                                            max_size=3)),
    max_size=4))
@settings(max_examples=60, deadline=None)
def test_fuzzed_configs_never_crash(garbage):
    """Malformed configs reject with exit 2; they never raise out of main."""
    import tempfile
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "fuzz.json"
        path.write_text(json.dumps(garbage))
        rc = cli.main(["check", "--config", str(path), "--out", str(Path(tmp) / "o")])
    assert rc in (cli.EXIT_OK, cli.EXIT_VALIDATION)


def test_config_file_missing_is_validation_error(tmp_path, capsys):
    rc = cli.main(["check", "--config", str(tmp_path / "nope.json")])
    assert rc == cli.EXIT_VALIDATION
    assert "cannot read" in capsys.readouterr().err
