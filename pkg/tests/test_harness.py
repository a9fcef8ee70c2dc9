import numpy as np
import pytest

from dilation.coefficient import TensorField
from dilation.fem import SolverError
from dilation.harness import cli, experiments
from dilation.harness.config import ConfigError, ExperimentConfig, load_config, parse_config
from dilation.harness.experiments import (run_channel_study, run_dilation_sweep,
                                          run_discretization_sweep, run_integrated_test,
                                          solve_configured)
from dilation.harness.report import ErrorReport, fit_slope

SOLVE_CFG = """\
[system]
name = layered
eps = 1/16
eta = 1

[dilation]
method = local
L = 1/4
m = 2

[mesh]
rule = meps
fraction = 0.2
"""


def test_fit_slope_examples():
    assert fit_slope([(1, 1), (2, 2), (4, 4)]) == pytest.approx(1.0)
    assert fit_slope([(1, 1), (2, 4), (4, 16)]) == pytest.approx(2.0)
    rng = np.random.default_rng(11)
    h = 0.5 ** np.arange(2, 9)
    err = 3.0 * h ** 2 * (1 + 0.01 * rng.standard_normal(len(h)))
    assert abs(fit_slope(zip(h, err)) - 2.0) <= 0.05


def test_fit_slope_rejects_bad_points():
    with pytest.raises(ValueError):
        fit_slope([(1, 1), (2, 0), (4, 4)])
    with pytest.raises(ValueError):
        fit_slope([(1, 1), (2, -2), (4, 4)])
    with pytest.raises(ValueError):
        fit_slope([(1, 1), (2, 2)])


def test_error_report_csv_format(tmp_path):
    rep = ErrorReport("demo")
    assert rep.slope is None
    for L in (0.4, 0.2, 0.1):
        rep.add(L, L ** 2, L, 0.5)
    rep.to_csv(tmp_path / "r.csv")
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0] == "param,l2_rel,h1_rel,seconds"
    assert lines[1] == "0.4,0.16,0.4,0.5"
    assert lines[-1].startswith("# slope=") and float(lines[-1][8:]) == pytest.approx(2.0)
    with pytest.raises(ValueError):
        rep.add(0.05, -1.0, 0.0)


def test_parse_config_values():
    cfg = parse_config(SOLVE_CFG + "[sweep]\nvalues = 1/16, 1/32 ; 0.01\n")
    assert cfg.system == "layered" and cfg.system_params == {"eps": 1 / 16, "eta": 1.0}
    assert cfg.L == 0.25 and cfg.m == 2.0 and cfg.mesh_rule == "meps"
    assert cfg.values == [1 / 16, 1 / 32]
    assert cfg.eps == 1 / 16


@pytest.mark.parametrize("text,match", [
    ("[dilation]\nm = 2\n", "name is required"),
    ("[system]\nname = foo\n", "unknown system"),
    ("[system]\nname = het\ntheta = 1\n", "does not take"),
    ("[system]\nname = het\n[extra]\na = 1\n", "unknown section"),
    ("[system]\nname = het\n[dilation]\nspeed = 1\n", "unknown key"),
    ("[system]\nname = het\n[dilation]\nmethod = magic\n", "unknown method"),
    ("[system]\nname = het\n[dilation]\nm = 0.5\n", "m"),
    ("[system]\nname = het\n[run]\nforce = maybe\n", "boolean"),
])
def test_parse_config_errors(text, match):
    with pytest.raises(ConfigError, match=match):
        parse_config(text)


def test_load_config_missing_file(tmp_path):
    path = tmp_path / "absent.cfg"
    with pytest.raises(ConfigError, match=str(path)):
        load_config(path)


def test_check_scale():
    cfg = ExperimentConfig(system="layered", L=0.25, m=2)
    cfg.check_scale(0.01, 0.1, 2, 0.25)
    with pytest.raises(ConfigError, match="m\\*eps/5"):
        cfg.check_scale(0.05, 0.1, 2, 0.25)
    with pytest.raises(ConfigError, match="m\\*eps < L"):
        cfg.check_scale(0.01, 0.2, 2, 0.25)
    cfg.with_(force=True).check_scale(0.05, 0.2, 2, 0.25)


def test_solve_configured_layered():
    u, _ = solve_configured(parse_config(SOLVE_CFG))
    assert u.mesh.n % 4 == 0 and u.mesh.n >= 40
    assert np.all(np.isfinite(u.values)) and u.values.max() > 0


def test_cli_exit_codes(tmp_path, monkeypatch, capsys):
    cfg = tmp_path / "s.cfg"
    cfg.write_text(SOLVE_CFG)
    out = tmp_path / "u.csv"
    assert cli.main(["solve", "--config", str(cfg), "--output", str(out)]) == 0
    assert out.read_text().splitlines()[0] == "x1,x2,value"

    assert cli.main(["solve", "--config", str(tmp_path / "nope.cfg")]) == 1
    assert str(tmp_path / "nope.cfg") in capsys.readouterr().err

    bad = tmp_path / "bad.cfg"
    bad.write_text("[system]\nname = layered\n[mesh]\nfraction = -1\n")
    assert cli.main(["solve", "--config", str(bad)]) == 1

    def fail(cfg):
        raise SolverError("no convergence", 1.0, 10)

    monkeypatch.setattr(cli, "solve_configured", fail)
    assert cli.main(["solve", "--config", str(cfg)]) == 2
    assert "no convergence" in capsys.readouterr().err


def test_cli_scale_violation_and_force(tmp_path):
    cfg = tmp_path / "s.cfg"
    cfg.write_text(SOLVE_CFG.replace("fraction = 0.2", "fraction = 0.5"))
    assert cli.main(["solve", "--config", str(cfg), "--output", str(tmp_path / "a.csv")]) == 1
    assert cli.main(["solve", "--config", str(cfg), "--output", str(tmp_path / "a.csv"),
                     "--force"]) == 0


def test_dilate_preview_rows(tmp_path):
    cfg = tmp_path / "p.cfg"
    cfg.write_text("[system]\nname = sin1d\neps = 1/32\n[dilation]\nL = 1/4\nm = 4\nnu = 0.67\n")
    out = tmp_path / "p.csv"
    assert cli.main(["dilate-preview", "--config", str(cfg), "--output", str(out),
                     "--points", "201"]) == 0
    data = np.loadtxt(out, delimiter=",", skiprows=1)
    assert (tmp_path / "p.csv").read_text().startswith("x,A,DA,partial\n")
    x, A, DA, P = data.T
    assert len(x) == 201
    assert np.allclose(A, 2 + np.sin(2 * np.pi * x * 32), atol=1e-10)
    assert np.allclose(P, 2 + np.sin(2 * np.pi * x * 8), atol=1e-10)
    anchor = (np.minimum(np.floor(x / 0.25), 3) + 0.67) * 0.25
    assert np.allclose(DA, 2 + np.sin(2 * np.pi * 32 * (anchor + (x - anchor) / 4)), atol=1e-10)


def _strip_seconds(text):
    rows = []
    for line in text.splitlines():
        rows.append(line if line.startswith(("#", "param")) else line.rsplit(",", 1)[0])
    return rows


def test_sweeps_are_deterministic(tmp_path):
    cfg = tmp_path / "d.cfg"
    cfg.write_text("[system]\nname = sin1d\neps = 0.04\n[dilation]\nL = 0.1\nm = 2\n"
                   "[sweep]\nvalues = 8, 16, 32\nq_ref = 128\n")
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    for path in (a, b):
        assert cli.main(["sweep", "disc", "--config", str(cfg), "--output", str(path)]) == 0
    assert _strip_seconds(a.read_text()) == _strip_seconds(b.read_text())


def test_discretization_sweep_rejects_bad_reference():
    cfg = ExperimentConfig(system="sin1d", system_params=dict(eps=0.04), L=0.1, m=2,
                           values=[2, 4, 8], q_ref=12)
    with pytest.raises(ConfigError, match="q_ref"):
        run_discretization_sweep(cfg)


def test_dilation_sweep_constant_tensor_is_at_floor(monkeypatch):
    const = TensorField.constant(np.array([[2.0, 0.3], [0.3, 1.5]]), 2)
    monkeypatch.setattr(experiments, "homogenized_reference", lambda cfg, system: const)
    cfg = ExperimentConfig(system="layered", m=2, nu=0.5, values=[0.5, 0.25, 0.125])
    rep = run_dilation_sweep(cfg)
    assert len(rep.rows) == 3
    assert np.all(rep.l2 <= 1e-8) and np.all(rep.h1 <= 1e-8)


def test_channel_without_channel_methods_coincide():
    cfg = ExperimentConfig(system="channel", system_params=dict(eta_c=0.0), L=0.25, m=2,
                           mesh_rule="n", mesh_n=48, m_values=[2.0, 3.0],
                           L_values=[1 / 4, 1 / 8], force=True)
    rep = run_channel_study(cfg)
    assert len(rep.rows) == 4
    for r in rep.rows:
        assert r["u_aware"] == pytest.approx(r["u_naive"], rel=1e-8)
        assert r["flux_aware"] == pytest.approx(r["flux_naive"], rel=1e-8)


def test_channel_rejects_misaligned_mesh():
    cfg = ExperimentConfig(system="channel", L=0.25, m=2, mesh_rule="n", mesh_n=50,
                           m_values=[2.0], L_values=[1 / 4], force=True)
    with pytest.raises(ConfigError, match="aligned"):
        run_channel_study(cfg)


def test_integrated_error_budget_is_consistent():
    cfg = ExperimentConfig(system="layered", system_params=dict(dim=1, eps=0.02, eta=1.0),
                           m_values=[2.0, 3.0], L_factors=[2.0, 8.0])
    out = run_integrated_test(cfg)
    assert set(out.reports) == {"local_L2", "local_L8", "partial", "hybrid"}
    assert len(out.budget) == 4
    for row in out.budget:
        parts = row["disc"] + row["homog"] + row["dilation"]
        assert 0 < row["total"] <= 1.5 * parts
    assert np.all(out.reports["partial"].l2 > 0)
