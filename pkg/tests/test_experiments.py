import csv
import json
import math

import numpy as np
import pytest
from click.testing import CliRunner

from pilotbox import coarse_graining as cg
from pilotbox.cli import main
from pilotbox.ensembles import build_rho1, save_grid
from pilotbox.exceptions import ConfigError, IntegrationError
from pilotbox.experiments import (
    HBAR_SI, PRESETS, load_config, parse_config, run_experiment, run_tau, run_tau_table, run_trajectories,
)
from pilotbox.wavefunction import APPENDIX_TABLE, PhysParams, appendix_superposition

TINY = """
[run]
seed = 5
estimators = backward,forward
[physics]
units = natural
[distribution]
kind = {kind}
[coarse_graining]
eps = 0.25
n_max = {n_max}
D = 2
P = {P}
tol = 1e-6
"""


def tiny(tmp_path, kind="rho0", n_max=2, P=2000, **over):
    cfg = parse_config(TINY.format(kind=kind, n_max=n_max, P=P))
    cfg.outputs = str(tmp_path / "out")
    for k, v in over.items():
        setattr(cfg, k, v)
    return cfg


def read_csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


class TestPresets:
    @pytest.mark.parametrize("name", sorted(PRESETS))
    def test_all_parse(self, name):
        load_config(name)

    @pytest.mark.parametrize("name", ["example1", "example2", "example3"])
    def test_appendix_rows_exact(self, name):
        sup = load_config(name).superposition
        rows = [(m.n1, m.n2, p) for m, p in zip(sup.modes, sup.phase_fractions)]
        assert rows == list(APPENDIX_TABLE)

    def test_paper_settings(self):
        cfg = load_config("example1")
        assert cfg.units.name == "si" and cfg.n_max == 20 and (cfg.D, cfg.P) == (8, 100_000)
        # eps = 0.05 m with L0 = 1 m
        assert cfg.eps == pytest.approx(0.05) and cfg.params.L0 == 1.0
        assert cfg.params.v_expand == pytest.approx(1e-30 / HBAR_SI, rel=1e-12)
        assert np.allclose(cfg.sample_times() * cfg.units.time, 0.05 * np.arange(21))
        full = load_config("example1", full_scale=True)
        assert (full.D, full.P) == (32, 4_000_000)

    def test_distributions(self):
        assert load_config("example2").distribution.cg_length == 1 / 16
        assert load_config("example3").distribution.mix_weight == 0.1

    def test_overrides(self):
        cfg = load_config("example1-natural", seed=9, out="/tmp/x", estimators=("back", "tilde"))
        assert cfg.seed == 9 and cfg.outputs == "/tmp/x" and cfg.estimators == ("backward", "tilde")


class TestParsing:
    def test_collects_all_violations(self):
        text = TINY.format(kind="rho7", n_max=-1, P=0).replace("eps = 0.25", "eps = 0.3").replace("D = 2", "D = 0")
        with pytest.raises(ConfigError) as err:
            parse_config(text)
        assert len(err.value.violations) >= 5

    def test_bad_number(self):
        with pytest.raises(ConfigError) as err:
            parse_config("[coarse_graining]\neps = fifty\nD = two\n")
        assert len(err.value.violations) == 2

    def test_bad_units(self):
        with pytest.raises(ConfigError):
            parse_config("[physics]\nunits = imperial\n")

    def test_si_conversion(self):
        cfg = parse_config("[physics]\nunits = si\nmass = 2e-30\nL0 = 2\nv_expand = 3\n[coarse_graining]\neps = 0.5\n")
        t_unit = 2e-30 * 4 / HBAR_SI
        assert cfg.units.time == pytest.approx(t_unit)
        p = cfg.params
        assert (p.hbar, p.mass, p.L0) == (1.0, 1.0, 1.0)
        assert p.v_expand == pytest.approx(3 * t_unit / 2)
        assert cfg.eps == 0.25

    def test_missing_file(self):
        with pytest.raises(ConfigError):
            load_config("/nonexistent/config.ini")

    def test_table_and_grid_files(self, tmp_path):
        sup = appendix_superposition()
        (tmp_path / "sup.txt").write_text(sup.to_table())
        d = build_rho1(sup, cg_length=0.25)
        save_grid(tmp_path / "grid.txt", d.values, 0.25)
        (tmp_path / "c.ini").write_text("[superposition]\ntable = sup.txt\n[distribution]\nkind = grid\n"
                                        "file = grid.txt\n[coarse_graining]\neps = 0.25\n")
        cfg = load_config(tmp_path / "c.ini")
        assert cfg.superposition == sup
        np.testing.assert_array_equal(cfg.build_distribution().values, d.values)

    def test_random_superposition(self):
        cfg = parse_config("[run]\nseed = 4\n[superposition]\nN = 7\n")
        assert cfg.superposition.N == 7


class TestRun:
    def test_outputs(self, tmp_path):
        cfg = tiny(tmp_path)
        reports = run_experiment(cfg)
        out = tmp_path / "out"
        rows = read_csv(out / "report.csv")
        assert len(rows) == len(reports) == 3
        assert [float(r["t"]) for r in rows] == [0.0, 0.25, 0.5]
        assert all(float(r["h_back"]) > 0 and float(r["h_forward"]) > 0 for r in rows)
        man = json.loads((out / "manifest.json").read_text())
        assert set(man["files"]) == {"report.csv", "superposition.txt"}
        assert man["seed"] == 5 and man["failures"] == [] and "backward" in man["timings_s"]
        assert "h_back_relative_increase" in man

    def test_manifest_hashes(self, tmp_path):
        import hashlib
        cfg = tiny(tmp_path, write_cells=True, estimators=("backward", "forward", "tilde"))
        run_experiment(cfg)
        out = tmp_path / "out"
        man = json.loads((out / "manifest.json").read_text())
        assert "tilde.csv" in man["files"] and "cells/cells_002.csv" in man["files"]
        for name, digest in man["files"].items():
            assert hashlib.sha256((out / name).read_bytes()).hexdigest() == digest

    def test_reproducible_across_jobs(self, tmp_path):
        a = tiny(tmp_path / "a")
        b = tiny(tmp_path / "b")
        run_experiment(a, n_jobs=1)
        run_experiment(b, n_jobs=3)
        assert (tmp_path / "a/out/report.csv").read_bytes() == (tmp_path / "b/out/report.csv").read_bytes()

    def test_shared_backtracks(self, tmp_path, monkeypatch):
        cache = {}
        a = run_experiment(tiny(tmp_path / "a", estimators=("backward", "tilde")), backtracks=cache)
        assert set(cache) == {(e, n) for e in ("backward", "tilde") for n in range(3)}
        calls = []
        real = cg.backtrack_lattice
        monkeypatch.setattr(cg, "backtrack_lattice", lambda *a, **k: calls.append(1) or real(*a, **k))
        b = run_experiment(tiny(tmp_path / "b", kind="rho2", estimators=("backward", "tilde")), backtracks=cache)
        assert calls == []
        fresh = run_experiment(tiny(tmp_path / "c", kind="rho2", estimators=("backward",)))
        assert [r.h_back for r in b] == [r.h_back for r in fresh]
        assert a[1].h_back != b[1].h_back
        calls.clear()
        run_experiment(tiny(tmp_path / "d", tol=1e-7, estimators=("backward",)), backtracks=cache)
        assert len(calls) == 3 and cache[("backward", 2)].tol == 1e-7

    def test_equilibrium_near_zero(self, tmp_path):
        cfg = tiny(tmp_path, kind="equilibrium", n_max=1, P=20_000, D=8)
        for r in run_experiment(cfg):
            grid = cg.grid_at(cfg.params, cfg.eps, r.t, cfg.D)
            assert abs(r.h_back) < 1e-10
            assert r.h_forward < 3 * grid.C ** 2 / (2 * cfg.P)

    def test_single_time(self, tmp_path):
        cfg = tiny(tmp_path, n_max=0, P=100_000, D=8)
        (r,) = run_experiment(cfg)
        assert r.t == 0.0
        assert abs(r.h_forward - r.h_back) < 0.01

    def test_partial_failure(self, tmp_path, monkeypatch):
        def boom(*args, **kwargs):
            raise IntegrationError("forced", t=0.0, x=np.zeros(2))
        monkeypatch.setattr(cg, "forward_estimates", boom)
        reports = run_experiment(tiny(tmp_path))
        assert all(not math.isnan(r.h_back) for r in reports)
        man = json.loads((tmp_path / "out/manifest.json").read_text())
        assert man["failures"][0]["estimator"] == "forward"

    def test_times_in_config_units(self, tmp_path):
        cfg = load_config("example1", out=tmp_path / "si", estimators=("backward",))
        cfg.n_max, cfg.D = 1, 1
        run_experiment(cfg)
        rows = read_csv(tmp_path / "si/report.csv")
        assert float(rows[1]["t"]) == pytest.approx(0.05, rel=1e-12)


class TestTrajectories:
    def test_fig1(self, tmp_path):
        cfg = load_config("fig1", out=tmp_path)
        res = run_trajectories(cfg)
        assert len(res) == 3
        for r in res:
            # v_e t_f = L0 in every case, so the final side is 2 L0
            assert r["final_side"] == pytest.approx(2.0)
            rows = read_csv(r["file"])
            assert float(rows[-1]["t"]) == pytest.approx(r["t_final"])
        # short horizon: the reversed integration lands within 10 tol
        assert res[2]["round_trip_error"] < 10 * cfg.trajectories["tol"]
        man = json.loads((tmp_path / "manifest.json").read_text())
        assert len(man["trajectories"]) == 3 and len(man["files"]) == 3

    def test_static_single_mode_constant(self, tmp_path):
        cfg = parse_config("[superposition]\nN = 1\n[trajectories]\nx0 = 0.2, 0.7\ncases = 0:2\n")
        cfg.outputs = str(tmp_path)
        (r,) = run_trajectories(cfg)
        rows = read_csv(r["file"])
        xs = np.array([[float(x["x1"]), float(x["x2"])] for x in rows])
        np.testing.assert_allclose(xs, np.tile([0.2, 0.7], (len(xs), 1)), atol=1e-14)

    def test_failure_recorded(self, tmp_path):
        cfg = load_config("fig1", out=tmp_path)
        res = run_trajectories(cfg, cases=[(1.0, 1.0)], tol=1e-14)
        assert "error" in res[0] or "file" in res[0]


class TestTau:
    def test_fig10(self, tmp_path):
        cfg = load_config("fig10", out=tmp_path)
        t, tau = run_tau(cfg)
        rows = read_csv(tmp_path / "tau.csv")
        tt = np.array([float(r["t"]) for r in rows])
        ta = np.array([float(r["tau"]) for r in rows])
        assert tt[-1] == pytest.approx(10.0)
        assert ta[np.argmin(np.abs(tt - 1.0))] == pytest.approx(0.5)
        assert ta[-1] == pytest.approx(10 / 11)
        assert np.all(np.diff(ta) > 0) and ta.max() < 1.0
        assert json.loads((tmp_path / "manifest.json").read_text())["tau_limit"] == pytest.approx(1.0)

    def test_table(self):
        t, tau = run_tau_table(PhysParams(), 1.0, 4)
        np.testing.assert_allclose(tau, t / (1 + t))

    def test_bad(self):
        with pytest.raises(ConfigError):
            run_tau_table(PhysParams(), 0.0, 3)


class TestCLI:
    def test_presets_list(self):
        res = CliRunner().invoke(main, ["presets", "list"])
        assert res.exit_code == 0 and "example1" in res.output and "fig10" in res.output

    def test_presets_show(self):
        res = CliRunner().invoke(main, ["presets", "show", "example2"])
        assert res.exit_code == 0 and "kind = rho1" in res.output

    def test_run(self, tmp_path):
        cfg = tmp_path / "c.ini"
        cfg.write_text(TINY.format(kind="rho2", n_max=1, P=500))
        res = CliRunner().invoke(main, ["run", str(cfg), "--out", str(tmp_path / "o"), "--seed", "3",
                                        "--estimators", "back,tilde"])
        assert res.exit_code == 0, res.output
        assert "h_back" in res.output and (tmp_path / "o/tilde.csv").exists()
        man = json.loads((tmp_path / "o/manifest.json").read_text())
        assert man["seed"] == 3 and man["config"]["estimators"] == ["backward", "tilde"]

    def test_config_error(self, tmp_path):
        cfg = tmp_path / "c.ini"
        cfg.write_text("[coarse_graining]\neps = 0.3\nD = 0\n")
        res = CliRunner().invoke(main, ["run", str(cfg)])
        assert res.exit_code == 2 and res.output.count("config error") == 2

    def test_tau_and_trajectories(self, tmp_path):
        r1 = CliRunner().invoke(main, ["tau", "fig10", "--out", str(tmp_path / "t")])
        assert r1.exit_code == 0 and (tmp_path / "t/tau.csv").exists()
        r2 = CliRunner().invoke(main, ["trajectories", "fig1", "--out", str(tmp_path / "f")])
        assert r2.exit_code == 0 and r2.output.count("case") == 3
