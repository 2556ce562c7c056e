import dataclasses
import json
import math

import numpy as np
import pytest

from pamislands import harness
from pamislands.harness import ExperimentConfig, run_cell, run_experiment, sweep
from pamislands.lattice import Box
from pamislands.randfield import PotentialField

SMALL = dict(seeds=[0, 1], t_grid=[5.0, 8.0])


def small(tmp_path, name="run", **kw):
    return ExperimentConfig(**{**SMALL, **kw, "out": str(tmp_path / name)})


@pytest.mark.parametrize("bad", [
    dict(delta=0.6), dict(model="doubleexp:rho=0.2", delta=0.2), dict(R=6, big_R=6),
    dict(eps=[1.5]), dict(eps=[]), dict(big_R=30, t_grid=[3.0]), dict(t_grid=[1.0]),
    dict(box_rule="other"), dict(method="rk4"),
])
def test_config_validation(bad):
    with pytest.raises(ValueError):
        ExperimentConfig(**bad).validate()


def test_config_roundtrip_and_unknown_key(tmp_path):
    cfg = small(tmp_path)
    p = tmp_path / "c.json"
    cfg.save(p)
    back = ExperimentConfig.load(p)
    assert back == cfg and back.digest() == cfg.digest()
    with pytest.raises(ValueError):
        ExperimentConfig.from_dict({"bogus": 1})


def test_custom_box_deviation_flag():
    cfg = ExperimentConfig(box_rule="custom", box_exponent=1.0)
    assert cfg.deviations() and cfg.exponent == 1.0
    assert ExperimentConfig().deviations() == []


def test_empty_grid(tmp_path):
    art = run_experiment(small(tmp_path, t_grid=[]), figures=False)
    assert art.rows == [] and art.report.ok()
    assert (tmp_path / "run" / "cells.csv").read_text().count("\n") == 1


def test_rerun_is_byte_identical(tmp_path):
    a = run_experiment(small(tmp_path, "a"), figures=False)
    b = run_experiment(small(tmp_path, "b"), threads=3, figures=False)
    for f in ("cells.csv", "mass.csv", "trends.csv", "checks.csv", "profile.csv"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes(), f
    assert a.files == b.files


def test_report_contents(tmp_path):
    art = run_experiment(small(tmp_path), figures=True)
    meta = json.loads((tmp_path / "run" / "report.json").read_text())
    assert meta["config_digest"] == art.config.digest()
    assert meta["seeds"] == [0, 1]
    assert not art.report.hard_failures, art.report.text()
    for png in ("profile.png", "mass_concentration.png", "d_R.png", "residual.png", "gap.png"):
        assert (tmp_path / "run" / png).stat().st_size > 0
    prof = harness.read_csv(tmp_path / "run" / "profile.csv")
    w = np.array([float(r["w"]) for r in prof])
    assert np.allclose(w, w[::-1], rtol=1e-10)
    rows = harness.read_csv(tmp_path / "run" / "cells.csv")
    for r in rows:
        assert float(r["h_T"]) >= float(r["h_t"])
        assert float(r["log_U_over_t"]) <= float(r["h_T"]) + 1e-10


def test_cell_failure_recorded(tmp_path, monkeypatch):
    real = harness.decompose

    def flaky(xi, T, *a, **k):
        if xi.seed == 1:
            raise RuntimeError("boom")
        return real(xi, T, *a, **k)

    monkeypatch.setattr(harness, "decompose", flaky)
    art = run_experiment(small(tmp_path), figures=False)
    status = [r["status"] for r in art.rows]
    assert status.count("ok") == 2 and sum(s.startswith("error:RuntimeError") for s in status) == 2
    assert not art.report.ok()


def test_assess_from_csv_matches(tmp_path):
    art = run_experiment(small(tmp_path), figures=False)
    cfg, rows = harness.load_run(tmp_path / "run")
    rep = harness.assess(rows, cfg.digest(), art.shape.chi)
    assert [c.name for c in rep.checks] == [c.name for c in art.report.checks]
    assert [c.passed for c in rep.checks] == [c.passed for c in art.report.checks]


def test_planted_oracle_cell():
    cfg = ExperimentConfig(t_grid=[20.0], seeds=[0], split=False)
    shape = harness.shape_for(cfg)
    T = 179
    b = Box.centered(1, T)
    h = 6.0
    vals = np.full(len(b), h - shape.chi - 2 * cfg.a)
    idx = b.index_of(np.arange(-15, 26)[:, None])
    vals[idx] = h + shape.V_on(20)
    row, mass = run_cell(cfg, 0, 20.0, field=PotentialField(b, vals))
    assert row["n_gamma"] == 1
    assert row["mass_fraction_eps0"] >= 0.9
    assert row["d_R_potential"] < 0.05 and row["d_R_solution"] < 0.05


def test_sweep_rho_axis(tmp_path):
    cfg = small(tmp_path, "sw", t_grid=[5.0], seeds=[0], split=False)
    rows = sweep(cfg, "rho", [1.0, 2.0, 4.0], figures=True)
    chis = [r["chi"] for r in rows]
    assert np.all(np.diff(chis) > 0)
    assert (tmp_path / "sw" / "sweep.csv").exists() and (tmp_path / "sw" / "sweep.png").exists()


def test_single_point_sweep_equals_run(tmp_path):
    cfg = small(tmp_path, "one", t_grid=[5.0], seeds=[0])
    sweep(cfg, "t", [5.0], figures=False)
    run_experiment(dataclasses.replace(cfg, out=str(tmp_path / "direct")), figures=False)
    a = (tmp_path / "one" / "t=5" / "cells.csv").read_bytes()
    assert a == (tmp_path / "direct" / "cells.csv").read_bytes()
