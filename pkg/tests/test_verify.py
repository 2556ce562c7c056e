import math

import numpy as np
import pytest

from pamislands.lattice import Box
from pamislands.pamsolve import SolutionField, split_contributions
from pamislands.randfield import PotentialField
from pamislands.shape import build_optimal_shape
from pamislands.verify import (
    VerificationReport, anchored_eigenvector, decay_profile, eigenfunction_rep_check,
    island_eigenfunction, localization_compare, mass_concentration, potential_shape_check,
    solution_shape_check, superposition_bound_check, theil_sen, trend_check, u2_negligibility,
)


def test_mass_concentration_basic():
    b = Box.centered(1, 5)
    vals = np.zeros(11)
    vals[[4, 5, 6]] = [1.0, 2.0, 1.0]
    u = SolutionField(1.0, b, vals)
    assert mass_concentration(u, np.zeros((0, 1), dtype=np.int64), 1) == 0.0
    assert mass_concentration(u, [(0,)], 1) == pytest.approx(1.0)
    fr = [mass_concentration(u, [(0,)], r) for r in range(4)]
    assert fr == sorted(fr) and fr[0] == pytest.approx(0.5)


def test_shape_checks_on_planted():
    shape = build_optimal_shape(2.0, 1, 20)
    b = Box.centered(1, 30)
    h = 3.0
    vals = np.full(len(b), -50.0)
    vals[b.index_of(np.arange(-13, 8)[:, None])] = h + shape.V_on(10)
    xi = PotentialField(b, vals)
    m, _ = potential_shape_check(xi, [(-3,)], h, shape, 3)
    assert m < 1e-12
    xi.values[b.index_of(np.array([[-2]]))[0]] += 0.01
    m, _ = potential_shape_check(xi, [(-3,)], h, shape, 3)
    assert m <= np.exp(shape.V_on(3).max()) * (np.exp(0.01) - 1) + 1e-12
    u = SolutionField(1.0, b, np.zeros(len(b)))
    u.values[b.index_of(np.arange(-8, 3)[:, None])] = 7.0 * shape.w_on(5)
    m, _ = solution_shape_check(u, [(-3,)], shape, 3)
    assert m < 1e-12
    assert potential_shape_check(xi, [], h, shape, 3)[0] == 0.0


def test_w_infinity_reduces_to_ratio():
    shape = build_optimal_shape(math.inf, 1, 3)
    b = Box.centered(1, 5)
    vals = np.zeros(11)
    vals[5], vals[4], vals[6] = 1.0, 0.01, 0.02
    m, _ = solution_shape_check(SolutionField(1.0, b, vals), [(0,)], shape, 1)
    assert m == pytest.approx(0.02)


def test_superposition_random(rng):
    bad = 0
    for _ in range(10):
        n = int(rng.integers(5, 40))
        b = Box.centered(1, n)
        xi = PotentialField(b, rng.uniform(-2, 2, len(b)))
        g = rng.choice([x for x in range(-n, n + 1) if x != 0], size=int(rng.integers(1, 4)), replace=False)
        r = superposition_bound_check(xi, b, g[:, None], float(rng.choice([0.5, 1, 2])))
        bad += not r["passed"]
    assert bad == 0


def test_island_eigenfunction_normalized(rng):
    b = Box.centered(1, 10)
    xi = PotentialField(b, rng.uniform(-1, 1, len(b)))
    lam, vy = island_eigenfunction(xi, b, [(3,), (-4,)], (3,))
    assert vy[b.index_of(np.array([[3]]))[0]] == 1.0
    assert vy[b.index_of(np.array([[-4]]))[0]] == 0.0
    assert np.all(vy >= 0)
    assert np.sum(vy**2) >= 1.0


def test_eigenfunction_mc_small():
    b = Box.centered(1, 7)
    xi = PotentialField(b, np.random.default_rng(1).uniform(0, 1, 15))
    rows = eigenfunction_rep_check(xi, b, [(3,), (-5,)], (3,), n_paths=20000, seed=1, n_probes=3)
    used = [r for r in rows if not r["flagged"]]
    assert used and all(abs(r["z"]) < 4 for r in used)


def test_decay_profile_planted():
    sites = np.arange(-10, 11)[:, None]
    vy = np.exp(-1.3 * np.abs(sites[:, 0]))
    r = decay_profile(vy, sites, (0,), q=0.8)
    assert r["slope"] == pytest.approx(-1.3) and r["r2"] == pytest.approx(1.0)
    assert r["negative"]


def test_localization_identical_problem(rng):
    b = Box.centered(1, 4)
    xi = PotentialField(b, rng.uniform(-1, 1, len(b)))
    xi.values[4] = 3.0
    r = localization_compare(xi, b, [(0,)], (0,), 4)
    assert abs(r["max_gap"]) < 1e-10 and abs(r["min_gap"]) < 1e-10


def test_u2_bound(rng):
    b = Box.centered(1, 10)
    outer = Box.centered(1, 21)
    xi = PotentialField(outer, rng.uniform(-1, 1, len(outer)))
    xi.values[outer.index_of(np.array([[3]]))[0]] = 4.0
    sp = split_contributions(xi, b, [(3,)], 2.0, outer_box=outer)
    r = u2_negligibility(sp, 4.0, 1.5)
    assert r["bound_ok"] and r["slack"] >= 0
    assert 0 <= r["u2_fraction"] <= 1 + 1e-12


def test_trend_and_report():
    rep = VerificationReport("x")
    assert trend_check(rep, "down", [1, 2, 3], [3.0, 2.0, 1.0], "decreasing").passed
    assert not trend_check(rep, "up", [1, 2, 3], [3.0, 2.0, 1.0], "nondecreasing").passed
    assert math.isnan(theil_sen([1], [1]))
    rep.add("h", 1.0, 0.0, False)
    assert not rep.ok() and len(rep.hard_failures) == 1
    assert "FLAG" in rep.text() and "FAIL" in rep.text()
