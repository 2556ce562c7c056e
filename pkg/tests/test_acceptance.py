"""Acceptance criteria 1-13, each at its stated tolerance.

Every test records one PASS/FAIL line; conftest prints them in the terminal summary.
Criteria 11-13 share one default sweep (d=1, rho=4, 20 seeds, t in 20..100) and take
several minutes each on one core.
"""

import filecmp
import math
import time

import numpy as np
import pytest
from scipy.linalg import expm

from pamislands import harness
from pamislands.harness import ExperimentConfig, run_cell, run_experiment
from pamislands.lattice import Box
from pamislands.pamsolve import feynman_kac_mc, solve_pam, total_mass
from pamislands.randfield import PotentialField
from pamislands.shape import (
    build_optimal_shape, chi_bruteforce, chi_dual, chi_primal, island_radius, profile_residual,
)
from pamislands.spectral import (
    eigenvalue_gradient, hamiltonian, principal_eigenvalue, resolvent_bound, resolvent_solve,
    semigroup_apply,
)
from pamislands.verify import superposition_bound_check

RESULTS: list = []


def record(n: int, passed: bool, detail: str, seconds: float):
    line = f"criterion {n:2d}: {'PASS' if passed else 'FAIL'}  {detail}  [{seconds:.1f}s]"
    RESULTS.append((n, line))
    print(line)
    return passed


# -- 1 --------------------------------------------------------------------------------


def test_c01_closed_form_eigenvalues():
    t0 = time.time()
    errs = []
    for d in (1, 2, 3):
        for v0 in (-1.3, 0.0, 2.7):
            s = np.zeros((1, d), dtype=np.int64)
            errs.append(abs(principal_eigenvalue(s, [v0]) - (v0 - 2 * d)))
    single = max(errs)
    two = abs(principal_eigenvalue(np.array([[0], [1]]), [0.0, 0.0]) + 1.0)
    dt = time.time() - t0
    ok = single < 1e-12 and two < 1e-10 and dt < 1.0
    assert record(1, ok, f"single-site err {single:.2e} (<1e-12), two-site err {two:.2e} (<1e-10)", dt)


# -- 2 --------------------------------------------------------------------------------


def test_c02_gradient_identity():
    t0 = time.time()
    rng = np.random.default_rng(2)
    h = 1e-4
    worst = 0.0
    for _ in range(50):
        n = int(rng.integers(10, 31))
        s = np.arange(n)[:, None]
        V = rng.normal(0, 1.5, n)
        g = eigenvalue_gradient(s, V)
        fd = np.empty(n)
        for i in range(n):
            e = np.zeros(n)
            e[i] = h
            fd[i] = (principal_eigenvalue(s, V + e) - principal_eigenvalue(s, V - e)) / (2 * h)
        worst = max(worst, float(np.max(np.abs(fd - g) / np.maximum(np.abs(g), 1e-3))))
    dt = time.time() - t0
    ok = worst <= 1e-5 and dt < 10
    assert record(2, ok, f"max rel FD error {worst:.2e} (<=1e-5) over 50 instances", dt)


# -- 3 --------------------------------------------------------------------------------


def test_c03_resolvent_bound():
    t0 = time.time()
    rng = np.random.default_rng(3)
    violations, min_slack = 0, math.inf
    for _ in range(100):
        d = int(rng.integers(1, 3))
        R = int(rng.integers(1, 4 if d == 2 else 10))
        s = Box.centered(d, R).sites()
        V = rng.uniform(-3, 2, len(s))
        V[rng.random(len(s)) < 0.1] = -np.inf
        keep = np.isfinite(V)
        if not keep.any():
            V[0] = 0.0
            keep = np.isfinite(V)
        lam = principal_eigenvalue(s, V)
        gamma = lam + float(rng.uniform(0.05, 3.0))
        lhs = 1.0 + float(resolvent_solve(s, V, gamma)[keep].max())
        rhs = 1.0 + resolvent_bound(int(keep.sum()), d, gamma, lam)
        min_slack = min(min_slack, rhs - lhs)
        violations += lhs > rhs + 1e-10
    s1 = np.zeros((1, 1), dtype=np.int64)
    lhs1 = 1.0 + float(resolvent_solve(s1, [0.0], -1.0)[0])
    rhs1 = 1.0 + resolvent_bound(1, 1, -1.0, -2.0)
    dt = time.time() - t0
    ok = violations == 0 and lhs1 == 2.0 and rhs1 == 3.0 and dt < 10
    assert record(3, ok, f"{violations} violations / 100 (min slack {min_slack:.3g}); single site {lhs1:g} <= {rhs1:g}", dt)


# -- 4 --------------------------------------------------------------------------------


def test_c04_chi_duality():
    t0 = time.time()
    gaps = {}
    for rho in (1.0, 2.0, 4.0):
        gaps[rho] = abs(chi_primal(rho, 8).chi - chi_dual(rho, 8).chi)
    brute = chi_bruteforce(1.0, 1, 1)
    e_p = abs(chi_primal(1.0, 1).chi - brute)
    e_d = abs(chi_dual(1.0, 1).chi - brute)
    dt = time.time() - t0
    ok = max(gaps.values()) < 1e-6 and e_p < 1e-4 and e_d < 1e-4 and dt < 300
    g = ", ".join(f"rho={k:g}: {v:.1e}" for k, v in gaps.items())
    assert record(4, ok, f"|primal-dual| at R=8 {g} (<1e-6); brute-force R=1 primal {e_p:.1e}, dual {e_d:.1e} (<1e-4)", dt)


# -- 5 --------------------------------------------------------------------------------


def test_c05_profile_shape_consistency():
    t0 = time.time()
    s1 = build_optimal_shape(4.0, 1, 20)
    s2 = build_optimal_shape(4.0, 2, 8)
    s1_8 = build_optimal_shape(4.0, 1, 8)
    prof = profile_residual(s1.profile_log_v, 4.0)
    sep = abs(s2.chi - 2 * s1_8.chi)
    dt = time.time() - t0
    ok = prof < 1e-10 and s1.eigen_residual < 1e-8 and s2.eigen_residual < 1e-8 and sep < 1e-8 and dt < 60
    assert record(5, ok, f"profile residual {prof:.1e}; eigen residual d=1 {s1.eigen_residual:.1e}, "
                         f"d=2 {s2.eigen_residual:.1e}; |chi_2 - 2chi_1| {sep:.1e}", dt)


# -- 6 --------------------------------------------------------------------------------


def test_c06_limit_endpoints():
    t0 = time.time()
    inf_ok = all(build_optimal_shape(math.inf, d, 3).chi == 2 * d for d in (1, 2, 3))
    r_ok = all(island_radius(build_optimal_shape(math.inf, 1, 3), e) == 0 for e in (0.5, 0.1, 1e-3, 1e-9))
    rhos = (0.5, 1, 2, 4, 8, 16, 100)
    chis = [build_optimal_shape(r, 1, 20).chi for r in rhos]
    mono = bool(np.all(np.diff(chis) > 0)) and chis[-1] <= 2
    dt = time.time() - t0
    ok = inf_ok and r_ok and mono and dt < 300
    assert record(6, ok, f"chi(inf)=2d {inf_ok}; r(inf,eps)=0 {r_ok}; chi increasing <=2 {mono} "
                         f"({', '.join(f'{c:.5f}' for c in chis)})", dt)


# -- 7 --------------------------------------------------------------------------------


def test_c07_solver_triangle():
    t0 = time.time()
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(20):
        R = int(rng.integers(5, 50))
        s = Box.centered(1, R).sites()
        V = rng.uniform(-2, 2, len(s))
        f0 = np.zeros(len(s))
        f0[R] = 1.0
        t = float(rng.uniform(0.1, 2.0))
        a = semigroup_apply(s, V, t, f0, method="eigen")
        b = semigroup_apply(s, V, t, f0, method="krylov")
        worst = max(worst, float(np.max(np.abs(a - b)) / np.max(np.abs(a))))
    b7 = Box.centered(1, 7)
    xi = PotentialField(b7, np.random.default_rng(70).uniform(-1, 1, len(b7)))
    U = total_mass(solve_pam(xi, b7, 1.0, method="eigen"))
    mc = feynman_kac_mc(xi, 1.0, 100000, seed=7)
    z = abs(mc.total - U) / mc.total_stderr
    dt = time.time() - t0
    ok = worst < 1e-8 and z <= 3 and dt < 120
    assert record(7, ok, f"eigen vs Krylov max rel {worst:.1e} (<1e-8); MC |z| {z:.2f} (<=3) at 1e5 paths", dt)


# -- 8 --------------------------------------------------------------------------------


def test_c08_split_exactness():
    t0 = time.time()
    cfg = ExperimentConfig(t_grid=[20.0, 50.0], seeds=[0, 1, 2])
    rows, worst_cell = [], 0.0
    for seed in cfg.seeds:
        for t in cfg.t_grid:
            c0 = time.time()
            row, _ = run_cell(cfg, seed, t)
            worst_cell = max(worst_cell, time.time() - c0)
            rows.append(row)
    recon = max(r["split_recon_error"] for r in rows)
    neg = min(r["split_min_component"] for r in rows)
    slack = min(r["u2_bound_slack"] for r in rows)
    dt = time.time() - t0
    ok = all(r["status"] == "ok" for r in rows) and recon <= 1e-10 and neg >= -1e-12 and slack >= 0 and worst_cell < 30
    assert record(8, ok, f"max recon {recon:.1e} (<=1e-10); min component {neg:.1e} (>=-1e-12); "
                         f"min (7.21) slack {slack:.3g} (>=0); slowest run {worst_cell:.1f}s", dt)


# -- 9 --------------------------------------------------------------------------------


def test_c09_superposition_inequality():
    t0 = time.time()
    rng = np.random.default_rng(9)
    violations, worst = 0, -math.inf
    for _ in range(50):
        R = int(rng.integers(5, 100))
        b = Box.centered(1, R)
        xi = PotentialField(b, rng.uniform(-2, 2, len(b)))
        k = int(rng.integers(1, 4))
        g = rng.choice([x for x in range(-R, R + 1) if x != 0], size=k, replace=False)[:, None]
        out = superposition_bound_check(xi, b, g, float(rng.choice([0.5, 1.0, 2.0])))
        violations += out["n_violations"]
        worst = max(worst, out["max_violation"])
    dt = time.time() - t0
    ok = violations == 0 and dt < 300
    assert record(9, ok, f"{violations} pointwise violations over 50 instances (max rel excess {worst:.2e})", dt)


# -- 10 -------------------------------------------------------------------------------


def test_c10_planted_oracle():
    t0 = time.time()
    cfg = ExperimentConfig(t_grid=[20.0], seeds=[0], split=False)
    shape = harness.shape_for(cfg)
    T = 179
    b = Box.centered(1, T)
    h = 6.0
    vals = np.full(len(b), h - shape.chi - 2 * cfg.a)
    idx = np.arange(5 - 20, 5 + 21) + T
    vals[idx] = h + shape.V_on(20)
    row, _ = run_cell(cfg, 0, 20.0, field=PotentialField(b, vals))
    dt = time.time() - t0
    ok = (row["status"] == "ok" and row["n_gamma"] == 1 and row["mass_fraction_eps0"] >= 0.9
          and row["d_R_potential"] < 0.05 and row["d_R_solution"] < 0.05 and dt < 60)
    assert record(10, ok, f"|Gamma|={row['n_gamma']}, mass fraction {row['mass_fraction_eps0']:.4f} (>=0.9), "
                          f"d_R potential {row['d_R_potential']:.2e}, solution {row['d_R_solution']:.2e} (<0.05)", dt)


# -- 11-13: the default sweep ---------------------------------------------------------


@pytest.fixture(scope="module")
def sweep_runs(tmp_path_factory):
    base = tmp_path_factory.mktemp("acceptance")
    out = {}
    for threads in (1, 8):
        cfg = ExperimentConfig(out=str(base / f"threads{threads}"))
        t0 = time.time()
        art = run_experiment(cfg, threads=threads, figures=False)
        out[threads] = (art, time.time() - t0, base / f"threads{threads}")
    return out


def _check(rep, name):
    return next(c for c in rep.checks if c.name == name)


def test_c11_theorem_trends(sweep_runs):
    art, dt, _ = sweep_runs[1]
    rep = art.report
    table = rep.trends["table"]
    last = table[-1]
    t = last["t"]
    mono = _check(rep, "mass_fraction_nondecreasing")
    mf = last["median_mass_fraction"]
    pot = _check(rep, "d_R_potential_decreasing")
    sol = _check(rep, "d_R_solution_decreasing")
    sep = last["median_gamma_min_distance"]
    ng = last["median_n_gamma"]
    hard = len(rep.hard_failures)
    parts = {
        "(i) mass nondecreasing": mono.passed,
        "(i) mass>=0.8 at t=100": mf >= 0.8,
        "(iii) d_R potential slope<0": pot.value < 0,
        "(iv) d_R solution slope<0": sol.value < 0,
        "(ii) Gamma separation>=sqrt t": sep >= math.sqrt(t),
        "(ii) |Gamma|<=sqrt t": ng <= math.sqrt(t),
        "no hard failures": hard == 0,
        "runtime<=30min": dt <= 1800,
    }
    failed = [k for k, v in parts.items() if not v]
    detail = (f"mass slope {mono.value:.2e}, median mass at t=100 {mf:.3g}; d_R slopes {pot.value:.2e}/{sol.value:.2e}; "
              f"sep {sep:g}, |Gamma| {ng:g}; hard failures {hard}"
              + (f"; failing: {', '.join(failed)}" if failed else ""))
    assert record(11, not failed, detail, dt)


def test_c12_asymptotics_diagnostics(sweep_runs):
    art, dt, _ = sweep_runs[1]
    rep = art.report
    last = rep.trends["table"][-1]
    hp = _check(rep, "h_minus_psi_decreasing")
    res = _check(rep, "residual_decreasing")
    val = last["median_abs_residual"]
    bound = 0.5 * art.shape.chi
    parts = {"|h_t-psi| decreasing": hp.passed, "residual decreasing": res.passed, "residual<0.5chi at t=100": val < bound}
    failed = [k for k, v in parts.items() if not v]
    detail = (f"|h_t-psi| slope {hp.value:.2e}; |residual| slope {res.value:.2e}; "
              f"median |residual| at t=100 {val:.4f} (<{bound:.4f})" + (f"; failing: {', '.join(failed)}" if failed else ""))
    assert record(12, not failed, detail, 0.0)


def test_c13_determinism(sweep_runs):
    _, dt1, d1 = sweep_runs[1]
    _, dt8, d8 = sweep_runs[8]
    names = sorted(p.name for p in d1.glob("*.csv"))
    same = [n for n in names if filecmp.cmp(d1 / n, d8 / n, shallow=False)]
    ok = bool(names) and len(same) == len(names) and sorted(p.name for p in d8.glob("*.csv")) == names
    assert record(13, ok, f"{len(same)}/{len(names)} CSVs byte-identical (1 vs 8 threads)", dt1 + dt8)
