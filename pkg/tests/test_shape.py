import math
import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st

from pamislands.shape import (
    build_optimal_shape, chi_bruteforce, chi_dual, chi_limit, chi_primal, d_R_metric,
    dual_functional, entropy, island_radius, profile_residual, solve_profile_1d,
)
from pamislands.spectral import principal_eigenvalue, script_L

REFERENCE = {0.5: 0.94196, 1.0: 1.47687, 2.0: 1.82579, 4.0: 1.93526, 8.0: 1.97384}


@pytest.mark.parametrize("rho,chi", sorted(REFERENCE.items()))
def test_chi_reference_values(rho, chi):
    assert abs(build_optimal_shape(rho, 1, 20).chi - chi) < 5e-5


def test_profile_equation_and_symmetry():
    p = solve_profile_1d(2.0, 20)
    assert profile_residual(p.log_v, 2.0) < 1e-10
    assert np.allclose(p.log_v, p.log_v[::-1], atol=1e-12)
    assert np.argmax(p.log_v) == 20


def test_shape_is_admissible_and_consistent():
    s = build_optimal_shape(2.0, 1, 20)
    assert abs(script_L(s.V, 2.0) - 1.0) < 1e-9
    assert abs(principal_eigenvalue(s.box.sites(), s.V) + s.chi) < 1e-9
    assert s.w.max() == pytest.approx(1.0) and s.w[s.box.index_of(np.zeros((1, 1)))[0]] == 1.0
    assert s.eigen_residual < 1e-8
    assert s.lambda_V_dotted < s.lambda_V


def test_separable_in_dimension():
    a = build_optimal_shape(1.0, 1, 8).chi
    b = build_optimal_shape(1.0, 2, 8)
    assert abs(b.chi - 2 * a) < 1e-8
    assert b.eigen_residual < 1e-8


def test_rho_infinity():
    s = build_optimal_shape(math.inf, 2, 3)
    assert s.chi == 4.0
    assert island_radius(s, 0.01) == 0
    assert chi_limit(math.inf, 3) == 6.0


def test_primal_dual_agree_small_box():
    for rho in (1.0, 4.0):
        p = chi_primal(rho, 4).chi
        q = chi_dual(rho, 4).chi
        assert abs(p - q) < 1e-8


def test_bruteforce_oracle_R1():
    assert abs(chi_bruteforce(1.0, 1, 1) - chi_primal(1.0, 1).chi) < 1e-4


def test_island_radius_table():
    assert island_radius(build_optimal_shape(4.0, 1, 20), 0.1) == 0
    assert island_radius(build_optimal_shape(1.0, 1, 20), 0.1) == 2
    assert island_radius(build_optimal_shape(0.5, 1, 20), 0.1) == 3
    s = build_optimal_shape(1.0, 1, 20)
    radii = [island_radius(s, e) for e in (0.5, 0.1, 0.01, 0.001)]
    assert radii == sorted(radii)
    with pytest.raises(ValueError):
        island_radius(s, 0.0)


def test_chi_monotone():
    chis = [build_optimal_shape(r, 1, 20).chi for r in (0.5, 1, 2, 4, 8, 16)]
    assert all(np.diff(chis) > 0) and chis[-1] < 2


@given(st.lists(st.floats(-5, 2), min_size=1, max_size=10))
def test_d_R_metric_properties(vals):
    f = np.array(vals)
    assert d_R_metric(f, f) == 0.0
    g = f + 0.01
    assert d_R_metric(f, g) <= np.exp(f.max() + 0.01) * (1 - np.exp(-0.01)) + 1e-12
    assert d_R_metric(f, np.full_like(f, -np.inf)) == pytest.approx(np.exp(f).max())


def test_dual_functional_at_uniform():
    sites = np.arange(-2, 3)[:, None]
    p = np.full(5, 0.2)
    val = dual_functional(p, 1.0, sites)
    assert np.all(np.isfinite(val))
    assert entropy(np.array([1.0, 0.0])) == pytest.approx(0.0)
