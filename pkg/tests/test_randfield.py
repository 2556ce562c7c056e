import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from pamislands.lattice import Box
from pamislands.randfield import (
    DoubleExp, PotentialField, TabulatedF, Weibull, height, load_field, parse_model,
    sample_field, save_field, site_uniforms, tail_diagnostic,
)


@given(st.floats(0.1, 20), st.floats(0.5, 50))
def test_doubleexp_psi_inverts_phi(rho, s):
    m = DoubleExp(rho)
    assert math.isclose(m.phi(m.psi(s)), s, rel_tol=1e-12)
    assert math.isclose(m.survival(m.psi(s)), math.exp(-s), rel_tol=1e-10)


def test_doubleexp_scaling_exact():
    rows = tail_diagnostic(DoubleExp(2.0), [5.0, 50.0], [0.5, 2.0, 7.0])
    assert all(r["scaling_deviation"] < 1e-12 for r in rows)
    assert not any(r["scaling_flag"] for r in rows)


def test_tabulated_matches_doubleexp():
    rho = 1.5
    r = np.linspace(-4, 4, 4001)
    m = TabulatedF(r, 1 - np.exp(-np.exp(r / rho)), rho=rho)
    for s in (0.5, 2.0, 10.0):
        assert abs(m.psi(s) - DoubleExp(rho).psi(s)) < 1e-3


def test_parse_model_roundtrip():
    for m in (DoubleExp(4.0), Weibull(2.0)):
        assert parse_model(m.descriptor()) == m
    with pytest.raises(ValueError):
        DoubleExp(-1)


def test_site_uniforms_order_free_and_in_range():
    s = Box.centered(2, 5).sites()
    u = site_uniforms(7, s)
    assert np.all((u > 0) & (u < 1))
    perm = np.random.default_rng(0).permutation(len(s))
    assert np.array_equal(site_uniforms(7, s[perm]), u[perm])
    assert not np.array_equal(site_uniforms(8, s), u)


def test_sample_nested_boxes_agree():
    m = DoubleExp(4.0)
    small, big = Box.centered(1, 10), Box.centered(1, 40)
    a = sample_field(m, small, 3)
    b = sample_field(m, big, 3).restrict(small)
    assert np.array_equal(a.values, b.values)
    assert height(sample_field(m, big, 3)) >= height(a)


def test_empirical_tail():
    m = DoubleExp(2.0)
    xi = sample_field(m, Box.centered(1, 50000), 11)
    for r in (0.0, 1.0, 2.0):
        p = float(np.mean(xi.values > r))
        assert abs(p - m.survival(r)) < 4 * math.sqrt(p * (1 - p) / len(xi.values)) + 1e-3


def test_height_growth_matches_psi():
    m = DoubleExp(1.0)
    R = 20000
    xi = sample_field(m, Box.centered(1, R), 0)
    assert abs(height(xi) - m.psi(math.log(2 * R + 1))) < 3.0


@pytest.mark.parametrize("suffix", [".csv", ".npz"])
def test_save_load(tmp_path, suffix):
    xi = sample_field(DoubleExp(2.0), Box.centered(2, 3), 5)
    xi.values[0] = -np.inf
    p = tmp_path / f"f{suffix}"
    save_field(xi, p)
    back = load_field(p)
    assert back.box == xi.box and np.array_equal(back.values, xi.values)


def test_field_size_check():
    with pytest.raises(ValueError):
        PotentialField(Box.centered(1, 2), np.zeros(3))
