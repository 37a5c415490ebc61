import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nevlab.geometry import ManifoldModel, parse_model
from nevlab.nevanlinna import (
    Budget, ZeroFindingError, characteristic_T, counting_N, find_zeros, fmt_report, nevanlinna_series,
    proximity_m, ricci_term_T, sphere_average,
)
from nevlab.stochastic import StepPolicy
from nevlab.target import LineBundleFS, parse_divisor, parse_map

FLAT1 = ManifoldModel.flat(1)
ID = parse_map("id", FLAT1)
A = 0.5 + 0.5j
DA = parse_divisor("p1:points=[0.5+0.5j]")


@pytest.mark.parametrize("r", [0.5, 2.0, 10.0, 50.0])
def test_T_identity_closed_form(r):
    # T(r) = (1/2) log(1 + r^2) for the identity and O(1)
    assert characteristic_T(ID, LineBundleFS(1), r).value == pytest.approx(0.5 * math.log1p(r * r), rel=1e-9)


def test_T_linear_in_degree():
    t1 = characteristic_T(ID, LineBundleFS(1), 3.0).value
    assert characteristic_T(ID, LineBundleFS(4), 3.0).value == pytest.approx(4 * t1, rel=1e-12)


def test_proximity_closed_form():
    r = 10.0
    exact = math.log(2) + 0.5 * math.log1p(r * r) + 0.5 * math.log1p(abs(A) ** 2) - math.log(r)
    assert proximity_m(ID, DA, r).value == pytest.approx(exact, rel=1e-8)


def test_counting_frozen_values():
    assert counting_N(ID, DA, 10.0) == pytest.approx(math.log(10 / abs(A)), rel=1e-10)
    z2 = parse_map("poly:[0,0,1]", FLAT1)
    assert counting_N(z2, parse_divisor("p1:points=[1]"), 5.0) == pytest.approx(2 * math.log(5), rel=1e-10)
    # a double zero at o: ord_0 log r with multiplicity, once when truncated
    D0 = parse_divisor("p1:points=[0]")
    assert counting_N(z2, D0, 5.0) == pytest.approx(2 * math.log(5))
    assert counting_N(z2, D0, 5.0, truncation=1) == pytest.approx(math.log(5))
    assert counting_N(parse_map("exp", FLAT1), parse_divisor("p1:points=[0,inf]"), 30.0) == 0.0


@pytest.mark.parametrize("r", [2.0, 4.0])
def test_counting_m2_hyperplane(r):
    # pullback of {w0 = 2 w1} under the identity is the line z1 = 1/2 in C^2
    f = parse_map("poly2:z1;z2", ManifoldModel.flat(2))
    D = parse_divisor("p2:lines=[[1,-2,0],[1,0,-3],[0,1,1]]").subdivisor([0])
    a = 0.5
    exact = 0.5 * math.log(r * r / (a * a)) - (r * r - a * a) / (2 * r * r)
    assert counting_N(f, D, r) == pytest.approx(exact, abs=5e-3)


def test_counting_m2_requires_f_o_off_divisor():
    f = parse_map("poly2:z1;z2", ManifoldModel.flat(2))
    with pytest.raises(ValueError):
        counting_N(f, parse_divisor("p2:coord").subdivisor([1]), 2.0)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.tuples(st.floats(0.05, 0.9), st.floats(0, 2 * math.pi)), min_size=1, max_size=5))
def test_find_zeros_counts_roots(roots):
    zs = np.array([rho * np.exp(1j * th) for rho, th in roots])
    if len(zs) > 1 and np.min(np.abs(zs[:, None] - zs[None, :]) + np.eye(len(zs))) < 1e-3:
        return
    coeffs = np.poly(zs)
    g = lambda z: np.polyval(coeffs, z)
    dg = lambda z: np.polyval(np.polyder(coeffs), z)
    found = find_zeros(g, dg, 1.0)
    assert sum(mult for _, mult in found) == len(zs)
    for z in zs:
        assert min(abs(z - w) for w, _ in found) < 1e-7


def test_find_zeros_multiplicity():
    found = find_zeros(lambda z: (z - 0.3) ** 2 * (z + 0.5j), lambda z: 2 * (z - 0.3) * (z + 0.5j) + (z - 0.3) ** 2, 1.0)
    found = sorted(found, key=lambda t: t[0].real)
    assert [m for _, m in found] == [1, 2]
    assert abs(found[1][0] - 0.3) < 1e-9


def test_find_zeros_searches_enclosing_square():
    # the search square contains the closed disk; callers filter by modulus
    found = find_zeros(lambda z: z - 1.0, lambda z: np.ones_like(z), 1.0)
    assert len(found) == 1 and abs(found[0][0] - 1.0) < 1e-12


def test_find_zeros_non_finite_is_error():
    with pytest.raises(ZeroFindingError):
        find_zeros(lambda z: np.full_like(z, np.nan), lambda z: np.ones_like(z), 1.0)


def test_sphere_average():
    assert sphere_average(lambda z: np.abs(z[:, 0]) ** 2, 1, 2.0) == pytest.approx(4.0)
    # harmonic function averages to its centre value
    assert sphere_average(lambda z: np.real(z[:, 0] ** 3) + 1.0, 1, 1.5) == pytest.approx(1.0)
    assert sphere_average(lambda z: np.abs(z[:, 0]) ** 2, 2, 3.0) == pytest.approx(4.5)


def test_ricci_term_poincare():
    model = parse_model("poincare")
    est, bound, holds = ricci_term_T(model, 2.0, "quadrature")
    # -E[tau]/2 with E[tau_2] from the radial Green function
    assert est.value == pytest.approx(-0.86756166, rel=1e-6)
    assert holds and bound == pytest.approx(-8.0)
    flat, _, ok = ricci_term_T(FLAT1, 2.0, "quadrature")
    assert flat.value == 0.0 and ok


@pytest.mark.parametrize("mp,dv", [("id", "p1:points=[0.5+0.5j]"), ("poly:[0,0,1]", "p1:points=[1]"),
                                   ("exp", "p1:points=[0,inf]")])
def test_fmt_quadrature_flat(mp, dv):
    f = parse_map(mp, FLAT1)
    D = parse_divisor(dv)
    rep = fmt_report(f, D, D.bundle(), np.geomspace(2, 50, 12))
    assert rep.ok and rep.variation < 1e-6


def test_fmt_poincare():
    model = parse_model("poincare")
    f = parse_map("id", model)
    D = parse_divisor("p1:points=[0.5]")
    rep = fmt_report(f, D, D.bundle(), np.linspace(0.5, 6.0, 8))
    assert rep.ok and rep.variation < 1e-6


def test_fmt_rejects_f_o_in_divisor():
    with pytest.raises(ValueError):
        fmt_report(ID, parse_divisor("p1:points=[0]"), LineBundleFS(1), [1.0, 2.0])


def test_mc_series_matches_quadrature():
    rg = [2.0, 8.0]
    q = nevanlinna_series(ID, DA, DA.bundle(), rg, "quadrature")
    s = nevanlinna_series(ID, DA, DA.bundle(), rg, "mc", Budget(n_paths=1500, seed=4))
    assert np.all(np.abs(s.T - q.T) <= 3 * s.T_se)
    assert np.all(np.abs(s.m - q.m) <= 3 * s.m_se)
    assert np.array_equal(s.N, q.N)


def test_mc_series_deterministic():
    b = Budget(n_paths=200, seed=9, step=StepPolicy())
    s1 = nevanlinna_series(ID, DA, DA.bundle(), [3.0], "mc", b)
    s2 = nevanlinna_series(ID, DA, DA.bundle(), [3.0], "mc", b)
    assert list(s1.rows()) == list(s2.rows())
