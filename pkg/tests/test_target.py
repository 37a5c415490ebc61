import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nevlab.geometry import ManifoldModel
from nevlab.target import (
    LineBundleFS, UnsupportedDivisor, divisor_complexity, fs_hessian, jacobian_det, parse_divisor, parse_map,
    pullback_chern_density, pullback_fs_hessian, random_projective_points, section_norm, to_chart, wronskian,
)

FLAT1 = ManifoldModel.flat(1)


def test_parse_points_divisor():
    D = parse_divisor("p1:points=[0,inf,1]")
    assert D.m == 1 and D.q == 3 and D.degree == 3
    assert D.bundle() == LineBundleFS(3, 0.5)


@pytest.mark.parametrize("text", [
    "p1:points=[0,", "p1:points=[]", "p1:points=[0,0]", "p2:points=[0]", "q1:points=[0]", "p1:weird",
    "p2:lines=[[1,0]]", "p2:fermat=x", "p0:coord",
])
def test_malformed_divisors(text):
    with pytest.raises(ValueError):
        parse_divisor(text)


def test_non_general_hyperplanes_unsupported():
    with pytest.raises(UnsupportedDivisor):
        parse_divisor("p2:lines=[[1,0,0],[0,1,0],[1,1,0]]")


def test_section_norm_frozen_values():
    D = parse_divisor("p1:points=[0,inf]")
    # [1:1] is at Fubini-Study distance pi/4 from both 0 and inf: |w0| / |w| = 1/sqrt2, scaled by 1/2
    w = np.array([[1.0, 1.0]])
    assert section_norm(D, 0, w)[0] == pytest.approx(0.5 / np.sqrt(2))
    assert section_norm(D, 1, w)[0] == pytest.approx(0.5 / np.sqrt(2))
    # at the antipode of a point the norm is maximal (= scale)
    assert section_norm(D, 0, np.array([[0.0, 1.0]]))[0] == pytest.approx(0.5)
    with pytest.raises(IndexError):
        section_norm(D, 2, w)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from(["p1:points=[0,inf,1]", "p2:coord", "p3:coord",
                                                   "p2:lines=[[1,1,1],[1,0,0],[0,1,0],[0,0,1]]"]))
def test_section_norm_bounded_and_scale_invariant(seed, text):
    D = parse_divisor(text)
    rng = np.random.default_rng(seed)
    w = random_projective_points(D.m, 8, rng)
    lam = complex(rng.standard_normal(), rng.standard_normal())
    for j in range(D.q):
        a = section_norm(D, j, w)
        assert np.all(a <= D.scale + 1e-12)
        assert np.allclose(a, section_norm(D, j, lam * w))


def test_complexity():
    assert divisor_complexity(parse_divisor("p1:points=[0,inf,1]")) == 1
    assert divisor_complexity(parse_divisor("p2:coord")) == 2
    assert divisor_complexity(parse_divisor("p2:lines=[[1,1,1],[1,0,0],[0,1,0],[0,0,1]]")) == 2
    assert divisor_complexity(parse_divisor("p2:fermat=3")) == 1


def test_parse_maps():
    assert parse_map("id", FLAT1).m == 1
    assert parse_map("map:exp", FLAT1).name == "map:exp"
    f = parse_map("poly2:z1;z2**2", ManifoldModel.flat(2))
    F = f.lift(np.array([[2.0, 3.0]]))
    assert np.allclose(F, [[1.0, 2.0, 9.0]])
    for bad in ("poly:[1]", "poly:[a]", "sin", "poly2:z1", "poly2:z1;sin(z2)"):
        with pytest.raises(ValueError):
            parse_map(bad, ManifoldModel.flat(2) if bad.startswith("poly2") else FLAT1)
    with pytest.raises(ValueError):
        parse_map("exp", ManifoldModel.flat(2))


def test_fs_hessian_at_origin_and_pullback():
    assert np.allclose(fs_hessian(np.zeros((1, 2))), np.eye(2))
    f = parse_map("id", FLAT1)
    z = np.array([[0.5 + 0.5j]])
    assert pullback_fs_hessian(f, z)[0, 0, 0].real == pytest.approx(1 / 1.5 ** 2)
    # e_{f* c1(O(1))} = 2 / (1 + |z|^2)^2 on flat C
    assert pullback_chern_density(f, LineBundleFS(1), z)[0] == pytest.approx(2 / 1.5 ** 2)
    assert pullback_chern_density(f, LineBundleFS(3), z)[0] == pytest.approx(6 / 1.5 ** 2)


def test_wronskian_and_jacobian():
    f = parse_map("poly:[0,0,1]", FLAT1)   # z^2, lift [1, z^2]
    z = np.array([[1.5 + 0j], [0.0 + 0j]])
    assert np.allclose(wronskian(f, z), [3.0, 0.0])
    assert np.allclose(jacobian_det(f, z, chart=0), [3.0, 0.0])


def test_to_chart():
    w = np.array([[2.0, 4.0, 6.0]])
    assert np.allclose(to_chart(w, 0), [[2.0, 3.0]])


def test_nondegeneracy_certificate():
    rng = np.random.default_rng(0)
    assert parse_map("exp", FLAT1).certify_nondegenerate(rng)
    assert parse_map("poly2:z1;z1*z2", ManifoldModel.flat(2)).certify_nondegenerate(rng)
    assert not parse_map("poly2:z1;z1**2", ManifoldModel.flat(2)).certify_nondegenerate(rng)


def test_line_bundle_validation():
    with pytest.raises(ValueError):
        LineBundleFS(0)
    with pytest.raises(ValueError):
        LineBundleFS(1, 1.5)
