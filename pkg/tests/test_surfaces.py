import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rectrestrict.surfaces import (
    Box, CallableSurface, EmptySlice, InvalidBeta, NonOrthonormalBasis, NotContained,
    Sidelengths, UnboundedDomain, block_exponents, convex_deficit, ellipticity_deficit,
    make_block_surface, make_gbeta, make_paraboloid, make_polynomial, normalize_at,
    parabolic_rescale, slice_surface, surface_from_descriptor, verify_dicing,
)


def cubic(delta=0.01, ell=1.0):
    return make_polynomial(1, {(3,): delta}, Sidelengths((ell,)))


def test_sidelengths_validation():
    with pytest.raises(ValueError):
        Sidelengths((2.0, 1.0))
    with pytest.raises(ValueError):
        Sidelengths((0.0, 1.0))
    ell = Sidelengths((1.0, math.inf))
    assert not ell.finite
    assert ell.truncated(8.0).lengths == (1.0, 8.0)


def test_paraboloid_closed_forms():
    s = make_paraboloid(2)
    assert s.g(np.array([1.0, 1.0])) == 2.0
    pts = np.random.default_rng(0).uniform(-1, 1, (20, 2))
    assert np.allclose(s.hess(pts), 2 * np.eye(2))
    assert np.allclose(s.grad(pts), 2 * pts)


def test_gbeta_closed_forms():
    s = make_gbeta((4, 3))
    assert s.g(np.array([1.0, 1.0])) == 2.0
    xi = np.array([[-0.5, 0.25], [0.3, -0.7]])
    assert np.allclose(s.grad(xi)[:, 0], 4 * np.abs(xi[:, 0]) ** 3 * np.sign(xi[:, 0]))
    assert np.allclose(s.grad(xi)[:, 1], 3 * np.abs(xi[:, 1]) ** 2 * np.sign(xi[:, 1]))


def test_gbeta_rejects_small_exponent():
    with pytest.raises(InvalidBeta):
        make_gbeta((4, 1))


def test_block_surface_sidelengths():
    _, ell = make_block_surface((4, 3), (1, 1))
    assert ell.lengths == (2.0 ** -4, 2.0 ** -3)
    assert list(block_exponents((4, 3), (1, 1))) == [4.0, 3.0]


def test_block_surface_requires_ordered_block():
    with pytest.raises(ValueError):
        make_block_surface((3, 4), (1, 1))
    # the swapped permutation orders it
    _, ell = make_block_surface((3, 4), (1, 1), sigma=(1, 0))
    assert ell.lengths == (2.0 ** -4, 2.0 ** -3)


def test_block_surface_closed_form():
    beta, k = (4.0, 3.0), (2, 1)
    surf, _ = make_block_surface(beta, k)
    K = np.array([8.0, 3.0])
    eta = np.array([[0.01, 0.2], [0.003, 0.13]])
    expected = np.sum(2.0 ** (K * (np.array(beta) - 2)) * np.abs(eta) ** np.array(beta), axis=1)
    assert np.allclose(surf.g(eta), expected)
    # curvature at the block center does not depend on k
    h = surf.hess(surf.domain.center[None, :])[0]
    assert np.allclose(np.diag(h), [b * (b - 1) * 2.5 ** (b - 2) for b in beta])


def test_paraboloid_deficit_zero():
    for ell in [(1.0,), (0.5, 3.0), (1.0, 2.0, 4.0)]:
        s = make_paraboloid(len(ell), Sidelengths(ell))
        assert ellipticity_deficit(s, order=3).deficit == 0.0


def test_cubic_deficit_hand_value():
    delta = 0.01
    cert = ellipticity_deficit(cubic(delta), order=0)
    assert cert.deficit == pytest.approx(6 * delta, rel=1e-12)
    # higher orders only add d/dxi terms (6 delta * l again)
    assert ellipticity_deficit(cubic(delta), order=2).deficit == pytest.approx(6 * delta, rel=1e-12)


def test_unbounded_domain():
    s = make_paraboloid(2, Sidelengths((1.0, math.inf)))
    with pytest.raises(UnboundedDomain):
        ellipticity_deficit(s)


def test_deficit_monotone_in_order():
    s = make_polynomial(2, {(3, 0): 0.02, (1, 2): -0.03, (2, 2): 0.05}, Sidelengths((0.5, 1.0)))
    vals = [ellipticity_deficit(s, order=n).deficit for n in range(5)]
    assert all(a <= b for a, b in zip(vals, vals[1:]))


def test_deficit_monotone_in_domain():
    terms = {(3, 0): 0.02, (0, 4): 0.05}
    small = make_polynomial(2, terms, Sidelengths((0.5, 0.5)))
    big = make_polynomial(2, terms, Sidelengths((1.0, 1.0)))
    assert ellipticity_deficit(small).deficit <= ellipticity_deficit(big).deficit


def off_center_gbeta():
    s = make_gbeta((4, 3))
    s.domain = Box([0.5, 0.6], [0.2, 0.3])
    return s


@pytest.mark.parametrize("lam", [0.25, 0.5, 2.0, 4.0])
def test_rescaling_invariance(lam):
    for s in [cubic(0.01), make_polynomial(2, {(3, 0): 0.02, (1, 2): 0.01}, Sidelengths((0.5, 1.0))),
              off_center_gbeta()]:
        d0 = ellipticity_deficit(s).deficit
        d1 = ellipticity_deficit(parabolic_rescale(s, lam)).deficit
        assert abs(d1 - d0) <= 1e-6 * (1 + d0)


def test_rescale_identity_and_paraboloid():
    s = cubic()
    assert parabolic_rescale(s, 1.0) is s
    p = parabolic_rescale(make_paraboloid(2), 3.0)
    assert p.domain.lengths == (3.0, 3.0)
    assert p.perturbation == {}


def test_rescale_generic_surface_matches_formula():
    s = make_gbeta((4, 3), Sidelengths((1.0, 1.0)))
    r = parabolic_rescale(s, 2.0)
    xi = np.array([[0.4, -1.2]])
    assert np.allclose(r.g(xi), 4.0 * s.g(xi / 2.0))


def test_slice_paraboloid():
    p = make_paraboloid(2)
    sl = slice_surface(p, [0.0, 0.3], [[1.0, 0.0]])
    eta = np.array([[0.5], [-0.2]])
    assert np.allclose(sl.g(eta), eta[:, 0] ** 2 + 0.09)
    assert np.allclose(sl.hess(eta), 2.0)


def test_slice_through_origin_is_paraboloid():
    p = make_paraboloid(3)
    sl = slice_surface(p, [0.0, 0.0, 0.0], [[1.0, 0, 0], [0, 1.0, 0]])
    assert ellipticity_deficit(sl).deficit == pytest.approx(0.0, abs=1e-12)
    eta = np.random.default_rng(1).uniform(-0.5, 0.5, (10, 2))
    assert np.allclose(sl.g(eta), np.sum(eta ** 2, axis=1))


def test_slice_at_zero_equals_basepoint_value():
    s = make_polynomial(2, {(3, 0): 0.1, (1, 1): 0.2})
    xi0 = np.array([0.2, -0.4])
    u = np.array([[0.6, 0.8]])
    sl = slice_surface(s, xi0, u)
    assert sl.g(np.zeros((1, 1)))[0] == pytest.approx(s.g(xi0))


def test_slice_domain_is_exact():
    sl = slice_surface(make_paraboloid(2), [0.5, 0.0], [[1.0, 0.0]])
    bb = sl.domain.bbox
    assert bb.lower[0] == pytest.approx(-1.5) and bb.upper[0] == pytest.approx(0.5)


def test_slice_errors():
    p = make_paraboloid(2)
    with pytest.raises(NonOrthonormalBasis):
        slice_surface(p, [0, 0], [[1.0, 0.1]])
    with pytest.raises(EmptySlice):
        slice_surface(p, [1.0, 0.0], [[0.0, 1.0]])


@given(st.integers(0, 10_000))
@settings(max_examples=25, deadline=None)
def test_slice_deficit_comparable(seed):
    rng = np.random.default_rng(seed)
    terms = {tuple(a): float(rng.uniform(-0.02, 0.02))
             for a in [(3, 0, 0), (0, 3, 0), (0, 0, 3), (1, 1, 1), (2, 1, 0), (0, 1, 2)]}
    s = make_polynomial(3, terms)
    full = ellipticity_deficit(s, order=1, grid=9).deficit
    q, _ = np.linalg.qr(rng.normal(size=(3, 2)))
    xi0 = rng.uniform(-0.3, 0.3, 3)
    sl = slice_surface(s, xi0, q.T)
    assert ellipticity_deficit(sl, order=1, grid=9).deficit <= 10 * full


def test_normalization_makes_hessian_twice_identity():
    s = make_gbeta((4, 3), Sidelengths((1.0, 1.0)))
    gt, _ = normalize_at(s, [0.5, 0.4])
    z = np.zeros((1, 2))
    assert np.allclose(gt.hess(z)[0], 2 * np.eye(2))
    assert np.allclose(gt.grad(z)[0], 0.0)
    assert gt.g(z)[0] == pytest.approx(0.0, abs=1e-15)


def test_dicing_paraboloid_zero():
    s = make_paraboloid(2)
    dsub, bound = verify_dicing(s, Box([0.1, 0.1], [0.2, 0.3]), [0.1, 0.1], 0.5)
    assert dsub == pytest.approx(0.0, abs=1e-12) and bound == 0.0


def test_dicing_cubic_half():
    s = cubic(0.01)
    dsub, bound = verify_dicing(s, Box([0.0], [0.5]), [0.0], 0.5, order=0)
    full = ellipticity_deficit(s, order=0).deficit
    assert dsub == pytest.approx(full / 2, rel=1e-6)
    assert dsub <= bound


def test_dicing_monotone_under_shrinking():
    s = make_polynomial(2, {(3, 0): 0.05, (0, 3): 0.03, (2, 2): 0.02})
    vals = []
    for m in range(6):
        r = 2.0 ** -m
        vals.append(verify_dicing(s, Box([0.0, 0.0], [r, r]), [0.0, 0.0], r)[0])
    assert all(b < a for a, b in zip(vals, vals[1:]))


def test_dicing_not_contained():
    s = cubic()
    with pytest.raises(NotContained):
        verify_dicing(s, Box([0.0], [0.8]), [0.0], 0.5)
    with pytest.raises(NotContained):
        verify_dicing(s, Box([0.0], [0.1]), [0.3], 0.5)


def test_block_deficit_is_invariant_along_k_ladder():
    # the rescaled dyadic pieces are exact dilates of each other
    vals = [ellipticity_deficit(make_block_surface((4, 3), (k, k))[0]).deficit for k in (1, 2, 4, 8)]
    assert max(vals) - min(vals) <= 1e-9 * max(vals)


def test_callable_surface_finite_differences():
    c = CallableSurface(1, lambda x: x[:, 0] ** 2 + 0.01 * x[:, 0] ** 3, Sidelengths((1.0,)))
    cert = ellipticity_deficit(c, order=1)
    assert cert.deficit == pytest.approx(0.06, rel=1e-3)


def test_convex_deficit_on_polytope_region():
    s = make_polynomial(2, {(3, 0): 0.05})
    sl = slice_surface(s, [0.1, 0.2], [[0.0, 1.0]])
    cert = convex_deficit(sl, sl.domain, [0.0])
    assert cert.deficit == pytest.approx(0.0, abs=1e-12)  # the slice x1 = 0.1 is a 1-d paraboloid


def test_descriptor_roundtrip():
    for s in [make_paraboloid(2), make_polynomial(2, {(3, 0): 0.1}), make_gbeta((4, 3))]:
        desc = s.descriptor()
        if s.kind == "gbeta":
            desc = {"kind": "gbeta", "beta": [4, 3]}
        r = surface_from_descriptor(desc)
        pts = np.random.default_rng(3).uniform(-1, 1, (5, 2))
        assert np.allclose(r.g(pts), s.g(pts))
