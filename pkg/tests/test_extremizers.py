import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad

from rectrestrict.exponents import ExponentPair, conjectured_exponents
from rectrestrict.extension import extend
from rectrestrict.extremizers import (
    AspectTooSmall, BUMP_MASS, DUAL_BOX_C, GridTooCoarse, InfiniteSidelength, bump_lp_mass,
    besicovitch_translations, canonical_shifts, kakeya_field, knapp, knapp_quotient,
    schwartz_train, train_block, train_quotient, union_ratio, unit_bump,
)
from rectrestrict.surfaces import Sidelengths, make_paraboloid


def slope(xs, ys):
    return np.polyfit(np.log2(xs), np.log2(ys), 1)[0]


def test_bump_constants():
    assert BUMP_MASS == pytest.approx(quad(lambda u: (1 - u * u) ** 4, -1, 1)[0], rel=1e-14)
    assert quad(unit_bump, -1, 1)[0] == pytest.approx(1.0, rel=1e-14)
    for p in (1.0, 2.5, 10.0):
        assert bump_lp_mass(p) == pytest.approx(quad(lambda u: (1 - u * u) ** (4 * p), -1, 1)[0], rel=1e-12)


@pytest.mark.parametrize("d, ell, j, peak", [
    (1, (1.0,), 0, 1.0),
    (2, (1.0, 1.0), 0, 1.0),
    (2, (1.0, 4.0), 1, 4.0),
    (2, (0.5, 8.0), 0, 0.25),
])
def test_knapp_peak_and_dual_box(d, ell, j, peak):
    cap, dual, predicted = knapp(d, ell, j)
    assert predicted == pytest.approx(peak)
    assert cap.gridfn.integral() == pytest.approx(predicted, rel=1e-6)  # midpoint rule, 32 nodes
    u = extend(make_paraboloid(d, Sidelengths(ell)), cap.gridfn, dual)
    assert np.abs(u.values).max() <= predicted * (1 + 1e-9)
    assert np.abs(u.values).min() >= 0.5 * predicted
    # volume (l_1..l_j)^-1 l_{j+1}^-(d-j+2), up to powers of 2c
    l = np.array(ell)
    expected = np.prod(1 / l[:j]) * l[j] ** -(d - j + 2) * (2 * DUAL_BOX_C) ** (d + 1)
    assert dual.volume == pytest.approx(expected, rel=1e-12)


def test_knapp_rejects_infinite_side():
    with pytest.raises(InfiniteSidelength):
        knapp(2, (1.0, math.inf), 0)
    with pytest.raises(ValueError):
        knapp(2, (1.0, 2.0), 2)


def test_knapp_slope_d1_paraboloid():
    Ls = [1, 2, 4, 8, 16, 32, 64]
    qs = [knapp_quotient(make_paraboloid(1, Sidelengths((L,))), 1, (L,), 0, 2, 6) for L in Ls]
    assert abs(slope(Ls, qs)) < 0.05


@pytest.mark.parametrize("q", [6, 10, math.inf])
def test_knapp_slope_matches_prediction(q):
    pq = ExponentPair.from_pq(2, q)
    Ls = [1, 2, 4, 8, 16, 32]
    qs = [knapp_quotient(make_paraboloid(2, Sidelengths((1.0, L))), 2, (1.0, L), 1, 2, q) for L in Ls]
    pred = float(conjectured_exponents(2, pq).per_sidelength[1])
    assert abs(slope(Ls, qs) - pred) < 0.05


def test_besicovitch_single_tube():
    shifts, ratio = besicovitch_translations(1)
    assert shifts == [(0.0, 0.0)] and ratio == 1.0


def test_besicovitch_ratios_decrease():
    ratios = [besicovitch_translations(N, raster=1024)[1] for N in (2, 4, 8, 16)]
    assert all(b < a for a, b in zip(ratios, ratios[1:]))
    assert ratios[-1] <= 0.5


def test_besicovitch_power_of_two_only():
    with pytest.raises(ValueError):
        canonical_shifts(6)


def test_union_ratio_disjoint_and_identical():
    # far-apart parallel tubes do not overlap; identical tubes collapse
    assert union_ratio([0.0, 0.0], [0.0, 10.0], 0.5, 512) == pytest.approx(1.0, abs=1e-12)
    assert union_ratio([0.3, 0.3], [0.0, 0.0], 0.5, 512) == pytest.approx(0.5, abs=1e-12)


@given(st.integers(0, 5))
@settings(max_examples=6, deadline=None)
def test_canonical_shifts_in_range(m):
    a, b = canonical_shifts(2 ** m)
    assert np.all(b <= 0) and np.all(b >= -1)
    assert np.allclose(a, np.arange(2 ** m) / 2 ** m)


@pytest.fixture(scope="module")
def field4():
    return kakeya_field(make_paraboloid(2, Sidelengths((1.0, 100.0))), (1.0, 100.0), 0, 1, 4, seed=0)


def test_kakeya_field_bounded_by_indicator(field4):
    F = field4.gridfn
    assert np.abs(F.values).max() <= 1 + 1e-12
    lo, hi = F.domain.lower, F.domain.upper
    assert np.all(lo >= -field4.ell.as_array() - 1e-12) and np.all(hi <= field4.ell.as_array() + 1e-12)


def test_kakeya_field_beats_single_cap(field4):
    assert field4.gain > 1
    assert field4.quotient == max(field4.trial_scores)
    assert len(field4.trial_scores) == 8
    assert json.loads(json.dumps(field4.to_json()))["seed"] == 0


def test_kakeya_field_deterministic(field4):
    again = kakeya_field(make_paraboloid(2, Sidelengths((1.0, 100.0))), (1.0, 100.0), 0, 1, 4, seed=0)
    assert again.quotient == field4.quotient
    assert np.array_equal(again.signs, field4.signs)


def test_kakeya_degenerate_configuration_is_indicator():
    f = kakeya_field(make_paraboloid(2, Sidelengths((1.0, 100.0))), (1.0, 100.0), 0, 1, 4, seed=0,
                     signs=[1, 1, 1, 1], shift_scale=0.0)
    assert np.allclose(np.abs(f.gridfn.values), 1.0)


def test_kakeya_aspect_too_small():
    with pytest.raises(AspectTooSmall):
        kakeya_field(make_paraboloid(2, Sidelengths((1.0, 50.0))), (1.0, 50.0), 0, 1, 4, seed=0)


def test_kakeya_larger_domain_keeps_quotient(field4):
    big = kakeya_field(make_paraboloid(2, Sidelengths((1.0, 200.0))), (1.0, 200.0), 0, 1, 4, seed=0)
    assert big.quotient >= field4.quotient * (1 - 1e-12)


def test_train_blocks_disjoint_and_dyadic():
    beta = (4.0, 4.0)
    blocks = [train_block(beta, 2, m) for m in (1, 2, 3)]
    for a, b in zip(blocks, blocks[1:]):
        assert np.all(b.upper <= a.lower)
    for m, blk in enumerate(blocks, start=1):
        assert np.allclose(blk.lower, 2.0 ** (-2 * 2 * m / 4))
        assert np.allclose(blk.upper, 2 * blk.lower)


@pytest.mark.parametrize("N", [1, 2, 3])
def test_train_norm_closed_form(N):
    tr = schwartz_train((4, 4), 2, N, 10.0)
    assert tr.gridfn.lp_norm(10.0) == pytest.approx(tr.norm_closed_form, rel=1e-2)
    one = schwartz_train((4, 4), 2, 1, 10.0).norm_closed_form
    assert tr.norm_closed_form == pytest.approx(N ** 0.1 * one, rel=1e-14)


def test_train_single_block_is_one_bump():
    tr = schwartz_train((4, 4), 2, 1, 10.0)
    assert len(tr.gridfn.parts) == 1 and len(tr.boxes) == 1


def test_train_grows_with_N():
    vals = [train_quotient(schwartz_train((4, 4), 2, N, 10.0), 10 / 3)[0] for N in (1, 2)]
    assert vals[1] > vals[0]


def test_train_grid_too_coarse():
    with pytest.raises(GridTooCoarse):
        schwartz_train((4, 4), 2, 3, 10.0, node_cap=1000)
