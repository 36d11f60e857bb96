import json
import math
from fractions import Fraction as F

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from rectrestrict.beta import (
    BetaProfile, BlockIndex, NoFailureWitness, RegimeMismatch, block_lower_exponent,
    block_upper_exponent, boundary_matches_sweep, condition_check, condition_ii_prime,
    condition_iv_prime, counterexample_growth, counterexample_k, counterexample_slope,
    dyadic_sum, dyadic_verdict, ii_line_slopes, max_sum_sides, region_boundary, region_y_max,
)
from rectrestrict.exponents import ExponentPair, in_Td, scaling_regime
from rectrestrict.surfaces import InvalidBeta

PROFILES = [(4, 4), (4, 3), (3, 3, 2), (F(3, 2), F(4, 3))]

fractions01 = st.builds(F, st.integers(0, 240), st.just(240))
betas = st.lists(st.builds(F, st.integers(11, 60), st.just(10)), min_size=1, max_size=3)


def test_profile_basics():
    b = BetaProfile.of([3, 4])
    assert b.beta == (4, 3)
    assert b.J == (0, F(1, 4), F(7, 12))
    assert b.height == F(12, 7)
    assert b.n0 == 2
    assert BetaProfile.of([F(3, 2), 3, 2]).n0 == 2
    with pytest.raises(InvalidBeta):
        BetaProfile.of([1, 3])
    with pytest.raises(ValueError):
        BetaProfile((3, 4))


def test_paraboloid_profile_excludes_diagonal_endpoint():
    b = BetaProfile.of([2, 2])
    assert condition_check(b, ExponentPair.from_pq(3, 3)).verdict == "none"
    assert condition_check(b, ExponentPair.from_pq(F(31, 10), F(31, 10))).verdict == "ii"
    assert condition_check(b, ExponentPair.from_pq(F(29, 10), F(29, 10))).verdict == "none"


def test_conditions_hand_cases():
    b = BetaProfile.of([4, 4])
    r = condition_check(b, ExponentPair.from_pq(4, 4))
    assert r.verdict == "iii" and r.holds["iv"]
    assert condition_check(b, ExponentPair.from_pq(5, 5)).verdict == "ii"
    assert condition_check(b, ExponentPair.from_pq(2, 20)).verdict == "i"
    # below the diagonal vertex: no condition
    assert condition_check(b, ExponentPair.from_pq(F(7, 2), F(7, 2))).verdict == "none"


@given(betas, fractions01, fractions01)
@settings(max_examples=200, deadline=None)
def test_conditions_imply_Td(bs, x, y):
    b = BetaProfile.of(bs)
    pq = ExponentPair(x, y)
    if condition_check(b, pq).verdict != "none":
        assert in_Td(b.d, pq)


@given(betas, fractions01, fractions01)
@settings(max_examples=200, deadline=None)
def test_reformulations_agree(bs, x, y):
    b = BetaProfile.of(bs)
    pq = ExponentPair(x, y)
    r = condition_check(b, pq)
    assert (r.holds["ii"] and x > 0) == condition_ii_prime(b, pq)
    assert r.holds["iv"] == condition_iv_prime(b, pq)


def test_iv_prime_on_the_line():
    b = BetaProfile.of([4, 4])
    # (1 + J_d)/q = J_d/p' with J_d = 1/2  ->  3/q = 1/p'
    for x in (F(1, 10), F(1, 5), F(1, 4)):
        pq = ExponentPair(x, (1 - x) / 3)
        assert condition_check(b, pq).holds["iv"] == condition_iv_prime(b, pq)


@given(betas, fractions01, fractions01)
@settings(max_examples=200, deadline=None)
def test_max_sum_identity(bs, x, y):
    b = BetaProfile.of(bs)
    pq = ExponentPair(x, y)
    assume(pq.gap >= 0)
    for N in range(b.d + 1):
        lhs, rhs = max_sum_sides(b, pq, N)
        assert lhs == rhs


@given(betas, st.lists(st.builds(F, st.integers(0, 20), st.just(10)), min_size=3, max_size=3), fractions01)
@settings(max_examples=100, deadline=None)
def test_region_shrinks_as_beta_grows(bs, bumps, x):
    small = BetaProfile.of(bs)
    big = BetaProfile(tuple(sorted((b + e for b, e in zip(small.beta, bumps)), reverse=True)))
    assert region_y_max(big, x) <= region_y_max(small, x)


@pytest.mark.parametrize("beta", PROFILES)
def test_boundary_matches_grid_sweep(beta):
    ok, bad = boundary_matches_sweep(BetaProfile.of(beta), 48)
    assert ok, bad[:5]


@pytest.mark.parametrize("beta", PROFILES)
def test_boundary_contains_binding_diagonal_vertices(beta):
    b = BetaProfile.of(beta)
    rb = region_boundary(b)
    for n in range(b.n0 + 1):
        x = b.diagonal_vertex(n)
        on_boundary = region_y_max(b, x) == x
        assert on_boundary == (n in rb.binding_n)
        if on_boundary:
            assert (x, x) in rb.vertices
    assert (rb.diagonal_vertex, rb.diagonal_vertex) in rb.vertices


def test_boundary_values_hand():
    rb = region_boundary(BetaProfile.of([4, 4]))
    assert rb.vertices == [(0, F(1, 3)), (F(1, 4), F(1, 4)), (1, 0)]
    assert [e["binding_condition"] for e in rb.edges] == ["ii", "i"]
    rb = region_boundary(BetaProfile.of([3, 3, 2]))
    assert (F(7, 20), F(7, 20)) in rb.vertices and rb.binding_n == (2, 3)


def test_boundary_exports(tmp_path):
    rb = region_boundary(BetaProfile.of([4, 3]), resolution=64)
    data = json.loads(json.dumps(rb.to_json()))
    assert data["diagonal_vertex"] == "7/26"
    rb.write_csv(tmp_path / "b.csv")
    rows = np.loadtxt(tmp_path / "b.csv", delimiter=",", skiprows=1)
    assert rows.shape == (64, 2)
    assert np.all(np.diff(rows[:, 1]) <= 1e-15)
    with pytest.raises(ValueError):
        region_boundary(BetaProfile.of([4, 3]), resolution=10)


def test_ii_line_slopes_reported_both_ways():
    rows = ii_line_slopes(BetaProfile.of([4, 4]))
    assert rows[1]["derived"] == F(-1, 9) and rows[1]["quoted"] == F(-1, 36)
    assert not rows[1]["agree"]
    # the two forms coincide when J_n = 1
    rows = ii_line_slopes(BetaProfile.of([2, 2]))
    assert rows[2]["agree"]


def test_block_exponent_validation():
    b = BetaProfile.of([4, 3])
    pq = ExponentPair.from_pq(2, 10)
    with pytest.raises(RegimeMismatch):
        block_upper_exponent(b, BlockIndex((1, 2), (0, 1)), pq)  # 4 < 6: wrong order
    assert block_upper_exponent(b, BlockIndex((1, 2), (1, 0)), pq) is not None
    wrong = scaling_regime(2, ExponentPair.from_pq(2, 20))
    with pytest.raises(RegimeMismatch):
        block_upper_exponent(b, BlockIndex((2, 1), (0, 1)), pq, regime=wrong)


def test_block_exponent_hand_value():
    # d = 2, q > p on the j = 1, theta = 1/2 line
    b = BetaProfile.of([4, 3])
    pq = ExponentPair.from_pq(2, 10)
    reg = scaling_regime(2, pq)
    assert (reg.j, reg.theta) == (1, F(1, 2))
    k = BlockIndex((2, 1), (0, 1))
    a = pq.gap
    assert block_upper_exponent(b, k, pq) == a * (-4 + 3 * F(1, 2) - 2)
    assert block_lower_exponent(b, k, pq) == block_upper_exponent(b, k, pq)


def test_epsilon_loss_q_le_p():
    b = BetaProfile.of([4, 3])
    pq = ExponentPair.from_pq(5, 4)
    k = BlockIndex((2, 1), (0, 1))
    e0 = block_upper_exponent(b, k, pq, eps=0)
    e1 = block_upper_exponent(b, k, pq, eps=F(1, 100))
    assert e1 - e0 == F(1, 100) * (8 - 3)


@pytest.mark.parametrize("beta", [F(3), F(5, 2), F(3, 2)])
def test_dyadic_sum_one_dimension_is_geometric(beta):
    b = BetaProfile((beta,))
    pq = ExponentPair.from_pq(2, 12)
    r = dyadic_sum(b, pq, K_max=120)
    rate = float(block_upper_exponent(b, BlockIndex((1,), (0,)), pq))
    n = math.floor(120 / beta)
    expected = math.log2(sum(2.0 ** (rate * k) for k in range(1, n + 1)))
    assert abs(r.log2_total - expected) <= 1e-12 * max(1.0, abs(expected))


def test_dyadic_sum_verdicts():
    b = BetaProfile.of([4, 4])
    assert dyadic_verdict(b, ExponentPair(F(1, 10), F(1, 10))) == "converged"
    # inside T_2 but outside every condition: the bound grows
    assert dyadic_verdict(b, ExponentPair(F(3, 10), F(7, 25))) == "diverged"
    with pytest.raises(ValueError):
        dyadic_sum(b, ExponentPair(F(1, 10), F(1, 10)), K_max=400)


def test_galilean_pinning():
    b = BetaProfile.of([2, 2])
    r = dyadic_sum(b, ExponentPair(F(1, 10), F(1, 10)))
    assert len(r.log2_partial) == 1


@pytest.mark.parametrize("pq", [ExponentPair(F(3, 10), F(7, 25)), ExponentPair(F(1, 4), F(3, 10))])
def test_counterexample_growth_matches_slope(pq):
    b = BetaProfile.of([4, 3])
    assert condition_check(b, pq).verdict == "none" and in_Td(2, pq)
    slope, n = counterexample_slope(b, pq)
    assert slope > 0
    # N multiple of 12 keeps every floor exact
    g = [counterexample_growth(b, pq, N) for N in (24, 48)]
    assert (g[1] - g[0]) / 24 == slope


def test_counterexample_index_is_ordered():
    b = BetaProfile.of([4, 3])
    for N in range(4, 40):
        k = counterexample_k(b, 2, N)
        assert BlockIndex(k, (0, 1)).valid(b)


def test_no_failure_witness_inside():
    with pytest.raises(NoFailureWitness):
        counterexample_slope(BetaProfile.of([4, 4]), ExponentPair.from_pq(5, 5))
