"""Exponent analysis for the separable surfaces g_beta(xi) = sum |xi_i|^beta_i.

Everything that decides membership is exact (Fraction); only the dyadic sums
and the boundary polyline coordinates are floating point.
"""
from __future__ import annotations

import csv
import itertools
import json
import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .exponents import (
    ExponentPair, NoRegime, Q_GT_P, ScalingRegime, as_fraction, fraction_to_str,
    in_Td, scaling_regime,
)

log = logging.getLogger(__name__)

CONDITIONS = ("i", "ii", "iii", "iv")


class RegimeMismatch(ValueError):
    pass


class NoFailureWitness(ValueError):
    pass


# ------------------------------------------------------------------ profiles

@dataclass(frozen=True)
class BetaProfile:
    beta: Tuple[Fraction, ...]

    def __post_init__(self):
        b = tuple(as_fraction(x) for x in self.beta)
        if not b:
            raise ValueError("empty profile")
        if any(x <= 1 for x in b):
            from .surfaces import InvalidBeta
            raise InvalidBeta(f"every exponent must exceed 1, got {b}")
        if any(x < y for x, y in zip(b, b[1:])):
            raise ValueError(f"beta must be sorted nonincreasing, got {b}")
        object.__setattr__(self, "beta", b)

    @classmethod
    def of(cls, values) -> "BetaProfile":
        """Sort arbitrary input into nonincreasing order."""
        return cls(tuple(sorted((as_fraction(v) for v in values), reverse=True)))

    @property
    def d(self) -> int:
        return len(self.beta)

    @property
    def J(self) -> Tuple[Fraction, ...]:
        out = [Fraction(0)]
        for b in self.beta:
            out.append(out[-1] + 1 / b)
        return tuple(out)

    @property
    def height(self) -> Fraction:
        return 1 / self.J[-1]

    @property
    def n0(self) -> int:
        return sum(1 for b in self.beta if b >= 2)

    def c(self, n: int) -> Fraction:
        """J_n + (d - n)/2."""
        return self.J[n] + Fraction(self.d - n, 2)

    def diagonal_vertex(self, n: int) -> Fraction:
        """1/p = 1/q where the n-th (i) and (ii) lines cross the diagonal."""
        c = self.c(n)
        return c / (1 + 2 * c)

    def to_json(self) -> dict:
        return {"beta": [fraction_to_str(b) for b in self.beta]}


@dataclass(frozen=True)
class BlockIndex:
    k: Tuple[int, ...]
    sigma: Tuple[int, ...]  # 0-based permutation

    def K(self, beta: BetaProfile) -> Tuple[Fraction, ...]:
        return tuple(self.k[self.sigma[i]] * beta.beta[self.sigma[i]] for i in range(beta.d))

    def valid(self, beta: BetaProfile) -> bool:
        K = self.K(beta)
        return all(x >= y for x, y in zip(K, K[1:])) and all(x >= 1 for x in self.k)


# -------------------------------------------------------------- conditions

def _pieces(pq: ExponentPair):
    return pq.inv_p, pq.inv_q, pq.inv_pp


def _i_slack(beta: BetaProfile, pq: ExponentPair, n: int) -> Fraction:
    """inv_pp c_n - inv_q (c_n + 1); >= 0 iff q/p' >= 1 + 1/c_n (q = inf allowed)."""
    c = beta.c(n)
    return pq.inv_pp * c - pq.inv_q * (c + 1)


def _ii_slack(beta: BetaProfile, pq: ExponentPair, n: int) -> Fraction:
    """J_n/p' + (d-n)/2 - (1 + J_n + d - n)/q; > 0 is the strict (ii) inequality."""
    J = beta.J[n]
    d = beta.d
    return J * pq.inv_pp + Fraction(d - n, 2) - (1 + J + d - n) * pq.inv_q


def _eq_d(beta: BetaProfile, pq: ExponentPair) -> Fraction:
    """J_d/p' - (1 + J_d)/q; zero on the (iii)/(iv) line."""
    J = beta.J[-1]
    return J * pq.inv_pp - (1 + J) * pq.inv_q


@dataclass
class ConditionReport:
    verdict: str  # first holding condition or "none"
    holds: Dict[str, bool]
    witness: Dict[str, Optional[int]]  # first failing n, or the binding n when it holds
    slacks: Dict[str, List[Fraction]] = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "verdict": self.verdict,
            "holds": self.holds,
            "witness": self.witness,
            "conditional": True,
        }


def condition_check(beta: BetaProfile, pq: ExponentPair) -> ConditionReport:
    """Evaluate the four conditions exactly, strictness as stated."""
    d = beta.d
    q_gt_p = pq.inv_q < pq.inv_p
    q_le_p = not q_gt_p
    si = [_i_slack(beta, pq, n) for n in range(d + 1)]
    sii = [_ii_slack(beta, pq, n) for n in range(d + 1)]
    eq = _eq_d(beta, pq)

    def first(pred, rng):
        for n in rng:
            if not pred(n):
                return n
        return None

    def binding(vals, rng):
        return min(rng, key=lambda n: (vals[n], n))

    fail_i = first(lambda n: si[n] >= 0, range(d + 1))
    fail_ii = first(lambda n: sii[n] > 0, range(d + 1))
    fail_lower = first(lambda n: sii[n] > 0, range(d))
    holds = {
        "i": q_gt_p and fail_i is None,
        "ii": q_le_p and fail_ii is None,
        "iii": pq.inv_q == pq.inv_p and eq == 0 and fail_lower is None,
        "iv": q_le_p and eq == 0 and fail_lower is None,
    }
    witness = {
        "i": binding(si, range(d + 1)) if fail_i is None else fail_i,
        "ii": binding(sii, range(d + 1)) if fail_ii is None else fail_ii,
        "iii": (binding(sii, range(d)) if d else None) if fail_lower is None else fail_lower,
        "iv": (binding(sii, range(d)) if d else None) if fail_lower is None else fail_lower,
    }
    verdict = next((c for c in CONDITIONS if holds[c]), "none")
    return ConditionReport(verdict, holds, witness, {"i": si, "ii": sii, "eq_d": [eq]})


def _curv_terms(beta: BetaProfile, pq: ExponentPair) -> List[Fraction]:
    """(1 - 2/q) - (2/beta_i)(1/p' - 1/q) for each i."""
    a = pq.gap
    return [(1 - 2 * pq.inv_q) - 2 * a / b for b in beta.beta]


def condition_ii_prime(beta: BetaProfile, pq: ExponentPair) -> bool:
    q_le_p = pq.inv_q >= pq.inv_p
    p_finite = pq.inv_p > 0
    lhs = sum((max(t, Fraction(0)) for t in _curv_terms(beta, pq)), Fraction(0))
    rhs = beta.d * (1 - 2 * pq.inv_q) - 2 * pq.inv_q
    return q_le_p and p_finite and lhs < rhs


def condition_iv_prime(beta: BetaProfile, pq: ExponentPair) -> bool:
    q_le_p = pq.inv_q >= pq.inv_p
    return q_le_p and all(t > 0 for t in _curv_terms(beta, pq)) and _eq_d(beta, pq) == 0


def max_sum_sides(beta: BetaProfile, pq: ExponentPair, N: int) -> Tuple[Fraction, Fraction]:
    """Both sides of max_{n<=N} [n(1-2/q) - 2 J_n a] = sum_{i<=N} [(1-2/q) - (2/beta_i) a]_+.

    The identity needs the bracketed terms to be nonincreasing in i, i.e. a >= 0.
    """
    a = pq.gap
    J = beta.J
    lhs = max(n * (1 - 2 * pq.inv_q) - 2 * J[n] * a for n in range(N + 1))
    rhs = sum((max(t, Fraction(0)) for t in _curv_terms(beta, pq)[:N]), Fraction(0))
    return lhs, rhs


def ii_line_slopes(beta: BetaProfile) -> List[dict]:
    """Slope of the n-th (ii) boundary line in the (1/p, 1/q) plane.

    ``derived`` comes from the line equation; ``quoted`` is the alternative
    closed form -J_n / (1 + (1 + d - n)/J_n).  They differ unless J_n = 1.
    """
    d = beta.d
    out = []
    for n in range(d + 1):
        J = beta.J[n]
        derived = -J / (1 + J + d - n)
        quoted = -J / (1 + Fraction(1 + d - n) / J) if J else Fraction(0)
        out.append({"n": n, "derived": derived, "quoted": quoted, "agree": derived == quoted})
    return out


# -------------------------------------------------------------- region

@dataclass
class RegionBoundary:
    beta: BetaProfile
    vertices: List[Tuple[Fraction, Fraction]]
    edges: List[dict]
    diagonal_vertex: Fraction
    binding_n: Tuple[int, ...]
    polyline: np.ndarray  # sampled (1/p, 1/q) along the upper envelope

    def y_max(self, x) -> Fraction:
        return region_y_max(self.beta, as_fraction(x))

    def contains(self, pq: ExponentPair) -> bool:
        return pq.inv_q <= region_y_max(self.beta, pq.inv_p)

    def to_json(self) -> dict:
        return {
            "beta": self.beta.to_json()["beta"],
            "vertices": [{"inv_p": fraction_to_str(x), "inv_q": fraction_to_str(y)} for x, y in self.vertices],
            "edges": [{**e, "from": [fraction_to_str(v) for v in e["from"]],
                       "to": [fraction_to_str(v) for v in e["to"]]} for e in self.edges],
            "diagonal_vertex": fraction_to_str(self.diagonal_vertex),
            "binding_n": list(self.binding_n),
        }

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["inv_p", "inv_q"])
            for x, y in self.polyline:
                w.writerow([repr(float(x)), repr(float(y))])


def _lines(beta: BetaProfile):
    """Upper-bound lines y = A + B x for conditions (i) and (ii), keyed by (cond, n)."""
    d = beta.d
    out = {}
    for n in range(d + 1):
        c = beta.c(n)
        out[("i", n)] = (c / (c + 1), -c / (c + 1))
        J = beta.J[n]
        den = 1 + J + d - n
        out[("ii", n)] = ((J + Fraction(d - n, 2)) / den, -J / den)
    return out


def _envelope(beta: BetaProfile, x: Fraction):
    lines = _lines(beta)
    u1 = min(((A + B * x), key) for key, (A, B) in lines.items() if key[0] == "i")
    u2 = min(((A + B * x), key) for key, (A, B) in lines.items() if key[0] == "ii")
    return (u2 if u2[0] > x else u1)


def region_y_max(beta: BetaProfile, x: Fraction) -> Fraction:
    """Largest 1/q with (1/p, 1/q) = (x, 1/q) in the closure of the (i)-(iii) region."""
    return _envelope(beta, as_fraction(x))[0]


def region_boundary(beta: BetaProfile, resolution: int = 256) -> RegionBoundary:
    """Exact upper envelope of the closed region; the region lies below it.

    Breakpoints are the diagonal crossing and all pairwise line intersections
    where the minimizing line changes; ``resolution`` only controls the
    sampled polyline.
    """
    if resolution < 64:
        raise ValueError("resolution must be at least 64")
    lines = _lines(beta)
    xstar = min(beta.diagonal_vertex(n) for n in range(beta.d + 1))
    cands = {Fraction(0), Fraction(1), xstar}
    keys = list(lines)
    for k1, k2 in itertools.combinations(keys, 2):
        (A1, B1), (A2, B2) = lines[k1], lines[k2]
        if B1 != B2:
            x = (A2 - A1) / (B1 - B2)
            if 0 < x < 1:
                cands.add(x)
    xs = sorted(cands)
    # keep points where the envelope actually bends
    pts = [(x, region_y_max(beta, x)) for x in xs]
    verts = [pts[0]]
    for prev, cur, nxt in zip(pts, pts[1:], pts[2:]):
        (x0, y0), (x1, y1), (x2, y2) = prev, cur, nxt
        # the diagonal crossing is kept even without a bend: the binding condition switches there
        if (y1 - y0) * (x2 - x1) != (y2 - y1) * (x1 - x0) or x1 == xstar:
            verts.append(cur)
    verts.append(pts[-1])
    edges = []
    for (x0, y0), (x1, y1) in zip(verts, verts[1:]):
        mid = (x0 + x1) / 2
        _, key = _envelope(beta, mid)
        edges.append({"from": (x0, y0), "to": (x1, y1), "binding_condition": key[0], "n": key[1]})
    binding = tuple(n for n in range(beta.d + 1) if beta.diagonal_vertex(n) == xstar)
    xs_f = np.linspace(0.0, 1.0, resolution)
    ys_f = np.array([float(region_y_max(beta, Fraction(x).limit_denominator(10 ** 9))) for x in xs_f])
    return RegionBoundary(beta, verts, edges, xstar, binding, np.column_stack([xs_f, ys_f]))


def sweep_region(beta: BetaProfile, resolution: int = 100):
    """Grid sweep of condition_check over (1/p, 1/q) = (a/res, b/res).

    Returns (xs, ys, inside) with inside[i, j] true when (i), (ii) or (iii) holds.
    """
    xs = [Fraction(i, resolution) for i in range(resolution + 1)]
    inside = np.zeros((resolution + 1, resolution + 1), dtype=bool)
    for i, x in enumerate(xs):
        for j, y in enumerate(xs):
            r = condition_check(beta, ExponentPair(x, y))
            inside[i, j] = r.holds["i"] or r.holds["ii"] or r.holds["iii"]
    return xs, xs, inside


def boundary_matches_sweep(beta: BetaProfile, resolution: int = 100) -> Tuple[bool, List]:
    """Every grid point strictly below the envelope is inside; strictly above is outside."""
    xs, ys, inside = sweep_region(beta, resolution)
    bad = []
    for i, x in enumerate(xs):
        ym = region_y_max(beta, x)
        for j, y in enumerate(ys):
            if y < ym and not inside[i, j] and not (y >= x and x == 0):
                bad.append((x, y, "below but outside"))
            if y > ym and inside[i, j]:
                bad.append((x, y, "above but inside"))
    return not bad, bad


# ---------------------------------------------------------- block exponents

def _regime_for(beta: BetaProfile, pq: ExponentPair, regime: Optional[ScalingRegime]) -> ScalingRegime:
    try:
        expected = scaling_regime(beta.d, pq)
    except NoRegime as exc:
        raise RegimeMismatch(str(exc)) from exc
    if regime is None:
        return expected
    if regime.level != expected.level:
        raise RegimeMismatch(f"regime j+theta={regime.level} does not match the pair ({expected.level})")
    return regime


def _check_block(beta: BetaProfile, k: BlockIndex):
    if len(k.k) != beta.d or sorted(k.sigma) != list(range(beta.d)):
        raise RegimeMismatch("block index has the wrong shape")
    if not k.valid(beta):
        raise RegimeMismatch(f"k={k.k} is not in K_beta^sigma for sigma={k.sigma}")


def block_upper_exponent(beta: BetaProfile, k: BlockIndex, pq: ExponentPair,
                         regime: Optional[ScalingRegime] = None, eps=Fraction(0)) -> Fraction:
    """log2 of the conditional upper bound for the block operator with index k."""
    _check_block(beta, k)
    reg = _regime_for(beta, pq, regime)
    eps = as_fraction(eps) if not isinstance(eps, float) else Fraction(eps).limit_denominator(10 ** 12)
    j, th = reg.j, reg.theta
    d = beta.d
    a = pq.gap
    ks = [k.k[k.sigma[m]] for m in range(d)]
    bs = [beta.beta[k.sigma[m]] for m in range(d)]
    K = [kk * bb for kk, bb in zip(ks, bs)]
    if pq.q_gt_p():
        tot = sum((-2 * ks[m] for m in range(j)), Fraction(0))
        tot += K[j] * (1 - th) - 2 * ks[j]
        tot += sum((K[m] - 2 * ks[m] for m in range(j + 1, d)), Fraction(0))
        return tot * a
    curv = 1 - 2 * pq.inv_q
    tot = sum((-2 * ks[m] * a for m in range(j)), Fraction(0))
    tot += K[j] * ((1 - th) * curv - 2 * a / bs[j] + eps)
    tot += sum((K[m] * (curv - 2 * a / bs[m]) for m in range(j + 1, d)), Fraction(0))
    return tot - K[d - 1] * eps


def block_lower_exponent(beta: BetaProfile, k: BlockIndex, pq: ExponentPair,
                         regime: Optional[ScalingRegime] = None) -> Fraction:
    """log2 of the restricted-weak-type lower bound; the growing factor is taken as 1."""
    return block_upper_exponent(beta, k, pq, regime, Fraction(0))


# ---------------------------------------------------------------- dyadic sums

def _enumerate_blocks(beta: BetaProfile, sigma: Sequence[int], K_max: float) -> np.ndarray:
    """All k in K_beta^sigma with k_sigma(1) beta_sigma(1) <= K_max, as rows (k_1..k_d).

    Coordinates with beta_i = 2 are pinned to k_i = 1.
    """
    d = beta.d
    b = [float(x) for x in beta.beta]
    pinned = [beta.beta[i] == 2 for i in range(d)]
    rows = []

    def rec(m, bound, acc):
        if m == d:
            rows.append(list(acc))
            return
        i = sigma[m]
        top = 1 if pinned[i] else int(math.floor(bound / b[i] + 1e-12))
        for kk in range(1, top + 1):
            acc[i] = kk
            rec(m + 1, kk * b[i], acc)
        acc[i] = 0

    rec(0, float(K_max), [0] * d)
    return np.array(rows, dtype=float).reshape(-1, d)


def _upper_exponents_float(beta: BetaProfile, ks: np.ndarray, sigma, pq: ExponentPair,
                           reg: ScalingRegime, eps: float) -> np.ndarray:
    d = beta.d
    b = np.array([float(x) for x in beta.beta])
    sig = list(sigma)
    kk = ks[:, sig]
    bb = b[sig]
    K = kk * bb
    a = float(pq.gap)
    j, th = reg.j, float(reg.theta)
    if pq.q_gt_p():
        tot = -2 * kk[:, :j].sum(axis=1)
        tot += K[:, j] * (1 - th) - 2 * kk[:, j]
        tot += (K[:, j + 1:] - 2 * kk[:, j + 1:]).sum(axis=1)
        return tot * a
    curv = 1 - 2 * float(pq.inv_q)
    tot = -2 * a * kk[:, :j].sum(axis=1)
    tot += K[:, j] * ((1 - th) * curv - 2 * a / bb[j] + eps)
    tot += (K[:, j + 1:] * (curv - 2 * a / bb[j + 1:])).sum(axis=1)
    return tot - K[:, d - 1] * eps


@dataclass
class DyadicSum:
    log2_partial: np.ndarray  # log2 of cumulative sums, indexed by k_sigma(1)
    verdict: str
    log2_total: float
    log2_half: float

    def to_json(self) -> dict:
        return {"verdict": self.verdict, "log2_total": self.log2_total, "log2_half": self.log2_half,
                "log2_partial": self.log2_partial.tolist()}


def dyadic_sum(beta: BetaProfile, pq: ExponentPair, sigma: Optional[Sequence[int]] = None,
               eps: float = 1e-3, K_max: float = 200) -> DyadicSum:
    """Sum 2^{upper exponent} over K_beta^sigma blocks with k_sigma(1) beta_sigma(1) <= K_max.

    converged: the last doubling of K_max adds < 1e-6 of the total;
    diverged: the sum more than doubles over the last doubling.
    """
    if K_max > 200:
        raise ValueError("K_max must not exceed 200")
    d = beta.d
    sigma = tuple(range(d)) if sigma is None else tuple(sigma)
    try:
        reg = scaling_regime(d, pq)
    except NoRegime as exc:
        raise RegimeMismatch(str(exc)) from exc
    ks = _enumerate_blocks(beta, sigma, K_max)
    e = _upper_exponents_float(beta, ks, sigma, pq, reg, 0.0 if pq.q_gt_p() else eps)
    if ks.shape[0] == 0:
        raise ValueError(f"K_max={K_max} admits no blocks")
    lead = ks[:, sigma[0]]
    top = int(lead.max())
    per = np.full(top, -np.inf)
    for kk in range(1, top + 1):
        sel = e[lead == kk]
        if sel.size:
            per[kk - 1] = np.logaddexp2.reduce(sel)
    partial = np.logaddexp2.accumulate(per)
    b1 = float(beta.beta[sigma[0]])
    half_idx = int(math.floor(K_max / 2 / b1 + 1e-12))
    total = float(partial[-1])
    half = float(partial[min(half_idx, top) - 1]) if half_idx >= 1 else -np.inf
    if total == -np.inf:
        verdict = "converged"
    else:
        tail_rel = 1.0 - 2.0 ** (half - total) if half > -np.inf else 1.0
        if tail_rel < 1e-6:
            verdict = "converged"
        elif total - half > 1.0:
            verdict = "diverged"
        else:
            verdict = "inconclusive"
    return DyadicSum(partial, verdict, total, half)


def all_sigmas(d: int):
    if d > 4:
        log.warning("d=%d: only the identity permutation is summed", d)
        return [tuple(range(d))]
    return list(itertools.permutations(range(d)))


def admissible_sigmas(beta: BetaProfile, K_max: float = 200):
    """Permutations whose block set is nonempty below K_max (pinned coordinates need k*beta <= K)."""
    out = []
    for s in all_sigmas(beta.d):
        if _enumerate_blocks(beta, s, K_max).shape[0]:
            out.append(s)
    return out


def dyadic_verdict(beta: BetaProfile, pq: ExponentPair, eps: float = 1e-3, K_max: float = 200) -> str:
    """Combined verdict over all permutations: converged only if every one converges."""
    verdicts = [dyadic_sum(beta, pq, s, eps, K_max).verdict for s in admissible_sigmas(beta, K_max)]
    if all(v == "converged" for v in verdicts):
        return "converged"
    if any(v == "diverged" for v in verdicts):
        return "diverged"
    return "inconclusive"


# ----------------------------------------------------------- counterexamples

def _failing_indices(beta: BetaProfile, pq: ExponentPair) -> List[int]:
    d = beta.d
    if pq.q_gt_p():
        return [n for n in range(1, d + 1) if _i_slack(beta, pq, n) < 0]
    out = [n for n in range(d) if _ii_slack(beta, pq, n) <= 0]
    if _eq_d(beta, pq) < 0:
        out.append(d)
    return out


def counterexample_slope(beta: BetaProfile, pq: ExponentPair) -> Tuple[Fraction, int]:
    """Exact growth rate per unit N of the lower bound along k(N), and the n used."""
    rep = condition_check(beta, pq)
    if rep.verdict != "none":
        raise NoFailureWitness(f"condition ({rep.verdict}) holds")
    reg = scaling_regime(beta.d, pq)
    s = reg.level
    a = pq.gap
    J = beta.J
    best = None
    for n in _failing_indices(beta, pq):
        if n < s:
            continue
        if pq.q_gt_p():
            slope = -(2 * J[n] - (n - s)) * a
        else:
            slope = -(2 * J[n] * a - (n - s) * (1 - 2 * pq.inv_q))
        if best is None or slope > best[0]:
            best = (slope, n)
    if best is None:
        raise NoFailureWitness("no failing index n >= j + theta")
    return best


def counterexample_k(beta: BetaProfile, n: int, N: int) -> Tuple[int, ...]:
    """(floor(N/beta_1), ..., floor(N/beta_n), 1, ..., 1), lowered where needed to stay ordered."""
    k = [max(1, math.floor(N / b)) if i < n else 1 for i, b in enumerate(beta.beta)]
    for i in range(1, beta.d):
        while k[i] > 1 and k[i] * beta.beta[i] > k[i - 1] * beta.beta[i - 1]:
            k[i] -= 1
    return tuple(k)


def counterexample_growth(beta: BetaProfile, pq: ExponentPair, N: int) -> Fraction:
    """log2 of the lower bound at the block k(N) built from the failing index."""
    _, n = counterexample_slope(beta, pq)
    k = BlockIndex(counterexample_k(beta, n, N), tuple(range(beta.d)))
    return block_lower_exponent(beta, k, pq)
