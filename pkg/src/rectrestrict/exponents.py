"""Exact exponent bookkeeping for extension operators over rectangles.

All quantities live in the (1/p, 1/q) Riesz diagram and are carried as
:class:`fractions.Fraction` so the scaling identities hold exactly.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional, Sequence, Union

Rational = Union[int, Fraction, str]

Q_GT_P = "q_gt_p"
Q_LE_P = "q_le_p"
Q_GT_4 = "q_gt_4"
BRANCHES = (Q_GT_P, Q_LE_P, Q_GT_4)


class NoRegime(ValueError):
    """The exponent pair lies outside every scaling family."""


class DegenerateLine(ZeroDivisionError):
    """The interpolated pair sits on the degenerate line d - j - nu = 0."""


def as_fraction(x: Rational) -> Fraction:
    if isinstance(x, Fraction):
        return x
    if isinstance(x, float):
        raise TypeError("exponent algebra is exact; pass an int, Fraction or 'num/den'")
    return Fraction(x)


def fraction_to_str(x: Fraction) -> str:
    x = Fraction(x)
    return f"{x.numerator}/{x.denominator}"


def fraction_from_str(s: str) -> Fraction:
    return Fraction(s)


def dual_exponent(inv_p: Rational) -> Fraction:
    """Hoelder conjugate on the reciprocal scale: 1/p' = 1 - 1/p."""
    inv_p = as_fraction(inv_p)
    if not 0 <= inv_p <= 1:
        raise ValueError(f"1/p must lie in [0, 1], got {inv_p}")
    return 1 - inv_p


@dataclass(frozen=True)
class ExponentPair:
    inv_p: Fraction
    inv_q: Fraction

    def __post_init__(self):
        object.__setattr__(self, "inv_p", as_fraction(self.inv_p))
        object.__setattr__(self, "inv_q", as_fraction(self.inv_q))
        for name in ("inv_p", "inv_q"):
            v = getattr(self, name)
            if not 0 <= v <= 1:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")

    @classmethod
    def from_pq(cls, p, q) -> "ExponentPair":
        """Build from p, q; ``math.inf`` or the string 'inf' means infinity."""
        return cls(_reciprocal(p), _reciprocal(q))

    @property
    def inv_pp(self) -> Fraction:
        return 1 - self.inv_p

    @property
    def p(self) -> float:
        return math.inf if self.inv_p == 0 else float(1 / self.inv_p)

    @property
    def q(self) -> float:
        return math.inf if self.inv_q == 0 else float(1 / self.inv_q)

    @property
    def gap(self) -> Fraction:
        """1/p' - 1/q, the exponent that multiplies every q > p scaling factor."""
        return self.inv_pp - self.inv_q

    def q_gt_p(self) -> bool:
        return self.inv_q < self.inv_p

    def to_json(self) -> dict:
        return {"inv_p": fraction_to_str(self.inv_p), "inv_q": fraction_to_str(self.inv_q)}

    @classmethod
    def from_json(cls, obj: dict) -> "ExponentPair":
        return cls(Fraction(obj["inv_p"]), Fraction(obj["inv_q"]))

    def __str__(self):
        def fmt(v):
            return "inf" if v == 0 else str(1 / v)
        return f"(p={fmt(self.inv_p)}, q={fmt(self.inv_q)})"


def _reciprocal(x) -> Fraction:
    if isinstance(x, str) and x.strip().lower() in ("inf", "infinity", "oo"):
        return Fraction(0)
    if isinstance(x, float):
        if math.isinf(x):
            return Fraction(0)
        raise TypeError("use int or Fraction exponents, not float")
    x = as_fraction(x)
    if x < 1:
        raise ValueError(f"Lebesgue exponent must be >= 1, got {x}")
    return 1 / x


@dataclass(frozen=True)
class ScalingRegime:
    j: int
    theta: Fraction
    branch: str

    @property
    def level(self) -> Fraction:
        """j + theta, the number of 'short' directions counted fractionally."""
        return self.j + self.theta

    def to_json(self) -> dict:
        return {"j": self.j, "theta": fraction_to_str(self.theta), "branch": self.branch}


@dataclass(frozen=True)
class PredictedExponents:
    per_sidelength: tuple
    epsilon_slack: Fraction = Fraction(0)
    slack_axes: Optional[tuple] = None  # (numerator axis d, denominator axis j+1), 1-based

    def predicted_norm(self, ell: Sequence[float], eps: float = 0.0) -> float:
        val = 1.0
        for li, e in zip(ell, self.per_sidelength):
            val *= float(li) ** float(e)
        if eps and self.slack_axes is not None:
            a, b = self.slack_axes
            val *= (float(ell[a - 1]) / float(ell[b - 1])) ** eps
        return val

    def to_json(self) -> dict:
        return {
            "per_sidelength": [fraction_to_str(e) for e in self.per_sidelength],
            "epsilon_slack": fraction_to_str(self.epsilon_slack),
            "slack_axes": list(self.slack_axes) if self.slack_axes else None,
        }


def td_strict_bound(d: int) -> Fraction:
    """1/q must stay strictly below d / (2(d+1))."""
    return Fraction(d, 2 * (d + 1))


def in_Td(d: int, pq: ExponentPair) -> bool:
    if d < 1:
        raise ValueError("d >= 1 required")
    strict = pq.inv_q < td_strict_bound(d)
    # q >= (d+2)/d p'  <=>  (d+2)/q <= d/p'
    knapp = (d + 2) * pq.inv_q <= d * pq.inv_pp
    return strict and knapp


def in_Td_closure(d: int, pq: ExponentPair) -> bool:
    return pq.inv_q <= td_strict_bound(d) and (d + 2) * pq.inv_q <= d * pq.inv_pp


def _split_level(s: Fraction) -> tuple:
    """Write s = j + theta with theta in (0, 1], except s = 0 -> (0, 0)."""
    if s == 0:
        return 0, Fraction(0)
    j = math.ceil(s) - 1
    return j, s - j


def q_gt_p_codim(pq: ExponentPair) -> Fraction:
    """m = d - j - theta solving q = ((m+2)/m) p'."""
    gap = pq.gap
    if gap <= 0:
        raise NoRegime(f"{pq}: need q > p' for a q > p scaling line")
    return 2 * pq.inv_q / gap


def q_le_p_codim(pq: ExponentPair) -> Fraction:
    """m = d - j - theta solving q = 2(m+1)/m."""
    if 2 * pq.inv_q >= 1:
        raise NoRegime(f"{pq}: q <= 2 has no q <= p scaling line")
    return 2 * pq.inv_q / (1 - 2 * pq.inv_q)


def scaling_regime(d: int, pq: ExponentPair, branch: Optional[str] = None) -> ScalingRegime:
    """Locate (j, theta, branch) for an exponent pair in the closure of T_d.

    When ``branch`` is omitted it is inferred: q > p uses the q > p lines,
    q <= p uses the q <= p lines for q <= 4 and the q > 4 family otherwise.
    For the q > 4 family (j, theta) still come from the q <= p line equation,
    which puts j = d - 1 whenever q > 4.
    """
    if d < 1:
        raise ValueError("d >= 1 required")
    if not in_Td_closure(d, pq):
        raise NoRegime(f"{pq} lies outside the closure of T_{d}")
    if branch is None:
        if pq.q_gt_p():
            branch = Q_GT_P
        elif 4 * pq.inv_q >= 1:
            branch = Q_LE_P
        else:
            branch = Q_GT_4
    if branch == Q_GT_P:
        if not pq.q_gt_p():
            raise NoRegime(f"{pq}: q > p branch requested but q <= p")
        if pq.inv_pp == 0:
            # p = 1, q = infinity: every factor carries the exponent 0
            return ScalingRegime(d - 1, Fraction(1), Q_GT_P)
        s = d - q_gt_p_codim(pq)
    elif branch == Q_LE_P:
        if pq.q_gt_p() or 4 * pq.inv_q < 1:
            raise NoRegime(f"{pq}: q <= p, q <= 4 branch requested")
        s = d - q_le_p_codim(pq)
        if s <= 0:
            raise NoRegime(f"{pq}: q <= p lines need theta > 0")
    elif branch == Q_GT_4:
        # q > 4 and p >= (q/3)'  <=>  1/p <= 1 - 3/q
        if not (4 * pq.inv_q < 1 and pq.inv_p <= 1 - 3 * pq.inv_q):
            raise NoRegime(f"{pq}: q > 4 family needs q > 4 and p >= (q/3)'")
        s = d - q_le_p_codim(pq)
    else:
        raise ValueError(f"unknown branch {branch!r}")
    if not 0 <= s <= d:
        raise NoRegime(f"{pq}: level j + theta = {s} outside [0, {d}]")
    j, theta = _split_level(s)
    return ScalingRegime(j, theta, branch)


def q_from_regime(d: int, regime: ScalingRegime, inv_p: Fraction) -> Fraction:
    """Recover 1/q from (j, theta) on the regime's defining line."""
    m = d - regime.level
    if regime.branch == Q_GT_P:
        return m * (1 - as_fraction(inv_p)) / (m + 2)
    return m / (2 * (m + 1))


def conjectured_exponents(d: int, pq: ExponentPair, ell: Optional[Sequence] = None,
                          branch: Optional[str] = None) -> PredictedExponents:
    """Per-sidelength exponents e with predicted norm prod l_i^{e_i}.

    ``ell`` is only checked for the sorted convention; the exponents depend
    on (d, p, q) alone.
    """
    if ell is not None:
        if len(ell) != d:
            raise ValueError("len(ell) must equal d")
        if any(float(a) > float(b) for a, b in zip(ell, ell[1:])):
            raise ValueError("sidelengths must be sorted nondecreasing")
    reg = scaling_regime(d, pq, branch)
    j, theta = reg.j, reg.theta
    if reg.branch == Q_GT_P:
        a = pq.gap
        e = [a if i < j else (theta * a if i == j else Fraction(0)) for i in range(d)]
        return PredictedExponents(tuple(e))
    if reg.branch == Q_LE_P:
        base = pq.inv_q - pq.inv_p
        curv = 1 - 2 * pq.inv_q
        e = []
        for i in range(d):
            if i < j:
                e.append(base + curv)
            elif i == j:
                e.append(base + theta * curv)
            else:
                e.append(base)
        return PredictedExponents(tuple(e), epsilon_slack=Fraction(0), slack_axes=(d, j + 1))
    a = pq.gap
    e = [a] * (d - 1) + [1 - 3 * pq.inv_q - pq.inv_p]
    return PredictedExponents(tuple(e))


def knapp_identity_sides(d: int, pq: ExponentPair, regime: ScalingRegime) -> tuple:
    """Both sides of (d-j)(1/p'-1/q) - 2/q = theta(1/p'-1/q)."""
    a = pq.gap
    return (d - regime.j) * a - 2 * pq.inv_q, regime.theta * a


def interpolation_identity(d: int, j: int, pq0: ExponentPair, pq1: ExponentPair, t: Rational):
    """Interpolate between the level-j and level-(j+1) scaling lines.

    Returns (nu, lhs, rhs) where nu is the interpolated level and lhs, rhs
    are nu (1/p_t' - 1/q_t) and t (1/p_1' - 1/q_1).
    """
    t = as_fraction(t)
    if not 0 <= t <= 1:
        raise ValueError("t must lie in [0, 1]")
    for i, pq in enumerate((pq0, pq1)):
        m = d - j - i
        if m < 0:
            raise ValueError("need j + 1 <= d")
        # q_i = ((m+2)/m) p_i'  <=>  (m+2)/q_i = m/p_i'
        if (m + 2) * pq.inv_q != m * pq.inv_pp:
            raise ValueError(f"pq{i}={pq} is not on the line q = (({m}+2)/{m}) p'")
    inv_p = (1 - t) * pq0.inv_p + t * pq1.inv_p
    inv_q = (1 - t) * pq0.inv_q + t * pq1.inv_q
    gap = (1 - inv_p) - inv_q
    if inv_q == 0 or gap == 0:
        raise DegenerateLine("d - j - nu = 0 at the interpolated pair")
    m = 2 * inv_q / gap
    nu = d - j - m
    lhs = nu * gap
    rhs = t * pq1.gap
    return nu, lhs, rhs
