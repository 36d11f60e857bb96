"""Surfaces elliptic over rectangles.

A surface is a function ``g`` on a rectangle together with access to its
partial derivatives of every order.  Closed forms are used for polynomial
perturbations of the paraboloid and for sums of powers ``c_i |xi_i|^b_i``;
user callables fall back to central finite differences.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from typing import Callable, Dict, Optional, Sequence, Tuple

import numpy as np


class InvalidBeta(ValueError):
    pass


class UnboundedDomain(ValueError):
    pass


class EmptySlice(ValueError):
    pass


class NonOrthonormalBasis(ValueError):
    pass


class NotContained(ValueError):
    pass


# ---------------------------------------------------------------- domains

@dataclass(frozen=True)
class Sidelengths:
    """Half-sidelengths of Q^ell = prod (-l_i, l_i); entries may be math.inf."""

    lengths: Tuple[float, ...]

    def __post_init__(self):
        ls = tuple(float(x) for x in self.lengths)
        if not ls:
            raise ValueError("need at least one sidelength")
        if any(not (x > 0) for x in ls):
            raise ValueError(f"sidelengths must be positive, got {ls}")
        if any(a > b for a, b in zip(ls, ls[1:])):
            raise ValueError(f"sidelengths must be sorted nondecreasing, got {ls}")
        object.__setattr__(self, "lengths", ls)

    @classmethod
    def unit(cls, d: int) -> "Sidelengths":
        return cls((1.0,) * d)

    @property
    def d(self) -> int:
        return len(self.lengths)

    @property
    def finite(self) -> bool:
        return all(math.isfinite(x) for x in self.lengths)

    def require_finite(self):
        if not self.finite:
            raise UnboundedDomain(f"{self.lengths} has an infinite side; truncate first")

    def truncated(self, cap: float) -> "Sidelengths":
        return Sidelengths(tuple(min(x, cap) for x in self.lengths))

    def scaled(self, lam: float) -> "Sidelengths":
        return Sidelengths(tuple(lam * x for x in self.lengths))

    def as_array(self) -> np.ndarray:
        return np.asarray(self.lengths, dtype=float)

    @property
    def volume(self) -> float:
        return float(np.prod(2.0 * self.as_array()))

    def to_box(self) -> "Box":
        return Box(np.zeros(self.d), self.as_array())

    def apply(self, eta: np.ndarray) -> np.ndarray:
        """The scaling map A^ell applied to rows of ``eta``."""
        return np.asarray(eta) * self.as_array()


@dataclass(frozen=True, eq=False)
class Box:
    """Axis-parallel box center + prod(-halfwidths, halfwidths)."""

    center: np.ndarray
    halfwidths: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.center, dtype=float).reshape(-1)
        h = np.asarray(self.halfwidths, dtype=float).reshape(-1)
        if c.shape != h.shape:
            raise ValueError("center and halfwidths differ in dimension")
        if np.any(h <= 0):
            raise ValueError("halfwidths must be positive")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "halfwidths", h)

    @property
    def d(self) -> int:
        return self.center.size

    @property
    def volume(self) -> float:
        return float(np.prod(2.0 * self.halfwidths))

    @property
    def lower(self) -> np.ndarray:
        return self.center - self.halfwidths

    @property
    def upper(self) -> np.ndarray:
        return self.center + self.halfwidths

    def contains_box(self, other: "Box", tol: float = 1e-12) -> bool:
        return bool(np.all(other.lower >= self.lower - tol) and np.all(other.upper <= self.upper + tol))

    def corners(self) -> np.ndarray:
        signs = np.array(list(itertools.product((-1.0, 1.0), repeat=self.d)))
        return self.center + signs * self.halfwidths

    def grid(self, n: int) -> np.ndarray:
        """Closed tensor grid with n points per axis, shape (n**d, d)."""
        axes = [np.linspace(lo, hi, n) for lo, hi in zip(self.lower, self.upper)]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, self.d)

    def to_json(self) -> dict:
        return {"center": self.center.tolist(), "halfwidths": self.halfwidths.tolist()}


@dataclass(frozen=True, eq=False)
class Polytope:
    """Convex set {eta : A eta < b} with a bounding box used for sampling."""

    A: np.ndarray
    b: np.ndarray
    bbox: Box

    def contains(self, pts: np.ndarray, tol: float = 1e-12) -> np.ndarray:
        return np.all(pts @ self.A.T <= self.b + tol, axis=1)

    @property
    def d(self) -> int:
        return self.bbox.d


# ------------------------------------------------------ multi-index algebra

def multi_indices(d: int, order: int):
    """All multi-indices of total order exactly ``order``."""
    for combo in itertools.combinations_with_replacement(range(d), order):
        alpha = [0] * d
        for i in combo:
            alpha[i] += 1
        yield tuple(alpha)


def multi_indices_upto(d: int, order: int):
    for r in range(order + 1):
        yield from multi_indices(d, r)


def _add(a, b):
    return tuple(x + y for x, y in zip(a, b))


def _unit(d, i):
    e = [0] * d
    e[i] = 1
    return tuple(e)


def _linear_expansion(M: np.ndarray, gamma: Tuple[int, ...]) -> Dict[Tuple[int, ...], float]:
    """Expand prod_s (sum_i M[i, s] d_i)^{gamma_s} into {beta: coef}."""
    d = M.shape[0]
    ops = {tuple([0] * d): 1.0}
    for s, power in enumerate(gamma):
        for _ in range(power):
            new: Dict[Tuple[int, ...], float] = {}
            for beta, c in ops.items():
                for i in range(d):
                    w = M[i, s]
                    if w == 0.0:
                        continue
                    key = _add(beta, _unit(d, i))
                    new[key] = new.get(key, 0.0) + c * w
            ops = new
    return ops


# ---------------------------------------------------------------- surfaces

class Surface:
    """Base class: subclasses implement ``deriv(beta, xi)`` for g."""

    kind = "abstract"

    def __init__(self, dim: int, domain, smoothness_order: int = 8):
        self.dim = int(dim)
        self.domain = domain
        self.smoothness_order = smoothness_order

    # subclasses override
    def deriv(self, beta: Tuple[int, ...], xi: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def separable_factors(self) -> Optional[list]:
        """Per-axis (g_i, g_i') callables when g(xi) = sum_i g_i(xi_i), else None."""
        return None

    def descriptor(self) -> dict:
        return {"kind": self.kind}

    # generic access
    def _pts(self, xi) -> np.ndarray:
        xi = np.asarray(xi, dtype=float)
        return xi.reshape(-1, self.dim)

    def g(self, xi) -> np.ndarray:
        xi = np.asarray(xi, dtype=float)
        out = self.deriv(tuple([0] * self.dim), self._pts(xi))
        return out.reshape(xi.shape[:-1]) if xi.ndim > 1 else out[0]

    def grad(self, xi) -> np.ndarray:
        xi = np.asarray(xi, dtype=float)
        pts = self._pts(xi)
        out = np.stack([self.deriv(_unit(self.dim, i), pts) for i in range(self.dim)], axis=-1)
        return out.reshape(xi.shape) if xi.ndim > 1 else out[0]

    def hess(self, xi) -> np.ndarray:
        return self.hess_deriv(tuple([0] * self.dim), xi)

    def hess_deriv(self, alpha, xi) -> np.ndarray:
        """d^alpha D^2 g at the points ``xi``; trailing shape (d, d)."""
        xi = np.asarray(xi, dtype=float)
        pts = self._pts(xi)
        d = self.dim
        out = np.empty((pts.shape[0], d, d))
        for a in range(d):
            for b in range(a, d):
                beta = _add(_add(tuple(alpha), _unit(d, a)), _unit(d, b))
                v = self.deriv(beta, pts)
                out[:, a, b] = v
                out[:, b, a] = v
        return out.reshape(xi.shape[:-1] + (d, d)) if xi.ndim > 1 else out[0]

    def hess_h_deriv(self, alpha, xi) -> np.ndarray:
        """d^alpha D^2 h for h = g - |xi|^2."""
        out = self.hess_deriv(alpha, xi)
        if sum(alpha) == 0:
            out = out - 2.0 * np.eye(self.dim)
        return out

    def h(self, xi) -> np.ndarray:
        xi = np.asarray(xi, dtype=float)
        return self.g(xi) - np.sum(xi * xi, axis=-1)


class PolynomialSurface(Surface):
    """g(xi) = |xi|^2 + sum_alpha c_alpha xi^alpha."""

    kind = "polynomial"

    def __init__(self, dim: int, terms: Optional[Dict[Tuple[int, ...], float]] = None,
                 domain: Optional[Sidelengths] = None, smoothness_order: int = 1000):
        domain = domain if domain is not None else Sidelengths.unit(dim)
        super().__init__(dim, domain, smoothness_order)
        self.terms = {}
        for alpha, c in (terms or {}).items():
            alpha = tuple(int(a) for a in alpha)
            if len(alpha) != dim:
                raise ValueError(f"multi-index {alpha} has wrong length")
            if c:
                self.terms[alpha] = self.terms.get(alpha, 0.0) + float(c)
        for i in range(dim):
            e2 = tuple(2 if k == i else 0 for k in range(dim))
            self.terms[e2] = self.terms.get(e2, 0.0) + 1.0

    @property
    def perturbation(self) -> Dict[Tuple[int, ...], float]:
        out = dict(self.terms)
        for i in range(self.dim):
            e2 = tuple(2 if k == i else 0 for k in range(self.dim))
            out[e2] = out[e2] - 1.0
            if out[e2] == 0.0:
                del out[e2]
        return out

    def deriv(self, beta, xi):
        xi = np.asarray(xi, dtype=float)
        total = np.zeros(xi.shape[0])
        for alpha, c in self.terms.items():
            if any(b > a for a, b in zip(alpha, beta)):
                continue
            coef = c
            mono = np.ones(xi.shape[0])
            for i, (a, b) in enumerate(zip(alpha, beta)):
                coef *= math.perm(a, b)
                if a - b:
                    mono = mono * xi[:, i] ** (a - b)
            total += coef * mono
        return total

    def separable_factors(self):
        # separable iff every monomial involves a single coordinate
        per_axis = [dict() for _ in range(self.dim)]
        for alpha, c in self.terms.items():
            nz = [i for i, a in enumerate(alpha) if a]
            if len(nz) > 1:
                return None
            if nz:
                per_axis[nz[0]][alpha[nz[0]]] = c
        out = []
        for coeffs in per_axis:
            out.append(_poly_1d(coeffs))
        return out

    def descriptor(self):
        return {
            "kind": "paraboloid" if not self.perturbation else "polynomial",
            "dim": self.dim,
            "terms": [[list(a), c] for a, c in sorted(self.perturbation.items())],
            "domain": list(self.domain.lengths),
        }


def _poly_1d(coeffs: Dict[int, float]):
    def g1(x):
        x = np.asarray(x, dtype=float)
        return sum(c * x ** k for k, c in coeffs.items()) + 0.0 * x

    def dg1(x):
        x = np.asarray(x, dtype=float)
        return sum(c * k * x ** (k - 1) for k, c in coeffs.items() if k) + 0.0 * x

    return g1, dg1


class PowerSumSurface(Surface):
    """g(xi) = sum_i c_i |xi_i|^{b_i}; covers g_beta and the dyadic block surfaces."""

    kind = "power_sum"

    def __init__(self, coefs: Sequence[float], powers: Sequence[float], domain,
                 smoothness_order: int = 1000):
        coefs = np.asarray(coefs, dtype=float)
        powers = np.asarray([float(b) for b in powers])
        if coefs.shape != powers.shape:
            raise ValueError("coefs and powers differ in length")
        super().__init__(coefs.size, domain, smoothness_order)
        self.coefs = coefs
        self.powers = powers

    def deriv(self, beta, xi):
        xi = np.asarray(xi, dtype=float)
        nz = [i for i, b in enumerate(beta) if b]
        if len(nz) > 1:
            return np.zeros(xi.shape[0])
        if not nz:
            return np.sum(self.coefs * np.abs(xi) ** self.powers, axis=1)
        i = nz[0]
        r = beta[i]
        b = self.powers[i]
        falling = 1.0
        for s in range(r):
            falling *= b - s
        x = xi[:, i]
        with np.errstate(divide="ignore", invalid="ignore"):
            mag = np.abs(x) ** (b - r)
        sign = np.sign(x) ** r if r % 2 else np.ones_like(x)
        return self.coefs[i] * falling * mag * sign

    def separable_factors(self):
        out = []
        for c, b in zip(self.coefs, self.powers):
            def g1(x, c=c, b=b):
                return c * np.abs(np.asarray(x, dtype=float)) ** b

            def dg1(x, c=c, b=b):
                x = np.asarray(x, dtype=float)
                return c * b * np.abs(x) ** (b - 1) * np.sign(x)

            out.append((g1, dg1))
        return out

    def descriptor(self):
        dom = self.domain
        return {
            "kind": "power_sum",
            "coefs": self.coefs.tolist(),
            "powers": self.powers.tolist(),
            "domain": list(dom.lengths) if isinstance(dom, Sidelengths) else dom.to_json(),
        }


class ComposedSurface(Surface):
    """eta -> scale * g(offset + M eta), optionally minus the tangent plane at offset."""

    kind = "composed"

    def __init__(self, parent: Surface, offset, matrix, scale: float = 1.0,
                 subtract_tangent: bool = False, domain=None):
        M = np.atleast_2d(np.asarray(matrix, dtype=float))
        super().__init__(M.shape[1], domain, parent.smoothness_order)
        self.parent = parent
        self.offset = np.asarray(offset, dtype=float).reshape(-1)
        self.M = M
        self.scale = float(scale)
        self.subtract_tangent = subtract_tangent
        self._diag = np.allclose(M, np.diag(np.diag(M))) if M.shape[0] == M.shape[1] else False
        if subtract_tangent:
            o = self.offset[None, :]
            self._g0 = float(parent.deriv(tuple([0] * parent.dim), o)[0])
            self._grad0 = np.array([parent.deriv(_unit(parent.dim, i), o)[0] for i in range(parent.dim)])

    @lru_cache(maxsize=None)
    def _expansion(self, gamma):
        return _linear_expansion(self.M, gamma)

    def deriv(self, gamma, eta):
        eta = np.asarray(eta, dtype=float)
        xi = self.offset + eta @ self.M.T
        total = np.zeros(eta.shape[0])
        for beta, c in self._expansion(tuple(gamma)).items():
            total += c * self.parent.deriv(beta, xi)
        total *= self.scale
        if self.subtract_tangent:
            r = sum(gamma)
            if r == 0:
                total -= self.scale * (self._g0 + eta @ (self.M.T @ self._grad0))
            elif r == 1:
                s = gamma.index(1)
                total -= self.scale * float(self.M[:, s] @ self._grad0)
        return total

    def separable_factors(self):
        pf = self.parent.separable_factors()
        if pf is None or not self._diag or self.subtract_tangent:
            return None
        out = []
        for i, (g1, dg1) in enumerate(pf):
            m, o, sc = self.M[i, i], self.offset[i], self.scale

            def h1(x, g1=g1, m=m, o=o, sc=sc):
                return sc * g1(o + m * np.asarray(x, dtype=float))

            def dh1(x, dg1=dg1, m=m, o=o, sc=sc):
                return sc * m * dg1(o + m * np.asarray(x, dtype=float))

            out.append((h1, dh1))
        return out

    def descriptor(self):
        return {
            "kind": "composed",
            "parent": self.parent.descriptor(),
            "offset": self.offset.tolist(),
            "matrix": self.M.tolist(),
            "scale": self.scale,
            "subtract_tangent": self.subtract_tangent,
        }


class CallableSurface(Surface):
    """User-supplied g; derivatives by nested central differences.

    The Hessian uses step ``l_i * 1e-4``; each further derivative level
    uses ``l_i * 1e-3`` because roundoff grows like step**-order.
    """

    kind = "callable"

    def __init__(self, dim: int, func: Callable[[np.ndarray], np.ndarray], domain: Sidelengths,
                 smoothness_order: int = 2):
        super().__init__(dim, domain, smoothness_order)
        self.func = func
        scale = np.minimum(domain.as_array(), 1.0) if isinstance(domain, Sidelengths) else np.ones(dim)
        self.hess_step = scale * 1e-4
        self.outer_step = scale * 1e-3

    def deriv(self, beta, xi):
        xi = np.asarray(xi, dtype=float)
        beta = list(beta)
        order = sum(beta)
        if order == 0:
            return np.asarray(self.func(xi), dtype=float)
        # peel the first two orders with the fine step, the rest with the coarse one
        i = next(k for k, b in enumerate(beta) if b)
        beta[i] -= 1
        step = self.hess_step[i] if order <= 2 else self.outer_step[i]
        e = np.zeros(self.dim)
        e[i] = step
        return (self.deriv(tuple(beta), xi + e) - self.deriv(tuple(beta), xi - e)) / (2 * step)


# ------------------------------------------------------------ constructors

def make_paraboloid(d: int, ell: Optional[Sidelengths] = None) -> PolynomialSurface:
    return PolynomialSurface(d, {}, domain=ell if ell is not None else Sidelengths.unit(d))


def make_polynomial(d: int, terms: Dict[Tuple[int, ...], float], ell: Optional[Sidelengths] = None):
    return PolynomialSurface(d, terms, domain=ell if ell is not None else Sidelengths.unit(d))


def _check_beta(beta):
    beta = [Fraction(b) if not isinstance(b, float) else b for b in beta]
    if any(b <= 1 for b in beta):
        raise InvalidBeta(f"every exponent must exceed 1, got {beta}")
    return [float(b) for b in beta]


def make_gbeta(beta, ell: Optional[Sidelengths] = None) -> PowerSumSurface:
    """g_beta(xi) = sum |xi_j|^{beta_j}; accepts a BetaProfile or a sequence."""
    b = _check_beta(getattr(beta, "beta", beta))
    d = len(b)
    s = PowerSumSurface(np.ones(d), b, ell if ell is not None else Sidelengths.unit(d))
    s.kind = "gbeta"
    return s


def block_exponents(beta, k, sigma=None) -> np.ndarray:
    """K_i = k_{sigma(i)} beta_{sigma(i)}; sigma uses 0-based indices."""
    b = _check_beta(getattr(beta, "beta", beta))
    d = len(b)
    sigma = tuple(range(d)) if sigma is None else tuple(sigma)
    if sorted(sigma) != list(range(d)):
        raise ValueError(f"sigma={sigma} is not a permutation of 0..{d - 1}")
    return np.array([float(k[sigma[i]]) * b[sigma[i]] for i in range(d)])


def make_block_surface(beta, k, sigma=None):
    """Rescaled dyadic piece g_beta^k and the sidelengths (2^{-K_1}, ..., 2^{-K_d}).

    In the coordinates eta_i = 2^{(2-beta)k} xi the piece is
    sum_i 2^{K_i (beta_i - 2)} |eta_i|^{beta_i} over the block
    2^{-K_i} < eta_i <= 4 * 2^{-K_i}, with K_i = k_{sigma(i)} beta_{sigma(i)}.
    The returned surface carries that block (a :class:`Box`) as its domain.
    """
    b = _check_beta(getattr(beta, "beta", beta))
    d = len(b)
    sigma = tuple(range(d)) if sigma is None else tuple(sigma)
    K = block_exponents(b, k, sigma)
    if any(K[i] < K[i + 1] for i in range(d - 1)):
        raise ValueError(f"k={tuple(k)} is not in K_beta^sigma for sigma={sigma}")
    powers = np.array([b[sigma[i]] for i in range(d)])
    coefs = 2.0 ** (K * (powers - 2.0))
    lo = 2.0 ** (-K)
    block = Box(2.5 * lo, 1.5 * lo)
    surf = PowerSumSurface(coefs, powers, block)
    surf.kind = "block"
    return surf, Sidelengths(tuple(2.0 ** (-K)))


# ---------------------------------------------------------------- ellipticity

@dataclass
class EllipticityCertificate:
    deficit: float
    order: int
    sample_resolution: int
    scales: Tuple[int, ...] = ()
    per_order: Dict[int, float] = field(default_factory=dict)
    normalization_residual: float = 0.0

    def to_json(self) -> dict:
        return {
            "deficit": self.deficit,
            "order": self.order,
            "sample_resolution": self.sample_resolution,
            "scales": list(self.scales),
            "per_order": {str(k): v for k, v in self.per_order.items()},
            "normalization_residual": self.normalization_residual,
        }


def _sampled_cn_norm(s: Surface, pts: np.ndarray, weights: np.ndarray, order: int):
    """max over |alpha| <= order and pts of max-entry |weights^alpha d^alpha D^2 h|."""
    per_order = {}
    for r in range(order + 1):
        best = 0.0
        for alpha in multi_indices(s.dim, r):
            scale = float(np.prod(weights ** np.asarray(alpha)))
            with np.errstate(invalid="ignore", over="ignore"):
                vals = s.hess_h_deriv(alpha, pts)
            m = np.nanmax(np.abs(vals)) if np.all(np.isfinite(vals)) else math.inf
            best = max(best, scale * m)
        per_order[r] = best
    return per_order


def _normalization_residual(s: Surface, at: np.ndarray) -> float:
    z = at[None, :]
    d = s.dim
    vals = [abs(float(s.h(z)[0]))]
    vals += [abs(float(s.deriv(_unit(d, i), z)[0] - 2 * at[i])) for i in range(d)]
    vals.append(float(np.max(np.abs(s.hess_h_deriv(tuple([0] * d), z)))))
    return max(vals)


def ellipticity_deficit(s: Surface, order: int = 2, grid: int = 17,
                        shrinkings: int = 6) -> EllipticityCertificate:
    """Sampled ellipticity deficit.

    Centered rectangles Q^ell: the max over ell~ = 2^-m ell (m = 0..shrinkings)
    of the C^N norm of (D^2 h) o A^{ell~} on a closed ``grid``-point lattice of
    Q^1.  Off-center boxes and convex slices are first normalized at their
    reference point (box center, or 0 for slices) and measured with the
    outer-box weights, see :func:`convex_deficit`.
    """
    if order > s.smoothness_order:
        raise ValueError(f"order {order} exceeds smoothness order {s.smoothness_order}")
    dom = s.domain
    if isinstance(dom, Sidelengths):
        dom.require_finite()
        ell = dom.as_array()
        unit = Box(np.zeros(s.dim), np.ones(s.dim)).grid(grid)
        per_order = {r: 0.0 for r in range(order + 1)}
        for m in range(shrinkings + 1):
            sub = ell * 2.0 ** (-m)
            po = _sampled_cn_norm(s, unit * sub, sub, order)
            for r, v in po.items():
                per_order[r] = max(per_order[r], v)
        return EllipticityCertificate(
            deficit=max(per_order.values()), order=order, sample_resolution=grid,
            scales=tuple(range(shrinkings + 1)), per_order=per_order,
            normalization_residual=_normalization_residual(s, np.zeros(s.dim)),
        )
    if isinstance(dom, Box):
        return convex_deficit(s, dom, dom.center, order=order, grid=grid)
    if isinstance(dom, Polytope):
        return convex_deficit(s, dom, np.zeros(s.dim), order=order, grid=grid)
    raise TypeError(f"unsupported domain {type(dom).__name__}")


def normalize_at(s: Surface, xi0) -> Tuple[ComposedSurface, np.ndarray]:
    """The affine normalization g~(z) = g(xi0 + M z) - g(xi0) - M z . grad g(xi0),
    M = sqrt(2) D^2 g(xi0)^{-1/2}, so that D^2 g~(0) = 2 I."""
    xi0 = np.asarray(xi0, dtype=float)
    H = s.hess(xi0[None, :])[0]
    w, V = np.linalg.eigh(H)
    if np.any(w <= 0):
        raise ValueError(f"D^2 g is not positive definite at {xi0}")
    M = math.sqrt(2.0) * (V * w ** -0.5) @ V.T
    return ComposedSurface(s, xi0, M, subtract_tangent=True), M


def convex_deficit(s: Surface, region, xi0, order: int = 2, grid: int = 17) -> EllipticityCertificate:
    """Deficit of ``s`` over a convex ``region`` after normalizing at ``xi0``.

    Samples the region on a closed grid, maps to z = M^{-1}(xi - xi0), takes
    the outer axis-parallel box of the image for the weights ell^alpha and
    reports max |ell^alpha d^alpha D^2 h~| over the samples.
    """
    if isinstance(region, Box):
        pts = region.grid(grid)
    elif isinstance(region, Polytope):
        pts = region.bbox.grid(grid)
        pts = pts[region.contains(pts)]
    else:
        raise TypeError(f"unsupported region {type(region).__name__}")
    if pts.shape[0] == 0:
        raise EmptySlice("no sample points inside the region")
    gt, M = normalize_at(s, xi0)
    z = np.linalg.solve(M, (pts - np.asarray(xi0)).T).T
    outer = np.max(np.abs(z), axis=0)
    outer = np.where(outer > 0, outer, 1.0)
    per_order = _sampled_cn_norm(gt, z, outer, order)
    return EllipticityCertificate(
        deficit=max(per_order.values()), order=order, sample_resolution=grid,
        per_order=per_order, normalization_residual=_normalization_residual(gt, np.zeros(s.dim)),
    )


# ------------------------------------------------------- symmetry operations

def parabolic_rescale(s: Surface, lam: float) -> Surface:
    """xi -> lam^2 g(xi / lam) over Q^{lam ell}."""
    if not lam > 0:
        raise ValueError("lambda must be positive")
    if lam == 1:
        return s
    dom = s.domain
    if isinstance(dom, Sidelengths):
        new_dom = dom.scaled(lam)
    elif isinstance(dom, Box):
        new_dom = Box(lam * dom.center, lam * dom.halfwidths)
    else:
        raise TypeError("rescaling is defined for rectangles")
    if isinstance(s, PolynomialSurface):
        # exact: c_alpha xi^alpha -> lam^{2-|alpha|} c_alpha xi^alpha
        terms = {a: c * lam ** (2 - sum(a)) for a, c in s.perturbation.items()}
        return PolynomialSurface(s.dim, terms, domain=new_dom, smoothness_order=s.smoothness_order)
    return ComposedSurface(s, np.zeros(s.dim), np.eye(s.dim) / lam, scale=lam ** 2, domain=new_dom)


def slice_surface(s: Surface, basepoint, basis) -> ComposedSurface:
    """g_flat(eta) = g(xi0 + sum eta_j u_j) on the convex slice of the domain."""
    xi0 = np.asarray(basepoint, dtype=float).reshape(-1)
    U = np.atleast_2d(np.asarray(basis, dtype=float))
    if U.shape[1] != s.dim:
        raise ValueError("basis vectors must have length d")
    U = U.T  # columns u_j
    if not np.allclose(U.T @ U, np.eye(U.shape[1]), atol=1e-12, rtol=0):
        raise NonOrthonormalBasis("basis is not orthonormal to 1e-12")
    dom = s.domain
    if isinstance(dom, Sidelengths):
        dom.require_finite()
        center, half = np.zeros(s.dim), dom.as_array()
    elif isinstance(dom, Box):
        center, half = dom.center, dom.halfwidths
    else:
        raise TypeError("slicing is defined for rectangular domains")
    rel = xi0 - center
    if np.any(np.abs(rel) >= half):
        raise EmptySlice("basepoint is not inside the open rectangle")
    # |rel_i + (U eta)_i| < half_i
    A = np.vstack([U, -U])
    b = np.concatenate([half - rel, half + rel])
    radius = float(np.linalg.norm(2 * half))
    k = U.shape[1]
    bbox = Box(np.zeros(k), np.full(k, radius))
    bbox = _tighten_bbox(A, b, bbox)
    return ComposedSurface(s, xi0, U, domain=Polytope(A, b, bbox))


def _tighten_bbox(A, b, bbox: Box) -> Box:
    """Exact bounding box of {A x <= b} by linear programming per axis."""
    from scipy.optimize import linprog

    k = bbox.d
    lo, hi = np.empty(k), np.empty(k)
    bounds = list(zip(bbox.lower, bbox.upper))
    for i in range(k):
        c = np.zeros(k)
        c[i] = 1.0
        lo[i] = linprog(c, A_ub=A, b_ub=b, bounds=bounds).fun
        hi[i] = -linprog(-c, A_ub=A, b_ub=b, bounds=bounds).fun
    center = (lo + hi) / 2
    return Box(center, np.maximum((hi - lo) / 2, 1e-300))


def verify_dicing(s: Surface, sub: Box, xi0, eps: float, constant: float = 10.0,
                  order: int = 2, grid: int = 17):
    """Measured deficit over ``sub`` against the dicing bound constant * eps * eps0.

    Returns (deficit_sub, bound); ``eps0`` is the deficit of ``s`` itself.
    """
    if not 0 < eps <= 1:
        raise ValueError("eps must lie in (0, 1]")
    xi0 = np.asarray(xi0, dtype=float)
    if not sub.contains_box(Box(xi0, np.full(s.dim, 1e-300))):
        raise NotContained("xi0 is not in the sub-rectangle")
    dom = s.domain
    outer = dom.to_box() if isinstance(dom, Sidelengths) else dom
    dilated = (sub.corners() - xi0) / eps
    if not (np.all(dilated >= outer.lower - 1e-12) and np.all(dilated <= outer.upper + 1e-12)):
        raise NotContained("eps^-1 (sub - xi0) escapes the domain")
    deficit_sub = convex_deficit(s, sub, xi0, order=order, grid=grid).deficit
    eps0 = ellipticity_deficit(s, order=order, grid=grid).deficit
    return deficit_sub, constant * eps * eps0


def surface_from_descriptor(desc: dict) -> Surface:
    kind = desc.get("kind", "paraboloid")
    dim = int(desc.get("dim", len(desc.get("domain", [])) or len(desc.get("beta", [])) or 1))
    dom = desc.get("domain")
    ell = Sidelengths(tuple(dom)) if isinstance(dom, (list, tuple)) else None
    if kind == "paraboloid":
        return make_paraboloid(dim, ell)
    if kind == "polynomial":
        terms = {tuple(a): c for a, c in desc.get("terms", [])}
        return make_polynomial(dim, terms, ell)
    if kind == "gbeta":
        return make_gbeta([Fraction(b) for b in desc["beta"]], ell)
    raise ValueError(f"unknown surface kind {kind!r}")
