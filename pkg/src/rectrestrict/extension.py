"""Numeric evaluation of the extension operator

    E f(t, x) = int e^{i (t g(xi) + x . xi)} f(xi) dxi

on truncated space-time boxes, plus L^q / weak-L^q norms and the strong and
restricted-weak-type quotients built from them.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from .surfaces import Box, Sidelengths, Surface


class ResolutionTooCoarse(ValueError):
    pass


# chunk size for dense summation, in complex entries of the phase matrix
_CHUNK = 4_000_000


def _as_box(domain) -> Box:
    if isinstance(domain, Box):
        return domain
    if isinstance(domain, Sidelengths):
        domain.require_finite()
        return domain.to_box()
    raise TypeError(f"expected Box or Sidelengths, got {type(domain).__name__}")


def cell_centers(lo: float, hi: float, n: int) -> np.ndarray:
    h = (hi - lo) / n
    return lo + h * (np.arange(n) + 0.5)


@dataclass(eq=False)
class GridFunction:
    """Samples of f at cell centers of a box.

    Either ``samples`` (dense, shape ``resolution``) or ``factors`` is set.
    ``factors`` is a list of (coef, [f_1, ..., f_d]) with f_i sampled on the
    axis-i cell centers; f = sum coef * f_1 (x) ... (x) f_d.  The factored
    form enables the separable evaluation path.
    """

    domain: Box
    resolution: Tuple[int, ...]
    samples: Optional[np.ndarray] = None
    factors: Optional[List[Tuple[complex, List[np.ndarray]]]] = None

    def __post_init__(self):
        self.domain = _as_box(self.domain)
        self.resolution = tuple(int(n) for n in self.resolution)
        if len(self.resolution) != self.domain.d:
            raise ValueError("resolution length differs from the dimension")
        if any(n < 2 for n in self.resolution):
            raise ValueError("need at least 2 samples per axis")
        if (self.samples is None) == (self.factors is None):
            raise ValueError("give exactly one of samples or factors")
        if self.samples is not None:
            self.samples = np.asarray(self.samples, dtype=complex).reshape(self.resolution)
            if not np.all(np.isfinite(self.samples)):
                raise ValueError("samples must be finite")
        else:
            fixed = []
            for coef, facs in self.factors:
                facs = [np.asarray(f, dtype=complex).reshape(-1) for f in facs]
                if tuple(f.size for f in facs) != self.resolution:
                    raise ValueError("factor lengths differ from the resolution")
                fixed.append((complex(coef), facs))
            self.factors = fixed

    @property
    def d(self) -> int:
        return self.domain.d

    def axes(self) -> List[np.ndarray]:
        return [cell_centers(lo, hi, n)
                for lo, hi, n in zip(self.domain.lower, self.domain.upper, self.resolution)]

    @property
    def cell_widths(self) -> np.ndarray:
        return 2.0 * self.domain.halfwidths / np.asarray(self.resolution)

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.cell_widths))

    def nodes(self) -> np.ndarray:
        axes = self.axes()
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, self.d)

    @property
    def values(self) -> np.ndarray:
        if self.samples is not None:
            return self.samples
        out = np.zeros(self.resolution, dtype=complex)
        for coef, facs in self.factors:
            term = np.array(coef, dtype=complex)
            for f in facs:
                term = np.multiply.outer(term, f)
            out += term
        return out

    def scaled(self, alpha: complex) -> "GridFunction":
        if self.samples is not None:
            return GridFunction(self.domain, self.resolution, samples=alpha * self.samples)
        return GridFunction(self.domain, self.resolution,
                            factors=[(alpha * c, fs) for c, fs in self.factors])

    def integral(self) -> complex:
        return complex(np.sum(self.values) * self.cell_volume)

    def lp_norm(self, p: float) -> float:
        mag = np.abs(self.values)
        if math.isinf(p):
            return float(mag.max())
        return float((np.sum(mag ** p) * self.cell_volume) ** (1.0 / p))

    def support_measure(self) -> float:
        return float(np.count_nonzero(np.abs(self.values) > 0) * self.cell_volume)

    @classmethod
    def from_callable(cls, domain, resolution, func) -> "GridFunction":
        """Dense samples of ``func(nodes)`` where nodes has shape (n, d)."""
        gf = cls(_as_box(domain), resolution, samples=np.zeros(resolution))
        gf.samples = np.asarray(func(gf.nodes()), dtype=complex).reshape(gf.resolution)
        return gf

    @classmethod
    def tensor(cls, domain, resolution, axis_funcs, coef: complex = 1.0) -> "GridFunction":
        """Rank-one f = coef * prod_i f_i(xi_i)."""
        box = _as_box(domain)
        axes = [cell_centers(lo, hi, n) for lo, hi, n in zip(box.lower, box.upper, resolution)]
        return cls(box, resolution, factors=[(coef, [fn(a) for fn, a in zip(axis_funcs, axes)])])


@dataclass(eq=False)
class FunctionSum:
    """A sum of grid functions on pairwise disjoint boxes."""

    parts: List[GridFunction]

    def __post_init__(self):
        for i, a in enumerate(self.parts):
            for b in self.parts[i + 1:]:
                if np.all(np.abs(a.domain.center - b.domain.center) < a.domain.halfwidths + b.domain.halfwidths):
                    raise ValueError("parts must live on disjoint boxes")

    @property
    def d(self) -> int:
        return self.parts[0].d

    def scaled(self, alpha: complex) -> "FunctionSum":
        return FunctionSum([p.scaled(alpha) for p in self.parts])

    def integral(self) -> complex:
        return sum(p.integral() for p in self.parts)

    def lp_norm(self, p: float) -> float:
        if math.isinf(p):
            return max(q.lp_norm(p) for q in self.parts)
        return float(sum(q.lp_norm(p) ** p for q in self.parts) ** (1.0 / p))

    def support_measure(self) -> float:
        return sum(p.support_measure() for p in self.parts)


@dataclass(eq=False)
class SpaceTimeBox:
    """Evaluation window, sampled at cell centers.

    Points are (t, x) with t = t_center + tau and
    x = x_center + s - tau * velocity, for tau in (-t_halfwidth, t_halfwidth)
    and s in prod(-x_halfwidths, x_halfwidths).  A nonzero ``velocity``
    shears the box along a wave packet travelling with that group velocity.
    """

    t_halfwidth: float
    x_halfwidths: Sequence[float]
    resolution: Sequence[int]
    t_center: float = 0.0
    x_center: Optional[Sequence[float]] = None
    velocity: Optional[Sequence[float]] = None

    def __post_init__(self):
        self.x_halfwidths = np.asarray(self.x_halfwidths, dtype=float).reshape(-1)
        d = self.x_halfwidths.size
        self.resolution = tuple(int(n) for n in self.resolution)
        if len(self.resolution) != d + 1:
            raise ValueError("resolution needs one count for t and one per x axis")
        if self.t_halfwidth <= 0 or np.any(self.x_halfwidths <= 0):
            raise ValueError("halfwidths must be positive")
        self.x_center = np.zeros(d) if self.x_center is None else np.asarray(self.x_center, dtype=float)
        self.velocity = np.zeros(d) if self.velocity is None else np.asarray(self.velocity, dtype=float)

    @property
    def d(self) -> int:
        return self.x_halfwidths.size

    @property
    def volume(self) -> float:
        return float(2 * self.t_halfwidth * np.prod(2 * self.x_halfwidths))

    @property
    def cell_volume(self) -> float:
        return self.volume / float(np.prod(self.resolution))

    def tau(self) -> np.ndarray:
        return cell_centers(-self.t_halfwidth, self.t_halfwidth, self.resolution[0])

    def t_axis(self) -> np.ndarray:
        return self.t_center + self.tau()

    def s_axes(self) -> List[np.ndarray]:
        return [cell_centers(-h, h, n) for h, n in zip(self.x_halfwidths, self.resolution[1:])]

    def x_axis(self, i: int) -> np.ndarray:
        """x_i over (t index, s_i index)."""
        return self.x_center[i] + self.s_axes()[i][None, :] - self.tau()[:, None] * self.velocity[i]

    def points(self) -> np.ndarray:
        """All sample points as rows (t, x_1, ..., x_d), C order over resolution."""
        grids = np.meshgrid(self.tau(), *self.s_axes(), indexing="ij")
        tau = grids[0]
        cols = [self.t_center + tau]
        for i in range(self.d):
            cols.append(self.x_center[i] + grids[i + 1] - tau * self.velocity[i])
        return np.stack([c.reshape(-1) for c in cols], axis=1)

    def scaled(self, factor: float) -> "SpaceTimeBox":
        return SpaceTimeBox(self.t_halfwidth * factor, self.x_halfwidths * factor, self.resolution,
                            self.t_center, self.x_center, self.velocity)

    def max_abs_t(self) -> float:
        return abs(self.t_center) + self.t_halfwidth

    def max_abs_x(self) -> np.ndarray:
        return (np.abs(self.x_center) + self.x_halfwidths
                + self.t_halfwidth * np.abs(self.velocity))

    def to_json(self) -> dict:
        return {
            "t_halfwidth": self.t_halfwidth,
            "x_halfwidths": self.x_halfwidths.tolist(),
            "resolution": list(self.resolution),
            "t_center": self.t_center,
            "x_center": self.x_center.tolist(),
            "velocity": self.velocity.tolist(),
        }


@dataclass(eq=False)
class FieldSamples:
    box: SpaceTimeBox
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=complex).reshape(self.box.resolution)
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field samples are not finite")

    def __add__(self, other: "FieldSamples") -> "FieldSamples":
        return FieldSamples(self.box, self.values + other.values)

    def to_csv(self, path) -> None:
        pts = self.box.points()
        v = self.values.reshape(-1)
        header = ",".join(["t"] + [f"x{i + 1}" for i in range(self.box.d)] + ["re", "im"])
        np.savetxt(path, np.column_stack([pts, v.real, v.imag]), delimiter=",",
                   header=header, comments="", fmt="%.17g")

    def to_binary(self, path) -> Tuple[str, str]:
        """Row-major complex128 dump at ``path`` + '.bin' with a JSON sidecar."""
        path = str(path)
        bin_path, json_path = path + ".bin", path + ".json"
        np.ascontiguousarray(self.values, dtype="<c16").tofile(bin_path)
        with open(json_path, "w") as fh:
            json.dump({"dtype": "complex128", "byte_order": "little", "order": "C",
                       "shape": list(self.values.shape), "axes": ["t"] + [f"x{i + 1}" for i in range(self.box.d)],
                       "box": self.box.to_json()}, fh, indent=2)
        return bin_path, json_path

    @classmethod
    def from_binary(cls, path) -> "FieldSamples":
        path = str(path)
        with open(path + ".json") as fh:
            meta = json.load(fh)
        b = meta["box"]
        box = SpaceTimeBox(b["t_halfwidth"], b["x_halfwidths"], b["resolution"], b["t_center"],
                           b["x_center"], b["velocity"])
        vals = np.fromfile(path + ".bin", dtype="<c16").reshape(meta["shape"])
        return cls(box, vals)


# ------------------------------------------------------------------ evaluation

def _check_domain(s: Surface, f: GridFunction):
    dom = s.domain
    if isinstance(dom, Sidelengths):
        dom.require_finite()
        outer = dom.to_box()
    elif isinstance(dom, Box):
        outer = dom
    else:
        return
    if not outer.contains_box(f.domain, tol=1e-9 * float(np.max(outer.halfwidths))):
        raise ValueError("the test function's box is not inside the surface domain")


def phase_step(s: Surface, f: GridFunction, box: SpaceTimeBox) -> np.ndarray:
    """Per-axis bound on the phase change across one quadrature cell."""
    grad_max = np.zeros(f.d)
    sep = s.separable_factors()
    if sep is not None:
        for i, (_, dg) in enumerate(sep):
            grad_max[i] = np.max(np.abs(dg(f.axes()[i])))
    else:
        grad_max = np.max(np.abs(s.grad(f.nodes())), axis=0)
    return (box.max_abs_t() * grad_max + box.max_abs_x()) * f.cell_widths


def _guard(s, f, box):
    step = phase_step(s, f, box)
    if np.any(step > math.pi):
        i = int(np.argmax(step))
        raise ResolutionTooCoarse(
            f"phase changes by {step[i]:.3g} rad across a cell on axis {i}; refine to at least "
            f"{int(math.ceil(f.resolution[i] * step[i] / math.pi))} samples")


def _extend_separable(sep, f: GridFunction, box: SpaceTimeBox) -> np.ndarray:
    t = box.t_axis()
    w = f.cell_widths
    axes = f.axes()
    g_axes = [sep[i][0](axes[i]) for i in range(f.d)]
    x_axes = [box.x_axis(i) for i in range(f.d)]  # each (nt, n_s)
    # F_i[:, k] is the axis-i factor of term k
    facs = [np.stack([fs[i] for _, fs in f.factors], axis=1) for i in range(f.d)]
    coefs = np.array([c for c, _ in f.factors], dtype=complex)
    out = np.empty(box.resolution, dtype=complex)
    per_t = max(x.shape[1] * a.size for x, a in zip(x_axes, axes))
    step = max(1, _CHUNK // per_t)
    for a in range(0, len(t), step):
        tc = t[a:a + step]
        nt = len(tc)
        # per-axis integrals for every term: (terms, nt, n_s)
        ints = []
        for i in range(f.d):
            ph = tc[:, None, None] * g_axes[i][None, None, :] + x_axes[i][a:a + step, :, None] * axes[i][None, None, :]
            kern = np.exp(1j * ph) * w[i]
            ints.append(np.moveaxis(kern @ facs[i], -1, 0))
        block = np.zeros((nt,) + tuple(x.shape[1] for x in x_axes), dtype=complex)
        for k, c in enumerate(coefs):
            term = np.full((nt,) + (1,) * f.d, c, dtype=complex)
            for i in range(f.d):
                shape = [nt] + [1] * f.d
                shape[i + 1] = ints[i].shape[2]
                term = term * ints[i][k].reshape(shape)
            block += term
        out[a:a + step] = block
    return out


def _extend_dense(s: Surface, f: GridFunction, box: SpaceTimeBox) -> np.ndarray:
    nodes = f.nodes()
    fw = f.values.reshape(-1) * f.cell_volume
    keep = fw != 0
    nodes, fw = nodes[keep], fw[keep]
    gvals = s.g(nodes) if nodes.shape[0] else np.zeros(0)
    pts = box.points()
    out = np.empty(pts.shape[0], dtype=complex)
    step = max(1, _CHUNK // max(1, nodes.shape[0]))
    for a in range(0, pts.shape[0], step):
        chunk = pts[a:a + step]
        ph = np.outer(chunk[:, 0], gvals) + chunk[:, 1:] @ nodes.T
        out[a:a + step] = np.exp(1j * ph) @ fw
    return out.reshape(box.resolution)


def extend(s: Surface, f, box: SpaceTimeBox, guard: bool = True) -> FieldSamples:
    """Midpoint-rule evaluation of E f on every sample of ``box``."""
    if isinstance(f, FunctionSum):
        total = None
        for part in f.parts:
            fs = extend(s, part, box, guard)
            total = fs if total is None else total + fs
        return total
    if f.d != box.d or f.d != s.dim:
        raise ValueError("dimension mismatch between surface, function and box")
    _check_domain(s, f)
    if guard:
        _guard(s, f, box)
    sep = s.separable_factors()
    if sep is not None and f.factors is not None:
        vals = _extend_separable(sep, f, box)
    else:
        vals = _extend_dense(s, f, box)
    return FieldSamples(box, vals)


def extend_at(s: Surface, f: GridFunction, points: np.ndarray) -> np.ndarray:
    """E f at arbitrary rows (t, x_1, ..., x_d), dense path, no guard."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    nodes = f.nodes()
    fw = f.values.reshape(-1) * f.cell_volume
    gvals = s.g(nodes)
    out = np.empty(points.shape[0], dtype=complex)
    step = max(1, _CHUNK // max(1, nodes.shape[0]))
    for a in range(0, points.shape[0], step):
        c = points[a:a + step]
        out[a:a + step] = np.exp(1j * (np.outer(c[:, 0], gvals) + c[:, 1:] @ nodes.T)) @ fw
    return out


def modulate(s: Surface, f: GridFunction, t0: float, x0) -> GridFunction:
    """f * e^{-i (t0 g(xi) + x0 . xi)}, which translates E f by (t0, x0)."""
    x0 = np.asarray(x0, dtype=float)
    sep = s.separable_factors()
    if f.factors is not None and sep is not None:
        mods = [np.exp(-1j * (t0 * sep[i][0](a) + x0[i] * a)) for i, a in enumerate(f.axes())]
        return GridFunction(f.domain, f.resolution,
                            factors=[(c, [fi * m for fi, m in zip(fs, mods)]) for c, fs in f.factors])
    nodes = f.nodes()
    m = np.exp(-1j * (t0 * s.g(nodes) + nodes @ x0)).reshape(f.resolution)
    return GridFunction(f.domain, f.resolution, samples=f.values * m)


# ---------------------------------------------------------------------- norms

def lq_norm(u: FieldSamples, q: float, mode: str = "strong") -> float:
    if q < 1:
        raise ValueError("q must be at least 1")
    mag = np.abs(u.values).reshape(-1)
    if math.isinf(q):
        return float(mag.max())
    vol = u.box.cell_volume
    if mode == "strong":
        return float((np.sum(mag ** q) * vol) ** (1.0 / q))
    if mode == "weak":
        return float(_weak_profile(mag, vol, q).max())
    raise ValueError(f"unknown mode {mode!r}")


def _weak_profile(mag: np.ndarray, vol: float, q: float) -> np.ndarray:
    """lambda_k * |{|u| >= lambda_k}|^{1/q} at the sorted sample magnitudes."""
    v = np.sort(mag)[::-1]
    counts = np.arange(1, v.size + 1)
    return v * (counts * vol) ** (1.0 / q)


def _dual(x: float) -> float:
    if x == 1:
        return math.inf
    if math.isinf(x):
        return 1.0
    return x / (x - 1.0)


def quotient(s: Surface, f, box: SpaceTimeBox, p: float, q: float, mode: str = "strong",
             receiver: Optional[np.ndarray] = None, field: Optional[FieldSamples] = None) -> float:
    """Lower bound for the L^p -> L^q norm of E from one test function.

    strong: ||E f||_{L^q(box)} / ||f||_p
    weak:   ||E f||_{L^{q,inf}(box)} / |supp f|^{1/p}
    rwt:    <E f, g_F> / (|supp f|^{1/p} |F|^{1/q'}) with g_F = chi_F * conj(sgn E f);
            ``receiver`` is a boolean mask over the box samples, or None to take
            the best superlevel set of |E f|.
    The weak and rwt modes assume |f| <= 1 on its support.
    """
    u = field if field is not None else extend(s, f, box)
    if mode == "strong":
        return lq_norm(u, q, "strong") / f.lp_norm(p)
    inv_p = 0.0 if math.isinf(p) else 1.0 / p
    supp = f.support_measure() ** inv_p
    if mode == "weak":
        return lq_norm(u, q, "weak") / supp
    if mode != "rwt":
        raise ValueError(f"unknown mode {mode!r}")
    mag = np.abs(u.values).reshape(-1)
    vol = u.box.cell_volume
    qd = _dual(q)
    inv_qd = 0.0 if math.isinf(qd) else 1.0 / qd
    if receiver is not None:
        mask = np.asarray(receiver, dtype=bool).reshape(-1)
        if not mask.any():
            raise ValueError("receiver set is empty")
        pairing = mag[mask].sum() * vol
        return float(pairing / (supp * (mask.sum() * vol) ** inv_qd))
    v = np.sort(mag)[::-1]
    counts = np.arange(1, v.size + 1)
    pairing = np.cumsum(v) * vol
    return float(np.max(pairing / (counts * vol) ** inv_qd) / supp)
