"""Lower-bound test functions: Knapp caps, a Kakeya-type random field built
from Besicovitch tube translations, and a train of dyadic bumps for g_beta."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import beta as beta_fn

from .extension import (
    FieldSamples, FunctionSum, GridFunction, SpaceTimeBox, _extend_separable, extend,
    lq_norm, phase_step, quotient,
)
from .surfaces import Box, Sidelengths, Surface, make_gbeta, make_paraboloid, parabolic_rescale

log = logging.getLogger(__name__)


class InfiniteSidelength(ValueError):
    pass


class AspectTooSmall(ValueError):
    pass


class GridTooCoarse(ValueError):
    pass


# ----------------------------------------------------------------- bump

BUMP = "poly4"
BUMP_MASS = 256.0 / 315.0  # int_{-1}^{1} (1 - u^2)^4 du


def bump(u) -> np.ndarray:
    """(1 - u^2)^4 on |u| <= 1, zero outside; max 1."""
    u = np.asarray(u, dtype=float)
    return np.where(np.abs(u) < 1, (1 - u * u) ** 4, 0.0)


def unit_bump(u) -> np.ndarray:
    """The bump normalized to unit integral."""
    return bump(u) / BUMP_MASS


def bump_lp_mass(p: float) -> float:
    """int_{-1}^{1} (1 - u^2)^{4p} du."""
    return float(beta_fn(0.5, 4 * p + 1))


# ----------------------------------------------------------------- Knapp

DUAL_BOX_C = 1 / 8
KNAPP_BOX_FACTOR = 4


@dataclass(eq=False)
class KnappCap:
    j: int
    ell: Sidelengths
    bump: str
    gridfn: GridFunction
    widths: np.ndarray

    def to_json(self) -> dict:
        return {"j": self.j, "ell": list(self.ell.lengths), "bump": self.bump,
                "widths": self.widths.tolist(), "resolution": list(self.gridfn.resolution)}


def knapp_widths(ell: Sidelengths, j: int) -> np.ndarray:
    l = ell.as_array()
    return np.concatenate([l[:j], np.full(ell.d - j, l[j])])


def knapp(d: int, ell, j: int, resolution: int = 32, c: float = DUAL_BOX_C,
          box_resolution: int = 17) -> Tuple[KnappCap, SpaceTimeBox, float]:
    """Cap phi(xi_1/l_1, ..., xi_j/l_j, xi_{j+1}/l_{j+1}, ..., xi_d/l_{j+1}) and its dual box.

    With int phi = 1 the peak E phi(0, 0) equals l_1 ... l_j l_{j+1}^{d-j}.
    The dual box has halfwidths c/w_i in x and c/l_{j+1}^2 in t.
    """
    ell = ell if isinstance(ell, Sidelengths) else Sidelengths(tuple(ell))
    if ell.d != d:
        raise ValueError("ell has the wrong dimension")
    if not ell.finite:
        raise InfiniteSidelength(f"{ell.lengths} has an infinite side")
    if not 0 <= j <= d - 1:
        raise ValueError(f"j={j} outside 0..{d - 1}")
    w = knapp_widths(ell, j)
    gf = GridFunction.tensor(Box(np.zeros(d), w), (resolution,) * d,
                             [lambda x, wi=wi: unit_bump(x / wi) for wi in w])
    peak = float(np.prod(w))
    lj = ell.lengths[j]
    dual = SpaceTimeBox(c / lj ** 2, c / w, (box_resolution,) * (d + 1))
    return KnappCap(j, ell, BUMP, gf, w), dual, peak


def knapp_quotient(s: Surface, d: int, ell, j: int, p: float, q: float, resolution: int = 32,
                   box_resolution: int = 17, box_factor: float = KNAPP_BOX_FACTOR,
                   mode: str = "strong") -> float:
    cap, dual, _ = knapp(d, ell, j, resolution, box_resolution=box_resolution)
    return quotient(s, cap.gridfn, dual.scaled(box_factor), p, q, mode)


# --------------------------------------------------------- Besicovitch

def _check_power_of_two(N: int) -> int:
    if N < 1 or N & (N - 1):
        raise ValueError(f"N={N} is not a power of two")
    return int(round(math.log2(N)))


def canonical_shifts(N: int) -> Tuple[np.ndarray, np.ndarray]:
    """Slopes a_i = i/N and intercepts b_i of the bisection scheme.

    Writing a_i = sum_k eps_k 2^-k in binary with m = log2 N digits, the tube
    of slope a_i is moved by -sum_k eps_k 2^-k k/m.  Tubes sharing their first
    k digits then overlap near height k/m, which is the usual Perron-tree
    bisection collapsed into one formula.
    """
    m = _check_power_of_two(N)
    a = np.arange(N) / N
    b = np.zeros(N)
    if m:
        for i in range(N):
            for k in range(1, m + 1):
                if (i >> (m - k)) & 1:
                    b[i] -= 2.0 ** -k * k / m
    return a, b


def union_ratio(slopes, intercepts, width: float, raster: int = 2048) -> float:
    """|union of tubes| / sum |tube| for tubes {t in [0,1], |s - a t - b| < width/2}."""
    slopes, intercepts = np.asarray(slopes, float), np.asarray(intercepts, float)
    t = (np.arange(raster) + 0.5) / raster
    lo = float(np.min(np.minimum(intercepts, slopes + intercepts))) - width
    hi = float(np.max(np.maximum(intercepts, slopes + intercepts))) + width
    ds = (hi - lo) / raster
    diff = np.zeros((raster, raster + 1), dtype=np.int32)
    rows = np.arange(raster)
    total = 0
    for a, b in zip(slopes, intercepts):
        c = a * t + b
        st = np.clip(np.ceil((c - width / 2 - lo) / ds - 0.5).astype(int), 0, raster)
        en = np.clip(np.floor((c + width / 2 - lo) / ds - 0.5).astype(int) + 1, 0, raster)
        np.add.at(diff, (rows, st), 1)
        np.add.at(diff, (rows, en), -1)
        total += int(np.sum(en - st))
    covered = int(np.count_nonzero(np.cumsum(diff[:, :raster], axis=1) > 0))
    return covered / total


def besicovitch_translations(N: int, raster: int = 2048) -> Tuple[List[Tuple[float, float]], float]:
    """Translations (t_k, s_k) for N unit tubes of slopes i/N and width 1/N, with
    the rasterized union-to-sum ratio."""
    a, b = canonical_shifts(N)
    ratio = union_ratio(a, b, 1.0 / N, raster)
    return [(0.0, float(x)) for x in b], ratio


@dataclass
class TubeFamily:
    """Sheared tubes {|t| < length, |s - (n/N) t - s_k| < width} in the (t, s) plane."""

    N: int
    slope_index: List[int]
    shifts: List[Tuple[float, float]]
    length: float
    width: float
    block_center: List[float] = field(default_factory=list)
    seed: Optional[int] = None

    def to_json(self) -> dict:
        return {
            "N": self.N,
            "tubes": [{"n": n, "t_shift": t, "s_shift": s} for n, (t, s) in zip(self.slope_index, self.shifts)],
            "length": self.length,
            "width": self.width,
            "block_center": list(self.block_center),
            "seed": self.seed,
        }

    def dump(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=2)


# --------------------------------------------------------- Kakeya field

@dataclass(eq=False)
class RandomField:
    signs: np.ndarray
    block_translations: List[Tuple[float, np.ndarray]]
    tube_translations: List[Tuple[float, np.ndarray]]
    seed: int
    gridfn: GridFunction
    tubes: TubeFamily
    ell: Sidelengths
    rescale: float
    box: SpaceTimeBox
    p: float
    q: float
    trial_scores: List[float]
    quotient: float
    knapp_quotient: float

    @property
    def gain(self) -> float:
        return self.quotient / self.knapp_quotient

    def to_json(self) -> dict:
        return {
            "seed": self.seed,
            "signs": self.signs.astype(int).tolist(),
            "tubes": self.tubes.to_json(),
            "ell": list(self.ell.lengths),
            "rescale": self.rescale,
            "p": self.p, "q": self.q,
            "trial_scores": self.trial_scores,
            "quotient": self.quotient,
            "knapp_quotient": self.knapp_quotient,
            "gain": self.gain,
        }


def _term_fields(s: Surface, f: GridFunction, box: SpaceTimeBox) -> np.ndarray:
    """E of each rank-one term of ``f`` separately, shape (terms,) + box.resolution."""
    sep = s.separable_factors()
    out = []
    for coef, facs in f.factors:
        single = GridFunction(f.domain, f.resolution, factors=[(coef, facs)])
        if sep is not None:
            out.append(_extend_separable(sep, single, box))
        else:
            out.append(extend(s, single, box, guard=False).values)
    return np.stack(out)


def _weak_quotient(values: np.ndarray, cell_vol: float, q: float, supp: float, p: float) -> float:
    mag = np.sort(np.abs(values).reshape(-1))[::-1]
    weak = np.max(mag * (np.arange(1, mag.size + 1) * cell_vol) ** (1.0 / q))
    return float(weak / supp ** (1.0 / p))


def _nodes_for(phase_rate: float, length: float, per_rad: float = 4.0, floor: int = 16) -> int:
    return max(floor, int(math.ceil(phase_rate * length * per_rad / math.pi)) + 1)


def kakeya_field(s: Surface, ell, j: int, theta, N: int, seed: int, p: float = 4.0,
                 q: Optional[float] = None, trial_count: int = 8, tube_length: float = 0.5,
                 box_resolution: Tuple[int, int, int] = (48, 12, 0), max_blocks: int = 1,
                 symmetric: bool = True, signs: Optional[Sequence[float]] = None,
                 shift_scale: float = 1.0) -> RandomField:
    """Signed sum of N translated caps per block R, tubes arranged by the bisection scheme.

    Runs in d = 2 with j = 0 (caps are 2/N-cubes, R is (1/N) x 1 in halfwidths).
    The surface is rescaled parabolically so that l_1 = 1/N.  Cap kappa in R
    carries e^{-i x_kappa . xi} with x_kappa = -s_kappa d_2 grad g(xi_R); the
    canonical shifts are stretched so that the tube direction spread matches
    the slopes n_kappa / N.  Only ``max_blocks`` blocks near the origin are
    materialized: the restriction of F to them is itself admissible, so its
    quotient is a lower bound for the full field.

    ``signs`` fixes the signs instead of drawing them; ``shift_scale`` scales
    the tube translations (0 collapses every tube onto the first).
    """
    ell = ell if isinstance(ell, Sidelengths) else Sidelengths(tuple(ell))
    d = ell.d
    if d != 2 or j != 0:
        raise NotImplementedError("the field is implemented for d = 2, j = 0")
    if not ell.finite:
        raise InfiniteSidelength(f"{ell.lengths} has an infinite side")
    _check_power_of_two(N)
    lam = 1.0 / (N * ell.lengths[0])
    ell_r = ell.scaled(lam)
    if ell_r.lengths[-1] / ell_r.lengths[0] <= N ** 3:
        raise AspectTooSmall(f"l_d / l_1 = {ell.lengths[-1] / ell.lengths[0]:.4g} must exceed N^3 = {N ** 3}")
    s_r = parabolic_rescale(s, lam) if lam != 1 else s
    if q is None:
        q = 2 * (d - j - float(theta) + 1) / (d - j - float(theta))
    if s_r.separable_factors() is None:
        raise NotImplementedError("the field uses the separable evaluation path")

    w = 1.0 / N  # cap halfwidth
    L = tube_length * N ** 2  # time scale of the tube family
    xi_R = np.zeros(d)
    grad_R = s_r.grad(xi_R[None, :])[0]
    curv_R = s_r.hess(xi_R[None, :])[0][:, d - 1]
    a, b = canonical_shifts(N)
    slope_idx = [2 * i - N + 1 for i in range(N)]
    s_shift = 2 * L * b * shift_scale
    # cap centers along the last axis: xi_d = n / N
    centers = np.array(slope_idx) / N
    tubes = TubeFamily(N, slope_idx, [(0.0, float(v)) for v in s_shift], L, 2 * L / N,
                       xi_R.tolist(), seed)

    # quadrature on R: resolve the largest phase over the measurement box
    s_lo = min(0.0, float(np.min(s_shift + centers * L)), float(np.min(s_shift)))
    s_hi = max(0.0, float(np.max(s_shift + centers * L)), float(np.max(s_shift)))
    x2_half = float(np.max(np.abs(curv_R[d - 1]))) * (s_hi - s_lo) / 2 + 4 * N
    x2_center = -float(curv_R[d - 1]) * (s_hi + s_lo) / 2 - grad_R[d - 1] * L / 2
    x1_half = 4.0 * N
    nt, n1, n2 = box_resolution
    n2 = n2 or int(2 * x2_half)
    box = SpaceTimeBox(L * (1 + symmetric) / 2, [x1_half, x2_half + symmetric * (x2_half + 4 * N)],
                       (nt * (1 + symmetric), n1, n2 * (1 + 2 * symmetric)),
                       t_center=L * (1 - symmetric) / 2, x_center=[0.0, x2_center])
    sep = s_r.separable_factors()
    gmax = [float(np.max(np.abs(sep[i][1](np.linspace(-1, 1, 64) * h)))) for i, h in enumerate((w, 1.0))]
    xmax = box.max_abs_x() + np.abs([0.0, 2 * float(np.max(np.abs(s_shift)))])
    m1 = _nodes_for(L * gmax[0] + xmax[0], 2 * w)
    per_cap = _nodes_for(L * gmax[1] + xmax[1], 2 * w)
    m2 = per_cap * N
    R_box = Box(xi_R, np.array([w, 1.0]))

    t_k = np.zeros(N)
    x_k = [-sh * curv_R for sh in s_shift]
    terms = []
    ax1 = GridFunction.tensor(R_box, (m1, m2), [np.ones_like, np.ones_like]).axes()
    g1, g2 = sep[0][0], sep[1][0]
    for i in range(N):
        lo, hi = xi_R[1] + centers[i] - w, xi_R[1] + centers[i] + w
        chi2 = ((ax1[1] >= lo) & (ax1[1] < hi)).astype(float)
        f1 = np.exp(-1j * (t_k[i] * g1(ax1[0]) + x_k[i][0] * ax1[0]))
        f2 = chi2 * np.exp(-1j * (t_k[i] * g2(ax1[1]) + x_k[i][1] * ax1[1]))
        terms.append((1.0, [f1, f2]))
    F = GridFunction(R_box, (m1, m2), factors=terms)
    fields = _term_fields(s_r, F, box)
    supp = F.support_measure()

    rng = np.random.default_rng(seed)
    best, best_signs, scores = -1.0, None, []
    draws = [np.asarray(signs, float)] if signs is not None else (
        rng.choice([-1.0, 1.0], size=N) for _ in range(trial_count))
    for omega in draws:
        score = _weak_quotient(np.tensordot(omega, fields, axes=1), box.cell_volume, q, supp, p)
        scores.append(score)
        if score > best:
            best, best_signs = score, omega

    F.factors = [(float(o), fs) for o, (_, fs) in zip(best_signs, terms)]
    # comparator: a single cap, measured the same way on a box around its tube
    kappa = GridFunction.tensor(Box([0.0, centers[N // 2]], [w, w]), (m1, per_cap), [np.ones_like, np.ones_like])
    v_k = float(curv_R[1]) * centers[N // 2] + grad_R[1]
    k_half = abs(v_k) * L / 2 + 4 * N
    kbox = SpaceTimeBox(L * (1 + symmetric) / 2, [x1_half, k_half * (1 + symmetric)],
                        (nt * (1 + symmetric), n1, int(2 * k_half) * (1 + symmetric)),
                        t_center=L * (1 - symmetric) / 2, x_center=[0.0, -v_k * L * (1 - symmetric) / 2],
                        velocity=[0.0, v_k * symmetric])
    kfield = extend(s_r, kappa, kbox, guard=False)
    knapp_q = _weak_quotient(kfield.values, kbox.cell_volume, q, kappa.support_measure(), p)
    return RandomField(
        signs=best_signs, block_translations=[(0.0, np.zeros(d))],
        tube_translations=list(zip(t_k.tolist(), x_k)), seed=seed, gridfn=F, tubes=tubes,
        ell=ell_r, rescale=lam, box=box, p=p, q=q, trial_scores=scores, quotient=best,
        knapp_quotient=knapp_q,
    )


# ------------------------------------------------------- Schwartz train

@dataclass(eq=False)
class SchwartzTrain:
    beta: Tuple[float, ...]
    M: float
    N: int
    p: float
    gridfn: FunctionSum
    boxes: List[SpaceTimeBox]
    offsets: List[np.ndarray]
    amplitudes: List[float]
    norm_closed_form: float

    def to_json(self) -> dict:
        return {
            "beta": list(self.beta), "M": self.M, "N": self.N, "p": self.p,
            "offsets": [o.tolist() for o in self.offsets],
            "amplitudes": self.amplitudes,
            "norm_closed_form": self.norm_closed_form,
            "boxes": [b.to_json() for b in self.boxes],
            "resolutions": [list(part.resolution) for part in self.gridfn.parts],
        }


def train_block(beta: Sequence[float], M: float, m: int) -> Box:
    """The dyadic block xi_i in [2^{-2k_i}, 2^{1-2k_i}] with k_i = M m / beta_i."""
    k = M * m / np.asarray(beta, dtype=float)
    lo = 2.0 ** (-2 * k)
    return Box(1.5 * lo, 0.5 * lo)


def schwartz_train(beta, M: float, N: int, p: float, box_resolution: int = 16,
                   t_scale: float = 0.25, x_scale: float = 2.0, separation: float = 10.0,
                   node_cap: int = 20000, per_rad: float = 4.0) -> SchwartzTrain:
    """Sum over m = 1..N of e^{i x_m . xi} 2^{2 M m J_d / p} phi_m with phi_m a
    tensor bump on the m-th dyadic block (max 1).

    Measurement boxes are the blocks' dual boxes (t halfwidth t_scale 2^{2Mm},
    x halfwidths x_scale 2^{2k_i}) sheared along the group velocity at the
    block center and centered at -x_m.  Quadrature resolution per block is the
    smallest that keeps the phase step per cell below pi/per_rad on every box.
    """
    b = np.asarray([float(x) for x in getattr(beta, "beta", beta)])
    d = b.size
    if M <= 100 * b.max():
        log.warning("M=%s is below 100 max(beta); desk-scale train", M)
    Jd = float(np.sum(1.0 / b))
    s = make_gbeta(b, Sidelengths((1.0,) * d))
    sep = s.separable_factors()
    blocks = [train_block(b, M, m) for m in range(1, N + 1)]
    boxes, offsets, amps = [], [], []
    pos = 0.0
    raw = []
    for m, blk in enumerate(blocks, start=1):
        k = M * m / b
        v = np.array([sep[i][1](blk.center[i]) for i in range(d)])
        th = t_scale * 2.0 ** (2 * M * m)
        xh = x_scale * 2.0 ** (2 * k)
        raw.append((th, xh, v))
    reach = [float(np.max(xh + th * np.abs(v))) for th, xh, v in raw]
    for m, (th, xh, v) in enumerate(raw):
        if m:
            pos += separation * (reach[m - 1] + reach[m])
        x_m = np.zeros(d)
        x_m[0] = pos
        offsets.append(x_m)
        boxes.append(SpaceTimeBox(th, xh, (box_resolution,) * (d + 1), x_center=-x_m, velocity=v))
        amps.append(2.0 ** (2 * M * (m + 1) * Jd / p))

    parts = []
    for m, blk in enumerate(blocks):
        # phase rate per axis on the worst box, after removing the modulation
        rate = np.zeros(d)
        for box in boxes:
            xr = np.abs(box.x_center + offsets[m]) + box.x_halfwidths + box.t_halfwidth * np.abs(box.velocity)
            gmax = np.array([abs(sep[i][1](blk.upper[i])) for i in range(d)])
            rate = np.maximum(rate, box.max_abs_t() * gmax + xr)
        res = tuple(_nodes_for(rate[i], 2 * blk.halfwidths[i], per_rad) for i in range(d))
        if max(res) > node_cap:
            raise GridTooCoarse(f"block {m + 1} needs {max(res)} nodes per axis (cap {node_cap})")
        gf = GridFunction.tensor(
            blk, res,
            [lambda x, c=blk.center[i], h=blk.halfwidths[i], xm=offsets[m][i]: bump((x - c) / h) * np.exp(1j * xm * x)
             for i in range(d)],
            coef=amps[m])
        parts.append(gf)
    closed = (N * bump_lp_mass(p) ** d / 2 ** d) ** (1.0 / p)
    return SchwartzTrain(tuple(b), M, N, p, FunctionSum(parts), boxes, offsets, amps, closed)


def train_field_on_box(train: SchwartzTrain, box: SpaceTimeBox) -> FieldSamples:
    """E f on ``box``; each block is evaluated in coordinates relative to its modulation."""
    s = make_gbeta(train.beta, Sidelengths((1.0,) * len(train.beta)))
    sep = s.separable_factors()
    total = np.zeros(box.resolution, dtype=complex)
    for part, x_m in zip(train.gridfn.parts, train.offsets):
        # e^{i x_m xi} moves the field to x - x_m; evaluate the unmodulated block there
        facs = [(c, [fi * np.exp(-1j * x_m[i] * a) for i, (fi, a) in enumerate(zip(fs, part.axes()))])
                for c, fs in part.factors]
        plain = GridFunction(part.domain, part.resolution, factors=facs)
        shifted = SpaceTimeBox(box.t_halfwidth, box.x_halfwidths, box.resolution, box.t_center,
                               box.x_center + x_m, box.velocity)
        total += _extend_separable(sep, plain, shifted)
    return FieldSamples(box, total)


def train_quotient(train: SchwartzTrain, q: float) -> Tuple[float, float, float]:
    """(||E f||_{L^q(union of boxes)} / ||f||_p, field norm, quadrature ||f||_p)."""
    acc = 0.0
    for box in train.boxes:
        acc += lq_norm(train_field_on_box(train, box), q) ** q
    num = acc ** (1.0 / q)
    den = train.gridfn.lp_norm(train.p)
    return num / den, num, den
