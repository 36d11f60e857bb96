"""Sidelength sweeps, log-log exponent fits and artifact plumbing."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from typing import Dict, List, Optional, Sequence

import numpy as np

from .exponents import ExponentPair, PredictedExponents, conjectured_exponents, scaling_regime
from .extremizers import kakeya_field, knapp_quotient
from .surfaces import Sidelengths, surface_from_descriptor

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
WORKERS_ENV = "RECTRESTRICT_WORKERS"
KINDS = ("knapp", "kakeya")
MODES = ("strong", "weak", "rwt")
DEFAULT_TOL = 0.05


class IllConditioned(ValueError):
    pass


class InvalidPlan(ValueError):
    pass


def _num(x) -> str:
    """Exponent as text: integers and fractions exactly, 'inf' for infinity."""
    if isinstance(x, str):
        return x
    if isinstance(x, float) and math.isinf(x):
        return "inf"
    return str(Fraction(x).limit_denominator(10 ** 6)) if isinstance(x, float) else str(x)


def _pair(p, q) -> ExponentPair:
    conv = lambda v: v if str(v) in ("inf",) else Fraction(str(v))
    return ExponentPair.from_pq(conv(p), conv(q))


@dataclass
class SweepPlan:
    surface: dict
    kind: str
    base_ell: List[float]
    ladders: Dict[int, List[float]]  # 0-based axis -> values taken by that axis
    pq: List[List]  # [[p, q], ...] with exponents as text or numbers
    j: Optional[int] = None
    mode: str = "strong"
    box_factor: float = 4.0
    box_resolution: int = 17
    resolution: int = 32
    seed: int = 0
    N: int = 4  # tube count for kakeya rows
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self):
        self.ladders = {int(k): [float(v) for v in vals] for k, vals in self.ladders.items()}
        self.base_ell = [float(x) for x in self.base_ell]
        self.pq = [[_num(p), _num(q)] for p, q in self.pq]
        self.validate()

    def validate(self) -> None:
        if self.schema_version != SCHEMA_VERSION:
            raise InvalidPlan(f"unsupported schema version {self.schema_version}")
        if self.kind not in KINDS:
            raise InvalidPlan(f"unknown test-function kind {self.kind!r}")
        if self.mode not in MODES:
            raise InvalidPlan(f"unknown mode {self.mode!r}")
        d = len(self.base_ell)
        for axis, vals in self.ladders.items():
            if not 0 <= axis < d:
                raise InvalidPlan(f"ladder axis {axis} outside 0..{d - 1}")
            if not vals:
                raise InvalidPlan("empty ladder")
        if not self.pq:
            raise InvalidPlan("no exponent pairs")
        surface_from_descriptor({**self.surface, "dim": d})

    @property
    def d(self) -> int:
        return len(self.base_ell)

    def rows(self) -> List[dict]:
        out = []
        for axis in sorted(self.ladders):
            for v in self.ladders[axis]:
                ell = list(self.base_ell)
                ell[axis] = v
                for p, q in self.pq:
                    out.append({"axis": axis, "ell": ell, "p": p, "q": q})
        return out

    def to_json(self) -> dict:
        dct = asdict(self)
        dct["ladders"] = {str(k): v for k, v in self.ladders.items()}
        return dct

    @classmethod
    def from_json(cls, dct: dict) -> "SweepPlan":
        dct = dict(dct)
        dct.setdefault("schema_version", SCHEMA_VERSION)
        return cls(**dct)

    @property
    def hash(self) -> str:
        return plan_hash(self.to_json())


def plan_hash(plan: dict) -> str:
    blob = json.dumps(plan, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def _knapp_j(plan: SweepPlan, pq: ExponentPair) -> int:
    if plan.j is not None:
        return plan.j
    return min(scaling_regime(plan.d, pq).j, plan.d - 1)


def _run_row(args) -> dict:
    plan_json, row = args
    plan = SweepPlan.from_json(plan_json)
    out = {"axis": row["axis"], "ell": row["ell"], "p": row["p"], "q": row["q"], "mode": plan.mode,
           "quotient": math.nan, "error_flag": ""}
    try:
        ell = Sidelengths(tuple(row["ell"]))
        surf = surface_from_descriptor({**plan.surface, "dim": plan.d, "domain": list(ell.lengths)})
        pq = _pair(row["p"], row["q"])
        pf = math.inf if pq.inv_p == 0 else float(1 / pq.inv_p)
        qf = math.inf if pq.inv_q == 0 else float(1 / pq.inv_q)
        if plan.kind == "knapp":
            out["quotient"] = knapp_quotient(surf, plan.d, ell, _knapp_j(plan, pq), pf, qf,
                                             plan.resolution, plan.box_resolution, plan.box_factor,
                                             plan.mode)
        else:
            rf = kakeya_field(surf, ell, 0, 1, plan.N, plan.seed, p=pf, q=qf)
            out["quotient"] = rf.quotient
    except Exception as exc:  # recorded per row, never aborts the sweep
        out["error_flag"] = f"{type(exc).__name__}: {exc}"
    return out


def _workers() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


def run_sweep(plan: SweepPlan, workers: Optional[int] = None) -> List[dict]:
    """One row per (ladder value, pair); order follows the plan regardless of completion order."""
    workers = workers or _workers()
    jobs = [(plan.to_json(), r) for r in plan.rows()]
    if workers == 1 or len(jobs) == 1:
        return [_run_row(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(_run_row, jobs))


def table_to_csv(plan: SweepPlan, rows: Sequence[dict], path=None) -> str:
    """Columns: l_1..l_d, p, q, mode, quotient, error_flag; the plan rides along in comment lines."""
    buf = io.StringIO()
    buf.write(f"# plan_hash: {plan.hash}\n")
    buf.write(f"# plan: {json.dumps(plan.to_json(), sort_keys=True)}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([f"l{i + 1}" for i in range(plan.d)] + ["p", "q", "mode", "quotient", "error_flag"])
    for r in rows:
        w.writerow([repr(float(x)) for x in r["ell"]] + [r["p"], r["q"], r["mode"], repr(float(r["quotient"])),
                                                          r["error_flag"]])
    text = buf.getvalue()
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text)
    return text


def read_table(path):
    """(plan, rows) from a CSV written by table_to_csv."""
    plan = None
    lines = []
    with open(path) as fh:
        for line in fh:
            if line.startswith("# plan: "):
                plan = SweepPlan.from_json(json.loads(line[len("# plan: "):]))
            elif not line.startswith("#"):
                lines.append(line)
    reader = csv.DictReader(lines)
    rows = []
    for r in reader:
        ell = [float(r[k]) for k in reader.fieldnames if k.startswith("l") and k[1:].isdigit()]
        rows.append({"ell": ell, "p": r["p"], "q": r["q"], "mode": r["mode"],
                     "quotient": float(r["quotient"]), "error_flag": r["error_flag"]})
    return plan, rows


# ------------------------------------------------------------------- fitting

@dataclass
class FitReport:
    slopes: Dict[int, float]
    residual: float
    predicted: Dict[int, float]
    verdicts: Dict[int, bool]
    tol: float = DEFAULT_TOL
    intercepts: Dict[int, float] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(self.verdicts.values())

    def to_json(self) -> dict:
        return {
            "slopes": {str(k): v for k, v in self.slopes.items()},
            "predicted": {str(k): v for k, v in self.predicted.items()},
            "verdicts": {str(k): v for k, v in self.verdicts.items()},
            "residual": self.residual,
            "tol": self.tol,
            "passed": self.passed,
        }


def fit_exponents(table: Sequence[dict], predicted: Optional[PredictedExponents], tol: float = DEFAULT_TOL,
                  axes: Optional[Sequence[int]] = None) -> FitReport:
    """Least-squares slope of log2 quotient against log2 l_i for every axis that varies.

    Rows must vary one axis at a time; rows with an error flag are skipped.
    """
    rows = [r for r in table if not r.get("error_flag") and np.isfinite(r["quotient"]) and r["quotient"] > 0]
    if not rows:
        raise IllConditioned("no usable rows")
    ells = np.array([r["ell"] for r in rows], dtype=float)
    qs = np.array([r["quotient"] for r in rows], dtype=float)
    d = ells.shape[1]
    if axes is None:
        axes = [i for i in range(d) if np.ptp(np.log2(ells[:, i])) > 0]
    slopes, intercepts, preds, verdicts = {}, {}, {}, {}
    resid = 0.0
    for i in axes:
        others = [k for k in range(d) if k != i]
        base = np.median(ells[:, others], axis=0) if others else None
        sel = np.ones(len(rows), bool) if base is None else np.all(np.isclose(ells[:, others], base), axis=1)
        x = np.log2(ells[sel, i])
        y = np.log2(qs[sel])
        if x.size < 2 or np.ptp(x) < 2:
            raise IllConditioned(f"axis {i} spans {np.ptp(x) if x.size else 0:.3g} octaves; need at least 2")
        A = np.column_stack([x, np.ones_like(x)])
        (m, c), *_ = np.linalg.lstsq(A, y, rcond=None)
        slopes[i] = float(m)
        intercepts[i] = float(c)
        resid = max(resid, float(np.max(np.abs(A @ [m, c] - y))))
        if predicted is not None:
            preds[i] = float(predicted.per_sidelength[i])
            verdicts[i] = bool(abs(m - preds[i]) <= tol)
    return FitReport(slopes, resid, preds, verdicts, tol, intercepts)


def fit_table_by_pair(plan: SweepPlan, rows: Sequence[dict], tol: float = DEFAULT_TOL) -> Dict[str, FitReport]:
    """One fit per (p, q) in the plan, predicted slopes from the conjectured exponents."""
    out = {}
    for p, q in plan.pq:
        sub = [r for r in rows if r["p"] == p and r["q"] == q]
        pred = conjectured_exponents(plan.d, _pair(p, q))
        out[f"{p},{q}"] = fit_exponents(sub, pred, tol)
    return out


# ----------------------------------------------------------------- configs

def load_config(path) -> dict:
    with open(path) as fh:
        cfg = json.load(fh)
    ver = cfg.get("schema_version", SCHEMA_VERSION)
    if ver != SCHEMA_VERSION:
        raise InvalidPlan(f"config schema version {ver} is not {SCHEMA_VERSION}")
    return cfg


def artifact(plan: dict, payload: dict) -> dict:
    """Wrap a report with its plan, inline and hashed."""
    return {"plan_hash": plan_hash(plan), "plan": plan, **payload}
