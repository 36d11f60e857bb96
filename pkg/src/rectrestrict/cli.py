"""Command line entry point: ``rectrestrict <command> [options]``.

Every command writes a JSON report (plan inline plus its hash) into --out and
exits 0 only when its verdict passes.  Values come from, in increasing
priority: built-in defaults, the matching section of --config, flags.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from fractions import Fraction
from typing import Optional

import numpy as np

from . import beta as ba
from .exponents import ExponentPair, fraction_to_str
from .extension import extend
from .extremizers import besicovitch_translations, canonical_shifts, kakeya_field, knapp, knapp_quotient, \
    schwartz_train, train_quotient, TubeFamily
from .surfaces import Sidelengths, ellipticity_deficit, make_paraboloid, surface_from_descriptor
from .sweep import (
    DEFAULT_TOL, SweepPlan, artifact, fit_table_by_pair, load_config, read_table, run_sweep, table_to_csv,
)

log = logging.getLogger("rectrestrict")

DEFAULTS = {
    "region": {"beta": ["4", "4"], "resolution": 256, "grid": 100},
    "sweep": {"surface": "paraboloid", "kind": "knapp", "ell": [1.0], "axis": 0,
              "ladder": [1, 2, 4, 8, 16, 32, 64], "pq": ["2,6"], "j": None, "mode": "strong"},
    "fit": {"table": "sweep.csv", "tol": DEFAULT_TOL},
    "knapp": {"ell": [1.0, 1.0], "j": 0, "p": "2", "q": "6", "resolution": 32},
    "kakeya": {"ell": [1.0, 100.0], "N": 4, "trials": 8},
    "besicovitch": {"N": [1, 2, 4, 8, 16], "raster": 2048},
    "ellipticity": {"surface": "paraboloid", "ell": [1.0], "beta": None, "terms": None, "order": 2, "grid": 17},
    "dyadic-sum": {"beta": ["4", "4"], "p": "8", "q": "8", "eps": 1e-3, "kmax": 200},
    "train": {"beta": ["4", "4"], "M": 2, "N": [1, 2, 3], "p": "10", "q": "10/3"},
}


def exponent(text) -> object:
    """'inf' or an exact rational."""
    t = str(text).strip().lower()
    if t in ("inf", "infinity", "oo"):
        return "inf"
    return Fraction(t)


def to_float(x) -> float:
    return math.inf if x == "inf" else float(x)


def _pair(p, q) -> ExponentPair:
    return ExponentPair.from_pq(exponent(p), exponent(q))


def _profile(values) -> ba.BetaProfile:
    return ba.BetaProfile.of([Fraction(str(v)) for v in values])


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="rectrestrict", description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=None)
    ap.add_argument("--out", default=None, help="output directory (default: current directory)")
    ap.add_argument("--config", default=None, help="JSON config with schema_version and per-command sections")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("region", help="exact boundary of the sufficient-condition region for g_beta")
    p.add_argument("--beta", nargs="+")
    p.add_argument("--resolution", type=int)
    p.add_argument("--grid", type=int, help="rational grid used to cross-check the boundary")

    p = sub.add_parser("sweep", help="quotients along a sidelength ladder")
    p.add_argument("--surface")
    p.add_argument("--kind", choices=("knapp", "kakeya"))
    p.add_argument("--ell", nargs="+", type=float)
    p.add_argument("--axis", type=int)
    p.add_argument("--ladder", nargs="+", type=float)
    p.add_argument("--pq", nargs="+", help="pairs written p,q")
    p.add_argument("--j", type=int)
    p.add_argument("--mode", choices=("strong", "weak", "rwt"))

    p = sub.add_parser("fit", help="log-log slopes of a sweep table against predicted exponents")
    p.add_argument("--table")
    p.add_argument("--tol", type=float)

    p = sub.add_parser("knapp", help="Knapp cap peak and quotient")
    p.add_argument("--ell", nargs="+", type=float)
    p.add_argument("--j", type=int)
    p.add_argument("--p")
    p.add_argument("--q")
    p.add_argument("--resolution", type=int)

    p = sub.add_parser("kakeya", help="random-sign tube field against a single cap (d = 2)")
    p.add_argument("--ell", nargs="+", type=float)
    p.add_argument("--N", type=int)
    p.add_argument("--trials", type=int)

    p = sub.add_parser("besicovitch", help="union-to-sum ratios of the bisection tube scheme")
    p.add_argument("--N", nargs="+", type=int)
    p.add_argument("--raster", type=int)

    p = sub.add_parser("ellipticity", help="sampled ellipticity deficit")
    p.add_argument("--surface", choices=("paraboloid", "polynomial", "gbeta"))
    p.add_argument("--ell", nargs="+", type=float)
    p.add_argument("--beta", nargs="+")
    p.add_argument("--terms", help='JSON list of [[alpha...], coef] pairs')
    p.add_argument("--order", type=int)
    p.add_argument("--grid", type=int)

    p = sub.add_parser("dyadic-sum", help="sum of block bounds over every permutation")
    p.add_argument("--beta", nargs="+")
    p.add_argument("--p")
    p.add_argument("--q")
    p.add_argument("--eps", type=float)
    p.add_argument("--kmax", type=float)

    p = sub.add_parser("train", help="quotients of the dyadic bump train for growing N")
    p.add_argument("--beta", nargs="+")
    p.add_argument("--M", type=float)
    p.add_argument("--N", nargs="+", type=int)
    p.add_argument("--p")
    p.add_argument("--q")
    return ap


def resolve(args: argparse.Namespace) -> dict:
    cfg = load_config(args.config) if args.config else {}
    plan = dict(DEFAULTS[args.command])
    plan.update(cfg.get(args.command, {}))
    for key in DEFAULTS[args.command]:
        val = getattr(args, key, None)
        if val is not None:
            plan[key] = val
    plan["command"] = args.command
    plan["seed"] = args.seed if args.seed is not None else cfg.get("seed", 0)
    plan["out"] = args.out or cfg.get("out", ".")
    return plan


def _jsonable(obj):
    if isinstance(obj, Fraction):
        return fraction_to_str(obj)
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def write_report(plan: dict, name: str, payload: dict) -> str:
    os.makedirs(plan["out"], exist_ok=True)
    path = os.path.join(plan["out"], name)
    with open(path, "w") as fh:
        json.dump(artifact(plan, payload), fh, indent=2, default=_jsonable)
    return path


# ------------------------------------------------------------------ commands

def cmd_region(plan):
    b = _profile(plan["beta"])
    rb = ba.region_boundary(b, plan["resolution"])
    ok, bad = ba.boundary_matches_sweep(b, plan["grid"])
    csv_path = os.path.join(plan["out"], "region.csv")
    os.makedirs(plan["out"], exist_ok=True)
    rb.write_csv(csv_path)
    payload = {
        "boundary": rb.to_json(),
        "n0": b.n0,
        "height": fraction_to_str(b.height),
        "ii_line_slopes": [{k: (fraction_to_str(v) if isinstance(v, Fraction) else v) for k, v in row.items()}
                           for row in ba.ii_line_slopes(b)],
        "grid_check": {"agrees": ok, "mismatches": [[fraction_to_str(x), fraction_to_str(y), why]
                                                   for x, y, why in bad[:20]]},
        "conditional": True,
        "verdict": ok,
    }
    return payload, "region.json"


def cmd_sweep(plan):
    sp = SweepPlan(
        surface={"kind": plan["surface"]}, kind=plan["kind"], base_ell=plan["ell"],
        ladders={plan["axis"]: plan["ladder"]}, pq=[s.split(",") for s in plan["pq"]],
        j=plan["j"], mode=plan["mode"], seed=plan["seed"])
    rows = run_sweep(sp)
    os.makedirs(plan["out"], exist_ok=True)
    table_to_csv(sp, rows, os.path.join(plan["out"], "sweep.csv"))
    errors = [r for r in rows if r["error_flag"]]
    payload = {"sweep_plan": sp.to_json(), "sweep_plan_hash": sp.hash, "rows": rows,
               "errors": len(errors), "verdict": not errors}
    return payload, "sweep.json"


def cmd_fit(plan):
    sp, rows = read_table(plan["table"])
    if sp is None:
        raise ValueError(f"{plan['table']} carries no embedded plan")
    reports = fit_table_by_pair(sp, rows, plan["tol"])
    payload = {"sweep_plan": sp.to_json(), "sweep_plan_hash": sp.hash,
               "fits": {k: r.to_json() for k, r in reports.items()},
               "verdict": all(r.passed for r in reports.values())}
    return payload, "fit.json"


def cmd_knapp(plan):
    ell = Sidelengths(tuple(plan["ell"]))
    d = ell.d
    cap, dual, peak = knapp(d, ell, plan["j"], plan["resolution"])
    s = make_paraboloid(d, ell)
    u = extend(s, cap.gridfn, dual)
    low = float(np.abs(u.values).min())
    qv = knapp_quotient(s, d, ell, plan["j"], to_float(exponent(plan["p"])), to_float(exponent(plan["q"])),
                        plan["resolution"])
    payload = {"cap": cap.to_json(), "dual_box": dual.to_json(), "predicted_peak": peak,
               "measured_min": low, "quotient": qv, "verdict": low >= 0.5 * peak}
    return payload, "knapp.json"


def cmd_kakeya(plan):
    ell = Sidelengths(tuple(plan["ell"]))
    rf = kakeya_field(make_paraboloid(2, ell), ell, 0, 1, plan["N"], plan["seed"], trial_count=plan["trials"])
    payload = {"field": rf.to_json(), "verdict": rf.gain > 1}
    return payload, "kakeya.json"


def cmd_besicovitch(plan):
    out = []
    for N in plan["N"]:
        shifts, ratio = besicovitch_translations(N, plan["raster"])
        a, _ = canonical_shifts(N)
        fam = TubeFamily(N, [int(round(x * N)) for x in a], shifts, 1.0, 1.0 / N, seed=plan["seed"])
        out.append({"N": N, "ratio": ratio, "tubes": fam.to_json()})
    ratios = [r["ratio"] for r in out if r["N"] >= 2]
    ok = all(b < a for a, b in zip(ratios, ratios[1:]))
    ok = ok and all(r["ratio"] == 1.0 for r in out if r["N"] == 1)
    return {"families": out, "verdict": ok}, "besicovitch.json"


def cmd_ellipticity(plan):
    desc = {"kind": plan["surface"], "domain": plan["ell"], "dim": len(plan["ell"])}
    if plan["beta"]:
        desc["beta"] = plan["beta"]
    if plan["terms"]:
        desc["terms"] = json.loads(plan["terms"]) if isinstance(plan["terms"], str) else plan["terms"]
    s = surface_from_descriptor(desc)
    cert = ellipticity_deficit(s, plan["order"], plan["grid"])
    return {"surface": desc, "certificate": cert.to_json(), "verdict": bool(np.isfinite(cert.deficit))}, \
        "ellipticity.json"


def cmd_dyadic_sum(plan):
    b = _profile(plan["beta"])
    pq = _pair(plan["p"], plan["q"])
    rep = ba.condition_check(b, pq)
    per = {}
    for sigma in ba.admissible_sigmas(b, plan["kmax"]):
        r = ba.dyadic_sum(b, pq, sigma, plan["eps"], plan["kmax"])
        per[",".join(map(str, sigma))] = r.to_json()
    verdicts = {v["verdict"] for v in per.values()}
    combined = "converged" if verdicts == {"converged"} else ("diverged" if "diverged" in verdicts
                                                               else "inconclusive")
    expected = "diverged" if rep.verdict == "none" else "converged"
    payload = {"conditions": rep.to_json(), "per_permutation": per, "combined": combined,
               "expected": expected, "verdict": combined == expected}
    return payload, "dyadic_sum.json"


def cmd_train(plan):
    b = [float(Fraction(str(x))) for x in plan["beta"]]
    p = to_float(exponent(plan["p"]))
    q = to_float(exponent(plan["q"]))
    rows = []
    for N in plan["N"]:
        tr = schwartz_train(b, plan["M"], N, p)
        Q, num, den = train_quotient(tr, q)
        rows.append({"N": N, "quotient": Q, "field_norm": num, "lp_norm": den,
                     "closed_form_norm": tr.norm_closed_form, "train": tr.to_json()})
    qs = [r["quotient"] for r in rows]
    norms_ok = all(abs(r["lp_norm"] / r["closed_form_norm"] - 1) <= 1e-2 for r in rows)
    ok = all(y > x for x, y in zip(qs, qs[1:])) and norms_ok
    return {"rows": rows, "verdict": ok}, "train.json"


COMMANDS = {
    "region": cmd_region, "sweep": cmd_sweep, "fit": cmd_fit, "knapp": cmd_knapp, "kakeya": cmd_kakeya,
    "besicovitch": cmd_besicovitch, "ellipticity": cmd_ellipticity, "dyadic-sum": cmd_dyadic_sum,
    "train": cmd_train,
}


def main(argv: Optional[list] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        plan = resolve(args)
        payload, name = COMMANDS[args.command](plan)
    except Exception as exc:
        log.error("%s failed: %s: %s", args.command, type(exc).__name__, exc)
        return 2
    path = write_report(plan, name, payload)
    verdict = bool(payload["verdict"])
    print(f"{args.command}: {'PASS' if verdict else 'FAIL'} -> {path}")
    return 0 if verdict else 1


if __name__ == "__main__":
    sys.exit(main())
