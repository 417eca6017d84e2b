"""Batch command line: load a market document, run one computation, write a report.

Exit codes: 0 success, 2 invalid model, 3 solver tolerance missed,
4 arbitrage found.  Errors go to stderr as a message line followed by a
JSON object.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .dual import dual_ascent, dual_objective, extract_cps, gibbs_candidate, strict_certificate
from .errors import ArbitrageError, RobustUtilityError
from .lift import build_lift
from .market import MarketSpec, check_na2, load_market
from .pricing import SWEEP, gamma_sweep, indifference_price, property_suite, superhedge_price
from .primal import StaticOptions, optimize_static
from .solvers import DEFAULT_CONFIG, SolverConfig

TOLERANCE_FLAGS = {
    "tol_grad": "grad_tol",
    "tol_barrier_gap": "barrier_gap",
    "tol_lp_pivot": "lp_pivot_tol",
    "tol_lp_slack": "tol_lp_slack",
    "tol_martingale": "tol_martingale",
    "tol_mass": "tol_mass",
    "tol_kl": "kl_rel_tol",
}


def _gammas(text: str) -> list[float]:
    try:
        out = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}")
    if not out:
        raise argparse.ArgumentTypeError("empty gamma list")
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="robust-utility",
        description="Robust exponential-utility values and prices on a bid-ask scenario tree.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--input", "-i", required=True, help="market document (JSON)")
    common.add_argument("--out", "-o", help="output file (default stdout)")
    common.add_argument("--format", choices=("json", "csv"), default="json")
    common.add_argument("--gamma", type=_gammas, help="comma-separated risk aversions")
    common.add_argument("--grid-m", type=int, default=DEFAULT_CONFIG.grid_m, help="grid points per axis")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--dump-lift", metavar="PATH", help="write the lifted tree as JSON")
    common.add_argument("--dump-dual", metavar="PATH", help="write the best dual measure and price system as JSON")
    for flag in TOLERANCE_FLAGS:
        common.add_argument("--" + flag.replace("_", "-"), type=float, metavar="X")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in [
        ("check", "no-arbitrage check with a strict consistent price system"),
        ("value", "robust value and optimal strategy"),
        ("dual", "dual objective, duality gap and consistent price system"),
        ("indiff", "indifference price per gamma"),
        ("superhedge", "superhedging price from both linear programs"),
        ("sweep", "indifference prices over a gamma list with shortfall statistics"),
        ("props", "property checks of the indifference price"),
    ]:
        sub.add_parser(name, parents=[common], help=text)
    return parser


def _config(args) -> SolverConfig:
    overrides = {field: getattr(args, flag) for flag, field in TOLERANCE_FLAGS.items()}
    return DEFAULT_CONFIG.with_overrides(grid_m=args.grid_m, seed=args.seed, **overrides)


def _nodes(spec: MarketSpec):
    return [spec.tree.ids[k] for k in range(spec.tree.size)]


def _cps_json(spec: MarketSpec, cps) -> list[dict]:
    return [
        {"id": name, "mass": float(cps.mass[k]), "Z": [float(v) for v in cps.Z[k]]}
        for k, name in enumerate(_nodes(spec))
    ]


def cmd_check(spec, config, args):
    res = check_na2(spec, config)
    if not res.holds:
        raise ArbitrageError(res.message, witness=res.witness)
    result = {"holds": True, "epsilon": res.epsilon, "certificate": _cps_json(spec, res.certificate)}
    return result, [{"holds": True, "epsilon": res.epsilon}]


def cmd_value(spec, config, args):
    if args.gamma:
        spec = spec.with_claim(gamma=args.gamma[0])
    res = optimize_static(spec, config)
    H = res.strategy.H
    rows = [
        {"node": name, "t": int(spec.tree.times[k]), **{f"H{i}": float(H[k, i]) for i in range(spec.assets - 1)}}
        for k, name in enumerate(_nodes(spec))
        if not spec.tree.is_terminal(k)
    ]
    result = {
        "gamma": spec.claim.gamma,
        "L": res.L,
        "V": res.V,
        "program_optimum": res.fields.bound,
        "static": [float(v) for v in res.static],
        "positions": rows,
    }
    return result, rows


def _boundary_distance(spec: MarketSpec, cps) -> float:
    """Smallest distance of a charged price to its bid or ask (zero-spread
    coordinates ignored)."""
    cone = spec.cone
    live = (cps.mass > 0)[:, None] & ~cone.degenerate
    gaps = np.minimum(cps.Z[:, :-1] - cone.bid, cone.ask - cps.Z[:, :-1])
    return float(gaps[live].min()) if np.any(live) else float("nan")


def cmd_dual(spec, config, args):
    if args.gamma:
        spec = spec.with_claim(gamma=args.gamma[0])
    res = optimize_static(spec, config)
    fields = res.fields
    options = fields.options
    cert = strict_certificate(spec, options, config)
    gibbs = gibbs_candidate(fields, config, cert)
    ascent = dual_ascent(fields.lift, fields.payoff, config, options, cert)
    scores = {"gibbs": dual_objective(gibbs, fields.payoff, options, config),
              "ascent": dual_objective(ascent, fields.payoff, options, config)}
    best_name = max(scores, key=scores.get)
    best = gibbs if best_name == "gibbs" else ascent
    cps = extract_cps(best)
    gap = res.L - scores[best_name]
    if args.dump_dual:
        Path(args.dump_dual).write_text(json.dumps(
            {"measure": best.as_json(), "cps": _cps_json(spec, cps)}, sort_keys=True, indent=1))
    result = {
        "L": res.L,
        "dual_gibbs": scores["gibbs"],
        "dual_ascent": scores["ascent"],
        "best": best_name,
        "gap": gap,
        "relative_gap": gap / max(1.0, abs(res.L)),
        "boundary_distance": _boundary_distance(spec, cps),
        "cps": _cps_json(spec, cps),
    }
    rows = [{k: result[k] for k in ("L", "dual_gibbs", "dual_ascent", "gap", "relative_gap", "boundary_distance")}]
    return result, rows


def cmd_indiff(spec, config, args):
    rows = []
    for g in args.gamma or [spec.claim.gamma]:
        r = indifference_price(spec, g, config)
        rows.append({"gamma": g, "pi_gamma": r.price, "dual_pi_gamma": r.dual_price, "tolerance": r.tolerance})
    return {"prices": rows}, rows


def cmd_superhedge(spec, config, args):
    r = superhedge_price(spec, config)
    rows = [{"superhedge": r.price, "dominating": r.dominating_price, "agreement": r.agreement}]
    result = {
        **rows[0],
        "cash": r.cash,
        "static": [float(v) for v in r.static],
        "positions": [
            {"node": name, **{f"H{i}": float(r.H[k, i]) for i in range(spec.assets - 1)}}
            for k, name in enumerate(_nodes(spec))
            if not spec.tree.is_terminal(k)
        ],
    }
    return result, rows


def cmd_sweep(spec, config, args):
    report = gamma_sweep(spec, args.gamma or SWEEP, config)
    return report.as_json(), report.rows()


def cmd_props(spec, config, args):
    checks = property_suite(spec, config, seed=args.seed)
    rows = [{"property": c.name, "passed": c.passed, "worst": c.worst, "detail": c.detail} for c in checks]
    return {"properties": rows, "all_passed": all(c.passed for c in checks)}, rows


COMMANDS = {
    "check": cmd_check,
    "value": cmd_value,
    "dual": cmd_dual,
    "indiff": cmd_indiff,
    "superhedge": cmd_superhedge,
    "sweep": cmd_sweep,
    "props": cmd_props,
}


def _clean(obj):
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def render(result: dict, rows: list[dict], fmt: str, header: dict) -> str:
    if fmt == "json":
        return json.dumps(_clean({**header, "result": result}), sort_keys=True, indent=1) + "\n"
    buf = io.StringIO()
    buf.write(f"# spec_hash={header['spec_hash']} command={header['command']}\n")
    buf.write(f"# config={json.dumps(header['config'], sort_keys=True)}\n")
    if rows:
        writer = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: repr(float(v)) if isinstance(v, (float, np.floating)) else v for k, v in row.items()})
    return buf.getvalue()


def run(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = _config(args)
        spec = load_market(Path(args.input))
        if args.dump_lift:
            Path(args.dump_lift).write_text(json.dumps(_clean(build_lift(spec, config.grid_m).as_json()),
                                                       sort_keys=True, indent=1))
        result, rows = COMMANDS[args.command](spec, config, args)
    except RobustUtilityError as err:
        print(f"error: {err}", file=sys.stderr)
        print(json.dumps(_clean(err.as_json()), sort_keys=True), file=sys.stderr)
        return err.exit_code
    header = {"command": args.command, "spec_hash": spec.digest, "config": config.as_dict(), "version": __version__}
    text = render(result, rows, args.format, header)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    if args.command == "props" and not result["all_passed"]:
        return 3
    return 0


def main() -> None:
    sys.exit(run())
