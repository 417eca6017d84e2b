"""Acceptance gate: every criterion prints one pass/fail line in the
terminal summary (section "acceptance criteria")."""

from __future__ import annotations

from functools import lru_cache

import numpy as np
import pytest

from robust_utility.dual import (
    dual_ascent,
    dual_objective,
    gibbs_candidate,
    random_measures,
    strict_certificate,
)
from robust_utility.errors import ToleranceError
from robust_utility.fixtures import (
    frictionless_binomial,
    named_fixtures,
    random_document,
    skewed_binomial,
    tree_document,
)
from robust_utility.lift import build_lift, liquidated_wealth, Strategy, strategy_to_transfers
from robust_utility.market import load_market
from robust_utility.pricing import SWEEP, gamma_sweep, property_suite, superhedge_price
from robust_utility.primal import extract_strategy, optimize_static, replay
from robust_utility.solvers import DEFAULT_CONFIG

N_RANDOM = 50
REPLICABLE = ("spread_binomial", "frictionless_call")
INCOMPLETE = ("trinomial_call", "two_asset", "trinomial_with_option")


@lru_cache(maxsize=None)
def random_specs():
    rng = np.random.default_rng(20240611)
    return tuple(load_market(random_document(rng)) for _ in range(N_RANDOM))


@lru_cache(maxsize=None)
def named_specs():
    return tuple((name, load_market(doc)) for name, doc in named_fixtures().items())


_SOLVED: dict[int, object] = {}


def solved(spec):
    # specs hold arrays and are not hashable; the cached tuples keep them alive
    if id(spec) not in _SOLVED:
        _SOLVED[id(spec)] = optimize_static(spec)
    return _SOLVED[id(spec)]


def _all_specs():
    return [s for _, s in named_specs()] + list(random_specs())


def test_criterion_01_duality_gap(acceptance):
    worst, where = 0.0, ""
    for i, spec in enumerate(random_specs()):
        res = solved(spec)
        f = res.fields
        best = dual_objective(gibbs_candidate(f), f.payoff, f.options)
        rel = abs(res.L - best) / max(1.0, abs(res.L))
        if rel > worst:
            worst, where = rel, f"fixture {i}"
    ok = acceptance(1, "duality gap <= 1e-4 max(1,|L|) on 50 random fixtures", worst <= 1e-4,
                    f"worst {worst:.2e} at {where}")
    assert ok


def test_criterion_01_second_dual_route(acceptance):
    # the ascent route is slower and less accurate; it must stay weakly dual
    # and land near the primal on the small fixtures
    for name in ("spread_binomial", "frictionless_call"):
        spec = dict(named_specs())[name]
        res = solved(spec)
        f = res.fields
        cert = strict_certificate(spec, f.options, DEFAULT_CONFIG)
        q = dual_ascent(f.lift, f.payoff, DEFAULT_CONFIG, f.options, cert)
        value = dual_objective(q, f.payoff, f.options)
        assert value <= res.L + 1e-9
        assert res.L - value <= 1e-4 * max(1.0, abs(res.L))


def test_criterion_02_weak_duality(acceptance):
    specs = [s for _, s in named_specs()] + list(random_specs()[:10])
    worst = -np.inf
    for i, spec in enumerate(specs):
        f = solved(spec).fields
        cert = strict_certificate(spec, f.options, DEFAULT_CONFIG)
        measures = random_measures(f.lift, 100, np.random.default_rng(i), cert, options=f.options)
        assert len(measures) == 100
        values = np.array([dual_objective(m, f.payoff, f.options) for m in measures])
        assert np.isfinite(values).all()
        worst = max(worst, float(values.max() - solved(spec).L))
    ok = acceptance(2, "100 random martingale measures never exceed L + 1e-9", worst <= 1e-9,
                    f"{len(specs)} fixtures, max excess {worst:.2e}")
    assert ok


def test_criterion_03_closed_forms(acceptance):
    one = optimize_static(load_market(skewed_binomial(1))).L
    two = optimize_static(load_market(skewed_binomial(2))).L
    ok = acceptance(3, "closed-form binomial values", abs(one + 0.143841036) <= 1e-8 and abs(two + 0.287682072) <= 1e-7,
                    f"L1={one:.10f} L2={two:.10f}")
    assert ok


def test_criterion_04_reformulation_identity(acceptance):
    rng = np.random.default_rng(4)
    worst = 0.0
    for spec in _all_specs():
        lift = build_lift(spec)
        tree = spec.tree
        for _ in range(20):
            H = np.zeros((tree.size, spec.assets))
            H[:, :-1] = rng.normal(0.0, 2.0, size=(tree.size, spec.assets - 1))
            strat = Strategy(H, rng.normal(0.0, 1.0, len(spec.claim.options)))
            eta = strategy_to_transfers(strat, lift)
            final = strat.terminal_vectors(spec)
            for k in tree.terminals:
                prices = lift.path_prices(k)
                pathwise = prices[:, -1] @ final[k] + strat.gains(lift, k, prices)
                wealth = liquidated_wealth(eta, lift, k, final)
                worst = max(worst, abs(float(pathwise.min()) - wealth) / max(1.0, abs(wealth)))
    ok = acceptance(4, "min over theta paths equals liquidated transfer wealth", worst <= 1e-12,
                    f"worst {worst:.1e}")
    assert ok


def test_criterion_05_replay(acceptance):
    worst = 0.0
    for spec in _all_specs():
        res = solved(spec)
        f = res.fields
        strat = extract_strategy(f)
        value = replay(f.lift, f.payoff, strat, f.options)
        worst = max(worst, abs(-np.exp(value) - res.V))
    ok = acceptance(5, "exhaustive replay reproduces the value", worst <= 1e-6, f"worst {worst:.1e}")
    assert ok


def test_criterion_06_superhedge(acceptance):
    worst = 0.0
    for spec in _all_specs():
        r = superhedge_price(spec)
        worst = max(worst, r.agreement)
    spread = superhedge_price(dict(named_specs())["spread_binomial"]).price
    ok = acceptance(6, "superhedge LP forms agree; spread binomial price is the ask",
                    worst <= 1e-7 and abs(spread - 1.02) <= 1e-12, f"worst {worst:.1e}, pi={spread!r}")
    assert ok


@lru_cache(maxsize=None)
def sweeps():
    out = {}
    for name, spec in named_specs():
        try:
            out[name] = gamma_sweep(spec, SWEEP)
        except ToleranceError as err:
            out[name] = err
    return out


def test_criterion_07_indifference_asymptotics(acceptance):
    problems = []
    for name, rep in sweeps().items():
        if isinstance(rep, Exception):
            problems.append(f"{name}: {rep}")
            continue
        p = np.array(rep.prices)
        if np.any(np.diff(p) < -1e-7) or np.any(p > rep.superhedge + 1e-7):
            problems.append(f"{name}: not monotone or not bounded")
        if name in INCOMPLETE and not rep.gap_ratio < 0.25:
            problems.append(f"{name}: gap ratio {rep.gap_ratio:.3f}")
        if name in REPLICABLE and p.max() - p.min() > 1e-7:
            problems.append(f"{name}: replicable sweep moves by {p.max() - p.min():.1e}")
    ratios = {n: round(r.gap_ratio, 3) for n, r in sweeps().items() if n in INCOMPLETE and not isinstance(r, Exception)}
    ok = acceptance(7, "gamma sweep monotone, bounded, gap shrinks", not problems, "; ".join(problems) or f"ratios {ratios}")
    assert ok


def test_criterion_08_shortfall(acceptance):
    worst = -np.inf
    for name, rep in sweeps().items():
        assert not isinstance(rep, Exception), rep
        for row in rep.shortfall:
            worst = max(worst, row.measured - row.bound)
    ok = acceptance(8, "shortfall within log 2 / gamma", worst <= 1e-7, f"max excess {worst:.2e}")
    assert ok


def test_criterion_09_property_suite(acceptance):
    failed = []
    for name, spec in named_specs():
        for check in property_suite(spec):
            if not check.passed:
                failed.append(f"{name}:{check.name} ({check.worst:.1e})")
    ok = acceptance(9, "indifference-price property suite", not failed, ", ".join(failed))
    assert ok


def _brute_minimax(spec) -> float:
    """min over h of max over priors of log E exp(g + h dS), one period,
    one risky asset, zero spread: scan at step 1e-3, then refine the best
    cell by golden section (the objective is convex in h)."""
    tree = spec.tree
    kids = list(tree.children[0])
    dS = spec.cone.mid[kids, 0] - spec.cone.mid[0, 0]
    g = -spec.claim.gamma * np.einsum("kd,kd->k", spec.claim.endowment[kids],
                                      np.c_[spec.cone.mid[kids], np.ones(len(kids))])
    P = spec.priors.extremes[0]

    def f(h):
        h = np.atleast_1d(h)
        z = g[None, :] + h[:, None] * dS[None, :]
        top = z.max(axis=1, keepdims=True)
        with np.errstate(divide="ignore"):
            vals = top + np.log(np.exp(z - top) @ P.T)
        return vals.max(axis=1)

    lo, hi = -1.0, 1.0
    while True:
        grid = np.arange(lo, hi + 1e-3, 1e-3)
        i = int(np.argmin(f(grid)))
        if 0 < i < grid.size - 1:
            break
        lo, hi = 2 * lo, 2 * hi
    a, b = grid[i - 1], grid[i + 1]
    r = (np.sqrt(5) - 1) / 2
    for _ in range(80):
        c, d = b - r * (b - a), a + r * (b - a)
        if f(c)[0] < f(d)[0]:
            b = d
        else:
            a = c
    return float(f(0.5 * (a + b))[0])


def _zero_spread_instances():
    rng = np.random.default_rng(10)
    docs = [frictionless_binomial(claim=lambda S: np.array([0.3, max(S[0] - 1.0, 0.0)]))]
    for _ in range(9):
        n = int(rng.integers(2, 4))
        u = np.sort(rng.uniform(-0.2, 0.2, n))
        u[0], u[-1] = -rng.uniform(0.05, 0.2), rng.uniform(0.05, 0.2)
        priors = rng.dirichlet(np.full(n, 2.0), size=int(rng.integers(1, 4)))
        units, cash, strike = rng.normal(0, 1), rng.normal(0, 1), rng.uniform(0.9, 1.1)
        docs.append(tree_document(1, 2, [1.0], [[1 + v] for v in u], [p / p.sum() for p in priors],
                                  spread=0.0, spread_bound=1.5, gamma=float(rng.uniform(0.5, 3.0)),
                                  endowment=lambda S, a=units, c=cash, k=strike: np.array([a, c + max(S[0] - k, 0)])))
    return [load_market(d) for d in docs]


def test_criterion_10_frictionless_reduction(acceptance):
    worst_oracle, worst_dual = 0.0, 0.0
    for spec in _zero_spread_instances():
        res = optimize_static(spec)
        f = res.fields
        worst_oracle = max(worst_oracle, abs(res.L - _brute_minimax(spec)))
        worst_dual = max(worst_dual, abs(res.L - dual_objective(gibbs_candidate(f), f.payoff, f.options)))
    ok = acceptance(10, "zero spread matches brute-force minimax and frictionless duality",
                    worst_oracle <= 1e-5 and worst_dual <= 1e-6,
                    f"oracle {worst_oracle:.1e}, dual {worst_dual:.1e}")
    assert ok


def test_criterion_11_grid_invariance(acceptance):
    config5 = DEFAULT_CONFIG.with_overrides(grid_m=5)
    worst = 0.0
    specs = [s for _, s in named_specs()] + list(random_specs()[:15])
    for spec in specs:
        worst = max(worst, abs(solved(spec).V - optimize_static(spec, config5).V))
    ok = acceptance(11, "value identical for m=2 and m=5", worst <= 1e-9, f"{len(specs)} fixtures, worst {worst:.1e}")
    assert ok


@pytest.mark.parametrize("name", REPLICABLE + INCOMPLETE)
def test_named_fixture_pass_na2(name):
    from robust_utility.market import check_na2

    assert check_na2(dict(named_specs())[name]).holds
