"""Invariants checked on generated inputs."""

import numpy as np
from hypothesis import given, settings, strategies as st
from scipy.optimize import linprog

from robust_utility.dual import dual_objective, random_measures, strict_certificate
from robust_utility.fixtures import random_document
from robust_utility.lift import Strategy, build_lift, liquidated_wealth, strategy_to_transfers
from robust_utility.market import load_market
from robust_utility.primal import LogPayoff, StaticOptions, strategy_value
from robust_utility.solvers import DEFAULT_CONFIG
from robust_utility.solvers.kl import kl_project
from robust_utility.solvers.lp import solve_lp

seeds = st.integers(0, 2**32 - 1)
FEW = settings(max_examples=15, deadline=None)


def _market(seed):
    spec = load_market(random_document(np.random.default_rng(seed), max_horizon=2))
    lift = build_lift(spec)
    return spec, lift, LogPayoff.linear(lift, -spec.claim.gamma * spec.claim.endowment)


@FEW
@given(seeds)
def test_kl_projection_is_nonnegative_and_certified(seed):
    rng = np.random.default_rng(seed)
    C, J = int(rng.integers(2, 6)), int(rng.integers(1, 5))
    P = rng.dirichlet(np.ones(C), size=J)
    q = rng.dirichlet(np.ones(C))
    r = kl_project(q, P)
    assert r.value >= -1e-12
    assert r.certificate <= 1e-9
    # no single extreme does better than the projection
    single = min(float(np.sum(q * np.log(q / p))) for p in P)
    assert r.value <= single + 1e-12


@FEW
@given(seeds)
def test_dual_values_never_exceed_any_strategy_value(seed):
    spec, lift, payoff = _market(seed)
    rng = np.random.default_rng(seed)
    options = StaticOptions.from_market(lift)
    cert = strict_certificate(spec, options, DEFAULT_CONFIG)
    measures = random_measures(lift, 5, rng, cert, options=options)
    H = np.zeros((spec.tree.size, spec.assets))
    H[:, :-1] = rng.normal(0.0, 1.0, size=(spec.tree.size, spec.assets - 1))
    upper, _ = strategy_value(lift, payoff, H)
    for m in measures:
        assert dual_objective(m, payoff, options) <= upper + 1e-9


@FEW
@given(seeds, st.floats(-3.0, 3.0))
def test_cash_translates_strategy_value(seed, cash):
    spec, lift, payoff = _market(seed)
    shifted = spec.claim.endowment.copy()
    shifted[spec.tree.terminals, -1] += cash
    moved = LogPayoff.linear(lift, -spec.claim.gamma * shifted)
    H = np.zeros((spec.tree.size, spec.assets))
    H[0, :-1] = 0.3
    a, _ = strategy_value(lift, payoff, H)
    b, _ = strategy_value(lift, moved, H)
    assert abs(b - (a - spec.claim.gamma * cash)) <= 1e-9 * max(1.0, abs(a))


@FEW
@given(seeds)
def test_transfer_wealth_is_the_worst_path_wealth(seed):
    spec, lift, _ = _market(seed)
    rng = np.random.default_rng(seed)
    H = np.zeros((spec.tree.size, spec.assets))
    H[:, :-1] = rng.normal(0.0, 2.0, size=(spec.tree.size, spec.assets - 1))
    strat = Strategy(H, rng.normal(0.0, 1.0, len(spec.claim.options)))
    eta = strategy_to_transfers(strat, lift)
    final = strat.terminal_vectors(spec)
    for k in spec.tree.terminals:
        prices = lift.path_prices(k)
        pathwise = prices[:, -1] @ final[k] + strat.gains(lift, k, prices)
        wealth = liquidated_wealth(eta, lift, k, final)
        assert abs(float(pathwise.min()) - wealth) <= 1e-12 * max(1.0, abs(wealth))


@settings(max_examples=40, deadline=None)
@given(seeds)
def test_simplex_agrees_with_highs(seed):
    rng = np.random.default_rng(seed)
    m, n = int(rng.integers(1, 6)), int(rng.integers(2, 9))
    A = rng.normal(size=(m, n))
    b = A @ (rng.uniform(0, 1, n) * (rng.random(n) < 0.7))
    c = rng.normal(size=n) + 0.3 * np.abs(A).sum(axis=0)
    ref = linprog(c, A_eq=A, b_eq=b, bounds=(0, None), method="highs")
    res = solve_lp(-c, A, b)
    if ref.status == 0:
        assert res.status == "optimal"
        assert abs(-res.value - ref.fun) <= 1e-8 * max(1.0, abs(ref.fun))
    elif ref.status == 3:
        assert res.status == "unbounded"
