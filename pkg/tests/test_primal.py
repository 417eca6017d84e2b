import numpy as np
import pytest

from robust_utility.errors import ArbitrageError
from robust_utility.fixtures import (
    call,
    constant_price,
    frictionless_binomial,
    named_fixtures,
    skewed_binomial,
    spread_binomial,
    tree_document,
    trinomial_call,
    with_option,
)
from robust_utility.lift import Strategy, build_lift
from robust_utility.market import load_market
from robust_utility.primal import (
    LogPayoff,
    backward_induction,
    extract_strategy,
    optimize_static,
    replay,
    robust_value,
    strategy_value,
)
from robust_utility.solvers import DEFAULT_CONFIG
from robust_utility.solvers.lse import LseTerms, minimize_max_lse


def test_skewed_binomial_value_is_minus_relative_entropy():
    # unique martingale measure (1/2, 1/2) against prior (3/4, 1/4)
    kl = 0.5 * np.log(0.5 / 0.75) + 0.5 * np.log(0.5 / 0.25)
    res = optimize_static(load_market(skewed_binomial(1)))
    assert res.L == pytest.approx(-kl, abs=1e-10)
    assert res.V == pytest.approx(-np.exp(-kl), abs=1e-10)
    # optimal holding h with (3/4) e^{-h} = (1/4) e^{h}, in investor units
    assert res.strategy.H[0, 0] == pytest.approx(0.5 * np.log(3.0), abs=1e-6)


def test_prior_set_containing_the_martingale_measure_gives_zero():
    doc = skewed_binomial(1)
    doc["nodes"][0]["priors"] = [[0.75, 0.25], [0.5, 0.5]]
    assert optimize_static(load_market(doc)).L == pytest.approx(0.0, abs=1e-9)


def test_constant_price_market_has_zero_value():
    res = optimize_static(load_market(constant_price()))
    assert res.L == pytest.approx(0.0, abs=1e-9)


def test_zero_endowment_value_does_not_depend_on_gamma():
    spec = load_market(trinomial_call())
    spec = spec.with_claim(endowment=np.zeros((spec.tree.size, 2)))
    values = [optimize_static(spec.with_claim(gamma=g)).L for g in (0.5, 1.0, 4.0)]
    assert np.ptp(values) <= 1e-8


def test_cash_endowment_shifts_value():
    spec = load_market(trinomial_call())
    base = optimize_static(spec).L
    cash = spec.claim.endowment.copy()
    cash[spec.tree.terminals, -1] += 0.3
    shifted = optimize_static(spec.with_claim(endowment=cash, gamma=2.0)).L
    gamma2 = optimize_static(spec.with_claim(gamma=2.0)).L
    assert shifted == pytest.approx(gamma2 - 2.0 * 0.3, abs=1e-9)
    assert base != gamma2


def test_enlarging_the_prior_set_cannot_lower_the_value():
    rng = np.random.default_rng(5)
    doc = trinomial_call()
    before = optimize_static(load_market(doc)).L
    for node in doc["nodes"]:
        if node["children"]:
            node["priors"].append(list(rng.dirichlet(np.ones(3))))
    after = optimize_static(load_market(doc)).L
    assert after >= before - 1e-10


@pytest.mark.parametrize("name", list(named_fixtures()))
def test_replay_matches_value(name):
    spec = load_market(named_fixtures()[name])
    res = optimize_static(spec)
    f = res.fields
    assert replay(f.lift, f.payoff, extract_strategy(f), f.options) == pytest.approx(res.L, abs=1e-9)
    assert f.value <= f.bound + 1e-9


def test_strategy_value_is_a_max_over_the_grid():
    spec = load_market(spread_binomial())
    lift = build_lift(spec)
    payoff = LogPayoff.linear(lift, -spec.claim.endowment)
    H = np.zeros((spec.tree.size, 2))
    H[0, 0] = 0.7
    value, W = strategy_value(lift, payoff, H)
    assert value == pytest.approx(replay(lift, payoff, Strategy(H, np.zeros(0))), abs=1e-12)
    assert np.isfinite(W[0])


def test_one_period_matches_minimax_solver():
    spec = load_market(tree_document(1, 2, [1.0], [[1.1], [1.0], [0.92]], [(0.3, 0.4, 0.3), (0.5, 0.2, 0.3)],
                                     spread=0.0, spread_bound=1.5, endowment=call(1.0)))
    res = optimize_static(spec)
    kids = list(spec.tree.children[0])
    S = spec.cone.mid[:, 0]
    g = -np.array([max(S[k] - 1.0, 0.0) for k in kids])
    groups = [LseTerms.from_triples([(p, g[j], -(S[k] - S[0])) for j, (k, p) in enumerate(zip(kids, P))])
              for P in spec.priors.extremes[0]]
    ref = minimize_max_lse(groups)
    assert res.L == pytest.approx(ref.value, abs=1e-8)


def test_grid_refinement_keeps_value():
    spec = load_market(trinomial_call())
    v2 = optimize_static(spec).V
    v4 = optimize_static(spec, DEFAULT_CONFIG.with_overrides(grid_m=4)).V
    assert v2 == pytest.approx(v4, abs=1e-9)


def test_per_grid_tables_bound_the_value():
    spec = load_market(spread_binomial())
    lift = build_lift(spec)
    payoff = LogPayoff.linear(lift, -spec.claim.endowment)
    f = backward_induction(lift, payoff, tables=True)
    assert f.grid_root_max() <= f.value + 1e-9


def test_worst_case_measure_is_a_martingale_in_the_box():
    spec = load_market(trinomial_call())
    f = optimize_static(spec).fields
    tree = spec.tree
    Z = f.Z
    for k in range(tree.size):
        if tree.is_terminal(k) or f.mass[k] < 1e-9:
            continue
        kids = list(tree.children[k])
        assert f.conditionals[k].sum() == pytest.approx(1.0, abs=1e-9)
        assert f.conditionals[k] @ Z[kids, 0] == pytest.approx(Z[k, 0], abs=1e-6)
    assert np.all(Z[:, 0] >= spec.cone.bid[:, 0] - 1e-12)
    assert np.all(Z[:, 0] <= spec.cone.ask[:, 0] + 1e-12)


def test_one_period_arbitrage_raises():
    doc = tree_document(1, 2, [1.0], [[1.3], [1.1]], [(0.5, 0.5)], spread=0.01, spread_bound=1.5)
    with pytest.raises(ArbitrageError):
        optimize_static(load_market(doc))


def test_fixed_static_positions_value_at_least_optimised():
    spec = load_market(with_option(trinomial_call()))
    opt = optimize_static(spec)
    fixed = robust_value(spec, static=np.array([0.0]))
    assert opt.L <= fixed.L + 1e-9


def test_frictionless_call_hedge_replicates():
    # complete binomial: the optimal investor hedge of a short call is delta-neutral
    spec = load_market(frictionless_binomial(claim=lambda S: np.array([0.0, -max(S[0] - 1.0, 0.0)]), p=(0.5, 0.5)))
    res = optimize_static(spec)
    assert res.strategy.H[0, 0] == pytest.approx(0.5, abs=1e-6)
