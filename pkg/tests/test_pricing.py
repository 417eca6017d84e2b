from pathlib import Path

import numpy as np
import pytest

from robust_utility.errors import ArbitrageError, ModelError
from robust_utility.fixtures import call, frictionless_binomial, spread_binomial, trinomial_call
from robust_utility.market import load_market
from robust_utility.pricing import (
    gamma_sweep,
    indifference_price,
    property_suite,
    shortfall_check,
    superhedge_price,
)

DATA = Path(__file__).parent / "data"


def test_frictionless_call_superhedge_is_replication_cost():
    # mids 1.2 / 0.8, strike 1: delta 1/2, cost 0.5 * 1.2 - 0.5 = 0.1
    spec = load_market(frictionless_binomial(claim=call(1.0)))
    r = superhedge_price(spec)
    assert r.price == pytest.approx(0.1, abs=1e-12)
    assert r.dominating_price == pytest.approx(0.1, abs=1e-9)
    assert r.H[0, 0] == pytest.approx(0.5, abs=1e-9)


def test_zero_claim_superhedges_for_nothing():
    r = superhedge_price(load_market(spread_binomial(claim=(0.0, 0.0))))
    assert r.price == pytest.approx(0.0, abs=1e-12)
    assert r.agreement <= 1e-9


def test_replicable_claim_has_no_shortfall_under_a_martingale_prior():
    spec = load_market(frictionless_binomial(claim=call(1.0), p=(0.5, 0.5)))
    for row in shortfall_check(spec, (1.0, 4.0)):
        assert row.measured == pytest.approx(0.0, abs=1e-9)


def test_shortfall_is_positive_but_bounded_off_the_martingale_prior():
    spec = load_market(trinomial_call())
    rows = shortfall_check(spec, (1.0, 2.0, 4.0))
    assert any(r.measured > 1e-6 for r in rows)
    for r in rows:
        assert r.measured <= r.bound + 1e-7
        assert r.bound == pytest.approx(np.log(2.0) / r.gamma)


def test_indifference_price_below_superhedge_and_dual_agrees():
    spec = load_market(trinomial_call())
    res = indifference_price(spec, 2.0)
    sup = superhedge_price(spec).price
    assert res.price <= sup + 1e-9
    assert abs(res.price - res.dual_price) <= max(res.tolerance, 0.0) + 1e-9
    assert res.tolerance <= 1e-4


def test_replicable_price_does_not_depend_on_gamma():
    spec = load_market(frictionless_binomial(claim=call(1.0), p=(0.5, 0.5)))
    prices = [indifference_price(spec, g, cross_check=False).price for g in (0.5, 3.0)]
    assert prices == pytest.approx([0.1, 0.1], abs=1e-8)


@pytest.mark.parametrize("gammas", [(2.0, 1.0), (0.0, 1.0), (), (1.0, 1.0)])
def test_sweep_rejects_bad_gamma_lists(gammas):
    with pytest.raises(ModelError):
        gamma_sweep(load_market(spread_binomial()), gammas)


def test_indifference_rejects_non_positive_gamma():
    with pytest.raises(ModelError):
        indifference_price(load_market(spread_binomial()), -1.0)


def test_superhedge_on_arbitrage_market_raises():
    with pytest.raises(ArbitrageError):
        superhedge_price(load_market(DATA / "arbitrage.json"))


def test_report_rows_and_json():
    rep = gamma_sweep(load_market(trinomial_call()), (1.0, 4.0))
    rows = rep.rows()
    assert [r["gamma"] for r in rows] == [1.0, 4.0]
    assert set(rows[0]) == {"gamma", "pi_gamma", "superhedge", "gap", "shortfall_bound", "shortfall_measured"}
    doc = rep.as_json()
    assert doc["monotone"] and doc["bounded"]
    assert doc["gap_ratio"] == pytest.approx(rep.gaps[-1] / rep.gaps[0])


def test_sweep_without_shortfall_leaves_columns_empty():
    rep = gamma_sweep(load_market(spread_binomial()), (1.0, 2.0), shortfall=False)
    assert rep.shortfall == ()
    assert np.isnan(rep.rows()[0]["shortfall_bound"])


def test_property_suite_passes_and_names_are_distinct():
    checks = property_suite(load_market(spread_binomial()), n_triples=5)
    names = [c.name for c in checks]
    assert len(names) == len(set(names)) and len(names) >= 4
    assert all(c.passed for c in checks), [(c.name, c.worst) for c in checks if not c.passed]
