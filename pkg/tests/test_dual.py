import numpy as np
import pytest

from robust_utility.dual import (
    cps_entropy,
    dual_ascent,
    dual_objective,
    extract_cps,
    gibbs_candidate,
    lift_cps,
    random_measures,
    robust_entropy,
    strict_certificate,
)
from robust_utility.fixtures import skewed_binomial, spread_binomial, trinomial_call, two_asset, with_option
from robust_utility.market import load_market
from robust_utility.primal import optimize_static, strategy_value
from robust_utility.solvers import DEFAULT_CONFIG


def _solve(doc):
    spec = load_market(doc)
    return spec, optimize_static(spec)


@pytest.mark.parametrize("doc", [spread_binomial(), trinomial_call(), two_asset(), with_option(trinomial_call())],
                         ids=["spread_binomial", "trinomial_call", "two_asset", "with_option"])
def test_gibbs_candidate_closes_the_gap(doc):
    spec, res = _solve(doc)
    f = res.fields
    q = gibbs_candidate(f)
    assert q.is_feasible()
    value = dual_objective(q, f.payoff, f.options)
    assert value <= res.L + 1e-9
    assert res.L - value <= 1e-6 * max(1.0, abs(res.L))


def test_skewed_binomial_dual_is_the_martingale_measure():
    spec, res = _solve(skewed_binomial(1))
    cps = extract_cps(gibbs_candidate(res.fields))
    kids = list(spec.tree.children[0])
    np.testing.assert_allclose(cps.mass[kids], [0.5, 0.5], atol=1e-9)


def test_ascent_is_weakly_dual_and_close_on_trinomial():
    spec, res = _solve(trinomial_call())
    f = res.fields
    q = dual_ascent(f.lift, f.payoff, DEFAULT_CONFIG, f.options, strict_certificate(spec, f.options, DEFAULT_CONFIG))
    value = dual_objective(q, f.payoff, f.options)
    assert value <= res.L + 1e-9
    assert res.L - value <= 1e-3


def test_random_measures_are_feasible_and_below_every_strategy():
    spec, res = _solve(trinomial_call())
    f = res.fields
    cert = strict_certificate(spec, f.options, DEFAULT_CONFIG)
    rng = np.random.default_rng(3)
    measures = random_measures(f.lift, 20, rng, cert, options=f.options)
    # any strategy bounds every measure from above
    H = np.zeros_like(f.H)
    H[:, 0] = rng.normal(size=spec.tree.size)
    bound, _ = strategy_value(f.lift, f.payoff, H)
    for m in measures:
        assert m.is_feasible()
        value = dual_objective(m, f.payoff, f.options)
        assert np.isfinite(value)
        assert value <= res.L + 1e-9
        assert value <= bound + 1e-9


def test_infeasible_measure_scores_minus_infinity():
    spec, res = _solve(spread_binomial())
    f = res.fields
    q = gibbs_candidate(f)
    cps = extract_cps(q)
    bad = type(cps)(mass=cps.mass, Z=cps.Z.copy())
    kid = spec.tree.children[0][0]
    bad.Z[kid, 0] += 0.05  # breaks the martingale property
    assert dual_objective(lift_cps(f.lift, bad), f.payoff, f.options) == -np.inf


def test_cps_round_trip_keeps_entropy():
    spec, res = _solve(trinomial_call())
    q = gibbs_candidate(res.fields)
    cps = extract_cps(q)
    again = lift_cps(res.fields.lift, cps)
    assert robust_entropy(again).value == pytest.approx(cps_entropy(spec, cps), abs=1e-12)
    assert cps.martingale_residual(spec.tree) <= 1e-9


def test_measure_serialises():
    _, res = _solve(spread_binomial())
    out = gibbs_candidate(res.fields).as_json()
    assert isinstance(out, dict) and out
