import copy
import json
from pathlib import Path

import numpy as np
import pytest

from robust_utility.errors import ArbitrageError, ModelError
from robust_utility.fixtures import spread_binomial, trinomial_call, tree_document, two_asset
from robust_utility.lift import (
    Strategy,
    build_lift,
    is_admissible,
    strategy_to_transfers,
    theta_axis,
    transfers_to_strategy,
)
from robust_utility.market import check_na2, dump_market, load_market

DATA = Path(__file__).parent / "data"


def test_load_from_path_text_and_dict_agree():
    path = DATA / "spread_binomial.json"
    a = load_market(path)
    b = load_market(path.read_text())
    c = load_market(json.loads(path.read_text()))
    assert a.digest == b.digest == c.digest
    assert a.tree.ids[0] == "r" and a.assets == 2


def test_dump_round_trip():
    spec = load_market(trinomial_call())
    again = load_market(dump_market(spec))
    assert again.tree.ids == spec.tree.ids
    np.testing.assert_array_equal(again.cone.bid, spec.cone.bid)
    np.testing.assert_array_equal(again.claim.endowment, spec.claim.endowment)


@pytest.mark.parametrize(
    "mutate, fragment",
    [
        (lambda d: d["nodes"][1].update(bid=[2.0]), "bid"),
        (lambda d: d["nodes"][0].update(priors=[[0.5, 0.6]]), "sums to"),
        (lambda d: d["nodes"][0].update(priors=[]), "empty prior"),
        (lambda d: d.update(spread_bound=1.0), "spread_bound"),
        (lambda d: d["nodes"][0].update(children=["r0", "r0"]), "two parents"),
        (lambda d: d["nodes"].append(dict(d["nodes"][1], id="orphan")), "not connected"),
        (lambda d: d.update(gamma=-1.0), "gamma"),
        (lambda d: d["options"].append({"payoff": {"r0": [0, 1], "r1": [0, 0]}, "cost": 0.0}), "cost"),
        (lambda d: d.update(unknown=1), "schema"),
    ],
)
def test_invalid_documents_raise_model_error(mutate, fragment):
    doc = copy.deepcopy(spread_binomial())
    mutate(doc)
    with pytest.raises(ModelError) as err:
        load_market(doc)
    text = str(err.value) + " ".join(err.value.details.get("problems", []))
    assert fragment in text
    assert err.value.exit_code == 2


def test_missing_file_is_model_error():
    with pytest.raises(ModelError):
        load_market(DATA / "does_not_exist.json")


def test_na2_certificate_is_strict_and_martingale():
    spec = load_market(trinomial_call())
    res = check_na2(spec)
    assert res.holds and res.epsilon > 0
    cert = res.certificate
    assert cert.martingale_residual(spec.tree) <= 1e-9
    assert cert.box_slack(spec.cone) > 0
    assert cert.mass[0] == pytest.approx(1.0)


def test_na2_fails_when_every_move_is_up():
    spec = load_market(DATA / "arbitrage.json")
    res = check_na2(spec)
    assert not res.holds
    assert res.witness == "r"


def test_zero_spread_is_degenerate_coordinate():
    spec = load_market(tree_document(1, 2, [1.0], [[1.1], [0.9]], [(0.5, 0.5)], spread=0.0))
    assert spec.cone.degenerate.all()
    assert check_na2(spec).holds


def test_theta_axis_is_geometric_and_odd_m_contains_one():
    axis = theta_axis(1.5, 5)
    assert axis[0] == pytest.approx(1 / 1.5) and axis[-1] == pytest.approx(1.5)
    assert axis[2] == pytest.approx(1.0)
    np.testing.assert_allclose(axis[1:] / axis[:-1], axis[1] / axis[0])


def test_lift_prices_stay_in_box_and_hit_corners():
    spec = load_market(two_asset())
    lift = build_lift(spec, 3)
    Xr = lift.X[:, :, :-1]
    assert np.all(Xr >= spec.cone.bid[:, None, :]) and np.all(Xr <= spec.cone.ask[:, None, :])
    assert np.all(lift.X[:, :, -1] == 1.0)
    for k in range(spec.tree.size):
        corners = lift.corner_points(k)
        assert len(corners) == 4  # two risky assets, both with a spread
        got = {tuple(lift.X[k, g, :-1]) for g in corners}
        lo, hi = spec.cone.bid[k], spec.cone.ask[k]
        assert got == {(a, b) for a in (lo[0], hi[0]) for b in (lo[1], hi[1])}


def test_lift_rejects_single_point_grid():
    with pytest.raises(ModelError):
        build_lift(load_market(spread_binomial()), 1)


def test_transfers_are_admissible_and_round_trip():
    spec = load_market(trinomial_call())
    lift = build_lift(spec)
    rng = np.random.default_rng(1)
    H = np.zeros((spec.tree.size, 2))
    H[:, 0] = rng.normal(size=spec.tree.size)
    eta = strategy_to_transfers(Strategy(H, np.zeros(0)), lift)
    for k in range(spec.tree.size):
        assert is_admissible(eta[k], spec.cone.bid[k], spec.cone.ask[k])
    # interior positions are recovered from the accumulated transfers
    cert = transfers_to_strategy(eta, lift)
    inner = [k for k in range(spec.tree.size) if not spec.tree.is_terminal(k)]
    np.testing.assert_allclose(cert.H[inner, 0], H[inner, 0], atol=1e-14)


def test_inadmissible_transfer_is_rejected():
    spec = load_market(spread_binomial())
    lift = build_lift(spec)
    eta = np.zeros((spec.tree.size, 2))
    eta[0] = [1.0, -0.5]  # buys one unit for half the bid
    with pytest.raises(ModelError):
        transfers_to_strategy(eta, lift)


def test_buying_and_selling_costs_the_spread():
    spec = load_market(spread_binomial(spread=0.02, claim=(0.0, 0.0)))
    lift = build_lift(spec)
    H = np.zeros((spec.tree.size, 2))
    H[0, 0] = 1.0
    eta = strategy_to_transfers(Strategy(H, np.zeros(0)), lift)
    assert eta[0, -1] == pytest.approx(-1.02)
    # at the terminal node the unit is sold at the bid
    k = spec.tree.terminals[0]
    assert eta[k, -1] == pytest.approx(spec.cone.bid[k, 0])


def test_arbitrage_error_carries_exit_code():
    assert ArbitrageError("x").exit_code == 4
