"""Small market documents: named test markets and a random generator."""

from __future__ import annotations

import numpy as np

from .market import check_na2, load_market


def tree_document(
    horizon: int,
    assets: int,
    root_price,
    moves,
    priors,
    spread=0.0,
    spread_bound: float = 1.5,
    endowment=None,
    options=(),
    gamma: float = 1.0,
) -> dict:
    """Recombination-free tree where every node has the same relative moves.

    ``moves`` lists price multipliers per child (each of length d-1),
    ``priors`` the extreme points over children, ``spread`` the relative
    half-width of every bid-ask box (a scalar or a callable of (t, price)).
    ``endowment`` and option payoffs are callables of the terminal price.
    """
    moves = [np.atleast_1d(np.asarray(m, float)) for m in moves]
    nodes = []
    terminals = {}

    def half_width(t, S):
        return np.broadcast_to(spread(t, S) if callable(spread) else spread, S.shape)

    def visit(name, t, S):
        w = half_width(t, S)
        node = {
            "id": name,
            "t": t,
            "children": [],
            "mid": S.tolist(),
            "bid": (S * (1 - w)).tolist(),
            "ask": (S * (1 + w)).tolist(),
            "priors": [],
        }
        nodes.append(node)
        if t == horizon:
            terminals[name] = S
            return
        node["children"] = [f"{name}{j}" for j in range(len(moves))]
        node["priors"] = [list(map(float, p)) for p in priors]
        for j, m in enumerate(moves):
            visit(f"{name}{j}", t + 1, S * m)

    visit("r", 0, np.atleast_1d(np.asarray(root_price, float)))
    zero = lambda S: np.zeros(assets)  # noqa: E731
    endowment = endowment or zero
    return {
        "horizon": horizon,
        "assets": assets,
        "spread_bound": spread_bound,
        "nodes": nodes,
        "endowment": {k: list(map(float, endowment(S))) for k, S in terminals.items()},
        "options": [
            {"payoff": {k: list(map(float, f(S))) for k, S in terminals.items()}, "cost": float(c)}
            for f, c in options
        ],
        "gamma": gamma,
    }


def skewed_binomial(horizon: int = 1, p=(0.75, 0.25), gamma: float = 1.0) -> dict:
    """Frictionless binomial with additive moves of one unit from 3."""
    nodes = []
    terminals = []

    def visit(name, t, S):
        node = {"id": name, "t": t, "children": [], "mid": [S], "bid": [S], "ask": [S], "priors": []}
        nodes.append(node)
        if t == horizon:
            terminals.append(name)
            return
        node["children"] = [name + "u", name + "d"]
        node["priors"] = [list(p)]
        visit(name + "u", t + 1, S + 1.0)
        visit(name + "d", t + 1, S - 1.0)

    visit("r", 0, float(horizon + 2))
    return {
        "horizon": horizon,
        "assets": 2,
        "spread_bound": 2.0,
        "nodes": nodes,
        "endowment": {k: [0.0, 0.0] for k in terminals},
        "gamma": gamma,
    }


def spread_binomial(spread: float = 0.02, claim=(1.0, 0.0), p=(0.5, 0.5)) -> dict:
    """One period, root price 1, terminal mids 1.2 and 0.8."""
    return tree_document(1, 2, [1.0], [[1.2], [0.8]], [p], spread=spread, spread_bound=1.1,
                         endowment=lambda S: np.array(claim, float))


def frictionless_binomial(claim=None, p=(0.6, 0.4), horizon: int = 1) -> dict:
    claim = claim or (lambda S: np.zeros(2))
    return tree_document(horizon, 2, [1.0], [[1.2], [0.8]], [p], spread=0.0, spread_bound=1.1,
                         endowment=claim)


def constant_price() -> dict:
    return tree_document(2, 2, [1.0], [[1.0], [1.0]], [(0.5, 0.5)], spread=0.0, spread_bound=1.1)


def call(strike: float, units: float = 1.0):
    """Cash-settled call on the first risky asset."""
    def payoff(S):
        out = np.zeros(S.size + 1)
        out[-1] = units * max(S[0] - strike, 0.0)
        return out
    return payoff


def trinomial_call(spread: float = 0.01, priors=((0.3, 0.4, 0.3), (0.2, 0.5, 0.3))) -> dict:
    """Incomplete two-period trinomial with a call endowment."""
    return tree_document(2, 2, [1.0], [[1.1], [1.0], [0.9]], priors, spread=spread,
                         spread_bound=1.1, endowment=call(1.0))


def two_asset(spread: float = 0.01) -> dict:
    """Two risky assets, one period, three children around the root."""
    moves = [[1.1, 1.0], [0.95, 1.1], [0.95, 0.9]]
    return tree_document(1, 3, [1.0, 2.0], moves, [(0.4, 0.3, 0.3), (0.2, 0.4, 0.4)],
                         spread=spread, spread_bound=1.1,
                         endowment=lambda S: np.array([0.0, 0.5, max(S[0] - 1.0, 0.0)]))


def with_option(doc: dict, spread: float = 0.01, cost: float = 0.02) -> dict:
    """Attach a centred cash-settled call on the first asset to ``doc``."""
    spec = load_market(doc)
    cert = check_na2(spec).certificate
    tree = spec.tree
    strike = float(spec.cone.mid[0, 0])
    raw = {k: np.r_[np.zeros(spec.assets - 1), max(spec.cone.mid[k, 0] - strike, 0.0)] for k in tree.terminals}
    price = sum(cert.mass[k] * raw[k] @ cert.Z[k] for k in tree.terminals)
    out = dict(doc)
    out["options"] = list(doc.get("options", [])) + [
        {"payoff": {tree.ids[k]: list(map(float, raw[k] - np.r_[np.zeros(spec.assets - 1), price]))
                    for k in tree.terminals}, "cost": cost}
    ]
    return out


def named_fixtures() -> dict[str, dict]:
    """The markets every property check runs on."""
    return {
        "spread_binomial": spread_binomial(),
        "frictionless_call": frictionless_binomial(claim=call(1.0)),
        "trinomial_call": trinomial_call(),
        "two_asset": two_asset(),
        "trinomial_with_option": with_option(trinomial_call()),
    }


def random_document(rng: np.random.Generator, max_horizon: int = 3) -> dict:
    """Random market within desk-scale bounds that passes the
    no-arbitrage check; options are centred on a strict price system so
    their price bounds hold strictly."""
    while True:
        horizon = int(rng.integers(1, max_horizon + 1))
        assets = int(rng.integers(2, 4))
        if assets == 3:
            n_children = 3
            phase = rng.uniform(0, 2 * np.pi)
            sigma = rng.uniform(0.03, 0.12)
            moves = [np.exp(sigma * np.array([np.cos(phase + 2 * np.pi * j / 3), np.sin(phase + 2 * np.pi * j / 3)]))
                     for j in range(3)]
        else:
            n_children = int(rng.integers(2, 4))
            sigma = rng.uniform(0.03, 0.15)
            u = np.sort(rng.uniform(-1, 1, n_children))
            u[0], u[-1] = -rng.uniform(0.5, 1), rng.uniform(0.5, 1)
            moves = [np.exp(sigma * np.array([v])) for v in u]
        # keep trees small at the longest horizons
        if horizon == 3 and n_children == 3 and rng.random() < 0.5:
            horizon = 2
        n_priors = int(rng.integers(1, 4))
        priors = rng.dirichlet(np.full(n_children, 2.0), size=n_priors)
        if n_priors > 1 and rng.random() < 0.2:
            priors[0, rng.integers(n_children)] = 0.0
            priors[0] /= priors[0].sum()
        priors = [p / p.sum() for p in priors]
        spreads = {}

        def spread(t, S):
            key = (t, tuple(np.round(S, 12)))
            if key not in spreads:
                w = rng.uniform(0.0, 0.05, size=S.size)
                w[rng.random(S.size) < 0.25] = 0.0
                spreads[key] = w
            return spreads[key]

        scale = rng.uniform(0.3, 1.5)
        units = rng.normal(0.0, 0.5, assets - 1)
        cash = rng.normal(0.0, 0.5)
        strike = 1.0

        def endowment(S):
            return np.r_[units, cash + scale * max(S[0] - strike, 0.0)]

        root = np.ones(assets - 1)
        doc = tree_document(horizon, assets, root, moves, priors, spread=spread, spread_bound=1.1,
                            endowment=endowment, gamma=float(rng.uniform(0.5, 2.0)))
        spec = load_market(doc)
        na = check_na2(spec)
        if not na.holds:
            continue
        n_opt = int(rng.integers(0, 3))
        options = []
        for _ in range(n_opt):
            vec = rng.normal(0.0, 0.5, size=assets)
            k_strike = rng.uniform(0.95, 1.05)
            raw = {}
            for k in spec.tree.terminals:
                raw[k] = vec * 0.2 + np.r_[np.zeros(assets - 1), max(spec.cone.mid[k, 0] - k_strike, 0.0)]
            cert = na.certificate
            price = sum(cert.mass[k] * raw[k] @ cert.Z[k] for k in spec.tree.terminals)
            options.append({
                "payoff": {spec.tree.ids[k]: list(map(float, raw[k] - np.r_[np.zeros(assets - 1), price]))
                           for k in spec.tree.terminals},
                "cost": float(rng.uniform(0.01, 0.05)),
            })
        doc["options"] = options
        return doc
