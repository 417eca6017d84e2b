"""Randomised enlargement of the market.

Each node gets a finite grid of multipliers ``theta`` in ``[1/c, c]^(d-1)``;
the fictitious price of a grid point is the mid price scaled by ``theta``
and clamped into the bid-ask box.  Trading the fictitious price without
frictions, against an adversary who picks ``theta``, reproduces the
friction market.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .errors import ModelError
from .market import MarketSpec


@dataclass(frozen=True)
class ThetaGrid:
    points: np.ndarray  # (n_grid, d-1), shared by every node
    interior: np.ndarray  # (n_nodes, n_grid) bool
    m: int

    @property
    def size(self) -> int:
        return self.points.shape[0]


@dataclass(frozen=True)
class LiftedTree:
    market: MarketSpec
    grid: ThetaGrid
    X: np.ndarray  # (n_nodes, n_grid, d), last coordinate 1

    @property
    def tree(self):
        return self.market.tree

    def payoff_table(self, vectors: np.ndarray) -> np.ndarray:
        """``vectors[k] . X(k, theta)`` for every node and grid point."""
        return np.einsum("kgd,kd->kg", self.X, vectors)

    @property
    def endowment_table(self) -> np.ndarray:
        return self.payoff_table(self.market.claim.endowment)

    @property
    def option_tables(self) -> list[np.ndarray]:
        return [self.payoff_table(o.payoff) for o in self.market.claim.options]

    def corner_points(self, k: int) -> list[int]:
        """Grid points whose price sits at a corner of the node's range, one
        per distinct corner.  A payoff linear in X attains its maximum over
        the grid at one of them."""
        Xk = self.X[k, :, :-1]
        lo, hi = Xk.min(axis=0), Xk.max(axis=0)
        at_edge = np.all((Xk == lo) | (Xk == hi), axis=1)
        out, seen = [], set()
        for g in np.flatnonzero(at_edge):
            key = tuple(Xk[g])
            if key not in seen:
                seen.add(key)
                out.append(int(g))
        return out

    def path_prices(self, k: int) -> np.ndarray:
        """Fictitious prices along every grid path to terminal node ``k``.

        Returns an array (n_paths, T+1, d); the number of paths is
        ``n_grid ** (T+1)``.
        """
        path = self.tree.path(k)
        combos = np.array(list(itertools.product(range(self.grid.size), repeat=len(path))))
        return np.stack([self.X[n][combos[:, t]] for t, n in enumerate(path)], axis=1)

    def as_json(self) -> dict:
        tree = self.tree
        return {
            "grid_m": self.grid.m,
            "theta": self.grid.points.tolist(),
            "nodes": [
                {
                    "id": tree.ids[k],
                    "X": self.X[k].tolist(),
                    "interior": self.grid.interior[k].tolist(),
                }
                for k in range(tree.size)
            ],
        }


def theta_axis(c: float, m: int) -> np.ndarray:
    """Geometric grid from 1/c to c; odd ``m`` includes 1."""
    return c ** np.linspace(-1.0, 1.0, m)


def build_lift(spec: MarketSpec, m: int = 2) -> LiftedTree:
    if m < 2:
        raise ModelError(f"grid resolution must be at least 2, got {m}")
    cone = spec.cone
    d = cone.assets
    axis = theta_axis(cone.spread_bound, m)
    points = np.array(list(itertools.product(axis, repeat=d - 1)))
    raw = cone.mid[:, None, :] * points[None, :, :]
    Xr = np.minimum(np.maximum(raw, cone.bid[:, None, :]), cone.ask[:, None, :])
    X = np.concatenate([Xr, np.ones(Xr.shape[:2] + (1,))], axis=2)
    strictly = (Xr > cone.bid[:, None, :]) & (Xr < cone.ask[:, None, :])
    interior = np.all(strictly | cone.degenerate[:, None, :], axis=2)
    return LiftedTree(market=spec, grid=ThetaGrid(points=points, interior=interior, m=m), X=X)


@dataclass(frozen=True)
class Strategy:
    """Positions ``H[k]`` held from node ``k`` to its children (rows of
    terminal nodes are unused) and static option positions."""

    H: np.ndarray  # (n_nodes, d)
    static: np.ndarray  # (e,)

    @classmethod
    def zero(cls, spec: MarketSpec) -> "Strategy":
        return cls(np.zeros((spec.tree.size, spec.assets)), np.zeros(len(spec.claim.options)))

    def terminal_vectors(self, spec: MarketSpec) -> np.ndarray:
        """Endowment plus option legs, per node."""
        out = spec.claim.endowment.copy()
        for ell, opt in zip(self.static, spec.claim.options):
            out = out + ell * opt.payoff
        return out

    def gains(self, lift: LiftedTree, k: int, prices: np.ndarray) -> np.ndarray:
        """``(H . X)_T`` for price paths (n_paths, T+1, d) ending at ``k``."""
        path = lift.tree.path(k)
        Hs = self.H[path[:-1]]
        return np.einsum("ptd,td->p", np.diff(prices, axis=1), Hs)


def _buy_cost(flow: np.ndarray, bid: np.ndarray, ask: np.ndarray) -> float:
    """Numeraire cost of the risky trade ``flow`` paid at ask, received at bid."""
    return float(np.sum(np.maximum(flow, 0) * ask) - np.sum(np.maximum(-flow, 0) * bid))


def strategy_to_transfers(strategy: Strategy, lift: LiftedTree) -> np.ndarray:
    """Self-financing transfers realising ``strategy`` in the friction market.

    Risky legs are the position changes; the numeraire leg pays for them at
    the worst box price.  The terminal transfer closes every risky position,
    including the endowment and option legs.
    """
    spec = lift.market
    tree, cone = spec.tree, spec.cone
    d = spec.assets
    final = strategy.terminal_vectors(spec)
    eta = np.zeros((tree.size, d))
    for k in range(tree.size):
        prev = strategy.H[tree.parent[k], :-1] if tree.parent[k] >= 0 else np.zeros(d - 1)
        if tree.is_terminal(k):
            flow = -final[k, :-1] - prev
        else:
            flow = strategy.H[k, :-1] - prev
        eta[k, :-1] = flow
        eta[k, -1] = -_buy_cost(flow, cone.bid[k], cone.ask[k])
    return eta


def is_admissible(eta_k: np.ndarray, bid: np.ndarray, ask: np.ndarray, tol: float = 1e-12) -> bool:
    """Whether the transfer lies in the negative solvency cone.

    That is, the numeraire leg covers the risky trade priced at the ask for
    purchases and at the bid for sales.
    """
    scale = max(1.0, float(np.abs(eta_k).max()))
    return eta_k[-1] + _buy_cost(eta_k[:-1], bid, ask) <= tol * scale


def liquidated_wealth(eta: np.ndarray, lift: LiftedTree, k: int, final: np.ndarray) -> float:
    """``(final + sum of transfers along the path)`` valued at the bid-ask
    liquidation price of terminal node ``k``."""
    path = lift.tree.path(k)
    pos = final[k] + eta[path].sum(axis=0)
    return lift.market.cone.liquidation(k, pos)


@dataclass(frozen=True)
class DominanceCertificate:
    H: np.ndarray
    margin: float  # min over paths of gains minus liquidated wealth


def transfers_to_strategy(eta: np.ndarray, lift: LiftedTree, static=None) -> DominanceCertificate:
    """Positions accumulated from admissible transfers, with the pathwise
    dominance margin over every grid path."""
    spec = lift.market
    tree, cone = spec.tree, spec.cone
    for k in range(tree.size):
        if not is_admissible(eta[k], cone.bid[k], cone.ask[k]):
            raise ModelError(f"transfer at node '{tree.ids[k]}' is not admissible", node=tree.ids[k])
    H = np.zeros_like(eta)
    for k in range(tree.size):
        if not tree.is_terminal(k):
            H[k] = eta[k] + (H[tree.parent[k]] if tree.parent[k] >= 0 else 0.0)
    static = np.zeros(len(spec.claim.options)) if static is None else np.asarray(static, float)
    strat = Strategy(H, static)
    final = strat.terminal_vectors(spec)
    margin = np.inf
    for k in tree.terminals:
        prices = lift.path_prices(k)
        value = prices[:, -1] @ final[k] + strat.gains(lift, k, prices)
        margin = min(margin, float(value.min()) - liquidated_wealth(eta, lift, k, final))
    return DominanceCertificate(H=H, margin=margin)
