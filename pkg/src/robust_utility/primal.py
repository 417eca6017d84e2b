"""Robust exponential-utility value on the lifted tree.

Everything runs in the log domain: for a terminal integrand ``g`` the value
is

    L(g) = inf_H sup_{P, theta} log E[exp(g + (H . X)_T)],

with positions ``H`` keyed by market nodes only.  Writing the exponent as a
sum over nodes of ``z_k . X_k`` (``z_k`` = incoming minus outgoing position,
plus the payoff vector at terminal nodes) turns the whole game into one
convex program with log-sum-exp constraints:

    node bound   z_k . X(k, theta) - s_k <= 0          for every grid point
    prior bound  log sum_c P_j(c) exp(u_c + s_k - u_k) <= 0   for every extreme

minimising ``u`` at the root.  Its optimum is the value of the game over the
whole bid-ask box, so it does not depend on the grid beyond the box vertices.
The multipliers of the two constraint families are the worst-case theta
kernel and the worst-case tilted measure.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .errors import ArbitrageError, ToleranceError
from .lift import LiftedTree, Strategy, build_lift
from .market import MarketSpec
from .solvers import DEFAULT_CONFIG, ProgramBuilder, SolverConfig, solve_barrier
from .solvers.barrier import _starts


@dataclass(frozen=True)
class LogPayoff:
    """Terminal integrand on the grid, with its linear form when it has one."""

    table: np.ndarray  # (n_nodes, n_grid)
    vectors: np.ndarray | None = None  # (n_nodes, d)
    constant: float = 0.0

    @classmethod
    def linear(cls, lift: LiftedTree, vectors: np.ndarray, constant: float = 0.0) -> "LogPayoff":
        vectors = np.asarray(vectors, float)
        return cls(lift.payoff_table(vectors) + constant, vectors, float(constant))

    def shifted(self, k: float) -> "LogPayoff":
        return LogPayoff(self.table + k, self.vectors, self.constant + k)

    def at(self, node: int, X: np.ndarray) -> np.ndarray:
        """Payoff at arbitrary price points of a terminal node."""
        if self.vectors is None:
            raise ValueError("payoff table has no linear form off the grid")
        return X @ self.vectors[node] + self.constant


@dataclass(frozen=True)
class StaticOptions:
    """Options whose log-domain positions are optimised jointly with H."""

    tables: np.ndarray  # (e, n_nodes, n_grid): zeta_i . X
    vectors: np.ndarray  # (e, n_nodes, d)
    costs: np.ndarray  # (e,)

    @classmethod
    def from_market(cls, lift: LiftedTree) -> "StaticOptions | None":
        opts = lift.market.claim.options
        if not opts:
            return None
        vectors = np.array([o.payoff for o in opts])
        return cls(
            tables=np.array([lift.payoff_table(v) for v in vectors]),
            vectors=vectors,
            costs=np.array([o.cost for o in opts]),
        )

    @property
    def size(self) -> int:
        return self.costs.size


@dataclass(frozen=True)
class ValueFields:
    lift: LiftedTree
    payoff: LogPayoff
    options: StaticOptions | None
    value: float  # exact value of the returned strategy
    bound: float  # optimum of the convex program (within the barrier gap)
    H: np.ndarray  # (n_nodes, d), numeraire column zero
    static: np.ndarray  # log-domain option positions
    node_values: np.ndarray  # continuation values under H (nan off the support)
    mass: np.ndarray  # worst-case path weights from the multipliers
    conditionals: tuple[np.ndarray, ...]  # per node, over children
    kernels: np.ndarray  # (n_nodes, n_grid) worst-case theta weights
    tables: np.ndarray | None = None  # (n_nodes, n_grid) continuation values per grid point
    newton_steps: int = 0

    @property
    def strategy(self) -> Strategy:
        return Strategy(self.H, self.static)

    @property
    def Z(self) -> np.ndarray:
        """Price system implied by the theta kernels."""
        return np.einsum("kg,kgd->kd", self.kernels, self.lift.X)

    def grid_root_max(self) -> float:
        """Largest root table entry; at most ``value`` and equal when the
        adversary's best root price is a grid point."""
        if self.tables is None:
            raise ValueError("tables were not computed")
        return float(self.tables[0].max())


class _Program:
    """The log-sum-exp program of the subtree rooted at ``root``."""

    def __init__(
        self,
        lift: LiftedTree,
        payoff: LogPayoff,
        root: int = 0,
        incoming: np.ndarray | None = None,
        root_points=None,
        options: StaticOptions | None = None,
        bound: float = 1e6,
    ):
        spec = lift.market
        tree, priors = spec.tree, spec.priors
        d = spec.assets
        reach = priors.reachable(tree)
        self.lift, self.payoff, self.root = lift, payoff, root
        self.nodes = [k for k in tree.subtree(root) if reach[k]]
        self.inner = [k for k in self.nodes if not tree.is_terminal(k)]
        self.incoming = np.zeros(d - 1) if incoming is None else np.asarray(incoming, float)[: d - 1]
        self.options = options if root == 0 else None
        e = self.options.size if self.options is not None else 0

        col = 0
        self.hcol = {}
        for k in self.inner:
            self.hcol[k] = col
            col += d - 1
        self.lcol = col
        self.wcol = col + e
        col += 2 * e
        self.scol = {}
        for k in self.inner:
            self.scol[k] = col
            col += 1
        self.ucol = {}
        for k in self.nodes:
            self.ucol[k] = col
            col += 1
        self.n = col

        pb = ProgramBuilder(self.n)
        n_grid = lift.grid.size
        self.vertex: dict[int, list[tuple[int, int]]] = {}
        for k in self.nodes:
            if k == root and root_points is not None:
                pts = list(root_points)
            elif tree.is_terminal(k) and payoff.vectors is None:
                pts = range(n_grid)
            else:
                # every term is linear in X there, so interior points are redundant
                pts = lift.corner_points(k)
            rows = []
            for g in pts:
                x = lift.X[k, g, :-1]
                cols, vals, off = [], [], 0.0
                if k == root:
                    off += float(self.incoming @ x)
                else:
                    p = self.hcol[tree.parent[k]]
                    cols += range(p, p + d - 1)
                    vals += list(x)
                if tree.is_terminal(k):
                    off += float(payoff.table[k, g])
                    for i in range(e):
                        cols.append(self.lcol + i)
                        vals.append(float(self.options.tables[i, k, g]))
                    cols.append(self.ucol[k])
                else:
                    h = self.hcol[k]
                    cols += range(h, h + d - 1)
                    vals += list(-x)
                    cols.append(self.scol[k])
                vals.append(-1.0)
                if k == root:
                    for i in range(e):
                        cols.append(self.wcol + i)
                        vals.append(float(self.options.costs[i]))
                rows.append((g, pb.add([(cols, vals, off)])))
            self.vertex[k] = rows
        self.prior: dict[int, list[tuple[int, list[int]]]] = {}
        for k in self.inner:
            kids = tree.children[k]
            rows = []
            for j, p in enumerate(priors.extremes[k]):
                terms, charged = [], []
                for c, pc in zip(kids, p):
                    if pc > 0:
                        terms.append(([self.ucol[c], self.scol[k], self.ucol[k]], [1.0, 1.0, -1.0], float(np.log(pc))))
                        charged.append(c)
                rows.append((pb.add(terms), charged))
            self.prior[k] = rows
        for i in range(e):
            pb.add([([self.lcol + i, self.wcol + i], [1.0, -1.0], 0.0)])
            pb.add([([self.lcol + i, self.wcol + i], [-1.0, -1.0], 0.0)])
            pb.add([([self.wcol + i], [1.0], -bound)])
        for k in self.inner:
            for i in range(d - 1):
                pb.add([([self.hcol[k] + i], [1.0], -bound)])
                pb.add([([self.hcol[k] + i], [-1.0], -bound)])
        cost = np.zeros(self.n)
        cost[self.ucol[root]] = 1.0
        self.program = pb.build(cost)
        self.bound = bound

    def start(self) -> np.ndarray:
        """Strictly feasible point with zero positions."""
        tree = self.lift.tree
        x = np.zeros(self.n)
        e = self.options.size if self.options is not None else 0
        x[self.wcol : self.wcol + e] = 1.0
        z = self.program.terms @ x + self.program.offset
        for k in reversed(self.nodes):
            # the slack variable enters with coefficient -1, so z excludes it
            top = max(z[self.program.group == cid].max() for _, cid in self.vertex[k]) + 1.0
            if tree.is_terminal(k):
                x[self.ucol[k]] = top
            else:
                x[self.scol[k]] = top
                worst = max(
                    np.log(sum(np.exp(x[self.ucol[c]]) * pc for c, pc in zip(tree.children[k], p) if pc > 0))
                    for p in self.lift.market.priors.extremes[k]
                )
                x[self.ucol[k]] = top + worst + 1.0
        return x

    def positions(self, x: np.ndarray) -> np.ndarray:
        d = self.lift.market.assets
        H = np.zeros((self.lift.tree.size, d))
        for k, c in self.hcol.items():
            H[k, :-1] = x[c : c + d - 1]
        return H

    def static(self, x: np.ndarray) -> np.ndarray:
        e = self.options.size if self.options is not None else 0
        return x[self.lcol : self.lcol + e].copy()


def _solve(prog: _Program, config: SolverConfig):
    res = solve_barrier(prog.program, prog.start(), config)
    if not res.converged:
        raise ToleranceError("barrier method did not reach the duality-gap tolerance", gap=res.gap)
    H = prog.positions(res.x)
    ell = prog.static(res.x)
    tree = prog.lift.tree
    big = 0.5 * prog.bound
    if np.any(np.abs(ell) > big):
        raise ArbitrageError("static option positions diverge: the option prices admit an arbitrage")
    for k in prog.inner:
        if np.any(np.abs(H[k]) > big):
            raise ArbitrageError(f"positions diverge at node '{tree.ids[k]}': one-period arbitrage", node=tree.ids[k])
    return res, H, ell


def strategy_value(
    lift: LiftedTree,
    payoff: LogPayoff,
    H: np.ndarray,
    static: np.ndarray | None = None,
    options: StaticOptions | None = None,
    root: int = 0,
    incoming: np.ndarray | None = None,
) -> tuple[float, np.ndarray]:
    """Exact ``sup_{P, theta} log E[exp(g + (H . X)_T)]`` on a subtree.

    The adversary's theta choice at a node only meets that node's own term,
    so the supremum is a node-wise maximum over the grid followed by a
    maximum over prior extremes.  Returns the value and the per-node
    continuation values.
    """
    spec = lift.market
    tree, priors = spec.tree, spec.priors
    reach = priors.reachable(tree)
    d = spec.assets
    table = payoff.table.copy()
    cost = 0.0
    if options is not None and static is not None and root == 0:
        table = table + np.einsum("i,ikg->kg", static, options.tables)
        cost = float(np.abs(static) @ options.costs)
    inc = np.zeros(d) if incoming is None else np.r_[np.asarray(incoming, float)[: d - 1], 0.0]
    W = np.full(tree.size, np.nan)
    nodes = [k for k in tree.subtree(root) if reach[k]]
    for k in reversed(nodes):
        into = inc if k == root else H[tree.parent[k]]
        if tree.is_terminal(k):
            W[k] = float(np.max(table[k] + lift.X[k, :, :-1] @ into[:-1]))
            continue
        local = float(np.max(lift.X[k, :, :-1] @ (into[:-1] - H[k, :-1])))
        best = -np.inf
        for p in priors.extremes[k]:
            vals = [np.log(pc) + W[c] for c, pc in zip(tree.children[k], p) if pc > 0]
            top = max(vals)
            best = max(best, top + np.log(np.sum(np.exp(np.array(vals) - top))))
        W[k] = local + best
    return float(W[root] + cost), W


def _dual_pieces(prog: _Program, res):
    """Worst-case measure and theta kernels from the barrier multipliers."""
    lift = prog.lift
    tree = lift.tree
    lam = res.multipliers
    pi = res.weights
    starts = _starts(prog.program.group)
    mass = np.zeros(tree.size)
    kernels = np.zeros((tree.size, lift.grid.size))
    conds = [np.zeros(len(tree.children[k])) for k in range(tree.size)]
    for k in prog.nodes:
        mu = np.array([lam[cid] for _, cid in prog.vertex[k]])
        pts = [g for g, _ in prog.vertex[k]]
        if mu.sum() > 0:
            kernels[k, pts] = mu / mu.sum()
    for k in prog.inner:
        flow = {}
        for cid, charged in prog.prior[k]:
            w = pi[starts[cid] : starts[cid] + len(charged)]
            for c, wc in zip(charged, w):
                flow[c] = flow.get(c, 0.0) + lam[cid] * wc
        tot = sum(flow.values())
        for pos, c in enumerate(tree.children[k]):
            conds[k][pos] = flow.get(c, 0.0) / tot if tot > 0 else 0.0
    mass[prog.root] = 1.0
    for k in prog.nodes:
        if not tree.is_terminal(k):
            for pos, c in enumerate(tree.children[k]):
                mass[c] = mass[k] * conds[k][pos]
    return mass, tuple(conds), kernels


def _tables(lift: LiftedTree, payoff: LogPayoff, config: SolverConfig) -> np.ndarray:
    """Continuation value at every (node, grid point) with zero incoming position."""
    tree = lift.tree
    reach = lift.market.priors.reachable(tree)
    out = np.full((tree.size, lift.grid.size), np.nan)
    for k in range(tree.size):
        if not reach[k]:
            continue
        if tree.is_terminal(k):
            out[k] = payoff.table[k]
            continue
        for g in range(lift.grid.size):
            prog = _Program(lift, payoff, root=k, root_points=[g], bound=config.position_bound)
            res, H, _ = _solve(prog, config)
            out[k, g] = _point_value(lift, payoff, H, k, g)
    return out


def _point_value(lift, payoff, H, k, g):
    """Subtree value with the root price pinned to grid point ``g``."""
    _, W = strategy_value(lift, payoff, H, root=k)
    tree, priors = lift.tree, lift.market.priors
    local = float(lift.X[k, g, :-1] @ (-H[k, :-1]))
    best = -np.inf
    for p in priors.extremes[k]:
        vals = [np.log(pc) + W[c] for c, pc in zip(tree.children[k], p) if pc > 0]
        top = max(vals)
        best = max(best, top + np.log(np.sum(np.exp(np.array(vals) - top))))
    return local + best


def backward_induction(
    lift: LiftedTree,
    payoff: LogPayoff,
    config: SolverConfig = DEFAULT_CONFIG,
    options: StaticOptions | None = None,
    tables: bool = False,
) -> ValueFields:
    """Solve the robust problem for a log-domain terminal integrand.

    With ``options`` the static option positions are optimised jointly.
    ``tables`` additionally evaluates the continuation value at every
    (node, grid point), one subtree program per entry.
    """
    prog = _Program(lift, payoff, options=options, bound=config.position_bound)
    res, H, ell = _solve(prog, config)
    value, W = strategy_value(lift, payoff, H, ell, options)
    mass, conds, kernels = _dual_pieces(prog, res)
    return ValueFields(
        lift=lift,
        payoff=payoff,
        options=options,
        value=value,
        bound=res.value,
        H=H,
        static=ell,
        node_values=W,
        mass=mass,
        conditionals=conds,
        kernels=kernels,
        tables=_tables(lift, payoff, config) if tables else None,
        newton_steps=res.newton_steps,
    )


def extract_strategy(fields: ValueFields, config: SolverConfig = DEFAULT_CONFIG, mass_tol: float = 1e-6) -> Strategy:
    """Subgame-optimal positions, carrying the accumulated position forward.

    Where the worst-case measure charges a node, the joint optimum is already
    optimal for that node's subtree given the incoming position.  Elsewhere
    the subtree program is re-solved with the incoming position fixed.
    """
    lift = fields.lift
    tree = lift.tree
    reach = lift.market.priors.reachable(tree)
    H = fields.H.copy()
    done = np.zeros(tree.size, dtype=bool)
    for k in range(tree.size):
        if done[k] or not reach[k] or tree.is_terminal(k) or k == 0 or fields.mass[k] >= mass_tol:
            continue
        prog = _Program(lift, fields.payoff, root=k, incoming=H[tree.parent[k]], bound=config.position_bound)
        _, Hs, _ = _solve(prog, config)
        for n in prog.inner:
            H[n] = Hs[n]
            done[n] = True
    return Strategy(H, fields.static.copy())


def replay(
    lift: LiftedTree,
    payoff: LogPayoff,
    strategy: Strategy,
    options: StaticOptions | None = None,
    max_paths: int = 2_000_000,
) -> float:
    """Adversarial value of a fixed strategy by exhaustive enumeration.

    For every scenario path the adversary's best grid path is found by
    enumerating all theta sequences; the prior adversary then acts by
    backward recursion over extreme points.
    """
    spec = lift.market
    tree, priors = spec.tree, spec.priors
    reach = priors.reachable(tree)
    n_grid = lift.grid.size
    if n_grid ** (tree.horizon + 1) > max_paths:
        raise ValueError("too many grid paths for exhaustive replay")
    table = payoff.table
    cost = 0.0
    if options is not None and strategy.static.size:
        table = table + np.einsum("i,ikg->kg", strategy.static, options.tables)
        cost = float(np.abs(strategy.static) @ options.costs)
    W = np.full(tree.size, -np.inf)
    for k in tree.terminals:
        if not reach[k]:
            continue
        path = tree.path(k)
        combos = np.array(list(itertools.product(range(n_grid), repeat=len(path))))
        prices = np.stack([lift.X[n][combos[:, t]] for t, n in enumerate(path)], axis=1)
        gains = np.einsum("ptd,td->p", np.diff(prices, axis=1), strategy.H[path[:-1]])
        W[k] = float(np.max(table[k][combos[:, -1]] + gains))
    for k in reversed(range(tree.size)):
        if tree.is_terminal(k) or not reach[k]:
            continue
        best = -np.inf
        for p in priors.extremes[k]:
            vals = np.array([np.log(pc) + W[c] for c, pc in zip(tree.children[k], p) if pc > 0])
            top = vals.max()
            best = max(best, top + np.log(np.exp(vals - top).sum()))
        W[k] = best
    return float(W[0] + cost)


@dataclass(frozen=True)
class ValueResult:
    L: float
    V: float
    fields: ValueFields
    strategy: Strategy  # investor units
    static: np.ndarray = field(default_factory=lambda: np.zeros(0))


def _investor(spec: MarketSpec, fields: ValueFields, static: np.ndarray) -> Strategy:
    gamma = spec.claim.gamma
    return Strategy(-fields.H / gamma, static)


def robust_value(
    spec: MarketSpec,
    static=None,
    config: SolverConfig = DEFAULT_CONFIG,
    lift: LiftedTree | None = None,
) -> ValueResult:
    """Value of the exponential-utility problem with option positions fixed.

    The log-domain integrand is ``-gamma (xi + sum_i l_i zeta_i) . X_T +
    gamma sum_i |l_i| c_i`` and ``V = -exp(L)``.
    """
    lift = build_lift(spec, config.grid_m) if lift is None else lift
    gamma = spec.claim.gamma
    static = np.zeros(len(spec.claim.options)) if static is None else np.asarray(static, float)
    vectors = spec.claim.endowment.copy()
    cost = 0.0
    for ell, opt in zip(static, spec.claim.options):
        vectors = vectors + ell * opt.payoff
        cost += abs(ell) * opt.cost
    payoff = LogPayoff.linear(lift, -gamma * vectors, gamma * cost)
    fields = backward_induction(lift, payoff, config)
    return ValueResult(L=fields.value, V=-np.exp(fields.value), fields=fields,
                       strategy=_investor(spec, fields, static), static=static)


def optimize_static(
    spec: MarketSpec,
    config: SolverConfig = DEFAULT_CONFIG,
    lift: LiftedTree | None = None,
) -> ValueResult:
    """Value with the static option positions optimised jointly."""
    lift = build_lift(spec, config.grid_m) if lift is None else lift
    options = StaticOptions.from_market(lift)
    if options is None:
        return robust_value(spec, config=config, lift=lift)
    gamma = spec.claim.gamma
    payoff = LogPayoff.linear(lift, -gamma * spec.claim.endowment)
    fields = backward_induction(lift, payoff, config, options=options)
    static = -fields.static / gamma
    return ValueResult(L=fields.value, V=-np.exp(fields.value), fields=fields,
                       strategy=_investor(spec, fields, static), static=static)
