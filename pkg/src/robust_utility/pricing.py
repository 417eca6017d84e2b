"""Indifference and superhedging prices of a claim sold by the investor.

The claim is the terminal vector ``xi`` stored as the market's endowment.
Every price is a seller's price: the indifference price solves
``V(0) = V(pi - xi)`` and satisfies

    pi_gamma = (L(gamma xi . X) - L(0)) / gamma

with the log-domain value ``L`` and the static option positions optimised
in both runs.  The superhedging price is a linear program, solved in its
martingale form and in its domination form.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dual import dual_objective, gibbs_candidate, strict_certificate
from .errors import ArbitrageError, ModelError, ToleranceError
from .lift import LiftedTree, Strategy, build_lift, liquidated_wealth, strategy_to_transfers
from .market import MarketSpec
from .primal import LogPayoff, StaticOptions, ValueFields, backward_induction
from .solvers import DEFAULT_CONFIG, SolverConfig, solve_lp_general

SWEEP = (1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0)


class _Pricer:
    """Shared lift, options and the zero-claim value of one market."""

    def __init__(self, spec: MarketSpec, config: SolverConfig = DEFAULT_CONFIG, lift: LiftedTree | None = None):
        self.spec = spec
        self.config = config
        self.lift = build_lift(spec, config.grid_m) if lift is None else lift
        self.options = StaticOptions.from_market(self.lift)
        self._base: ValueFields | None = None

    def fields(self, vectors: np.ndarray) -> ValueFields:
        payoff = LogPayoff.linear(self.lift, vectors)
        return backward_induction(self.lift, payoff, self.config, options=self.options)

    @property
    def base(self) -> ValueFields:
        # with a zero claim the optimal log-domain positions do not depend on gamma
        if self._base is None:
            self._base = self.fields(np.zeros_like(self.spec.claim.endowment))
        return self._base

    def price(self, xi: np.ndarray, gamma: float, cash: float = 0.0) -> float:
        """Indifference price with ``cash`` added to the investor's wealth in both runs."""
        if cash == 0.0:
            low = self.base.value
        else:
            low = self.fields(self._cash(-gamma * cash)).value
        high = self.fields(gamma * (xi - self._cash(cash))).value
        return (high - low) / gamma

    def _cash(self, amount: float) -> np.ndarray:
        out = np.zeros_like(self.spec.claim.endowment)
        out[self.spec.tree.terminals, -1] = amount
        return out


@dataclass(frozen=True)
class IndifferenceResult:
    gamma: float
    price: float
    dual_price: float  # two-term dual formula at the Gibbs measures
    tolerance: float  # sum of the two duality gaps, over gamma
    fields: ValueFields  # solution of the run holding the claim


def indifference_price(
    spec: MarketSpec,
    gamma: float | None = None,
    config: SolverConfig = DEFAULT_CONFIG,
    cross_check: bool = True,
    pricer: _Pricer | None = None,
) -> IndifferenceResult:
    """Seller's indifference price of the market's claim at risk aversion ``gamma``.

    The price is the difference of two primal values; with ``cross_check``
    it is recomputed from the dual measures read off both runs.
    """
    pricer = pricer or _Pricer(spec, config)
    gamma = spec.claim.gamma if gamma is None else float(gamma)
    if gamma <= 0:
        raise ModelError(f"risk aversion must be positive, got {gamma}")
    xi = spec.claim.endowment
    with_claim = pricer.fields(gamma * xi)
    base = pricer.base
    price = (with_claim.value - base.value) / gamma
    dual_price, tol = np.nan, np.nan
    if cross_check:
        cert = strict_certificate(spec, pricer.options, config)
        top = dual_objective(gibbs_candidate(with_claim, config, cert), with_claim.payoff, pricer.options, config)
        bottom = dual_objective(gibbs_candidate(base, config, cert), base.payoff, pricer.options, config)
        dual_price = (top - bottom) / gamma
        tol = ((with_claim.value - top) + (base.value - bottom)) / gamma
    return IndifferenceResult(gamma=gamma, price=price, dual_price=dual_price, tolerance=tol, fields=with_claim)


@dataclass(frozen=True)
class SuperhedgeResult:
    price: float  # martingale form
    dominating_price: float  # domination form
    weights: np.ndarray  # (n_nodes, n_grid) optimal martingale weights on grid points
    cash: float
    H: np.ndarray  # (n_nodes, d) superhedging positions
    static: np.ndarray  # option positions

    @property
    def agreement(self) -> float:
        return abs(self.price - self.dominating_price)


def _support(spec: MarketSpec):
    tree, priors = spec.tree, spec.priors
    reach = priors.reachable(tree)
    nodes = [k for k in range(tree.size) if reach[k]]
    kids = {
        k: [c for c, hit in zip(tree.children[k], priors.charged(k)) if hit]
        for k in nodes
        if not tree.is_terminal(k)
    }
    return nodes, kids


def _martingale_lp(lift: LiftedTree, xi: np.ndarray, options: StaticOptions | None, config: SolverConfig):
    spec = lift.market
    tree = spec.tree
    nodes, kids = _support(spec)
    G = lift.grid.size
    col = {k: i * G for i, k in enumerate(nodes)}
    n = len(nodes) * G
    eq, beq = [], []
    row = np.zeros(n)
    row[col[0] : col[0] + G] = 1.0
    eq.append(row)
    beq.append(1.0)
    d = spec.assets
    for k, ch in kids.items():
        block = np.zeros((d, n))
        block[:, col[k] : col[k] + G] -= lift.X[k].T
        for c in ch:
            block[:, col[c] : col[c] + G] += lift.X[c].T
        eq.extend(block)
        beq.extend([0.0] * d)
    ub, bub = [], []
    terms = [k for k in nodes if tree.is_terminal(k)]
    if options is not None:
        for i in range(options.size):
            row = np.zeros(n)
            for k in terms:
                row[col[k] : col[k] + G] = options.tables[i, k]
            ub += [row, -row]
            bub += [options.costs[i], options.costs[i]]
    c = np.zeros(n)
    table = lift.payoff_table(xi)
    for k in terms:
        c[col[k] : col[k] + G] = table[k]
    res = solve_lp_general(
        c,
        A_ub=np.array(ub) if ub else None,
        b_ub=np.array(bub) if bub else None,
        A_eq=np.array(eq),
        b_eq=np.array(beq),
        pivot_tol=config.lp_pivot_tol,
    )
    if res.status == "infeasible":
        raise ArbitrageError("no martingale measure prices every option within its bid-ask bounds")
    if not res.ok:
        raise ToleranceError(f"martingale-form superhedging program ended {res.status}")
    W = np.zeros((tree.size, G))
    for k in nodes:
        W[k] = res.x[col[k] : col[k] + G]
    return res.value, W


def _domination_lp(lift: LiftedTree, xi: np.ndarray, options: StaticOptions | None, config: SolverConfig):
    """Cheapest cash plus semi-static strategy dominating the claim on every
    theta path.  The adversary's grid choices at different nodes meet
    disjoint terms of the path sum, so each node gets one epigraph variable
    and each terminal one path row."""
    spec = lift.market
    tree = spec.tree
    d = spec.assets
    nodes, kids = _support(spec)
    inner = list(kids)
    e = options.size if options is not None else 0
    hcol = {k: 1 + i * (d - 1) for i, k in enumerate(inner)}
    lcol = 1 + len(inner) * (d - 1)
    wcol = lcol + e
    acol = {k: wcol + e + i for i, k in enumerate(nodes)}
    n = wcol + e + len(nodes)
    ub, bub = [], []
    for k in nodes:
        for g in range(lift.grid.size):
            x = lift.X[k, g]
            row = np.zeros(n)
            row[acol[k]] = 1.0
            # a_k <= z_k . X(k, g)
            if k != 0:
                p = hcol[tree.parent[k]]
                row[p : p + d - 1] -= x[:-1]
            if tree.is_terminal(k):
                for i in range(e):
                    row[lcol + i] -= options.tables[i, k, g]
                ub.append(row)
                bub.append(-float(xi[k] @ x))
            else:
                h = hcol[k]
                row[h : h + d - 1] += x[:-1]
                ub.append(row)
                bub.append(0.0)
    for k in nodes:
        if tree.is_terminal(k):
            row = np.zeros(n)
            row[0] = -1.0
            for m in tree.path(k):
                row[acol[m]] -= 1.0
            ub.append(row)
            bub.append(0.0)
    for i in range(e):
        for sign in (1.0, -1.0):
            row = np.zeros(n)
            row[lcol + i] = sign
            row[wcol + i] = -1.0
            ub.append(row)
            bub.append(0.0)
    c = np.zeros(n)
    c[0] = -1.0
    if e:
        c[wcol : wcol + e] = -options.costs
    free = np.ones(n, dtype=bool)
    free[wcol : wcol + e] = False
    res = solve_lp_general(c, A_ub=np.array(ub), b_ub=np.array(bub), free=free, pivot_tol=config.lp_pivot_tol)
    if res.status == "unbounded":
        raise ArbitrageError("superhedging cost is unbounded below: the option prices admit an arbitrage")
    if not res.ok:
        raise ToleranceError(f"domination-form superhedging program ended {res.status}")
    H = np.zeros((tree.size, d))
    for k in inner:
        H[k, :-1] = res.x[hcol[k] : hcol[k] + d - 1]
    return -res.value, float(res.x[0]), H, res.x[lcol : lcol + e].copy()


def superhedge_price(
    spec: MarketSpec,
    config: SolverConfig = DEFAULT_CONFIG,
    lift: LiftedTree | None = None,
    xi: np.ndarray | None = None,
) -> SuperhedgeResult:
    """Superhedging price of the claim, from both linear programs."""
    lift = build_lift(spec, config.grid_m) if lift is None else lift
    options = StaticOptions.from_market(lift)
    xi = spec.claim.endowment if xi is None else np.asarray(xi, float)
    price, W = _martingale_lp(lift, xi, options, config)
    dom, cash, H, static = _domination_lp(lift, xi, options, config)
    return SuperhedgeResult(price=price, dominating_price=dom, weights=W, cash=cash, H=H, static=static)


@dataclass(frozen=True)
class ShortfallRow:
    gamma: float
    measured: float  # sup over priors of E[Gamma^-]
    bound: float  # log 2 / gamma
    log_exp: float  # sup over priors of log E[exp(-gamma Gamma)]


def _robust_mean(spec: MarketSpec, terminal: np.ndarray, log: bool = False) -> float:
    """``sup_P E[f]`` over the rectangular prior set (or ``sup_P log E[exp f]``)."""
    tree, priors = spec.tree, spec.priors
    reach = priors.reachable(tree)
    W = np.full(tree.size, np.nan)
    for k in reversed(range(tree.size)):
        if not reach[k]:
            continue
        if tree.is_terminal(k):
            W[k] = terminal[k]
            continue
        best = -np.inf
        for p in priors.extremes[k]:
            vals = np.array([W[c] for c, pc in zip(tree.children[k], p) if pc > 0])
            ps = p[p > 0]
            if log:
                top = vals.max()
                best = max(best, top + np.log(ps @ np.exp(vals - top)))
            else:
                best = max(best, float(ps @ vals))
        W[k] = best
    return float(W[0])


def hedged_position(spec: MarketSpec, fields: ValueFields, gamma: float, capital: float, lift: LiftedTree) -> np.ndarray:
    """Liquidated terminal wealth per terminal node of the seller who starts
    with ``capital``, is short the claim and follows the optimal strategy
    at risk aversion ``gamma``."""
    short = spec.with_claim(endowment=-spec.claim.endowment)
    strategy = Strategy(-fields.H / gamma, -fields.static / gamma)
    eta = strategy_to_transfers(strategy, lift.__class__(short, lift.grid, lift.X))
    final = strategy.terminal_vectors(short)
    fees = float(np.abs(strategy.static) @ [o.cost for o in spec.claim.options]) if strategy.static.size else 0.0
    out = np.full(spec.tree.size, np.nan)
    for k in spec.tree.terminals:
        out[k] = capital - fees + liquidated_wealth(eta, lift, k, final)
    return out


def shortfall_check(
    spec: MarketSpec,
    gammas=SWEEP,
    config: SolverConfig = DEFAULT_CONFIG,
    superhedge: float | None = None,
    pricer: _Pricer | None = None,
    tol: float = 1e-7,
) -> list[ShortfallRow]:
    """Robust expected shortfall of the superhedge-funded optimal hedge.

    Raises ``ToleranceError`` when a measured value exceeds ``log 2 /
    gamma`` by more than ``tol``.
    """
    pricer = pricer or _Pricer(spec, config)
    if superhedge is None:
        superhedge = superhedge_price(spec, config, pricer.lift).price
    rows = []
    for gamma in gammas:
        fields = pricer.fields(gamma * spec.claim.endowment)
        wealth = hedged_position(spec, fields, gamma, superhedge, pricer.lift)
        measured = _robust_mean(spec, np.maximum(-wealth, 0.0))
        rows.append(ShortfallRow(
            gamma=float(gamma),
            measured=measured,
            bound=float(np.log(2.0) / gamma),
            log_exp=_robust_mean(spec, -gamma * wealth, log=True),
        ))
        if measured > rows[-1].bound + tol:
            raise ToleranceError("expected shortfall exceeds its bound", gamma=float(gamma),
                                 measured=measured, bound=rows[-1].bound)
    return rows


@dataclass(frozen=True)
class PriceReport:
    gammas: tuple[float, ...]
    prices: tuple[float, ...]
    superhedge: float
    shortfall: tuple[ShortfallRow, ...] = ()
    properties: dict = field(default_factory=dict)

    @property
    def gaps(self) -> tuple[float, ...]:
        return tuple(self.superhedge - p for p in self.prices)

    @property
    def monotone(self) -> bool:
        return all(b - a >= -1e-7 for a, b in zip(self.prices, self.prices[1:]))

    @property
    def bounded(self) -> bool:
        return all(p <= self.superhedge + 1e-7 for p in self.prices)

    @property
    def gap_ratio(self) -> float:
        """Terminal gap over first gap (nan when the first gap vanishes)."""
        first = self.gaps[0]
        return self.gaps[-1] / first if abs(first) > 1e-9 else np.nan

    def rows(self) -> list[dict]:
        out = []
        by_gamma = {r.gamma: r for r in self.shortfall}
        for g, p, gap in zip(self.gammas, self.prices, self.gaps):
            s = by_gamma.get(g)
            out.append({
                "gamma": g,
                "pi_gamma": p,
                "superhedge": self.superhedge,
                "gap": gap,
                "shortfall_bound": s.bound if s else np.nan,
                "shortfall_measured": s.measured if s else np.nan,
            })
        return out

    def as_json(self) -> dict:
        return {
            "rows": self.rows(),
            "superhedge": self.superhedge,
            "monotone": self.monotone,
            "bounded": self.bounded,
            "gap_ratio": self.gap_ratio,
            "properties": self.properties,
        }


def gamma_sweep(
    spec: MarketSpec,
    gammas=SWEEP,
    config: SolverConfig = DEFAULT_CONFIG,
    shortfall: bool = True,
    tol: float = 1e-7,
) -> PriceReport:
    """Indifference prices along an increasing list of risk aversions.

    Raises ``ToleranceError`` if the prices decrease or exceed the
    superhedging price by more than ``tol``.
    """
    gammas = tuple(float(g) for g in gammas)
    if not gammas or any(g <= 0 for g in gammas) or any(b <= a for a, b in zip(gammas, gammas[1:])):
        raise ModelError("gamma list must be positive and strictly increasing", gammas=list(gammas))
    pricer = _Pricer(spec, config)
    sup = superhedge_price(spec, config, pricer.lift)
    prices = tuple(indifference_price(spec, g, config, cross_check=False, pricer=pricer).price for g in gammas)
    rows = tuple(shortfall_check(spec, gammas, config, sup.price, pricer, tol)) if shortfall else ()
    report = PriceReport(gammas=gammas, prices=prices, superhedge=sup.price, shortfall=rows)
    if not report.monotone:
        raise ToleranceError("indifference prices decrease along the risk-aversion sweep", prices=list(prices))
    if not report.bounded:
        raise ToleranceError("an indifference price exceeds the superhedging price", prices=list(prices),
                             superhedge=sup.price)
    return report


@dataclass(frozen=True)
class PropertyCheck:
    name: str
    passed: bool
    worst: float  # largest violation found (0 when none)
    detail: str = ""


def _random_claim(rng: np.random.Generator, spec: MarketSpec) -> np.ndarray:
    xi = np.zeros_like(spec.claim.endowment)
    xi[spec.tree.terminals] = rng.normal(0.0, 0.5, size=(len(spec.tree.terminals), spec.assets))
    return xi


def property_suite(
    spec: MarketSpec,
    config: SolverConfig = DEFAULT_CONFIG,
    seed: int = 0,
    n_triples: int = 20,
    gammas=(1.0, 2.0, 4.0, 8.0),
) -> list[PropertyCheck]:
    """Basic properties of the indifference price, each checked on its own."""
    rng = np.random.default_rng(seed)
    pricer = _Pricer(spec, config)
    gamma = spec.claim.gamma
    xi = spec.claim.endowment
    terms = spec.tree.terminals

    def price(claim, g=gamma, cash=0.0):
        return pricer.price(claim, g, cash)

    p0 = price(xi)
    out = []

    cash = float(rng.uniform(-2.0, 2.0))
    worst = abs(price(xi, cash=cash) - p0)
    out.append(PropertyCheck("wealth_independence", worst <= 1e-8, worst, f"cash {cash:.4f}"))

    sweep = [price(xi, g) for g in gammas]
    worst = max([0.0] + [a - b for a, b in zip(sweep, sweep[1:])])
    out.append(PropertyCheck("monotone_in_gamma", worst <= 1e-7, worst))

    worst = 0.0
    for beta in (0.25, 0.5, 1.0):
        worst = max(worst, abs(price(beta * xi) - beta * price(xi, beta * gamma)))
    out.append(PropertyCheck("scaling", worst <= 1e-7, worst))

    k = float(rng.uniform(-1.0, 1.0))
    shifted = xi.copy()
    shifted[terms, -1] += k
    worst = abs(price(shifted) - p0 - k)
    out.append(PropertyCheck("translation", worst <= 1e-8, worst, f"k {k:.4f}"))

    worst = 0.0
    for _ in range(n_triples):
        a, b = _random_claim(rng, spec), _random_claim(rng, spec)
        alpha = float(rng.uniform())
        mixed = price(alpha * a + (1 - alpha) * b)
        worst = max(worst, mixed - alpha * price(a) - (1 - alpha) * price(b))
    out.append(PropertyCheck("convexity", worst <= 1e-8, max(worst, 0.0), f"{n_triples} triples"))

    bump = np.zeros_like(xi)
    bump[terms] = rng.uniform(0.0, 0.5, size=(len(terms), spec.assets))
    worst = max(0.0, p0 - price(xi + bump))
    out.append(PropertyCheck("monotone_in_claim", worst <= 1e-8, worst))

    # increasing sequence xi - bump / n converging to xi
    seq = [price(xi - bump / n) for n in (1, 2, 4, 8, 16)]
    steps = max([0.0] + [a - b for a, b in zip(seq, seq[1:])])
    reach = float(np.max(np.einsum("kgd,kd->kg", pricer.lift.X[terms], bump[terms])))
    tail = p0 - seq[-1]
    ok = steps <= 1e-8 and -1e-8 <= tail <= reach / 16 + 1e-8
    out.append(PropertyCheck("monotone_continuity", ok, max(steps, tail - reach / 16, 0.0),
                             f"last gap {tail:.3e}"))
    return out
