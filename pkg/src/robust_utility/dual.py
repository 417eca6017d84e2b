"""Martingale measures on the lifted tree and the entropy-penalised dual.

A measure assigns to each node a finite set of price states inside its
box, a distribution over those states (drawn on arrival at the node,
independently of where the path came from) and, for every state of a
non-terminal node, a conditional distribution over children.  The
martingale property asks every state to equal the conditional mean of its
children's average prices.  Off-grid states are allowed: an optimal
adversary typically settles strictly inside the box.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .lift import LiftedTree
from .market import CpsPair, MarketSpec, NA2Result, check_na2
from .primal import LogPayoff, StaticOptions, ValueFields
from .solvers import DEFAULT_CONFIG, SolverConfig, kl_project_batch, solve_lp_general


@dataclass(frozen=True)
class MartingaleMeasure:
    lift: LiftedTree
    states: tuple[np.ndarray, ...]  # per node (n_states, d)
    kernels: tuple[np.ndarray, ...]  # per node, weights over its states
    conditionals: tuple[np.ndarray, ...]  # per node (n_states, n_children)
    grid_index: tuple[np.ndarray, ...]  # per node, grid point of each state or -1

    @property
    def tree(self):
        return self.lift.tree

    def arrival(self) -> np.ndarray:
        """Probability of reaching each node."""
        tree = self.tree
        M = np.zeros(tree.size)
        M[0] = 1.0
        for k in range(tree.size):
            if tree.is_terminal(k) or M[k] == 0:
                continue
            flow = M[k] * (self.kernels[k] @ self.conditionals[k])
            for c, f in zip(tree.children[k], flow):
                M[c] = f
        return M

    def means(self) -> np.ndarray:
        """Average price per node given arrival."""
        return np.array([w @ s for w, s in zip(self.kernels, self.states)])

    def martingale_residual(self) -> float:
        tree = self.tree
        M = self.arrival()
        Zbar = self.means()
        worst = 0.0
        for k in range(tree.size):
            if tree.is_terminal(k) or M[k] == 0:
                continue
            ch = list(tree.children[k])
            mean = self.conditionals[k] @ Zbar[ch]
            err = np.abs(mean - self.states[k])
            err = err[self.kernels[k] > 0]
            if err.size:
                worst = max(worst, float(err.max()))
        return worst

    def box_violation(self) -> float:
        cone = self.lift.market.cone
        worst = 0.0
        for k, s in enumerate(self.states):
            worst = max(worst, float(np.max(cone.bid[k] - s[:, :-1])), float(np.max(s[:, :-1] - cone.ask[k])))
        return worst

    def support_ok(self) -> bool:
        tree, priors = self.tree, self.lift.market.priors
        M = self.arrival()
        for k in range(tree.size):
            if tree.is_terminal(k) or M[k] == 0:
                continue
            charged = priors.charged(k)
            used = (self.kernels[k] > 0) @ (self.conditionals[k] > 0) > 0
            if np.any(used & ~charged):
                return False
        return True

    def mass_error(self) -> float:
        """Largest deviation of a kernel or conditional from a probability vector."""
        worst = 0.0
        for k, w in enumerate(self.kernels):
            worst = max(worst, abs(float(w.sum()) - 1.0), float(np.max(-w, initial=0.0)))
            c = self.conditionals[k]
            if c.size:
                worst = max(worst, float(np.abs(c.sum(axis=1) - 1.0).max()), float(np.max(-c, initial=0.0)))
        return worst

    def is_feasible(self, config: SolverConfig = DEFAULT_CONFIG) -> bool:
        """Martingale, inside the boxes, absolutely continuous to the priors."""
        return (
            self.mass_error() <= config.tol_mass * 1e3
            and self.martingale_residual() <= config.tol_martingale
            and self.box_violation() <= config.tol_martingale
            and self.support_ok()
        )

    def expectation(self, payoff: LogPayoff) -> float:
        """``E[g(X_T)]`` under the measure."""
        M = self.arrival()
        total = 0.0
        for k in self.tree.terminals:
            if M[k] == 0:
                continue
            idx = self.grid_index[k]
            if np.all(idx >= 0):
                vals = payoff.table[k, idx]
            else:
                vals = payoff.at(k, self.states[k])
            total += M[k] * float(self.kernels[k] @ vals)
        return total

    def option_expectations(self, options: StaticOptions | None) -> np.ndarray:
        if options is None:
            return np.zeros(0)
        M = self.arrival()
        out = np.zeros(options.size)
        for k in self.tree.terminals:
            if M[k] > 0:
                out += M[k] * (self.kernels[k] @ (self.states[k] @ options.vectors[:, k].T))
        return out

    def as_json(self) -> dict:
        tree = self.tree
        M = self.arrival()
        return {
            "nodes": [
                {
                    "id": tree.ids[k],
                    "arrival": float(M[k]),
                    "states": self.states[k].tolist(),
                    "weights": self.kernels[k].tolist(),
                    "conditionals": self.conditionals[k].tolist(),
                }
                for k in range(tree.size)
            ]
        }


@dataclass(frozen=True)
class EntropyResult:
    value: float
    contributions: np.ndarray  # per node, arrival-weighted
    weights: tuple[np.ndarray, ...]  # per node, mixture weights per state


def _node_entropies(spec: MarketSpec, rows: list[tuple[int, np.ndarray]], config: SolverConfig):
    """Robust relative entropy of each (node, conditional) pair in one batch."""
    if not rows:
        return np.zeros(0), []
    priors = spec.priors
    C = max(q.size for _, q in rows)
    J = max(priors.extremes[k].shape[0] for k, _ in rows)
    Q = np.zeros((len(rows), C))
    P = np.zeros((len(rows), J, C))
    valid = np.zeros((len(rows), J), dtype=bool)
    for r, (k, q) in enumerate(rows):
        ext = priors.extremes[k]
        Q[r, : q.size] = q
        P[r, : ext.shape[0], : q.size] = ext
        valid[r, : ext.shape[0]] = True
    vals, lam, _, _ = kl_project_batch(Q, P, valid, config)
    return vals, [lam[r, valid[r]] for r in range(len(rows))]


def robust_entropy(measure: MartingaleMeasure, config: SolverConfig = DEFAULT_CONFIG) -> EntropyResult:
    """Arrival-weighted sum of node-wise relative entropies to the prior hull.

    Theta choices cost nothing: only the conditionals over children enter.
    """
    tree = measure.tree
    M = measure.arrival()
    rows, where = [], []
    for k in range(tree.size):
        if tree.is_terminal(k) or M[k] == 0:
            continue
        for a, w in enumerate(measure.kernels[k]):
            if w > 0:
                rows.append((k, measure.conditionals[k][a]))
                where.append((k, a, M[k] * w))
    vals, lams = _node_entropies(measure.lift.market, rows, config)
    contrib = np.zeros(tree.size)
    weights = [np.zeros((len(measure.kernels[k]), 0)) for k in range(tree.size)]
    per_node: dict[int, list] = {}
    for (k, a, w), v, lam in zip(where, vals, lams):
        contrib[k] += w * v if np.isfinite(v) else np.inf
        per_node.setdefault(k, []).append(lam)
    for k, lams_k in per_node.items():
        weights[k] = np.array(lams_k)
    return EntropyResult(value=float(contrib.sum()), contributions=contrib, weights=tuple(weights))


def cps_entropy(spec: MarketSpec, cps: CpsPair, config: SolverConfig = DEFAULT_CONFIG) -> float:
    """Base-space robust entropy of the measure in a consistent price system."""
    tree = spec.tree
    rows = [(k, cps.conditional(tree, k)) for k in range(tree.size)
            if not tree.is_terminal(k) and cps.mass[k] > 0]
    vals, _ = _node_entropies(spec, rows, config)
    return float(sum(cps.mass[k] * v for (k, _), v in zip(rows, vals)))


def satisfies_options(measure: MartingaleMeasure, options: StaticOptions | None, tol: float = 1e-9) -> bool:
    if options is None:
        return True
    return bool(np.all(np.abs(measure.option_expectations(options)) <= options.costs + tol))


def phi_admissible(measure: MartingaleMeasure) -> bool:
    """Integrability filter on dual measures.

    Every moment is finite on a finite tree, so the filter accepts all
    measures; it is kept as the place to add one for infinite models.
    """
    return True


def dual_objective(
    measure: MartingaleMeasure,
    payoff: LogPayoff,
    options: StaticOptions | None = None,
    config: SolverConfig = DEFAULT_CONFIG,
) -> float:
    """``E[g] - E(Q, P)``; minus infinity for a measure that is not a
    feasible martingale measure or breaks an option price bound."""
    if not measure.is_feasible(config) or not satisfies_options(measure, options):
        return -np.inf
    if not phi_admissible(measure):
        return -np.inf
    ent = robust_entropy(measure, config).value
    if not np.isfinite(ent):
        return -np.inf
    return measure.expectation(payoff) - ent


def extract_cps(measure: MartingaleMeasure) -> CpsPair:
    """Average the states out: the base measure and ``Z = E[X | node]``."""
    return CpsPair(mass=measure.arrival(), Z=measure.means())


def lift_cps(lift: LiftedTree, cps: CpsPair) -> MartingaleMeasure:
    """Point-mass theta kernels at the price system."""
    tree = lift.tree
    states, kernels, conds, idx = [], [], [], []
    for k in range(tree.size):
        states.append(cps.Z[k][None, :].copy())
        kernels.append(np.ones(1))
        idx.append(_grid_lookup(lift, k, cps.Z[k][None, :]))
        if tree.is_terminal(k):
            conds.append(np.zeros((1, 0)))
        else:
            conds.append(cps.conditional(tree, k)[None, :])
    return MartingaleMeasure(lift, tuple(states), tuple(kernels), tuple(conds), tuple(idx))


def _grid_lookup(lift: LiftedTree, k: int, points: np.ndarray) -> np.ndarray:
    out = np.full(points.shape[0], -1)
    for a, p in enumerate(points):
        hit = np.flatnonzero(np.all(lift.X[k] == p, axis=1))
        if hit.size:
            out[a] = hit[0]
    return out


def split_terminal(lift: LiftedTree, measure: MartingaleMeasure) -> MartingaleMeasure:
    """Replace each single terminal state by a mixture of box vertices with
    the same mean (independent two-point laws per coordinate)."""
    tree, cone = lift.tree, lift.market.cone
    m = lift.grid.m
    d = lift.market.assets
    states = list(measure.states)
    kernels = list(measure.kernels)
    idx = list(measure.grid_index)
    for k in tree.terminals:
        if states[k].shape[0] != 1:
            continue
        z = states[k][0, :-1]
        width = cone.ask[k] - cone.bid[k]
        up = np.where(width > 0, (z - cone.bid[k]) / np.where(width > 0, width, 1.0), 0.0)
        up = np.clip(up, 0.0, 1.0)
        pts, wts, gidx = [], [], []
        for corner in np.ndindex(*(2,) * (d - 1)):
            corner = np.array(corner)
            w = float(np.prod(np.where(corner == 1, up, 1.0 - up)))
            if w == 0:
                continue
            axis = np.where(corner == 1, m - 1, 0)
            g = int(np.ravel_multi_index(tuple(axis), (m,) * (d - 1)))
            pts.append(lift.X[k, g])
            wts.append(w)
            gidx.append(g)
        states[k] = np.array(pts)
        kernels[k] = np.array(wts) / sum(wts)
        idx[k] = np.array(gidx)
    return MartingaleMeasure(lift, tuple(states), tuple(kernels), measure.conditionals, tuple(idx))


class CpsSpace:
    """Consistent price systems as a polytope in (mass, mass * price).

    Coordinates with zero spread are pinned to the mid price and carry no
    variable.  Inequalities are written ``A_ub y <= b_ub``.
    """

    def __init__(self, spec: MarketSpec, options: StaticOptions | None = None):
        tree, cone, priors = spec.tree, spec.cone, spec.priors
        d = spec.assets
        self.spec = spec
        reach = priors.reachable(tree)
        self.nodes = [k for k in range(tree.size) if reach[k]]
        self.qcol = {k: i for i, k in enumerate(self.nodes)}
        col = len(self.nodes)
        self.mcol = {}
        for k in self.nodes:
            for i in range(d - 1):
                if not cone.degenerate[k, i]:
                    self.mcol[(k, i)] = col
                    col += 1
        self.n = col

        def price(k, i):
            row = np.zeros(self.n)
            if (k, i) in self.mcol:
                row[self.mcol[(k, i)]] = 1.0
            else:
                row[self.qcol[k]] = cone.mid[k, i]
            return row

        eq, beq, ub, bub = [], [], [], []
        r = np.zeros(self.n)
        r[self.qcol[0]] = 1.0
        eq.append(r)
        beq.append(1.0)
        for k in self.nodes:
            if tree.is_terminal(k):
                continue
            kids = [c for c, hit in zip(tree.children[k], priors.charged(k)) if hit]
            r = np.zeros(self.n)
            r[self.qcol[k]] = -1.0
            for c in kids:
                r[self.qcol[c]] += 1.0
            eq.append(r)
            beq.append(0.0)
            for i in range(d - 1):
                r = -price(k, i)
                for c in kids:
                    r = r + price(c, i)
                eq.append(r)
                beq.append(0.0)
        for k in self.nodes:
            r = np.zeros(self.n)
            r[self.qcol[k]] = -1.0
            ub.append(r)
            bub.append(0.0)
            for i in range(d - 1):
                if (k, i) in self.mcol:
                    lo = np.zeros(self.n)
                    lo[self.mcol[(k, i)]] = -1.0
                    lo[self.qcol[k]] = cone.bid[k, i]
                    hi = np.zeros(self.n)
                    hi[self.mcol[(k, i)]] = 1.0
                    hi[self.qcol[k]] = -cone.ask[k, i]
                    ub += [lo, hi]
                    bub += [0.0, 0.0]
        self.n_option_rows = 0
        if options is not None:
            for i in range(options.size):
                row = np.zeros(self.n)
                for k in self.nodes:
                    if tree.is_terminal(k):
                        v = options.vectors[i, k]
                        for a in range(d - 1):
                            row += v[a] * price(k, a)
                        row[self.qcol[k]] += v[d - 1]
                ub += [row, -row]
                bub += [options.costs[i], options.costs[i]]
                self.n_option_rows += 2
        self.price = price
        self.A_eq, self.b_eq = np.array(eq), np.array(beq)
        self.A_ub, self.b_ub = np.array(ub), np.array(bub)

    def encode(self, cps: CpsPair) -> np.ndarray:
        y = np.zeros(self.n)
        for k in self.nodes:
            y[self.qcol[k]] = cps.mass[k]
        for (k, i), c in self.mcol.items():
            y[c] = cps.mass[k] * cps.Z[k, i]
        return y

    def decode(self, y: np.ndarray) -> CpsPair:
        spec = self.spec
        tree, cone = spec.tree, spec.cone
        mass = np.zeros(tree.size)
        Z = np.ones((tree.size, spec.assets))
        Z[:, :-1] = cone.mid
        for k in self.nodes:
            mass[k] = max(y[self.qcol[k]], 0.0)
        for (k, i), c in self.mcol.items():
            if mass[k] > 0:
                Z[k, i] = min(max(y[c] / mass[k], cone.bid[k, i]), cone.ask[k, i])
        return CpsPair(mass=mass, Z=Z)

    def terminal_row(self, payoff_vectors: np.ndarray) -> np.ndarray:
        """Linear form ``y -> E[v . Z_T]``."""
        tree = self.spec.tree
        d = self.spec.assets
        row = np.zeros(self.n)
        for k in self.nodes:
            if tree.is_terminal(k):
                for a in range(d - 1):
                    row += payoff_vectors[k, a] * self.price(k, a)
                row[self.qcol[k]] += payoff_vectors[k, d - 1]
        return row

    def repair(self, y0: np.ndarray, interior: np.ndarray, blend_limit: float = 1e-6) -> np.ndarray:
        """Exactly feasible point near ``y0``.

        Project onto the equalities in least squares, then move toward the
        strictly feasible ``interior`` just far enough to restore every
        inequality.  When that blend would be long (the interior point has
        little slack) the nearest feasible point in the max-norm is found by
        linear programming instead.
        """
        r = self.A_eq @ y0 - self.b_eq
        y1 = y0 - np.linalg.lstsq(self.A_eq, r, rcond=None)[0]
        viol = self.A_ub @ y1 - self.b_ub
        slack = self.b_ub - self.A_ub @ interior
        bad = viol > 0
        if not np.any(bad):
            return y1
        alpha = float(np.max(viol[bad] / (viol[bad] + slack[bad])))
        alpha = min(1.0, alpha * (1 + 1e-12) + 1e-15)
        if alpha > blend_limit:
            near = self._nearest(y1)
            if near is not None:
                return near
        return (1 - alpha) * y1 + alpha * interior

    def _nearest(self, y1: np.ndarray) -> np.ndarray | None:
        n = self.n
        eye = np.eye(n)
        ones = np.ones((n, 1))
        A_ub = np.vstack([
            np.hstack([eye, -ones]),
            np.hstack([-eye, -ones]),
            np.hstack([self.A_ub, np.zeros((self.A_ub.shape[0], 1))]),
        ])
        b_ub = np.concatenate([y1, -y1, self.b_ub])
        A_eq = np.hstack([self.A_eq, np.zeros((self.A_eq.shape[0], 1))])
        c = np.zeros(n + 1)
        c[-1] = -1.0
        free = np.r_[np.ones(n, dtype=bool), False]
        res = solve_lp_general(c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=self.b_eq, free=free)
        if not res.ok:
            return None
        y = res.x[:n]
        # simplex output is feasible to rounding; clip the sign rows
        y[[self.qcol[k] for k in self.nodes]] = np.maximum(y[[self.qcol[k] for k in self.nodes]], 0.0)
        return y


def strict_certificate(spec: MarketSpec, options: StaticOptions | None, config: SolverConfig) -> NA2Result:
    opts = spec.claim.options if options is not None else ()
    return check_na2(spec, config, options=opts)


def gibbs_candidate(
    fields: ValueFields,
    config: SolverConfig = DEFAULT_CONFIG,
    certificate: NA2Result | None = None,
    repair: bool = True,
) -> MartingaleMeasure:
    """Dual measure read off the primal multipliers.

    Conditionals are the worst-case priors tilted by the exponentiated
    continuation values; node prices are the theta-kernel averages.  With
    ``repair`` the measure is moved to exact feasibility (equalities by
    least squares, inequalities by blending with a strict consistent price
    system), which is needed for linear payoffs only; raw measures keep the
    grid kernels at terminal nodes.
    """
    lift = fields.lift
    tree = lift.tree
    Z = fields.Z
    for k in range(tree.size):
        if fields.kernels[k].sum() == 0:
            Z[k, :-1] = lift.market.cone.mid[k]
    if not repair:
        states, kernels, conds, idx = [], [], [], []
        for k in range(tree.size):
            if tree.is_terminal(k):
                pts = np.flatnonzero(fields.kernels[k] > 0)
                if pts.size == 0:
                    pts = np.array([0])
                states.append(lift.X[k, pts])
                w = fields.kernels[k, pts]
                kernels.append(w / w.sum() if w.sum() > 0 else np.ones(1))
                idx.append(pts)
                conds.append(np.zeros((pts.size, 0)))
            else:
                states.append(Z[k][None, :])
                kernels.append(np.ones(1))
                idx.append(_grid_lookup(lift, k, Z[k][None, :]))
                conds.append(fields.conditionals[k][None, :])
        return MartingaleMeasure(lift, tuple(states), tuple(kernels), tuple(conds), tuple(idx))
    spec = lift.market
    space = CpsSpace(spec, fields.options)
    if certificate is None:
        certificate = strict_certificate(spec, fields.options, config)
    y0 = space.encode(CpsPair(mass=fields.mass, Z=Z))
    if certificate.holds:
        y = space.repair(y0, space.encode(certificate.certificate))
    else:
        y = y0 - np.linalg.lstsq(space.A_eq, space.A_eq @ y0 - space.b_eq, rcond=None)[0]
    return lift_cps(lift, space.decode(y))


def dual_ascent(
    lift: LiftedTree,
    payoff: LogPayoff,
    config: SolverConfig = DEFAULT_CONFIG,
    options: StaticOptions | None = None,
    certificate: NA2Result | None = None,
    max_iter: int = 3000,
    step: float = 0.5,
) -> MartingaleMeasure:
    """Entropic mirror ascent on node conditionals and theta kernels.

    Martingale (and option price) constraints enter through an augmented
    Lagrangian whose penalty grows between rounds.  The final iterate is
    moved to exact feasibility like the Gibbs candidate, so its objective
    is a valid lower bound.
    """
    spec = lift.market
    tree, priors = spec.tree, spec.priors
    if payoff.vectors is None:
        raise ValueError("dual ascent needs a payoff that is linear in the price")
    reach = priors.reachable(tree)
    inner = [k for k in range(tree.size) if reach[k] and not tree.is_terminal(k)]
    nodes = [k for k in range(tree.size) if reach[k]]
    gvec = payoff.vectors[:, :-1]
    d = spec.assets

    Q = {}
    lam = {}
    for k in inner:
        mask = priors.charged(k)
        q = priors.extremes[k].mean(axis=0) * mask
        Q[k] = q / q.sum()
        J = priors.extremes[k].shape[0]
        lam[k] = np.full(J, 1.0 / J)
    kap = {k: np.full(lift.grid.size, 1.0 / lift.grid.size) for k in nodes}
    nu = {k: np.zeros(d - 1) for k in inner}
    nu_opt = np.zeros(options.size if options is not None else 0)
    rho = 1.0

    def state(Q, kap):
        M = np.zeros(tree.size)
        M[0] = 1.0
        for k in inner:
            for c, qc in zip(tree.children[k], Q[k]):
                M[c] = M[k] * qc
        Zr = np.zeros((tree.size, d - 1))
        for k in nodes:
            Zr[k] = kap[k] @ lift.X[k, :, :-1]
        return M, Zr

    def refit_mixtures(Q):
        # a few EM sweeps on the prior mixture weights of each node
        for k in inner:
            ext = priors.extremes[k]
            for _ in range(5):
                mix = lam[k] @ ext
                ratio = np.where(Q[k] > 0, Q[k] / np.where(mix > 0, mix, 1.0), 0.0)
                lam[k] = lam[k] * (ext @ ratio)
                lam[k] /= lam[k].sum()

    def option_terms(M, Zr):
        if options is None:
            return np.zeros(0), np.zeros(0), np.zeros(0)
        E = np.zeros(options.size)
        for k in tree.terminals:
            if M[k] > 0:
                E += M[k] * (options.vectors[:, k, :-1] @ Zr[k] + options.vectors[:, k, -1])
        g = np.abs(E) - options.costs
        slope = np.maximum(0.0, nu_opt + rho * g) * np.sign(E)
        pen = (np.maximum(0.0, nu_opt + rho * g) ** 2 - nu_opt**2) / (2 * rho)
        return E, pen, slope

    def evaluate(Q, kap):
        """Augmented Lagrangian and the pieces its gradient needs."""
        M, Zr = state(Q, kap)
        E, pen, slope = option_terms(M, Zr)
        resid, local, dQ = {}, {}, {}
        for k in inner:
            ch = list(tree.children[k])
            resid[k] = Q[k] @ Zr[ch] - Zr[k]
            mix = lam[k] @ priors.extremes[k]
            pos = Q[k] > 0
            if np.any(pos & (mix <= 0)):
                return -np.inf, None
            kl = float(np.sum(Q[k][pos] * np.log(Q[k][pos] / mix[pos])))
            dlog = np.where(pos, np.log(np.where(pos, Q[k], 1.0) / np.where(mix > 0, mix, 1.0)) + 1.0, 0.0)
            local[k] = -kl - nu[k] @ resid[k] - 0.5 * rho * resid[k] @ resid[k]
            dQ[k] = -dlog - Zr[ch] @ (nu[k] + rho * resid[k])
        C = np.zeros(tree.size)
        for k in reversed(nodes):
            if tree.is_terminal(k):
                C[k] = gvec[k] @ Zr[k] + payoff.vectors[k, -1]
                if options is not None:
                    C[k] -= slope @ (options.vectors[:, k, :-1] @ Zr[k] + options.vectors[:, k, -1])
            else:
                C[k] = local[k] + Q[k] @ C[list(tree.children[k])]
        # C carries the option penalty linearised; swap in its exact value
        value = C[0] + payoff.constant + float(slope @ E) - float(pen.sum())
        return value, (resid, dQ, C, slope)

    def directions(pieces):
        resid, dQ, C, slope = pieces
        score = {}
        for k in nodes:
            gz = np.zeros(d - 1)
            if tree.is_terminal(k):
                gz += gvec[k]
                if options is not None:
                    gz -= slope @ options.vectors[:, k, :-1]
            else:
                gz += nu[k] + rho * resid[k]
            if k != 0:
                p = tree.parent[k]
                gz -= nu[p] + rho * resid[p]
            score[k] = lift.X[k, :, :-1] @ gz
        grad = {}
        for k in inner:
            g = dQ[k] + C[list(tree.children[k])]
            grad[k] = np.where(priors.charged(k), g, -np.inf)
        return score, grad

    def step_to(Q, kap, score, grad, eta):
        # per-unit-arrival gradients, exponentiated
        kn = {}
        for k in nodes:
            z = eta * score[k]
            w = kap[k] * np.exp(z - z.max())
            kn[k] = w / w.sum()
        qn = {}
        for k in inner:
            g = grad[k]
            fin = np.isfinite(g)
            z = np.where(fin, eta * g, -np.inf)
            w = Q[k] * np.exp(z - z[fin].max())
            qn[k] = w / w.sum()
        return qn, kn

    eta = step
    it = 0
    for _round in range(8):
        refit_mixtures(Q)
        value, pieces = evaluate(Q, kap)
        for _ in range(max_iter // 8):
            it += 1
            score, grad = directions(pieces)
            while eta > 1e-14:
                qn, kn = step_to(Q, kap, score, grad, eta)
                new_value, new_pieces = evaluate(qn, kn)
                if new_value >= value:
                    break
                eta *= 0.5
            if eta <= 1e-14:
                break
            gain = new_value - value
            Q, kap, value, pieces = qn, kn, new_value, new_pieces
            eta *= 1.5
            refit_mixtures(Q)
            value, pieces = evaluate(Q, kap)
            if gain < 1e-13 * max(1.0, abs(value)):
                break
        M, Zr = state(Q, kap)
        for k in inner:
            ch = list(tree.children[k])
            nu[k] = nu[k] + rho * (Q[k] @ Zr[ch] - Zr[k])
        if options is not None:
            E, _, _ = option_terms(M, Zr)
            nu_opt = np.maximum(0.0, nu_opt + rho * (np.abs(E) - options.costs))
        rho = min(rho * 10.0, 1e6)

    M, Zr = state(Q, kap)
    Z = np.ones((tree.size, d))
    Z[:, :-1] = Zr
    space = CpsSpace(spec, options)
    if certificate is None:
        certificate = strict_certificate(spec, options, config)
    y0 = space.encode(CpsPair(mass=M, Z=Z))
    y = space.repair(y0, space.encode(certificate.certificate)) if certificate.holds else y0
    return lift_cps(lift, space.decode(y))


def random_measures(
    lift: LiftedTree,
    n: int,
    rng: np.random.Generator,
    certificate: NA2Result,
    options: StaticOptions | None = None,
    anchors: list[CpsPair] = (),
    n_vertices: int = 6,
) -> list[MartingaleMeasure]:
    """Random feasible measures: Dirichlet mixtures of LP vertices of the
    price-system polytope, the strict certificate and any ``anchors``; half
    of them get randomised terminal theta kernels."""
    space = CpsSpace(lift.market, options)
    pts = [space.encode(certificate.certificate)] + [space.encode(a) for a in anchors]
    for _ in range(n_vertices):
        res = solve_lp_general(rng.normal(size=space.n), A_ub=space.A_ub, b_ub=space.b_ub,
                               A_eq=space.A_eq, b_eq=space.b_eq)
        if res.ok:
            pts.append(res.x)
    pts = np.array(pts)
    out = []
    for i in range(n):
        w = rng.dirichlet(np.full(len(pts), 0.5))
        y = w @ pts
        meas = lift_cps(lift, space.decode(y))
        if i % 2:
            meas = split_terminal(lift, meas)
        out.append(meas)
    return out
