"""Scenario-tree market model: loading, validation and the no-arbitrage
certificate.

Asset ``d`` (the last coordinate) is the numeraire.  Node-indexed arrays
follow the breadth-first order of ``MarketTree.ids``; payoff arrays carry a
row for every node and are zero away from the terminal date.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any

import numpy as np
from pydantic import BaseModel, ConfigDict, ValidationError

from .errors import ModelError
from .solvers import DEFAULT_CONFIG, SolverConfig, solve_lp_general

MASS_TOL = 1e-12


class _NodeDoc(BaseModel):
    model_config = ConfigDict(extra="forbid")

    id: str
    t: int
    children: list[str]
    mid: list[float]
    bid: list[float]
    ask: list[float]
    priors: list[list[float]]


class _OptionDoc(BaseModel):
    model_config = ConfigDict(extra="forbid")

    payoff: dict[str, list[float]]
    cost: float


class _MarketDoc(BaseModel):
    model_config = ConfigDict(extra="forbid")

    horizon: int
    assets: int
    spread_bound: float
    nodes: list[_NodeDoc]
    endowment: dict[str, list[float]]
    options: list[_OptionDoc] = []
    gamma: float = 1.0


@dataclass(frozen=True)
class MarketTree:
    ids: tuple[str, ...]
    times: np.ndarray
    parent: np.ndarray  # -1 at the root
    children: tuple[tuple[int, ...], ...]
    horizon: int

    @property
    def size(self) -> int:
        return len(self.ids)

    def is_terminal(self, k: int) -> bool:
        return self.times[k] == self.horizon

    @property
    def terminals(self) -> np.ndarray:
        return np.flatnonzero(self.times == self.horizon)

    def at_time(self, t: int) -> np.ndarray:
        return np.flatnonzero(self.times == t)

    def path(self, k: int) -> list[int]:
        """Nodes from the root down to ``k``."""
        out = [k]
        while self.parent[out[-1]] >= 0:
            out.append(int(self.parent[out[-1]]))
        return out[::-1]

    def subtree(self, k: int) -> list[int]:
        """Nodes of the subtree rooted at ``k`` in breadth-first order."""
        out, frontier = [k], [k]
        while frontier:
            frontier = [c for n in frontier for c in self.children[n]]
            out.extend(frontier)
        return out


@dataclass(frozen=True)
class PriorSet:
    """Extreme points of each node's one-step prior set, as rows over children."""

    extremes: tuple[np.ndarray, ...]

    def charged(self, k: int) -> np.ndarray:
        """Mask of children of ``k`` charged by at least one extreme."""
        ext = self.extremes[k]
        return ext.max(axis=0) > 0 if ext.size else np.zeros(0, dtype=bool)

    def reachable(self, tree: MarketTree) -> np.ndarray:
        ok = np.zeros(tree.size, dtype=bool)
        ok[0] = True
        for k in range(tree.size):
            if ok[k] and not tree.is_terminal(k):
                for c, hit in zip(tree.children[k], self.charged(k)):
                    ok[c] = hit
        return ok


@dataclass(frozen=True)
class ConeSpec:
    """Bid-ask boxes of the dual slice, in units of the numeraire."""

    assets: int
    spread_bound: float
    mid: np.ndarray  # (n_nodes, d-1)
    bid: np.ndarray
    ask: np.ndarray

    @property
    def degenerate(self) -> np.ndarray:
        """Coordinates with zero spread."""
        return self.bid == self.ask

    def clamp(self, k: int, y: np.ndarray) -> np.ndarray:
        return np.minimum(np.maximum(y, self.bid[k]), self.ask[k])

    def liquidation(self, k: int, position: np.ndarray) -> float:
        """Numeraire value of ``position`` (length d) after closing the risky legs."""
        risky = position[:-1]
        return float(
            position[-1] + np.sum(np.where(risky > 0, risky * self.bid[k], risky * self.ask[k]))
        )


@dataclass(frozen=True)
class Option:
    payoff: np.ndarray  # (n_nodes, d)
    cost: float


@dataclass(frozen=True)
class ClaimSpec:
    endowment: np.ndarray  # (n_nodes, d)
    options: tuple[Option, ...] = ()
    gamma: float = 1.0


@dataclass(frozen=True)
class MarketSpec:
    tree: MarketTree
    priors: PriorSet
    cone: ConeSpec
    claim: ClaimSpec
    digest: str = ""

    @property
    def assets(self) -> int:
        return self.cone.assets

    def with_claim(self, endowment=None, options=None, gamma=None) -> "MarketSpec":
        claim = ClaimSpec(
            endowment=self.claim.endowment if endowment is None else np.asarray(endowment, float),
            options=self.claim.options if options is None else tuple(options),
            gamma=self.claim.gamma if gamma is None else float(gamma),
        )
        return replace(self, claim=claim)


def spec_hash(document: dict) -> str:
    canon = json.dumps(document, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


def _terminal_table(name: str, table: dict, ids, index, tree, d, errors) -> np.ndarray:
    out = np.zeros((tree.size, d))
    terminal_ids = {ids[k] for k in tree.terminals}
    for key, vec in table.items():
        if key not in terminal_ids:
            errors.append(f"{name}: '{key}' is not a terminal node")
            continue
        if len(vec) != d:
            errors.append(f"{name}: '{key}' has {len(vec)} entries, expected {d}")
            continue
        if not all(np.isfinite(vec)):
            errors.append(f"{name}: '{key}' has non-finite entries")
            continue
        out[index[key]] = vec
    missing = sorted(terminal_ids - set(table))
    if missing:
        errors.append(f"{name}: missing terminal nodes {missing}")
    return out


def load_market(document: dict | str | Path) -> MarketSpec:
    """Parse and validate a market document (dict, JSON text or file path).

    Raises ``ModelError`` listing every violation found.
    """
    if isinstance(document, Path) or (isinstance(document, str) and not document.lstrip().startswith("{")):
        try:
            document = json.loads(Path(document).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ModelError(f"cannot read market document: {exc}") from exc
    elif isinstance(document, str):
        try:
            document = json.loads(document)
        except json.JSONDecodeError as exc:
            raise ModelError(f"invalid JSON: {exc}") from exc
    try:
        doc = _MarketDoc.model_validate(document)
    except ValidationError as exc:
        problems = [f"{'.'.join(map(str, e['loc']))}: {e['msg']}" for e in exc.errors()]
        raise ModelError("schema error", problems=problems) from exc

    errors: list[str] = []
    d = doc.assets
    if d < 2:
        raise ModelError("invariant violation", problems=["assets must be at least 2"])
    if doc.horizon < 1:
        raise ModelError("invariant violation", problems=["horizon must be at least 1"])
    c = doc.spread_bound
    if not c > 1:
        errors.append(f"spread_bound must exceed 1, got {c}")
    if not doc.gamma > 0:
        errors.append(f"gamma must be positive, got {doc.gamma}")

    by_id: dict[str, _NodeDoc] = {}
    for n in doc.nodes:
        if n.id in by_id:
            errors.append(f"node '{n.id}': duplicate id")
        by_id[n.id] = n
    roots = [n.id for n in doc.nodes if n.t == 0]
    if len(roots) != 1:
        raise ModelError("non-tree topology", problems=[f"expected one root at t=0, found {roots}"])
    parent_of: dict[str, str] = {}
    for n in doc.nodes:
        for ch in n.children:
            if ch not in by_id:
                errors.append(f"node '{n.id}': unknown child '{ch}'")
            elif ch in parent_of:
                errors.append(f"node '{ch}': has two parents '{parent_of[ch]}' and '{n.id}'")
            else:
                parent_of[ch] = n.id
                if by_id[ch].t != n.t + 1:
                    errors.append(f"node '{ch}': t={by_id[ch].t} but parent '{n.id}' has t={n.t}")
    if errors:
        raise ModelError("non-tree topology", problems=errors)

    # breadth-first order from the root
    order = [roots[0]]
    for nid in order:
        order.extend(by_id[nid].children)
    unreached = sorted(set(by_id) - set(order))
    if unreached:
        raise ModelError("non-tree topology", problems=[f"nodes not connected to the root: {unreached}"])
    index = {nid: k for k, nid in enumerate(order)}
    nodes = [by_id[nid] for nid in order]
    tree = MarketTree(
        ids=tuple(order),
        times=np.array([n.t for n in nodes]),
        parent=np.array([index[parent_of[n.id]] if n.id in parent_of else -1 for n in nodes]),
        children=tuple(tuple(index[ch] for ch in n.children) for n in nodes),
        horizon=doc.horizon,
    )

    mid = np.ones((tree.size, d - 1))
    bid = np.ones((tree.size, d - 1))
    ask = np.ones((tree.size, d - 1))
    extremes = []
    for k, n in enumerate(nodes):
        where = f"node '{n.id}'"
        if n.t > doc.horizon:
            errors.append(f"{where}: t={n.t} exceeds horizon {doc.horizon}")
        if n.t < doc.horizon and not n.children:
            errors.append(f"{where}: non-terminal node without children")
        if n.t == doc.horizon and n.children:
            errors.append(f"{where}: terminal node with children")
        for name, vec, arr in (("mid", n.mid, mid), ("bid", n.bid, bid), ("ask", n.ask, ask)):
            if len(vec) != d - 1:
                errors.append(f"{where}: {name} has {len(vec)} entries, expected {d - 1}")
            elif not all(np.isfinite(vec)):
                errors.append(f"{where}: {name} has non-finite entries")
            else:
                arr[k] = vec
        S, b, a = mid[k], bid[k], ask[k]
        for i in range(d - 1):
            if not b[i] > 0:
                errors.append(f"{where}: bid {b[i]} must be positive (asset {i + 1})")
            if b[i] > a[i]:
                errors.append(f"{where}: bid {b[i]} exceeds ask {a[i]} (asset {i + 1})")
            elif not b[i] <= S[i] <= a[i]:
                errors.append(f"{where}: mid {S[i]} outside [{b[i]}, {a[i]}] (asset {i + 1})")
            if c > 1 and (b[i] < S[i] / c * (1 - 1e-12) or a[i] > S[i] * c * (1 + 1e-12)):
                errors.append(f"{where}: spread exceeds the bound {c} (asset {i + 1})")
        if n.children:
            if not n.priors:
                errors.append(f"{where}: empty prior list")
            rows = []
            for j, p in enumerate(n.priors):
                p = np.asarray(p, float)
                if p.size != len(n.children):
                    errors.append(f"{where}: prior {j} has {p.size} entries for {len(n.children)} children")
                    continue
                if np.any(p < 0) or not np.all(np.isfinite(p)):
                    errors.append(f"{where}: prior {j} has negative or non-finite entries")
                    continue
                total = float(p.sum())
                if abs(total - 1.0) > MASS_TOL:
                    errors.append(f"{where}: prior {j} sums to {total:.12g}")
                    continue
                rows.append(p)
            extremes.append(np.array(rows) if rows else np.zeros((0, len(n.children))))
        else:
            if n.priors:
                errors.append(f"{where}: terminal node with priors")
            extremes.append(np.zeros((0, 0)))

    endowment = _terminal_table("endowment", doc.endowment, tree.ids, index, tree, d, errors)
    options = []
    for i, opt in enumerate(doc.options):
        payoff = _terminal_table(f"options[{i}].payoff", opt.payoff, tree.ids, index, tree, d, errors)
        if not (opt.cost > 0 and np.isfinite(opt.cost)):
            errors.append(f"options[{i}]: cost must be positive, got {opt.cost}")
        options.append(Option(payoff=payoff, cost=opt.cost))
    if errors:
        raise ModelError("invariant violation", problems=errors)

    return MarketSpec(
        tree=tree,
        priors=PriorSet(tuple(extremes)),
        cone=ConeSpec(assets=d, spread_bound=c, mid=mid, bid=bid, ask=ask),
        claim=ClaimSpec(endowment=endowment, options=tuple(options), gamma=doc.gamma),
        digest=spec_hash(document),
    )


def dump_market(spec: MarketSpec) -> dict[str, Any]:
    """Inverse of ``load_market``."""
    tree, cone = spec.tree, spec.cone

    def table(arr):
        return {tree.ids[k]: [float(v) for v in arr[k]] for k in tree.terminals}

    return {
        "horizon": int(tree.horizon),
        "assets": int(cone.assets),
        "spread_bound": float(cone.spread_bound),
        "nodes": [
            {
                "id": tree.ids[k],
                "t": int(tree.times[k]),
                "children": [tree.ids[c] for c in tree.children[k]],
                "mid": [float(v) for v in cone.mid[k]],
                "bid": [float(v) for v in cone.bid[k]],
                "ask": [float(v) for v in cone.ask[k]],
                "priors": [[float(v) for v in row] for row in spec.priors.extremes[k]],
            }
            for k in range(tree.size)
        ],
        "endowment": table(spec.claim.endowment),
        "options": [{"payoff": table(o.payoff), "cost": float(o.cost)} for o in spec.claim.options],
        "gamma": float(spec.claim.gamma),
    }


@dataclass(frozen=True)
class CpsPair:
    """Base-space measure with a martingale price system inside the boxes.

    ``mass`` holds path probabilities per node, ``Z`` the price system with
    the numeraire coordinate equal to one.
    """

    mass: np.ndarray
    Z: np.ndarray  # (n_nodes, d)

    def conditional(self, tree: MarketTree, k: int) -> np.ndarray:
        ch = list(tree.children[k])
        return self.mass[ch] / self.mass[k] if self.mass[k] > 0 else np.zeros(len(ch))

    def martingale_residual(self, tree: MarketTree) -> float:
        worst = 0.0
        for k in range(tree.size):
            if tree.is_terminal(k) or self.mass[k] <= 0:
                continue
            ch = list(tree.children[k])
            mean = self.conditional(tree, k) @ self.Z[ch]
            worst = max(worst, float(np.abs(mean - self.Z[k]).max()))
        return worst

    def box_slack(self, cone: ConeSpec) -> float:
        """Smallest distance of Z to a box face, over charged nodes and
        coordinates with positive spread."""
        charged = self.mass > 0
        zr = self.Z[charged, :-1]
        gap = np.minimum(zr - cone.bid[charged], cone.ask[charged] - zr)
        gap = np.where(cone.degenerate[charged], np.inf, gap)
        return float(gap.min()) if np.isfinite(gap).any() else np.inf

    def expectation(self, tree: MarketTree, payoff: np.ndarray) -> float:
        """``E^Q[payoff . Z_T]`` for a node-indexed (n_nodes, d) payoff."""
        term = tree.terminals
        return float(np.sum(self.mass[term] * np.einsum("ij,ij->i", payoff[term], self.Z[term])))


@dataclass(frozen=True)
class NA2Result:
    holds: bool
    epsilon: float
    certificate: CpsPair | None
    witness: str | None
    message: str


def _cps_lp(spec: MarketSpec, nodes: list[int], root: int, options=(), pivot_tol=1e-10):
    """Maximise the common slack of a strict CPS on the subtree ``nodes``.

    Variables are path weights ``q`` and weighted prices ``m = q Z`` for
    coordinates with positive spread, plus the slack ``eps``.  Returns the LP
    result together with a decoder to ``(mass, Z)``.
    """
    tree, cone, priors = spec.tree, spec.cone, spec.priors
    d = cone.assets
    pos = {k: i for i, k in enumerate(nodes)}
    n = len(nodes)
    mcol = {}
    col = n
    for k in nodes:
        for i in range(d - 1):
            if not cone.degenerate[k, i]:
                mcol[(k, i)] = col
                col += 1
    eps = col
    nv = col + 1

    def price_row(k, i):
        row = np.zeros(nv)
        if (k, i) in mcol:
            row[mcol[(k, i)]] = 1.0
        else:
            row[pos[k]] = cone.mid[k, i]
        return row

    A_eq, b_eq, A_ub, b_ub = [], [], [], []
    r = np.zeros(nv)
    r[pos[root]] = 1.0
    A_eq.append(r)
    b_eq.append(1.0)
    for k in nodes:
        kids = [c for c in tree.children[k] if c in pos]
        if kids:
            r = np.zeros(nv)
            r[pos[k]] = -1.0
            for c in kids:
                r[pos[c]] += 1.0
            A_eq.append(r)
            b_eq.append(0.0)
            for i in range(d - 1):
                r = -price_row(k, i)
                for c in kids:
                    r += price_row(c, i)
                A_eq.append(r)
                b_eq.append(0.0)
        if k != root:
            r = np.zeros(nv)
            r[eps] = 1.0
            r[pos[k]] = -1.0
            A_ub.append(r)
            b_ub.append(0.0)
        for i in range(d - 1):
            if (k, i) in mcol:
                lo = np.zeros(nv)
                lo[eps] = 1.0
                lo[mcol[(k, i)]] = -1.0
                lo[pos[k]] = cone.bid[k, i]
                hi = np.zeros(nv)
                hi[eps] = 1.0
                hi[mcol[(k, i)]] = 1.0
                hi[pos[k]] = -cone.ask[k, i]
                A_ub += [lo, hi]
                b_ub += [0.0, 0.0]
    # options: |E^Q[zeta . Z_T]| + eps <= cost
    for opt in options:
        expect = np.zeros(nv)
        for k in nodes:
            if tree.is_terminal(k):
                for i in range(d - 1):
                    expect += opt.payoff[k, i] * price_row(k, i)
                expect[pos[k]] += opt.payoff[k, d - 1]
        for sign in (1.0, -1.0):
            row = sign * expect
            row[eps] += 1.0
            A_ub.append(row)
            b_ub.append(opt.cost)
    r = np.zeros(nv)
    r[eps] = 1.0
    A_ub.append(r)
    b_ub.append(1.0)
    cost = np.zeros(nv)
    cost[eps] = 1.0
    res = solve_lp_general(
        cost, A_ub=np.array(A_ub), b_ub=np.array(b_ub), A_eq=np.array(A_eq), b_eq=np.array(b_eq),
        free=np.ones(nv, dtype=bool), pivot_tol=pivot_tol,
    )

    def decode(x):
        mass = np.zeros(tree.size)
        Z = np.ones((tree.size, d))
        for k in nodes:
            mass[k] = x[pos[k]]
            for i in range(d - 1):
                Z[k, i] = x[mcol[(k, i)]] / x[pos[k]] if (k, i) in mcol else cone.mid[k, i]
        return mass, Z

    return res, decode


def _local_slack(spec: MarketSpec, k: int, pivot_tol: float) -> float:
    """Slack of the best one-period strict CPS at node ``k`` alone."""
    tree, priors = spec.tree, spec.priors
    kids = [c for c, hit in zip(tree.children[k], priors.charged(k)) if hit]
    res, _ = _cps_lp(spec, [k] + kids, k, pivot_tol=pivot_tol)
    return res.value if res.ok else -np.inf


def check_na2(spec: MarketSpec, config: SolverConfig = DEFAULT_CONFIG, options=()) -> NA2Result:
    """Search for a strict consistent price system charging every reachable node.

    The LP maximises the slack ``eps`` by which path weights stay positive and
    prices stay inside the bid-ask boxes.  ``options`` adds the requirement
    ``|E^Q[zeta . Z_T]| < cost`` for each static option.  On failure the first
    node (breadth-first) without a one-period strict price system is named.
    """
    tree = spec.tree
    reach = spec.priors.reachable(tree)
    nodes = [k for k in range(tree.size) if reach[k]]
    res, decode = _cps_lp(spec, nodes, 0, options=options, pivot_tol=config.lp_pivot_tol)
    eps = res.value if res.ok else -np.inf
    if eps > config.tol_lp_slack:
        mass, Z = decode(res.x)
        return NA2Result(True, float(eps), CpsPair(mass=mass, Z=Z), None, "strict consistent price system found")
    witness = None
    for k in nodes:
        if not tree.is_terminal(k) and _local_slack(spec, k, config.lp_pivot_tol) <= config.tol_lp_slack:
            witness = tree.ids[k]
            break
    if witness is not None:
        msg = f"no strict consistent price system at node '{witness}' (t={tree.times[tree.ids.index(witness)]})"
    elif options:
        msg = "option prices admit no strict consistent price system"
    else:
        msg = "no strict consistent price system over several periods"
    return NA2Result(False, float(eps), None, witness, msg)
