"""Minimisation of log-sum-exp functions and of their pointwise maximum."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .barrier import ProgramBuilder, solve_barrier
from .config import DEFAULT_CONFIG, SolverConfig
from .lp import solve_lp_general


class UnboundedError(Exception):
    """The objective is unbounded below; ``direction`` is a certificate."""

    def __init__(self, message: str, direction: np.ndarray):
        super().__init__(message)
        self.direction = direction


@dataclass(frozen=True)
class LseTerms:
    """``f(h) = log sum_j w_j exp(o_j + a_j.h)`` with positive weights."""

    weights: np.ndarray
    offsets: np.ndarray
    slopes: np.ndarray  # (n_terms, dim)

    @classmethod
    def from_triples(cls, triples) -> "LseTerms":
        w, o, a = zip(*triples)
        slopes = np.array([np.atleast_1d(s) for s in a], dtype=float)
        return cls(np.asarray(w, float), np.asarray(o, float), slopes)

    @property
    def dim(self) -> int:
        return self.slopes.shape[1]

    def value(self, h: np.ndarray) -> float:
        z = np.log(self.weights) + self.offsets + self.slopes @ h
        zmax = z.max()
        return float(zmax + np.log(np.exp(z - zmax).sum()))

    def derivatives(self, h: np.ndarray):
        z = np.log(self.weights) + self.offsets + self.slopes @ h
        zmax = z.max()
        e = np.exp(z - zmax)
        pi = e / e.sum()
        g = pi @ self.slopes
        H = (self.slopes * pi[:, None]).T @ self.slopes - np.outer(g, g)
        return float(zmax + np.log(e.sum())), g, H


@dataclass(frozen=True)
class LseResult:
    h: np.ndarray
    value: float
    gradient_norm: float
    iterations: int


@dataclass(frozen=True)
class MaxLseResult:
    h: np.ndarray
    value: float
    active: tuple[int, ...]
    weights: np.ndarray  # convex weights on the active gradients
    iterations: int


def _check_bounded(slopes: np.ndarray, config: SolverConfig) -> None:
    """Raise if some direction decreases every term (LP certificate)."""
    n_terms, dim = slopes.shape
    if dim == 0:
        return
    res = solve_lp_general(
        np.zeros(dim),
        A_ub=slopes,
        b_ub=-np.ones(n_terms),
        free=np.ones(dim, dtype=bool),
        pivot_tol=config.lp_pivot_tol,
    )
    if res.ok:
        raise UnboundedError("objective is unbounded below", res.x)


def _newton(fun, h0, config: SolverConfig):
    """Damped Newton with Armijo backtracking and a pseudo-inverse step."""
    h = np.array(h0, dtype=float)
    it = 0
    val, g, H = fun(h)
    while it < config.max_iter and np.linalg.norm(g) > config.grad_tol:
        dx = -np.linalg.pinv(H, rcond=1e-13, hermitian=True) @ g
        slope = float(g @ dx)
        if slope >= 0:
            dx, slope = -g, -float(g @ g)
        s = 1.0
        while True:
            hn = h + s * dx
            vn = fun(hn)[0]
            if vn <= val + config.sufficient_decrease * s * slope:
                break
            s *= config.backtrack
            if s < 1e-16:
                return h, val, g, it
        h = hn
        val, g, H = fun(h)
        it += 1
    return h, val, g, it


def minimize_lse(terms: LseTerms, config: SolverConfig = DEFAULT_CONFIG, h0=None) -> LseResult:
    """Minimise a single log-sum-exp function by damped Newton."""
    _check_bounded(terms.slopes, config)
    h0 = np.zeros(terms.dim) if h0 is None else h0
    h, val, g, it = _newton(terms.derivatives, h0, config)
    return LseResult(h=h, value=val, gradient_norm=float(np.linalg.norm(g)), iterations=it)


def _smoothed_max(groups: list[LseTerms], mu: float):
    def fun(h):
        vals, grads, hess = zip(*(g.derivatives(h) for g in groups))
        vals = np.array(vals)
        grads = np.array(grads)
        z = mu * vals
        zmax = z.max()
        beta = np.exp(z - zmax)
        beta /= beta.sum()
        gbar = beta @ grads
        H = sum(b * Hj for b, Hj in zip(beta, hess))
        H = H + mu * ((grads * beta[:, None]).T @ grads - np.outer(gbar, gbar))
        return float((zmax + np.log(np.exp(z - zmax).sum())) / mu), gbar, H

    return fun


def minimize_max_lse(
    groups: list[LseTerms], config: SolverConfig = DEFAULT_CONFIG, h0=None
) -> MaxLseResult:
    """Minimise ``max_j f_j`` over log-sum-exp functions ``f_j``.

    A smoothing homotopy over ``config.mu_schedule`` gives a warm start; an
    epigraph barrier solve then removes the smoothing bias exactly.
    """
    dim = groups[0].dim
    _check_bounded(np.vstack([g.slopes for g in groups]), config)
    h = np.zeros(dim) if h0 is None else np.array(h0, float)
    iters = 0
    for mu in config.mu_schedule:
        h, _, _, it = _newton(_smoothed_max(groups, mu), h, config)
        iters += it

    # epigraph: variables (h, tau), minimise tau
    B = config.position_bound
    pb = ProgramBuilder(dim + 1)
    for g in groups:
        pb.add(
            [
                (list(range(dim)) + [dim], list(g.slopes[j]) + [-1.0], float(np.log(g.weights[j]) + g.offsets[j]))
                for j in range(g.weights.size)
            ]
        )
    for i in range(dim):
        pb.add([([i], [1.0], -B)])
        pb.add([([i], [-1.0], -B)])
    cost = np.zeros(dim + 1)
    cost[dim] = 1.0
    prog = pb.build(cost)
    tau0 = max(g.value(h) for g in groups) + 1.0
    res = solve_barrier(prog, np.r_[h, tau0], config)
    h = res.x[:dim]
    vals = np.array([g.value(h) for g in groups])
    value = float(vals.max())
    active = tuple(int(j) for j in np.flatnonzero(vals >= value - 1e-7))
    lam = res.multipliers[: len(groups)][list(active)]
    lam = lam / lam.sum()
    return MaxLseResult(h=h, value=value, active=active, weights=lam, iterations=iters + res.newton_steps)
