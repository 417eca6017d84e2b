"""Log-barrier interior-point method for programs whose constraints are
log-sum-exp functions of affine maps.

A program is ``minimise c.x`` subject to ``f_k(x) <= 0`` for every
constraint ``k``, with ``f_k(x) = log sum_j exp(a_j.x + o_j)`` summed over
the terms ``j`` that belong to ``k``.  Single-term constraints are affine.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .config import DEFAULT_CONFIG, SolverConfig


@dataclass(frozen=True)
class LseProgram:
    cost: np.ndarray
    terms: sp.csr_matrix  # one row per term
    offset: np.ndarray  # log-weight plus constant, per term
    group: np.ndarray  # constraint id per term, nondecreasing

    @property
    def n_constraints(self) -> int:
        return int(self.group[-1]) + 1 if self.group.size else 0

    def evaluate(self, x: np.ndarray):
        """Constraint values and per-term softmax weights at ``x``."""
        z = self.terms @ x + self.offset
        starts = _starts(self.group)
        zmax = np.maximum.reduceat(z, starts)
        e = np.exp(z - zmax[self.group])
        tot = np.add.reduceat(e, starts)
        return zmax + np.log(tot), e / tot[self.group]


def _starts(group: np.ndarray) -> np.ndarray:
    return np.flatnonzero(np.r_[True, group[1:] != group[:-1]])


@dataclass(frozen=True)
class BarrierResult:
    x: np.ndarray
    value: float
    multipliers: np.ndarray  # one per constraint
    weights: np.ndarray  # softmax weight per term at the solution
    gap: float
    newton_steps: int
    converged: bool
    dual_error: float = np.inf  # estimated suboptimality of the multipliers


class ProgramBuilder:
    """Accumulates terms row by row and freezes them into an ``LseProgram``."""

    def __init__(self, n_vars: int):
        self.n = n_vars
        self._rows: list[int] = []
        self._cols: list[int] = []
        self._vals: list[float] = []
        self._offset: list[float] = []
        self._group: list[int] = []
        self.n_constraints = 0

    def add(self, terms) -> int:
        """Add one constraint from ``[(cols, vals, offset), ...]``; returns its id."""
        k = self.n_constraints
        for cols, vals, off in terms:
            r = len(self._offset)
            self._rows.extend([r] * len(cols))
            self._cols.extend(cols)
            self._vals.extend(vals)
            self._offset.append(off)
            self._group.append(k)
        self.n_constraints += 1
        return k

    def build(self, cost: np.ndarray) -> LseProgram:
        n_terms = len(self._offset)
        A = sp.csr_matrix(
            (np.asarray(self._vals, float), (np.asarray(self._rows), np.asarray(self._cols))),
            shape=(n_terms, self.n),
        )
        A.sum_duplicates()
        return LseProgram(
            cost=np.asarray(cost, float),
            terms=A,
            offset=np.asarray(self._offset, float),
            group=np.asarray(self._group, dtype=np.int64),
        )


def _derivatives(prog: LseProgram, x: np.ndarray, dense: np.ndarray | None):
    f, pi = prog.evaluate(x)
    inv = 1.0 / (-f)
    starts = _starts(prog.group)
    K = f.size
    if dense is not None:
        G = np.add.reduceat(dense * pi[:, None], starts, axis=0)
    else:
        P = sp.csr_matrix((pi, (prog.group, np.arange(pi.size))), shape=(K, pi.size))
        G = (P @ prog.terms).toarray()
    grad = G.T @ inv
    # curvature of a log-sum-exp in centred form, so it stays positive
    # semidefinite when one term dominates; affine constraints have none
    multi = np.flatnonzero(np.diff(np.r_[starts, pi.size]) > 1)
    rows = np.concatenate([np.arange(starts[k], starts[k + 1] if k + 1 < K else pi.size) for k in multi]) \
        if multi.size else np.zeros(0, dtype=np.int64)
    A = dense[rows] if dense is not None else prog.terms[rows].toarray()
    centred = A - G[prog.group[rows]]
    hess = centred.T @ (centred * (pi[rows] * inv[prog.group[rows]])[:, None])
    hess += G.T @ (G * (inv * inv)[:, None])
    return f, pi, grad, hess


def _barrier(prog: LseProgram, x: np.ndarray) -> float:
    f, _ = prog.evaluate(x)
    if np.any(f >= 0):
        return np.inf
    return float(-np.log(-f).sum())


def _newton_direction(hess: np.ndarray, g: np.ndarray) -> np.ndarray:
    # Jacobi scaling tames the spread between near-active and slack rows
    scale = 1.0 / np.sqrt(np.maximum(np.diag(hess), 1e-300))
    A = hess * scale[:, None] * scale[None, :]
    try:
        return -scale * np.linalg.solve(A, g * scale)
    except np.linalg.LinAlgError:
        return -scale * np.linalg.lstsq(A, g * scale, rcond=None)[0]


def solve_barrier(
    prog: LseProgram, x0: np.ndarray, config: SolverConfig = DEFAULT_CONFIG
) -> BarrierResult:
    """Path-following barrier method from a strictly feasible ``x0``.

    Far from the central point steps are damped by an Armijo search on the
    barrier function; close to it plain Newton steps run until rounding
    stalls the decrement.  Late stages are badly conditioned, so the
    multipliers returned are those of the stage with the smallest estimated
    dual error (duality gap plus stationarity residual), not necessarily the
    last one.
    """
    x = np.array(x0, dtype=float)
    f0, _ = prog.evaluate(x)
    if np.any(f0 >= 0):
        raise ValueError("starting point is not strictly feasible")
    K = prog.n_constraints
    c = prog.cost
    dense = prog.terms.toarray() if prog.terms.shape[0] * prog.terms.shape[1] <= 400_000 else None
    t = 1.0
    steps = 0
    converged = False
    alpha, beta = config.sufficient_decrease, config.backtrack
    best = (np.inf, None, None)
    while True:
        prev = np.inf
        for _ in range(config.max_iter):
            f, pi, grad, hess = _derivatives(prog, x, dense)
            g = t * c + grad
            dx = _newton_direction(hess, g)
            dec = -float(g @ dx)
            if not np.isfinite(dec) or dec <= 1e-20 or (dec < 1e-6 and dec > 0.5 * prev):
                break
            prev = dec
            s = 1.0
            if dec > 1e-3:
                phi = t * float(c @ x) + float(-np.log(-f).sum())
                while s >= 1e-10:
                    if t * float(c @ (x + s * dx)) + _barrier(prog, x + s * dx) <= phi - alpha * s * dec:
                        break
                    s *= beta
            else:
                while s >= 1e-10 and np.any(prog.evaluate(x + s * dx)[0] >= 0):
                    s *= beta
            if s < 1e-10:
                break
            x = x + s * dx
            steps += 1
        f, pi, grad, _ = _derivatives(prog, x, dense)
        residual = float(np.abs(t * c + grad).max()) / t
        err = K / t + residual * (1.0 + float(np.abs(x).max()))
        if err < best[0]:
            best = (err, 1.0 / (t * (-f)), pi)
        gap = K / t
        scale = max(1.0, abs(float(c @ x)))
        if gap <= config.barrier_gap * scale:
            converged = best[0] <= config.barrier_dual_tol * scale
            break
        if t > 1e20:
            break
        t *= config.barrier_growth
    return BarrierResult(
        x=x,
        value=float(c @ x),
        multipliers=best[1],
        weights=best[2],
        gap=K / t,
        newton_steps=steps,
        converged=converged,
        dual_error=best[0],
    )
