"""Dense two-phase revised simplex (Harris ratio test, Bland fallback)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class LPResult:
    status: str  # "optimal" | "infeasible" | "unbounded"
    x: np.ndarray | None
    value: float
    iterations: int

    @property
    def ok(self) -> bool:
        return self.status == "optimal"


class _Unbounded(Exception):
    pass


def _simplex(A, b, c, basis, eligible, tol, max_iter, start_iter=0):
    """Maximise c.x from a feasible basis; returns (basis, Binv, iterations).

    Ratio test is Harris' two-pass rule (largest pivot among near-minimal
    ratios); after a run of degenerate steps it switches to Bland's rule,
    which cannot cycle.
    """
    m = A.shape[0]
    Binv = np.linalg.inv(A[:, basis])
    it = start_iter
    since_refactor = 0
    degenerate_run = 0
    ctol = tol * max(1.0, float(np.abs(c).max(initial=0.0)))
    col_scale = 1.0 + np.abs(A).max(axis=0)
    blocked = np.zeros(A.shape[1], dtype=bool)
    while True:
        if it >= max_iter:
            raise RuntimeError("simplex iteration limit reached")
        xB = Binv @ b
        y = c[basis] @ Binv
        red = c - y @ A
        red[basis] = 0.0
        red[~eligible | blocked] = 0.0
        cand = np.flatnonzero(red > ctol * col_scale * (1.0 + np.abs(y).max(initial=0.0)))
        if cand.size == 0:
            return basis, Binv, it
        bland = degenerate_run > 50
        j = int(cand[0]) if bland else int(cand[np.argmax(red[cand] / col_scale[cand])])
        d = Binv @ A[:, j]
        rows = np.flatnonzero(d > max(1e3 * tol, 1e-6 * float(np.abs(d).max())))
        if rows.size == 0:
            # a reduced cost at noise level is not a ray
            if red[j] < 1e3 * ctol * col_scale[j]:
                blocked[j] = True
                continue
            raise _Unbounded()
        xr = np.maximum(xB[rows], 0.0)
        if bland:
            ratios = xr / d[rows]
            rmin = ratios.min()
            ties = rows[ratios <= rmin + tol * max(1.0, rmin)]
            ties = ties[d[ties] >= 1e-3 * d[ties].max()]
            r = int(min(ties, key=lambda k: basis[k]))
        else:
            bound = ((xr + 1e-9) / d[rows]).min()
            ok = rows[xr / d[rows] <= bound]
            r = int(ok[np.argmax(d[ok])])
        step = max(xB[r], 0.0) / d[r]
        degenerate_run = degenerate_run + 1 if step <= tol else 0
        blocked[:] = False
        piv = d[r]
        Binv[r] /= piv
        others = np.arange(m) != r
        Binv[others] -= np.outer(d[others], Binv[r])
        basis[r] = j
        it += 1
        since_refactor += 1
        if since_refactor >= 50:
            try:
                Binv = np.linalg.inv(A[:, basis])
            except np.linalg.LinAlgError:
                pass
            since_refactor = 0


def solve_lp(c, A_eq, b_eq, *, pivot_tol: float = 1e-10, max_iter: int = 200000) -> LPResult:
    """Maximise ``c.x`` subject to ``A_eq x = b_eq`` and ``x >= 0``.

    Phase one minimises the sum of artificial variables; artificials left in
    the basis at level zero are pivoted out or their rows dropped as
    redundant.
    """
    A = np.array(A_eq, dtype=float, ndmin=2)
    b = np.array(b_eq, dtype=float).ravel()
    c = np.array(c, dtype=float).ravel()
    m, n = A.shape
    if m == 0:
        if np.any(c > pivot_tol):
            return LPResult("unbounded", None, np.inf, 0)
        return LPResult("optimal", np.zeros(n), 0.0, 0)
    flip = b < 0
    A[flip] *= -1.0
    b[flip] *= -1.0

    # crash basis: rows owning a unit column start from it, the rest get
    # an artificial variable
    basis = [-1] * m
    nz = np.count_nonzero(A, axis=0)
    for j in np.flatnonzero(nz == 1):
        r = int(np.flatnonzero(A[:, j])[0])
        if basis[r] < 0 and A[r, j] == 1.0:
            basis[r] = int(j)
    need = [r for r in range(m) if basis[r] < 0]
    art = np.zeros((m, len(need)))
    for i, r in enumerate(need):
        art[r, i] = 1.0
        basis[r] = n + i
    A1 = np.hstack([A, art])
    c1 = np.concatenate([np.zeros(n), -np.ones(len(need))])
    eligible = np.ones(n + len(need), dtype=bool)
    basis, Binv, it = _simplex(A1, b, c1, basis, eligible, pivot_tol, max_iter)
    xB = Binv @ b
    infeas = -float(c1[basis] @ xB)
    if infeas > 1e3 * pivot_tol * max(1.0, float(np.abs(b).max())):
        return LPResult("infeasible", None, -np.inf, it)

    # drive remaining artificials out of the basis
    keep_rows = np.ones(m, dtype=bool)
    for r in range(m):
        if basis[r] < n:
            continue
        row = Binv[r] @ A
        row[[k for k in basis if k < n]] = 0.0
        cols = np.flatnonzero(np.abs(row) > 1e3 * pivot_tol)
        if cols.size:
            j = int(cols[0])
            d = Binv @ A1[:, j]
            Binv[r] /= d[r]
            others = np.arange(m) != r
            Binv[others] -= np.outer(d[others], Binv[r])
            basis[r] = j
        else:
            keep_rows[r] = False
    if not keep_rows.all():
        A = A[keep_rows]
        b = b[keep_rows]
        basis = [k for k, keep in zip(basis, keep_rows) if keep]
        m = A.shape[0]

    eligible = np.ones(n, dtype=bool)
    try:
        basis, Binv, it = _simplex(A, b, c, basis, eligible, pivot_tol, max_iter, it)
    except _Unbounded:
        return LPResult("unbounded", None, np.inf, it)
    x = np.zeros(n)
    x[basis] = np.maximum(Binv @ b, 0.0)
    return LPResult("optimal", x, float(c @ x), it)


def solve_lp_general(
    c,
    *,
    A_ub=None,
    b_ub=None,
    A_eq=None,
    b_eq=None,
    free=None,
    pivot_tol: float = 1e-10,
) -> LPResult:
    """Maximise ``c.x`` with inequality and equality rows.

    Variables are nonnegative unless flagged in ``free``; free variables are
    split into positive and negative parts.
    """
    c = np.asarray(c, dtype=float)
    n = c.size
    free = np.zeros(n, dtype=bool) if free is None else np.asarray(free, dtype=bool)
    A_ub = np.zeros((0, n)) if A_ub is None else np.asarray(A_ub, dtype=float).reshape(-1, n)
    b_ub = np.zeros(0) if b_ub is None else np.asarray(b_ub, dtype=float).ravel()
    A_eq = np.zeros((0, n)) if A_eq is None else np.asarray(A_eq, dtype=float).reshape(-1, n)
    b_eq = np.zeros(0) if b_eq is None else np.asarray(b_eq, dtype=float).ravel()

    neg_cols = np.flatnonzero(free)
    k_ub = A_ub.shape[0]
    # columns: x (n), negative parts of free vars, slacks
    def expand(M):
        return np.hstack([M, -M[:, neg_cols]])

    rows_ub = np.hstack([expand(A_ub), np.eye(k_ub)])
    rows_eq = np.hstack([expand(A_eq), np.zeros((A_eq.shape[0], k_ub))])
    A_std = np.vstack([rows_ub, rows_eq])
    b_std = np.concatenate([b_ub, b_eq])
    c_std = np.concatenate([c, -c[neg_cols], np.zeros(k_ub)])
    res = solve_lp(c_std, A_std, b_std, pivot_tol=pivot_tol)
    if not res.ok:
        return res
    x = res.x[:n].copy()
    x[neg_cols] -= res.x[n : n + neg_cols.size]
    return LPResult("optimal", x, float(c @ x), res.iterations)
