"""Relative entropy of a distribution to the convex hull of finitely many
distributions."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import DEFAULT_CONFIG, SolverConfig


@dataclass(frozen=True)
class KlResult:
    value: float
    weights: np.ndarray  # mixture weights on the extremes
    certificate: float  # upper bound on value minus the true infimum
    iterations: int


def _kl(q, p):
    pos = q > 0
    if np.any(p[pos] <= 0):
        return np.inf
    return float(np.sum(q[pos] * np.log(q[pos] / p[pos])))


def _pairwise(qs, Ps, lam, grad):
    """Exact line search moving weight from the worst supported extreme to
    the best one."""
    i = int(np.argmax(grad))
    held = np.flatnonzero(lam > 0)
    o = int(held[np.argmin(grad[held])])
    mix, delta = lam @ Ps, Ps[i] - Ps[o]
    lo, hi = 0.0, float(lam[o])

    def slope(t):
        with np.errstate(divide="ignore"):
            return float(qs @ (delta / (mix + t * delta)))

    if slope(hi) >= 0:
        t = hi
    else:
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            lo, hi = (mid, hi) if slope(mid) > 0 else (lo, mid)
        t = lo
    new = lam.copy()
    new[i] += t
    new[o] -= t
    return np.maximum(new, 0.0)


def _polish(q, P, lam, tol, max_iter=100):
    """Active-set Newton on the face of the simplex that carries ``lam``.

    Maximises ``sum q log(lam @ P)``; steps are cut back to stay on the
    simplex and to increase the objective, and an extreme whose weight hits
    zero leaves the face.
    """
    pos = q > 0
    qs, Ps = q[pos], P[:, pos]
    total = qs.sum()
    active = lam > 1e-12 * lam.max()
    lam = np.where(active, lam, 0.0)
    lam /= lam.sum()

    def objective(w):
        mix = w @ Ps
        return -np.inf if np.any(mix <= 0) else float(qs @ np.log(mix))

    obj = objective(lam)
    for _ in range(max_iter):
        mix = lam @ Ps
        grad = Ps @ (qs / mix)
        if np.log(grad.max() / total) <= tol:
            break
        if active.sum() < lam.size:
            inactive = np.flatnonzero(~active)
            j = inactive[np.argmax(grad[inactive])]
            if grad[j] > grad[active].max() + 1e-14 * total:
                active[j] = True
        S = np.flatnonzero(active)
        k = S.size
        H = (Ps[S] * (qs / mix**2)) @ Ps[S].T
        kkt = np.zeros((k + 1, k + 1))
        kkt[:k, :k] = H
        kkt[:k, k] = 1.0
        kkt[k, :k] = 1.0
        step = np.linalg.lstsq(kkt, np.r_[grad[S], 0.0], rcond=None)[0][:k]
        limit, hit = 1.0, None
        neg = step < 0
        if np.any(neg):
            ratios = -lam[S][neg] / step[neg]
            if ratios.min() < 1.0:
                limit = float(ratios.min())
                hit = S[neg][np.argmin(ratios)]
        s = limit
        while s > 1e-14:
            new = lam.copy()
            new[S] = np.maximum(new[S] + s * step, 0.0)
            if hit is not None and s == limit:
                new[hit] = 0.0
            new /= new.sum()
            val = objective(new)
            if val >= obj:
                break
            s *= 0.5
        else:
            # blocked at a face boundary: exchange weight between the best
            # and worst supported extremes instead
            lam = _pairwise(qs, Ps, lam, grad)
            active = lam > 0
            obj = objective(lam)
            continue
        if hit is not None and s == limit:
            active[hit] = False
        done = val - obj <= 1e-16 * max(1.0, abs(obj)) and s == 1.0
        lam, obj = new, val
        if done:
            break
    return lam


def kl_project_batch(Q: np.ndarray, P: np.ndarray, valid: np.ndarray | None = None,
                     config: SolverConfig = DEFAULT_CONFIG):
    """Vectorised ``kl_project`` over rows.

    ``Q`` is (B, C), ``P`` is (B, J, C) and ``valid`` (B, J) flags which
    extremes exist (rows may be padded).  Returns values, weights and
    certificates as arrays.
    """
    Q = np.asarray(Q, float)
    P = np.asarray(P, float)
    Bn, J, C = P.shape
    valid = np.ones((Bn, J), dtype=bool) if valid is None else np.asarray(valid, bool)
    lam = valid / valid.sum(axis=1, keepdims=True)
    support = Q > 0
    reach = np.einsum("bj,bjc->bc", valid.astype(float), P) > 0
    infinite = np.any(support & ~reach, axis=1)
    done = infinite.copy()
    cert = np.zeros(Bn)
    it = 0
    tol = config.kl_rel_tol
    # a few multiplicative steps find the face; the Newton polish finishes
    while not done.all() and it < 8:
        rows = ~done
        mix = np.einsum("bj,bjc->bc", lam[rows], P[rows])
        ratio = np.where(support[rows], Q[rows] / np.where(mix > 0, mix, 1.0), 0.0)
        upd = np.einsum("bjc,bc->bj", P[rows], ratio)
        upd = np.where(valid[rows], upd, 0.0)
        c_rows = np.log(np.max(upd, axis=1))
        cert[rows] = c_rows
        idx = np.flatnonzero(rows)
        finished = c_rows <= tol
        done[idx[finished]] = True
        lam_new = lam[rows] * upd
        lam_new /= lam_new.sum(axis=1, keepdims=True)
        lam[idx[~finished]] = lam_new[~finished]
        it += 1
    for b in np.flatnonzero(~done):
        lam[b, valid[b]] = _polish(Q[b], P[b, valid[b]], lam[b, valid[b]], tol)
        mix = lam[b] @ P[b]
        ratio = np.where(support[b], Q[b] / np.where(mix > 0, mix, 1.0), 0.0)
        cert[b] = float(np.log(np.max(np.where(valid[b], P[b] @ ratio, 0.0))))
    mix = np.einsum("bj,bjc->bc", lam, P)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(support, Q * np.log(Q / mix), 0.0)
    values = np.where(infinite | np.any(support & (mix <= 0), axis=1), np.inf, terms.sum(axis=1))
    cert[infinite] = 0.0
    return values, lam, np.maximum(cert, 0.0), it


def kl_project(q, extremes, config: SolverConfig = DEFAULT_CONFIG) -> KlResult:
    """``inf_lambda KL(q || sum_j lambda_j P_j)`` over the weight simplex.

    Multiplicative (exponentiated-gradient) updates run until the optimality
    certificate ``log max_j grad_j`` falls below ``config.kl_rel_tol``; rows
    that stall on a face of the simplex finish with an active-set Newton
    step.  A single extreme uses the closed form.
    """
    q = np.asarray(q, float)
    P = np.atleast_2d(np.asarray(extremes, float))
    if P.shape[0] == 1:
        return KlResult(_kl(q, P[0]), np.ones(1), 0.0, 0)
    vals, lam, cert, it = kl_project_batch(q[None], P[None], config=config)
    return KlResult(float(vals[0]), lam[0], float(cert[0]), it)
