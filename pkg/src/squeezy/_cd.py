"""Compiled coordinate-descent kernel for weighted elastic-net least squares."""

import warnings

import numpy as np
from numba import njit

FULL_SWEEP_EVERY = 10
# relative margin a zero coordinate's gradient must clear to enter; keeps
# columns tied with an active one (exact duplicates) out under rounding
ENTRY_MARGIN = 1e-10


@njit(cache=True)
def _soft(x, t):
    if x > t:
        return x - t
    if x < -t:
        return x + t
    return 0.0


@njit(cache=True)
def _sweep(X, w, resid, beta, l1, l2, xw2, cols):
    n = X.shape[0]
    max_change = 0.0
    for j in cols:
        a = xw2[j] + l2[j]
        if a <= 0.0:
            continue
        old = beta[j]
        c = 0.0
        for i in range(n):
            c += w[i] * X[i, j] * resid[i]
        c += xw2[j] * old
        if old == 0.0 and abs(c) <= l1[j] * (1.0 + ENTRY_MARGIN):
            continue
        new = _soft(c, l1[j]) / a
        if new != old:
            d = new - old
            for i in range(n):
                resid[i] -= X[i, j] * d
            beta[j] = new
            ch = abs(d) * a
            if ch > max_change:
                max_change = ch
    return max_change


@njit(cache=True)
def wls_enet_cd(X, z, w, beta, l1, l2, tol, max_sweeps):
    """Minimise ``sum w (z - X b)^2 / 2 + sum l1 |b| + l2 b^2 / 2`` in place.

    Active-set cycling with a full sweep at least every ``FULL_SWEEP_EVERY``
    sweeps; convergence requires a full sweep whose largest coordinate
    move, measured as change in the coordinate gradient, is below ``tol``.
    Returns ``(n_sweeps, converged)``.
    """
    n, p = X.shape
    xw2 = np.empty(p)
    for j in range(p):
        s = 0.0
        for i in range(n):
            s += w[i] * X[i, j] * X[i, j]
        xw2[j] = s
    resid = z - X @ beta
    all_cols = np.arange(p)
    sweeps = 0
    while sweeps < max_sweeps:
        change = _sweep(X, w, resid, beta, l1, l2, xw2, all_cols)
        sweeps += 1
        if change < tol:
            return sweeps, True
        active = np.flatnonzero((beta != 0.0) | (l1 == 0.0))
        inner = 1
        while sweeps < max_sweeps and inner < FULL_SWEEP_EVERY:
            change = _sweep(X, w, resid, beta, l1, l2, xw2, active)
            sweeps += 1
            inner += 1
            if change < tol:
                break
    return sweeps, False


def _wls_objective(X, z, w, beta, l1, l2) -> float:
    r = z - X @ beta
    return 0.5 * float(w @ (r * r)) + float(l1 @ np.abs(beta)) + 0.5 * float(l2 @ (beta * beta))


def _restricted_solve(X, z, w, l1, l2, act, s):
    from scipy import linalg

    XA = X[:, act]
    lhs = XA.T @ (w[:, None] * XA)
    lhs[np.diag_indices_from(lhs)] += l2[act]
    rhs = XA.T @ (w * z) - l1[act] * s
    try:
        # candidates are only accepted if they lower the objective
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", linalg.LinAlgWarning)
            out = linalg.solve(lhs, rhs, assume_a="pos")
    except (linalg.LinAlgError, ValueError):
        return None
    return out if np.all(np.isfinite(out)) else None


def _active_set_step(X, z, w, beta, l1, l2, max_drop: int = 20) -> bool:
    """Try to jump to the minimiser on the current active set with signs fixed.

    Coordinates whose sign would flip are dropped and the restricted problem
    re-solved, up to ``max_drop`` times.  Two candidates are compared with
    the current iterate: the final restricted solution and the point where
    the straight path first crosses zero.  ``beta`` is replaced by the best
    of the three.  Returns whether it changed.
    """
    if _null_space_steps(X, w, beta, l1, l2):
        return True
    act = np.flatnonzero((beta != 0.0) | (l1 == 0.0))
    if act.size == 0:
        return False
    s = np.sign(beta[act])
    target = _restricted_solve(X, z, w, l1, l2, act, s)
    if target is None:
        return False
    old = beta[act]
    candidates = []
    flip = (l1[act] > 0) & (np.sign(target) != s)
    if not np.any(flip):
        candidates.append(_embed(beta, act, target))
    else:
        cross = np.full(act.size, np.inf)
        cross[flip] = old[flip] / (old[flip] - target[flip])
        t = float(cross.min())
        seg = old + t * (target - old)
        seg[cross <= t * (1.0 + 1e-12)] = 0.0
        candidates.append(_embed(beta, act, seg))
        keep_act, keep_s, sol = act, s, target
        for _ in range(max_drop):
            bad = (l1[keep_act] > 0) & (np.sign(sol) != keep_s)
            if not np.any(bad):
                candidates.append(_embed(beta, keep_act, sol, zero_rest=act))
                break
            keep_act, keep_s = keep_act[~bad], keep_s[~bad]
            if keep_act.size == 0:
                break
            sol = _restricted_solve(X, z, w, l1, l2, keep_act, keep_s)
            if sol is None:
                break
    best = _wls_objective(X, z, w, beta, l1, l2)
    choice = None
    for cand in candidates:
        f = _wls_objective(X, z, w, cand, l1, l2)
        if f < best:
            best, choice = f, cand
    if choice is None:
        return False
    beta[:] = choice
    return True


def _null_space_steps(X, w, beta, l1, l2, max_steps: int = 1000) -> bool:
    """Shrink a rank-deficient pure-lasso active set.

    Moving along a direction ``d`` with ``X_A d = 0`` leaves the fit unchanged
    and changes the penalty linearly, so we follow the descent direction until
    a coordinate reaches zero.  When the penalty is flat along the null space
    the move is toward zeroing the highest-index column it involves, so tied
    columns resolve to the lowest index.  Repeats until the active columns
    have full rank.  Returns whether ``beta`` changed.
    """
    changed = False
    sw = np.sqrt(w)
    for _ in range(max_steps):
        act = np.flatnonzero((beta != 0.0) | (l1 == 0.0))
        if act.size == 0 or np.any(l2[act] != 0.0):
            break
        A = sw[:, None] * X[:, act]
        _, sv, vt = np.linalg.svd(A, full_matrices=True)
        rank = int(np.sum(sv > sv[0] * max(A.shape) * np.finfo(float).eps)) if sv.size else 0
        if rank >= act.size:
            break
        N = vt[rank:].T
        g = l1[act] * np.sign(beta[act])
        d = -N @ (N.T @ g)
        old = beta[act]
        if np.max(np.abs(d)) <= 1e-12 * np.max(np.abs(g)):
            # flat direction
            proj = N @ N.T
            movable = np.flatnonzero((np.diag(proj) > 1e-12) & (l1[act] > 0) & (old != 0))
            if movable.size == 0:
                break
            k = int(movable[-1])
            d = -np.sign(old[k]) * proj[:, k]
        shrink = (l1[act] > 0) & (old * d < 0)
        if not np.any(shrink):
            break
        ratio = np.full(act.size, np.inf)
        ratio[shrink] = -old[shrink] / d[shrink]
        t = float(ratio.min())
        new = old + t * d
        new[ratio <= t * (1.0 + 1e-12)] = 0.0
        beta[act] = new
        changed = True
    return changed


def _embed(beta, idx, values, zero_rest=None):
    out = beta.copy()
    if zero_rest is not None:
        out[zero_rest] = 0.0
    out[idx] = values
    return out


def solve_enet_wls(X, z, w, beta, l1, l2, tol, max_sweeps, chunk=50):
    """Coordinate descent with periodic exact active-set steps; updates ``beta``.

    Plain coordinate descent is slow when the penalty is small relative to
    the curvature of a rank-deficient design; every ``chunk`` sweeps the
    smooth problem restricted to the current active set is solved directly.
    Returns ``(n_sweeps, converged)``.
    """
    total = 0
    while total < max_sweeps:
        sweeps, ok = wls_enet_cd(X, z, w, beta, l1, l2, tol, min(chunk, max_sweeps - total))
        total += int(sweeps)
        if ok:
            if _null_space_steps(X, w, beta, l1, l2):
                continue
            return total, True
        _active_set_step(X, z, w, beta, l1, l2)
    return total, False
