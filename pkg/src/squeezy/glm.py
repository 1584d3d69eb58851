"""Group-ridge GLM fits in sample space.

All heavy linear algebra works on ``n x n`` matrices built from the group
Gram matrices ``X_g X_g^T``; no ``p x p`` matrix is ever formed.  With
``K = sum_g X_g X_g^T / lambda_g`` and IWLS weights ``W`` the central
object is the symmetric positive definite matrix ``I + W^1/2 K W^1/2``,
which is factorised once per weight vector.

Unpenalised columns (intercept, clinical covariates) enter through a
generalised-least-squares projection, so the penalised part only ever
sees the ``n``-dimensional prior covariance ``K``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import linalg

from .codata import GroupStructure, group_grams
from .families import Family, get_family

IWLS_TOL = 1e-8
IWLS_MAX_ITER = 100


class SingularSystemError(np.linalg.LinAlgError):
    """Raised when a sample-space system cannot be factorised."""


@dataclass(frozen=True)
class DesignData:
    """Response, design matrix and the split into (un)penalised columns.

    Parameters
    ----------
    y : ndarray of shape (n,)
    X : ndarray of shape (n, p)
    unpen_idx, pen_idx : ndarray of int
        Disjoint column index sets covering ``range(p)``.
    feature_names : tuple of str
    """

    y: np.ndarray
    X: np.ndarray
    unpen_idx: np.ndarray
    pen_idx: np.ndarray
    feature_names: tuple = field(default=())

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float).ravel()
        X = np.asarray(self.X, dtype=float)
        if X.ndim != 2 or X.shape[0] != y.shape[0]:
            raise ValueError(f"X has shape {X.shape}, incompatible with {y.shape[0]} responses")
        unpen = np.asarray(self.unpen_idx, dtype=int).ravel()
        pen = np.asarray(self.pen_idx, dtype=int).ravel()
        p = X.shape[1]
        both = np.concatenate([unpen, pen])
        if both.size != p or not np.array_equal(np.sort(both), np.arange(p)):
            raise ValueError("unpen_idx and pen_idx must be disjoint and cover all columns")
        if not np.all(np.isfinite(X)) or not np.all(np.isfinite(y)):
            raise ValueError("design or response contains missing or non-finite values")
        zero = pen[~np.any(X[:, pen] != 0, axis=0)]
        if zero.size:
            raise ValueError(f"penalised columns {zero[:10].tolist()} are identically zero")
        for name, val in (("y", y), ("X", X), ("unpen_idx", unpen), ("pen_idx", pen)):
            val.setflags(write=False)
            object.__setattr__(self, name, val)
        if not self.feature_names:
            object.__setattr__(self, "feature_names", tuple(f"x{j}" for j in range(p)))
        elif len(self.feature_names) != p:
            raise ValueError("feature_names must have one entry per column")

    @classmethod
    def from_arrays(cls, y, X, unpen_idx: Sequence[int] = (), intercept: bool = False,
                    feature_names: Sequence[str] | None = None) -> "DesignData":
        """Build a design, optionally prepending an unpenalised intercept column."""
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        names = list(feature_names) if feature_names is not None else [
            f"x{j}" for j in range(X.shape[1])]
        unpen = [int(j) for j in unpen_idx]
        if intercept:
            X = np.column_stack([np.ones(X.shape[0]), X])
            names = ["(Intercept)"] + names
            unpen = [0] + [j + 1 for j in unpen]
        pen = [j for j in range(X.shape[1]) if j not in set(unpen)]
        return cls(y, X, np.array(unpen, dtype=int), np.array(pen, dtype=int), tuple(names))

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def X_pen(self) -> np.ndarray:
        return self.X[:, self.pen_idx]

    @property
    def X_unpen(self) -> np.ndarray:
        return self.X[:, self.unpen_idx]

    def with_intercept(self) -> "DesignData":
        """Copy with an unpenalised column of ones prepended."""
        X = np.column_stack([np.ones(self.n), self.X])
        return DesignData(self.y, X, np.r_[0, self.unpen_idx + 1], self.pen_idx + 1,
                          ("(Intercept)",) + tuple(self.feature_names))

    def subset(self, rows) -> "DesignData":
        rows = np.asarray(rows)
        return DesignData(self.y[rows], self.X[rows], self.unpen_idx, self.pen_idx,
                          self.feature_names)


@dataclass(frozen=True)
class IwlsState:
    """Converged (or last) iterate of the sample-space IWLS algorithm.

    ``dual`` is the vector ``r`` with ``beta_pen = Lambda^-1 X_pen^T r``;
    the fitted linear predictor is ``X_unpen beta_unpen + K r``.
    """

    eta_hat: np.ndarray
    mu: np.ndarray
    W_diag: np.ndarray
    converged: bool
    iterations: int
    dual: np.ndarray
    beta_unpen: np.ndarray
    max_change: float

    def beta_pen(self, X_pen, groups: GroupStructure, lambdas) -> np.ndarray:
        """Penalised coefficients, pooled over group copies under overlap."""
        inv_lam = groups.row_normalized() @ (1.0 / np.asarray(lambdas, dtype=float))
        return (np.asarray(X_pen).T @ self.dual) * inv_lam


def _cholesky(A: np.ndarray, what: str):
    try:
        return linalg.cho_factor(A, lower=True, check_finite=True)
    except (np.linalg.LinAlgError, ValueError):
        pass
    n = A.shape[0]
    jitter = 1e-10 * np.trace(A) / n
    try:
        return linalg.cho_factor(A + jitter * np.eye(n), lower=True, check_finite=True)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise SingularSystemError(f"{what} is not positive definite") from exc


class WeightedSystem:
    """Factorisation of the sample-space system for fixed weights and penalties.

    Parameters
    ----------
    grams : ndarray of shape (G, n, n)
    lambdas : ndarray of shape (G,)
    w : ndarray of shape (n,)
        IWLS weights, strictly positive.
    X_unpen : ndarray of shape (n, p1)
    """

    def __init__(self, grams, lambdas, w, X_unpen):
        lambdas = np.asarray(lambdas, dtype=float)
        if np.any(~np.isfinite(lambdas)) or np.any(lambdas <= 0):
            raise ValueError("group penalties must be strictly positive and finite")
        w = np.asarray(w, dtype=float)
        if np.any(~np.isfinite(w)) or np.any(w <= 0):
            raise SingularSystemError(
                f"IWLS weights must be strictly positive (min weight {np.min(w):.3g})")
        n = w.shape[0]
        self.w = w
        self.sw = np.sqrt(w)
        self.K = np.tensordot(1.0 / lambdas, grams, axes=1)
        M = self.sw[:, None] * self.K * self.sw[None, :]
        M[np.diag_indices(n)] += 1.0
        self.chol = _cholesky(M, "I + W^1/2 K W^1/2")
        self.logdet = 2.0 * float(np.sum(np.log(np.diag(self.chol[0]))))
        self.X_unpen = X_unpen
        self.p1 = X_unpen.shape[1]
        if self.p1:
            self.Si_Xu = self.sigma_inv(X_unpen)
            self.gls_chol = _cholesky(
                X_unpen.T @ self.Si_Xu,
                f"unpenalised information matrix (min weight {np.min(w):.3g})")

    def solve(self, v):
        """``(I + W^1/2 K W^1/2)^-1 v``."""
        return linalg.cho_solve(self.chol, v)

    def sigma_inv(self, v):
        """``(W^-1 + K)^-1 v``."""
        sw = self.sw if np.ndim(v) == 1 else self.sw[:, None]
        return sw * self.solve(sw * v)

    def gls_coef(self, v):
        """``(X_u^T S X_u)^-1 X_u^T S v`` with ``S = (W^-1 + K)^-1``."""
        return linalg.cho_solve(self.gls_chol, self.Si_Xu.T @ v)

    def project(self, v):
        """``(I - X_u B) v``: remove the GLS fit on the unpenalised columns."""
        if not self.p1:
            return v
        return v - self.X_unpen @ self.gls_coef(v)

    def i_minus_hw(self, v):
        """``(I - H W) v`` with ``H`` the full hat matrix."""
        sw = self.sw if np.ndim(v) == 1 else self.sw[:, None]
        return self.solve(sw * self.project(v)) / sw

    def sigma_inv_matrix(self):
        return self.sigma_inv(np.eye(self.w.shape[0]))


class SampleSpaceRidge:
    """Precomputed sample-space representation of a group-ridge GLM.

    Builds the ``G`` Gram matrices once; all later fits and hat-matrix
    evaluations cost ``O(G n^2 + n^3)``.
    """

    def __init__(self, data: DesignData, groups: GroupStructure, grams=None):
        if groups.n_features != data.pen_idx.size:
            raise ValueError(
                f"group structure covers {groups.n_features} covariates but the design has "
                f"{data.pen_idx.size} penalised columns")
        self.data = data
        self.groups = groups
        self.y = data.y
        self.X_unpen = data.X_unpen
        self.grams = group_grams(data.X_pen, groups) if grams is None else np.asarray(grams)
        self.n = data.n
        self.G = groups.n_groups

    def system(self, lambdas, w) -> WeightedSystem:
        return WeightedSystem(self.grams, lambdas, w, self.X_unpen)

    def iwls_map(self, family: Family, lambdas, eta):
        """One IWLS update ``eta -> X (X^T W X + Lambda)^-1 X^T (y - mu + W eta)``."""
        mu = family.mean(eta)
        w = family.weights(mu)
        sysm = self.system(lambdas, w)
        # sw * (working response)
        sz = sysm.sw * eta + (self.y - mu) / sysm.sw
        if sysm.p1:
            beta_u = sysm.gls_coef(eta + (self.y - mu) / w)
            sz = sz - sysm.sw * (self.X_unpen @ beta_u)
            eta_u = self.X_unpen @ beta_u
        else:
            beta_u = np.zeros(0)
            eta_u = 0.0
        dual = sysm.sw * sysm.solve(sz)
        return eta_u + sysm.K @ dual, dual, beta_u

    def fit(self, family, lambdas, eta_start=None, tol: float = IWLS_TOL,
            max_iter: int = IWLS_MAX_ITER) -> IwlsState:
        family = get_family(family)
        lambdas = np.asarray(lambdas, dtype=float)
        eta = np.zeros(self.n) if eta_start is None else np.asarray(eta_start, dtype=float)
        if family.is_gaussian:
            # constant weights: a single weighted least-squares solve is exact
            eta, dual, beta_u = self.iwls_map(family, lambdas, eta)
            mu = family.mean(eta)
            return IwlsState(eta, mu, family.weights(mu), True, 1, dual, beta_u, 0.0)
        converged = False
        change = np.inf
        it = 0
        dual = np.zeros(self.n)
        beta_u = np.zeros(self.X_unpen.shape[1])
        for it in range(1, max_iter + 1):
            new, dual, beta_u = self.iwls_map(family, lambdas, eta)
            if not np.all(np.isfinite(new)):
                break
            change = float(np.max(np.abs(new - eta)))
            eta = new
            if change < tol:
                converged = True
                break
        mu = family.mean(eta)
        return IwlsState(eta, mu, family.weights(mu), converged, it, dual, beta_u, change)

    def fixed_point_residual(self, family, lambdas, state: IwlsState) -> float:
        """``max |eta_hat - H (y - mu + W eta_hat)|``."""
        new, _, _ = self.iwls_map(get_family(family), lambdas, state.eta_hat)
        return float(np.max(np.abs(new - state.eta_hat)))

    def hat_matrix_pen(self, lambdas, w) -> np.ndarray:
        """``X_pen (X_pen^T W X_pen + Lambda_pen)^-1 X_pen^T`` via Woodbury."""
        sysm = self.system(lambdas, w)
        H = sysm.K @ (sysm.sw[:, None] * sysm.solve(np.diag(1.0 / sysm.sw)))
        return 0.5 * (H + H.T)

    def hat_matrix_group(self, g: int, lambdas, w) -> np.ndarray:
        """Contribution ``X (X^T W X + Lambda)^-1 I_g X^T`` of group ``g``.

        Uses the projection ``P1 = I - W^1/2 X_u (X_u^T W X_u)^-1 X_u^T W^1/2``
        onto the complement of the unpenalised columns.
        """
        if not (0 <= int(g) < self.G) or int(g) != g:
            raise IndexError(f"group index {g} out of range for {self.G} groups")
        lambdas = np.asarray(lambdas, dtype=float)
        w = np.asarray(w, dtype=float)
        sw = np.sqrt(w)
        n = self.n
        K = np.tensordot(1.0 / lambdas, self.grams, axes=1)
        if self.X_unpen.shape[1]:
            WXu = sw[:, None] * self.X_unpen
            P1 = np.eye(n) - WXu @ np.linalg.solve(WXu.T @ WXu, WXu.T)
        else:
            P1 = np.eye(n)
        Kt = K @ (sw[:, None] * P1 / sw[None, :])
        inner = np.diag(1.0 / w) + Kt
        core = np.eye(n) - np.linalg.solve(inner.T, Kt.T).T
        left = P1 * sw[None, :] / sw[:, None]
        return left @ core @ (self.grams[g] / lambdas[g])

    def hat_matrix_unpen(self, lambdas, w) -> np.ndarray:
        """Contribution ``X (X^T W X + Lambda)^-1 I_unpen X^T`` of the unpenalised block."""
        sysm = self.system(lambdas, w)
        if not sysm.p1:
            return np.zeros((self.n, self.n))
        A = linalg.cho_solve(sysm.gls_chol, self.X_unpen.T)
        return (sysm.Si_Xu @ A) / sysm.w[:, None]

    def hat_matrix(self, lambdas, w) -> np.ndarray:
        """Full hat matrix ``X (X^T W X + Lambda)^-1 X^T``."""
        sysm = self.system(lambdas, w)
        n = self.n
        Winv = np.diag(1.0 / sysm.w)
        if sysm.p1:
            XuB = self.X_unpen @ linalg.cho_solve(sysm.gls_chol, sysm.Si_Xu.T)
        else:
            XuB = np.zeros((n, n))
        HW = XuB + sysm.K @ sysm.sigma_inv(np.eye(n) - XuB)
        H = HW @ Winv
        return 0.5 * (H + H.T)


def _as_lambdas(state) -> np.ndarray:
    lam = getattr(state, "lambdas", state)
    return np.atleast_1d(np.asarray(lam, dtype=float))


def fit_iwls_ridge(data: DesignData, family, groups: GroupStructure, state,
                   tol: float = IWLS_TOL, max_iter: int = IWLS_MAX_ITER) -> IwlsState:
    """Fit a group-ridge GLM by sample-space IWLS.

    ``state`` is a :class:`~squeezy.marginal.RidgePenaltyState` or an array
    of group penalties.
    """
    return SampleSpaceRidge(data, groups).fit(family, _as_lambdas(state), tol=tol,
                                              max_iter=max_iter)


def hat_matrix_pen(data: DesignData, groups: GroupStructure, state, W_diag) -> np.ndarray:
    return SampleSpaceRidge(data, groups).hat_matrix_pen(_as_lambdas(state), W_diag)


def hat_matrix_group(g: int, data: DesignData, groups: GroupStructure, state,
                     W_diag) -> np.ndarray:
    return SampleSpaceRidge(data, groups).hat_matrix_group(g, _as_lambdas(state), W_diag)
