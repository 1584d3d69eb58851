"""Elastic-net GLM fits with per-covariate penalty factors.

Minimises

    L(beta) / phi + sum_k f_k (alpha |beta_k| + (1 - alpha) beta_k^2 / 2)

over all coefficients, where ``L`` is half the residual sum of squares
(Gaussian) or the negative log likelihood (binomial) and unpenalised
columns carry ``f_k = 0``.  Gaussian fits run coordinate descent directly;
binomial fits wrap it in IWLS with step halving.

Coordinates are visited in column order, so among exactly collinear
columns under a pure lasso penalty the lowest index enters first.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from ._cd import solve_enet_wls
from .families import Family, get_family
from .glm import DesignData
from .transform import ElasticNetPenalty

CD_TOL = 1e-7
OUTER_TOL = 1e-6
MAX_OUTER = 50
MAX_SWEEPS = 100_000
MAX_REFINE = 6


class SolverWarning(UserWarning):
    pass


@dataclass(frozen=True)
class FitResult:
    """Penalised GLM fit.

    ``objective`` is on the scale of the minimised function given above.
    """

    beta_pen: np.ndarray
    beta_unpen: np.ndarray
    eta_hat: np.ndarray
    objective: float
    kkt_max_violation: float
    n_nonzero: int
    converged: bool
    iterations: int

    def coef(self, data: DesignData) -> np.ndarray:
        beta = np.zeros(data.X.shape[1])
        beta[data.pen_idx] = self.beta_pen
        beta[data.unpen_idx] = self.beta_unpen
        return beta

    def predict(self, data: DesignData) -> np.ndarray:
        """Linear predictor for (new) data with the same column layout."""
        return data.X @ self.coef(data)


def _column_penalties(data: DesignData, penalty: ElasticNetPenalty, dispersion: float):
    p = data.X.shape[1]
    factor = np.asarray(penalty.penalty_factor, dtype=float)
    if factor.shape != (data.pen_idx.size,):
        raise ValueError(f"expected {data.pen_idx.size} penalty factors, got {factor.shape}")
    if np.any(~np.isfinite(factor)) or np.any(factor <= 0):
        raise ValueError("penalty factors must be positive and finite")
    alpha = float(penalty.alpha)
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    full = np.zeros(p)
    full[data.pen_idx] = factor
    return full * alpha * dispersion, full * (1.0 - alpha) * dispersion, full, alpha


def _loss(family: Family, y, eta) -> float:
    if family.is_gaussian:
        r = y - eta
        return 0.5 * float(r @ r)
    return float(np.sum(np.logaddexp(0.0, eta) - y * eta))


def _objective(family, y, eta, beta, factor, alpha, dispersion) -> float:
    pen = np.sum(factor * (alpha * np.abs(beta) + 0.5 * (1.0 - alpha) * beta**2))
    return _loss(family, y, eta) / dispersion + float(pen)


def _iwls_outer(family, X, y, beta, l1, l2, factor, alpha, tol, max_sweeps, outer_tol,
                max_outer):
    """Quadratic-approximation outer loop with step halving; updates ``beta`` in place."""
    eta = X @ beta
    obj = _objective(family, y, eta, beta, factor, alpha, 1.0)
    for it in range(1, max_outer + 1):
        mu = family.mean(eta)
        w = family.weights(mu)
        z = eta + (y - mu) / w
        new = beta.copy()
        _, inner_ok = solve_enet_wls(X, z, w, new, l1, l2, tol, max_sweeps)
        new_eta = X @ new
        new_obj = _objective(family, y, new_eta, new, factor, alpha, 1.0)
        halvings = 0
        while new_obj > obj + 1e-12 * max(1.0, abs(obj)) and halvings < 30:
            new = 0.5 * (beta + new)
            new_eta = X @ new
            new_obj = _objective(family, y, new_eta, new, factor, alpha, 1.0)
            halvings += 1
        change = float(np.max(np.abs(new_eta - eta)))
        beta[:] = new
        eta, obj = new_eta, new_obj
        if change < outer_tol and inner_ok:
            return it, True
    return max_outer, False


def fit_elastic_net(data: DesignData, family, penalty: ElasticNetPenalty,
                    dispersion: float = 1.0, beta_init=None, tol: float = CD_TOL,
                    max_sweeps: int = MAX_SWEEPS, outer_tol: float = OUTER_TOL,
                    max_outer: int = MAX_OUTER) -> FitResult:
    """Fit the elastic-net penalised GLM.

    Parameters
    ----------
    data : DesignData
    family : Family or str
    penalty : ElasticNetPenalty
        Mixing parameter and penalty factor per penalised column.
    dispersion : float
        Gaussian dispersion ``phi`` dividing the loss; ignored for binomial.
    beta_init : ndarray, optional
        Warm start over all columns.
    """
    family = get_family(family)
    family.check_response(data.y)
    if not family.is_gaussian:
        dispersion = 1.0
    l1, l2, factor, alpha = _column_penalties(data, penalty, dispersion)
    X = np.asfortranarray(data.X)
    y = data.y
    n, p = X.shape
    beta = np.zeros(p) if beta_init is None else np.array(beta_init, dtype=float)

    # CD works on L + phi * penalty; scale its tolerance so it holds after dividing by phi
    cd_tol = tol * min(1.0, dispersion)
    iterations = 0
    kkt = np.inf
    for _ in range(MAX_REFINE):
        if family.is_gaussian:
            sweeps, converged = solve_enet_wls(X, y, np.ones(n), beta, l1, l2, cd_tol, max_sweeps)
            iterations += int(sweeps)
        else:
            its, converged = _iwls_outer(family, X, y, beta, l1, l2, factor, alpha, cd_tol,
                                         max_sweeps, outer_tol, max_outer)
            iterations += its
        kkt = _kkt(data, family, X @ beta, beta, factor, alpha, dispersion)
        if kkt <= tol or not converged:
            break
        # stopping rule met but optimality not certified: tighten and continue warm
        cd_tol *= 0.1
        outer_tol *= 0.1
    # the KKT bound certifies optimality whatever the stopping rule said
    converged = bool(kkt <= tol)
    eta = X @ beta

    objective = _objective(family, y, eta, beta, factor, alpha, dispersion)
    result = FitResult(
        beta_pen=beta[data.pen_idx], beta_unpen=beta[data.unpen_idx], eta_hat=eta,
        objective=objective, kkt_max_violation=kkt,
        n_nonzero=int(np.count_nonzero(beta[data.pen_idx])), converged=converged,
        iterations=iterations,
    )
    if not converged:
        warnings.warn(f"elastic-net fit did not converge (KKT violation {kkt:.3g})",
                      SolverWarning, stacklevel=2)
    return result


def loss_gradient(data: DesignData, family, eta, dispersion: float = 1.0) -> np.ndarray:
    """Gradient of ``L / phi`` with respect to all coefficients."""
    family = get_family(family)
    if not family.is_gaussian:
        dispersion = 1.0
    return -(data.X.T @ (data.y - family.mean(eta))) / dispersion


def kkt_check(data: DesignData, family, penalty: ElasticNetPenalty, result: FitResult,
              dispersion: float = 1.0) -> float:
    """Largest violation of the optimality conditions at ``result``."""
    family = get_family(family)
    if not family.is_gaussian:
        dispersion = 1.0
    beta = result.coef(data)
    full = np.zeros(beta.shape[0])
    full[data.pen_idx] = penalty.penalty_factor
    return _kkt(data, family, data.X @ beta, beta, full, float(penalty.alpha), dispersion)


def _kkt(data, family, eta, beta, full, alpha, dispersion) -> float:
    grad = loss_gradient(data, family, eta, dispersion)
    l1 = full * alpha
    smooth = grad + full * (1.0 - alpha) * beta
    active = beta != 0
    viol = np.where(active, np.abs(smooth + l1 * np.sign(beta)),
                    np.maximum(np.abs(smooth) - l1, 0.0))
    return float(np.max(viol)) if viol.size else 0.0


def null_fit_eta(data: DesignData, family) -> np.ndarray:
    """Linear predictor of the fit with all penalised coefficients at zero."""
    family = get_family(family)
    Xu = data.X_unpen
    y = data.y
    if Xu.shape[1] == 0:
        return np.zeros(data.n)
    if family.is_gaussian:
        coef, *_ = np.linalg.lstsq(Xu, y, rcond=None)
        return Xu @ coef
    coef = np.zeros(Xu.shape[1])
    for _ in range(100):
        eta = Xu @ coef
        mu = family.mean(eta)
        w = family.weights(mu)
        step = np.linalg.solve(Xu.T @ (w[:, None] * Xu), Xu.T @ (y - mu))
        coef = coef + step
        if np.max(np.abs(Xu @ step)) < 1e-10:
            break
    return Xu @ coef


def null_threshold(data: DesignData, family, penalty: ElasticNetPenalty,
                   dispersion: float = 1.0) -> float:
    """Smallest global rescaling of the penalty factors giving all-zero
    penalised coefficients.  Infinite for ``alpha = 0``."""
    if penalty.alpha == 0:
        return np.inf
    eta0 = null_fit_eta(data, family)
    grad = loss_gradient(data, family, eta0, dispersion)[data.pen_idx]
    return float(np.max(np.abs(grad) / (np.asarray(penalty.penalty_factor) * penalty.alpha)))
