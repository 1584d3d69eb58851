"""Chi-square QQ check of multivariate normality of the induced prior on ``X beta``."""

from __future__ import annotations

import numpy as np
from scipy import linalg
from scipy.stats import chi2

from .transform import ElasticNetPenalty, en_prior_variance, sample_en_prior

CHUNK = 2000


class SingularCovarianceError(ValueError):
    """The implied covariance of the linear predictor is not full rank."""


def implied_covariance(X_pen, penalty: ElasticNetPenalty) -> np.ndarray:
    """``X diag(Var(beta)) X^T`` under independent elastic-net priors."""
    X_pen = np.asarray(X_pen, dtype=float)
    var = en_prior_variance(penalty.penalty_factor, penalty.alpha)
    return (X_pen * var) @ X_pen.T


def mvn_qq_diagnostic(X_pen, groups, penalty: ElasticNetPenalty, draws: int = 10000,
                      seed: int = 0) -> tuple[np.ndarray, float]:
    """Squared Mahalanobis distances of prior draws of ``X beta`` versus chi-square(n).

    Parameters
    ----------
    X_pen : (n, p) array
    groups : GroupStructure or None
        Only used to check that ``penalty`` matches the column count.
    penalty : ElasticNetPenalty
        Per-covariate penalties; ``beta_k`` is drawn from the elastic-net prior
        at ``penalty.penalty_factor[k]``.
    draws : int
        Number of prior draws, at least 1000.

    Returns
    -------
    points : (draws, 2) array
        Theoretical chi-square quantiles at ``(i - 0.5) / draws`` and sorted
        empirical distances.
    correlation : float
        Pearson correlation of the two columns.
    """
    if draws < 1000:
        raise ValueError(f"draws must be at least 1000, got {draws}")
    X_pen = np.asarray(X_pen, dtype=float)
    n, p = X_pen.shape
    lam = np.asarray(penalty.penalty_factor, dtype=float)
    if lam.shape != (p,) or (groups is not None and groups.n_features != p):
        raise ValueError("penalty, groups and X_pen disagree on the number of covariates")
    cov = implied_covariance(X_pen, penalty)
    try:
        L = linalg.cholesky(cov, lower=True)
    except linalg.LinAlgError as exc:
        raise SingularCovarianceError("implied covariance is singular; rank(X) < n") from exc
    if np.linalg.matrix_rank(cov) < n:
        raise SingularCovarianceError("implied covariance is singular; rank(X) < n")

    rng = np.random.default_rng(seed)
    d2 = np.empty(draws)
    for start in range(0, draws, CHUNK):
        m = min(CHUNK, draws - start)
        beta = sample_en_prior(lam[:, None], penalty.alpha, (p, m), rng)
        eta = X_pen @ beta
        u = linalg.solve_triangular(L, eta, lower=True)
        d2[start:start + m] = np.einsum("ij,ij->j", u, u)
    theo = chi2.ppf((np.arange(1, draws + 1) - 0.5) / draws, df=n)
    emp = np.sort(d2)
    return np.column_stack([theo, emp]), float(np.corrcoef(theo, emp)[0, 1])


def balanced_design(n: int, p: int, rng: np.random.Generator) -> np.ndarray:
    """Standard normal columns; no single covariate dominates the linear predictor."""
    return rng.standard_normal((n, p))


def dominated_design(n: int, p: int, rng: np.random.Generator, freq: float = 0.002,
                     weight: float = 10.0) -> np.ndarray:
    """Sparse binary columns plus one heavily weighted binary column.

    Each sample carries only a handful of rare binary features and the first
    column dominates the linear predictor, so no central-limit smoothing
    occurs.  Redrawn until the design has full row rank.
    """
    for _ in range(100):
        X = (rng.uniform(size=(n, p)) < freq).astype(float)
        X[:, 0] = weight * (rng.uniform(size=n) < 0.5)
        if np.linalg.matrix_rank(X) == n:
            return X
    raise RuntimeError("could not draw a full-rank design; increase freq")
