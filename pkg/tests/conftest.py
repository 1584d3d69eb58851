import warnings

import numpy as np
import pytest
from scipy import linalg

from squeezy.codata import GroupStructure
from squeezy.glm import DesignData


def random_groups(rng, p, G):
    """Non-overlapping groups with every group non-empty."""
    labels = np.r_[np.arange(G), rng.integers(0, G, size=p - G)]
    rng.shuffle(labels)
    return GroupStructure.from_labels(labels, names=list(range(G)))


def random_instance(rng, n, p, G, family="gaussian", intercept=False, n_unpen=0,
                    signal=0.3):
    X = rng.standard_normal((n, p))
    beta = rng.standard_normal(p) * signal
    eta = X @ beta
    if family == "gaussian":
        y = eta + rng.standard_normal(n)
    else:
        y = (rng.uniform(size=n) < 1 / (1 + np.exp(-eta))).astype(float)
        if y.min() == y.max():
            y[0] = 1 - y[0]
    unpen = list(range(n_unpen))
    data = DesignData.from_arrays(y, X, unpen_idx=unpen, intercept=intercept)
    groups = random_groups(rng, data.pen_idx.size, G)
    return data, groups


def dense_penalty_matrix(data, groups, lambdas):
    """Full p x p diagonal penalty, zero on unpenalised columns."""
    p = data.X.shape[1]
    lam = np.zeros(p)
    lam[data.pen_idx] = groups.row_normalized() @ (1 / np.asarray(lambdas))
    lam[data.pen_idx] = 1 / lam[data.pen_idx]
    return np.diag(lam)


def dense_hat(data, groups, lambdas, w):
    """X (X^T W X + Lambda)^-1 X^T computed in p dimensions."""
    X = data.X
    A = X.T @ (w[:, None] * X) + dense_penalty_matrix(data, groups, lambdas)
    return X @ linalg.solve(A, X.T)


def gaussian_nlml(data, groups, lambdas, phi):
    """-log N(y; X_u b, phi (I + sum_g X_g X_g^T / lambda_g)) with a flat prior
    on unpenalised coefficients, for instances without unpenalised columns."""
    from scipy.stats import multivariate_normal

    Xp = data.X_pen
    Zn = groups.row_normalized()
    cov = np.eye(data.n) + (Xp * (Zn @ (1 / np.asarray(lambdas)))) @ Xp.T
    return -multivariate_normal(np.zeros(data.n), phi * cov).logpdf(data.y)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(autouse=True)
def _strict_warnings():
    with warnings.catch_warnings():
        warnings.simplefilter("error", RuntimeWarning)
        yield


def en_variance_oracle(lam, alpha, dps=30):
    """Variance of the density proportional to exp(-lam (alpha|b| + (1-alpha) b^2/2))
    by adaptive quadrature on the half line."""
    import mpmath as mp

    with mp.workdps(dps):
        lam, alpha = mp.mpf(lam), mp.mpf(alpha)
        scale = 1 / max(mp.sqrt(lam * (1 - alpha)), lam * alpha)
        pts = [0, scale, 4 * scale, 16 * scale, 64 * scale, mp.inf]

        def dens(b):
            return mp.exp(-lam * (alpha * b + (1 - alpha) * b * b / 2))

        m0 = mp.quad(dens, pts)
        m2 = mp.quad(lambda b: b * b * dens(b), pts)
        return float(m2 / m0)


def prox_grad_oracle(X, y, l1, l2, family="binomial", iters=200_000, tol=1e-15):
    """Accelerated proximal gradient with adaptive restart for
    L(beta) + sum(l1 |beta| + l2 beta^2 / 2), L the negative log-likelihood."""
    n, p = X.shape
    if family == "binomial":
        lip = np.linalg.norm(X, 2) ** 2 / 4

        def grad(b):
            eta = X @ b
            return X.T @ (1 / (1 + np.exp(-eta)) - y)

        def loss(b):
            eta = X @ b
            return np.sum(np.logaddexp(0, eta) - y * eta)
    else:
        lip = np.linalg.norm(X, 2) ** 2

        def grad(b):
            return X.T @ (X @ b - y)

        def loss(b):
            r = y - X @ b
            return 0.5 * r @ r

    def obj(b):
        return loss(b) + np.sum(l1 * np.abs(b) + 0.5 * l2 * b * b)

    step = 1 / (lip + np.max(l2))
    b = np.zeros(p)
    v = b.copy()
    t = 1.0
    f_old = obj(b)
    for _ in range(iters):
        u = v - step * (grad(v) + l2 * v)
        new = np.sign(u) * np.maximum(np.abs(u) - step * l1, 0)
        f_new = obj(new)
        if f_new > f_old:
            if t == 1.0:  # a plain proximal step no longer decreases
                break
            t, v = 1.0, b.copy()
            continue
        t_next = (1 + np.sqrt(1 + 4 * t * t)) / 2
        v = new + (t - 1) / t_next * (new - b)
        if np.max(np.abs(new - b)) < tol:
            b = new
            break
        b, t, f_old = new, t_next, f_new
    return b, obj(b)
