"""Elastic-net prior variance and the ridge-to-elastic-net penalty map.

Under the prior ``pi(b) ~ exp(-lam * (alpha |b| + (1 - alpha) b^2 / 2))``
the variance of ``b`` is

    h(lam) = g(z) / (lam (1 - alpha)),    z = alpha sqrt(lam) / sqrt(1 - alpha),

where ``g(z) = E[(Y - z)^2 | Y > z]`` for a standard normal ``Y``.  Writing
the variance through ``g`` avoids the cancellation between the three terms
of the usual closed form, which is severe once ``z`` is large.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np
from scipy import optimize
from scipy.special import erfcx, log_ndtr, ndtri_exp

from .codata import GroupStructure

#: Range of elastic-net penalties obtained by root finding.
LAMBDA_MIN = 1e-6
LAMBDA_MAX = 1e6
_CF_SWITCH = 3.0
_CF_TERMS = 80
_SQRT_2_OVER_PI = np.sqrt(2.0 / np.pi)

TRUNC_NONE = "none"
TRUNC_RIDGE = "ridge_side"
TRUNC_LASSO = "lasso_side"


def mills_ratio(z):
    """Inverse Mills ratio ``phi(z) / (1 - Phi(z))``."""
    z = np.asarray(z, dtype=float)
    return _SQRT_2_OVER_PI / erfcx(z / np.sqrt(2.0))


def _excess_second_moment(z):
    """``g(z) = 1 + z^2 - z R(z)`` for ``z >= 0``, with ``R`` the inverse Mills ratio."""
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    small = z <= _CF_SWITCH
    zs = z[small]
    out[small] = 1.0 + zs * zs - zs * mills_ratio(zs)
    zl = z[~small]
    if zl.size:
        # R(z) - z = 1 / (z + c), c = 2 / (z + 3 / (z + 4 / ...)); then g = c / (z + c)
        t = np.zeros_like(zl)
        for k in range(_CF_TERMS, 1, -1):
            t = k / (zl + t)
        out[~small] = np.where(np.isinf(zl), 0.0, t / (zl + t))
    return out


def _z2_g(z):
    """``z^2 g(z)``, finite for all ``z >= 0`` with limit 2."""
    z = np.asarray(z, dtype=float)
    out = np.full_like(z, 2.0)
    fin = np.isfinite(z)
    out[fin] = z[fin] ** 2 * _excess_second_moment(z[fin])
    return out


def en_prior_variance(lam, alpha: float):
    """Variance of a coefficient under the elastic-net prior.

    Parameters
    ----------
    lam : float or array_like
        Penalty, positive.
    alpha : float
        Mixing parameter in ``[0, 1]``; 0 is ridge, 1 is lasso.
    """
    alpha = float(alpha)
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    lam_arr = np.asarray(lam, dtype=float)
    if np.any(~(lam_arr > 0)):
        raise ValueError("penalty must be positive")
    if alpha == 0.0:
        out = 1.0 / lam_arr
    elif alpha == 1.0:
        out = 2.0 / lam_arr**2
    else:
        lam1 = np.atleast_1d(lam_arr)
        with np.errstate(over="ignore"):
            z = alpha * np.sqrt(lam1) / np.sqrt(1.0 - alpha)
        out = np.where(
            z <= 1.0,
            _excess_second_moment(np.minimum(z, 1.0)) / (lam1 * (1.0 - alpha)),
            _z2_g(z) / (alpha**2 * lam1**2),
        )
        out = out.reshape(lam_arr.shape)
    if np.any(~np.isfinite(out)) or np.any(out <= 0):
        raise FloatingPointError(
            "elastic-net variance is not finite at this penalty; use "
            "en_penalty_from_variance, which truncates extreme penalties")
    return out if np.ndim(out) else float(out)


def en_penalty_from_variance(v: float, alpha: float) -> tuple[float, str]:
    """Invert :func:`en_prior_variance` for a target variance ``v``.

    Returns the penalty and a truncation flag.  For ``0 < alpha < 1`` the
    root is searched on ``[1e-6, 1e6]``.  Variances outside that range are
    mapped with the ridge (``1/v``) or lasso (``sqrt(2/v)``) formula, rescaled
    to meet the root-found curve at the boundary, which keeps the map
    continuous and strictly decreasing.
    """
    v = float(v)
    if not (np.isfinite(v) and v > 0):
        raise ValueError(f"prior variance must be positive and finite, got {v}")
    alpha = float(alpha)
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    if alpha == 0.0:
        return 1.0 / v, TRUNC_NONE
    if alpha == 1.0:
        return float(np.sqrt(2.0 / v)), TRUNC_NONE
    v_at_min = en_prior_variance(LAMBDA_MIN, alpha)
    v_at_max = en_prior_variance(LAMBDA_MAX, alpha)
    if v > v_at_min:
        return LAMBDA_MIN * v_at_min / v, TRUNC_RIDGE
    if v < v_at_max:
        return LAMBDA_MAX * float(np.sqrt(v_at_max / v)), TRUNC_LASSO
    log_v = np.log(v)

    def f(u):
        return np.log(en_prior_variance(np.exp(u), alpha)) - log_v

    lo, hi = np.log(LAMBDA_MIN), np.log(LAMBDA_MAX)
    # v sits on a boundary up to rounding of exp(log(.))
    if f(lo) <= 0:
        return LAMBDA_MIN, TRUNC_NONE
    if f(hi) >= 0:
        return LAMBDA_MAX, TRUNC_NONE
    u = optimize.brentq(f, lo, hi, xtol=1e-14,
                        rtol=4 * np.finfo(float).eps, maxiter=200)
    return float(np.exp(u)), TRUNC_NONE


@dataclass(frozen=True)
class ElasticNetPenalty:
    """Group elastic-net penalties and the per-covariate penalty factors.

    ``penalty_factor[k]`` multiplies ``alpha |b_k| + (1 - alpha) b_k^2 / 2``.
    """

    alpha: float
    lambda_group: np.ndarray
    penalty_factor: np.ndarray
    truncated: tuple

    def rescaled(self, lambda0: float) -> "ElasticNetPenalty":
        """All penalties multiplied by the global factor ``lambda0``."""
        return ElasticNetPenalty(self.alpha, self.lambda_group * lambda0,
                                 self.penalty_factor * lambda0, self.truncated)

    @classmethod
    def uniform(cls, lam: float, p2: int, alpha: float) -> "ElasticNetPenalty":
        return cls(alpha, np.array([float(lam)]), np.full(p2, float(lam)), (TRUNC_NONE,))


def _invert_many(values, alpha):
    lam = np.empty(len(values))
    flags = []
    for i, v in enumerate(values):
        lam[i], flag = en_penalty_from_variance(v, alpha)
        flags.append(flag)
    return lam, flags


def transform_ridge_to_en(state, groups: GroupStructure, alpha) -> ElasticNetPenalty | list:
    """Map ridge group penalties to elastic-net penalties with equal prior variance.

    ``state`` carries ``lambdas`` and ``phi``; the ridge prior variance of
    group ``g`` is ``phi / lambda_g``.  Under overlap, each covariate gets the
    average variance over its groups before inversion.

    Passing a sequence of ``alpha`` values returns one penalty per value.
    """
    if isinstance(alpha, Iterable) and not isinstance(alpha, (str, bytes)):
        return [transform_ridge_to_en(state, groups, a) for a in alpha]
    alpha = float(alpha)
    tau2 = float(state.phi) / np.asarray(state.lambdas, dtype=float)
    if tau2.shape != (groups.n_groups,):
        raise ValueError("ridge state and group structure disagree on the number of groups")
    lam_group, flags = _invert_many(tau2, alpha)
    if groups.overlapping:
        pooled = groups.row_normalized() @ tau2
        uniq, inverse = np.unique(pooled, return_inverse=True)
        lam_uniq, _ = _invert_many(uniq, alpha)
        factor = lam_uniq[inverse.ravel()]
    else:
        factor = lam_group[groups.labels]
    return ElasticNetPenalty(alpha, lam_group, factor, tuple(flags))


def sample_en_prior(lam, alpha: float, size, rng: np.random.Generator) -> np.ndarray:
    """Draw from the elastic-net prior; ``lam`` broadcasts against ``size``."""
    lam = np.broadcast_to(np.asarray(lam, dtype=float), size)
    alpha = float(alpha)
    sign = rng.choice([-1.0, 1.0], size=size)
    if alpha == 0.0:
        return rng.standard_normal(size) / np.sqrt(lam)
    if alpha == 1.0:
        return rng.laplace(0.0, 1.0, size=size) / lam
    # |beta| is N(-alpha/(1-alpha), 1/(lam(1-alpha))) truncated to [0, inf);
    # invert the standard normal tail above z on the log scale
    sd = 1.0 / np.sqrt(lam * (1.0 - alpha))
    z = alpha / (1.0 - alpha) / sd
    log_u = np.log1p(-rng.uniform(size=size))
    x = -ndtri_exp(log_u + log_ndtr(-z))
    mag = sd * np.maximum(x - z, 0.0)
    return sign * mag
