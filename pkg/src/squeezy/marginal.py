"""Laplace-approximated marginal likelihood for group-ridge GLMs.

The minus log marginal likelihood of a group-ridge model with prior
``beta_pen ~ N(0, phi Lambda^-1)`` is approximated by

    -l(eta_hat, phi) + (y - mu)^T eta_hat / (2 phi) + log|I + W^1/2 K W^1/2| / 2,

with ``K = sum_g X_g X_g^T / lambda_g``.  The approximation is exact for the
Gaussian family.  Penalties are optimised on the log scale,
``rho_g = log(lambda_g)``, and the Gaussian dispersion on ``log(phi)``.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import optimize

from .codata import GroupStructure
from .families import Family, get_family
from .glm import DesignData, IwlsState, SampleSpaceRidge, SingularSystemError

logger = logging.getLogger(__name__)

#: Bounds on rho = log(lambda), i.e. lambda in [1e-6, 1e6].
RHO_BOUNDS = (-13.8, 13.8)
NM_FATOL = 1e-6
NM_XATOL = 1e-4
NM_STEP = 1.0
NM_ADAPTIVE = True
#: Lower bound on the Gaussian dispersion relative to var(y).  The marginal
#: likelihood can decrease monotonically towards the noise-free limit when
#: p > n; the floor keeps the optimum at a finite, well-conditioned point.
PHI_FLOOR = 1e-4


class NotConvergedError(RuntimeError):
    """The inner IWLS fit did not converge; carries the last iterate."""

    def __init__(self, message, iwls: IwlsState):
        super().__init__(message)
        self.iwls = iwls


class ConvergenceWarning(UserWarning):
    pass


@dataclass(frozen=True)
class RidgePenaltyState:
    """Log group penalties and dispersion."""

    rho: np.ndarray
    phi: float = 1.0

    def __post_init__(self):
        rho = np.atleast_1d(np.asarray(self.rho, dtype=float)).copy()
        rho.setflags(write=False)
        object.__setattr__(self, "rho", rho)
        if not (np.isfinite(self.phi) and self.phi > 0):
            raise ValueError(f"dispersion must be positive, got {self.phi}")
        object.__setattr__(self, "phi", float(self.phi))

    @classmethod
    def from_lambdas(cls, lambdas, phi: float = 1.0) -> "RidgePenaltyState":
        return cls(np.log(np.asarray(lambdas, dtype=float)), phi)

    @property
    def lambdas(self) -> np.ndarray:
        return np.exp(self.rho)

    @property
    def prior_variances(self) -> np.ndarray:
        """``phi / lambda_g``."""
        return self.phi / self.lambdas


@dataclass(frozen=True)
class MmlEvaluation:
    """Value of the approximate minus log marginal likelihood and its parts.

    ``neg_log_ml = -loglik_term + quad_term + logdet_term`` where
    ``logdet_term = -log|I - W H_pen| / 2``.
    """

    neg_log_ml: float
    loglik_term: float
    quad_term: float
    logdet_term: float
    eta_hat: np.ndarray
    iwls: IwlsState
    grad_rho: np.ndarray | None = None
    grad_phi: float | None = None
    grad_parts: dict | None = field(default=None, repr=False)


class MarginalLikelihood:
    """Approximate marginal likelihood of one data set under group-ridge priors.

    Parameters
    ----------
    data : DesignData
    family : Family or str
    groups : GroupStructure
    """

    def __init__(self, data: DesignData, family, groups: GroupStructure, grams=None):
        self.family = get_family(family)
        self.family.check_response(data.y)
        self.data = data
        self.groups = groups
        self.ridge = SampleSpaceRidge(data, groups, grams=grams)

    @property
    def n_groups(self) -> int:
        return self.groups.n_groups

    def _fit(self, lambdas) -> IwlsState:
        fit = self.ridge.fit(self.family, lambdas)
        if not fit.converged:
            raise NotConvergedError(
                f"IWLS did not converge after {fit.iterations} iterations "
                f"(last change {fit.max_change:.3g})", fit)
        return fit

    def profile_phi(self, fit: IwlsState) -> float:
        """Gaussian dispersion maximising the marginal likelihood for fixed penalties."""
        y = self.data.y
        return max(float((y - fit.eta_hat) @ y) / y.shape[0], 1e-300)

    def evaluate(self, state: RidgePenaltyState, gradient: bool = False) -> MmlEvaluation:
        lambdas = state.lambdas
        if lambdas.shape != (self.n_groups,):
            raise ValueError(f"expected {self.n_groups} penalties, got {lambdas.shape[0]}")
        fit = self._fit(lambdas)
        return self._evaluate_at(fit, lambdas, state.phi if self.family.scale_is_free else 1.0,
                                 gradient)

    def _evaluate_at(self, fit: IwlsState, lambdas, phi, gradient) -> MmlEvaluation:
        fam = self.family
        y = self.data.y
        eta, mu = fit.eta_hat, fit.mu
        sysm = self.ridge.system(lambdas, fit.W_diag)
        resid = y - mu
        loglik = fam.loglik(y, eta, phi)
        quad = float(resid @ eta) / (2 * phi)
        logdet = 0.5 * sysm.logdet
        value = -loglik + quad + logdet
        if not np.isfinite(value):
            raise FloatingPointError("non-finite marginal likelihood value")
        if not gradient:
            return MmlEvaluation(value, loglik, quad, logdet, eta, fit)

        grams = self.ridge.grams
        # group contributions H_g^T (y - mu + W eta_hat) to eta_hat, one per column
        E = np.tensordot(grams, fit.dual, axes=([2], [0])).T / lambdas[None, :]
        D = sysm.i_minus_hw(E)  # -d eta_hat / d rho_g
        score = resid / (fam.variance(mu) * fam.link_deriv(mu))
        dmu_deta = 1.0 / fam.link_deriv(mu)
        t_lik = score @ D / phi
        t_quad = -((resid - dmu_deta * eta) @ D) / (2 * phi)
        Sinv = sysm.sigma_inv_matrix()
        if fam.is_gaussian:
            t_w = np.zeros(self.n_groups)
        else:
            h_pen_diag = np.einsum("ij,ij->i", sysm.K, Sinv) / sysm.w
            dW = -fam.dweights_deta(mu)[:, None] * D
            t_w = 0.5 * (h_pen_diag @ dW)
        t_det = -0.5 * np.einsum("gij,ij->g", grams, Sinv) / lambdas
        grad_rho = t_lik + t_quad + t_w + t_det
        if fam.scale_is_free:
            n = y.shape[0]
            grad_phi = n / (2 * phi) - float(resid @ resid) / (2 * phi**2) \
                - float(resid @ eta) / (2 * phi**2)
        else:
            grad_phi = 0.0
        parts = {"likelihood": t_lik, "quadratic": t_quad, "weights": t_w, "logdet": t_det}
        return MmlEvaluation(value, loglik, quad, logdet, eta, fit, grad_rho, grad_phi, parts)

    def profiled(self, lambdas) -> tuple[float, float]:
        """Value with the Gaussian dispersion profiled out; returns (value, phi)."""
        fit = self._fit(np.asarray(lambdas, dtype=float))
        phi = self.profile_phi(fit) if self.family.scale_is_free else 1.0
        return self._evaluate_at(fit, np.asarray(lambdas, dtype=float), phi, False).neg_log_ml, phi

    def initial_state(self, n_grid: int = 10) -> RidgePenaltyState:
        """Common penalty from a coarse log grid refined by golden-section search."""
        G = self.n_groups

        def f(r):
            try:
                return self.profiled(np.full(G, np.exp(r)))[0]
            except (NotConvergedError, SingularSystemError, FloatingPointError):
                return np.inf

        grid = np.linspace(*RHO_BOUNDS, n_grid)
        vals = np.array([f(r) for r in grid])
        if not np.any(np.isfinite(vals)):
            raise FloatingPointError("marginal likelihood non-finite on the whole initial grid")
        i = int(np.argmin(vals))
        if 0 < i < n_grid - 1:
            res = optimize.minimize_scalar(f, bracket=(grid[i - 1], grid[i], grid[i + 1]),
                                           method="golden", tol=1e-6)
            best = float(np.clip(res.x, *RHO_BOUNDS)) if res.fun <= vals[i] else grid[i]
        else:
            lo, hi = (grid[0], grid[1]) if i == 0 else (grid[-2], grid[-1])
            res = optimize.minimize_scalar(f, bounds=(lo, hi), method="bounded",
                                           options={"xatol": 1e-6})
            best = float(res.x) if res.fun <= vals[i] else grid[i]
        phi = self.profiled(np.full(G, np.exp(best)))[1]
        return RidgePenaltyState(np.full(G, best), phi)


@dataclass(frozen=True)
class OptimizationResult:
    """Outcome of :func:`optimize_penalties`."""

    state: RidgePenaltyState
    neg_log_ml: float
    converged: bool
    method: str
    n_evaluations: int
    n_iterations: int
    grad_norm: float
    simplex_diameter: float
    initial: RidgePenaltyState
    history: tuple = ()
    message: str = ""


def _pack(state: RidgePenaltyState, free_phi: bool) -> np.ndarray:
    return np.r_[state.rho, np.log(state.phi)] if free_phi else state.rho.copy()


def _unpack(x, G: int, free_phi: bool) -> RidgePenaltyState:
    return RidgePenaltyState(x[:G], float(np.exp(x[G])) if free_phi else 1.0)


def optimize_penalties(data: DesignData, family, groups: GroupStructure,
                       init: RidgePenaltyState | None = None, method: str = "nelder_mead",
                       max_evaluations: int | None = None,
                       mml: MarginalLikelihood | None = None) -> OptimizationResult:
    """Maximise the approximate marginal likelihood over group penalties.

    Parameters
    ----------
    method : {"nelder_mead", "gradient"}
        Derivative-free simplex search, or bounded L-BFGS using the analytic
        gradient.
    max_evaluations : int, optional
        Defaults to ``500 * (G + 1)``.
    mml : MarginalLikelihood, optional
        Reuse precomputed Gram matrices.

    Returns
    -------
    OptimizationResult
        The returned state never has a larger objective than ``init``.
    """
    mml = mml or MarginalLikelihood(data, family, groups)
    fam = mml.family
    G = mml.n_groups
    free_phi = fam.scale_is_free
    if init is None:
        init = mml.initial_state()
    elif not free_phi:
        init = replace(init, phi=1.0)
    x0 = _pack(init, free_phi)
    x0[:G] = np.clip(x0[:G], *RHO_BOUNDS)
    dim = x0.size
    max_evaluations = max_evaluations or 500 * (G + 1)
    lower = np.r_[np.full(G, RHO_BOUNDS[0]), np.full(dim - G, -np.inf)]
    upper = np.r_[np.full(G, RHO_BOUNDS[1]), np.full(dim - G, np.inf)]
    if free_phi:
        lower[G] = np.log(PHI_FLOOR * max(float(np.var(data.y)), np.finfo(float).tiny))
        x0[G] = max(x0[G], lower[G])

    cache: dict[bytes, float] = {}
    best = {"f": np.inf, "x": x0.copy()}
    n_eval = [0]

    def record(x, f):
        cache[np.asarray(x).tobytes()] = f
        if f < best["f"]:
            best["f"], best["x"] = f, np.array(x, dtype=float)

    def objective(x):
        n_eval[0] += 1
        try:
            f = mml.evaluate(_unpack(x, G, free_phi)).neg_log_ml
        except (NotConvergedError, SingularSystemError, FloatingPointError) as exc:
            logger.debug("evaluation failed at %s: %s", x, exc)
            f = np.inf
        record(x, f)
        return f

    def objective_and_grad(x):
        n_eval[0] += 1
        try:
            ev = mml.evaluate(_unpack(x, G, free_phi), gradient=True)
        except (NotConvergedError, SingularSystemError, FloatingPointError) as exc:
            logger.debug("evaluation failed at %s: %s", x, exc)
            record(x, np.inf)
            return np.inf, np.zeros_like(x)
        record(x, ev.neg_log_ml)
        g = ev.grad_rho
        if free_phi:
            g = np.r_[g, ev.grad_phi * np.exp(x[G])]
        return ev.neg_log_ml, g

    history: list[float] = []

    def callback(xk, *args):
        history.append(min(cache.get(np.asarray(xk).tobytes(), np.inf), best["f"]))

    f0 = objective(x0)
    history.append(f0)
    grad_norm = np.nan
    diameter = np.nan
    if method in ("nelder_mead", "nm"):
        simplex = np.tile(x0, (dim + 1, 1))
        for i in range(dim):
            step = NM_STEP if x0[i] + NM_STEP <= upper[i] else -NM_STEP
            simplex[i + 1, i] += step
        res = optimize.minimize(
            objective, x0, method="Nelder-Mead", bounds=optimize.Bounds(lower, upper),
            callback=callback,
            options={"initial_simplex": simplex, "fatol": NM_FATOL, "xatol": NM_XATOL,
                     "adaptive": NM_ADAPTIVE,
                     "maxfev": max_evaluations, "maxiter": max_evaluations},
        )
        sim = res.final_simplex[0]
        diameter = float(max(np.linalg.norm(a - b) for a in sim for b in sim))
        method = "nelder_mead"
    elif method in ("gradient", "grad"):
        bounds = list(zip(lower, upper))
        bounds = [(lo if np.isfinite(lo) else None, hi if np.isfinite(hi) else None)
                  for lo, hi in bounds]
        res = optimize.minimize(objective_and_grad, x0, jac=True, method="L-BFGS-B",
                                bounds=bounds, callback=callback,
                                options={"maxfun": max_evaluations, "ftol": 1e-12,
                                         "gtol": 1e-6})
        method = "gradient"
    else:
        raise ValueError(f"unknown optimiser {method!r}")

    if not np.isfinite(best["f"]):
        raise FloatingPointError("all marginal likelihood evaluations were non-finite")
    x_best = best["x"]
    state = _unpack(x_best, G, free_phi)
    try:
        ev = mml.evaluate(state, gradient=True)
        g = ev.grad_rho
        # projected gradient: drop components pushing against an active bound
        at_lo = x_best[:G] <= RHO_BOUNDS[0] + 1e-9
        at_hi = x_best[:G] >= RHO_BOUNDS[1] - 1e-9
        g = np.where((at_lo & (g > 0)) | (at_hi & (g < 0)), 0.0, g)
        if free_phi:
            g_phi = ev.grad_phi * state.phi
            if x_best[G] <= lower[G] + 1e-9 and g_phi > 0:
                g_phi = 0.0
            g = np.r_[g, g_phi]
        grad_norm = float(np.linalg.norm(g))
    except (NotConvergedError, SingularSystemError, FloatingPointError):
        pass
    converged = bool(res.success)
    if not converged:
        warnings.warn(f"penalty optimisation stopped early: {res.message}",
                      ConvergenceWarning, stacklevel=2)
    return OptimizationResult(
        state=state, neg_log_ml=float(best["f"]), converged=converged, method=method,
        n_evaluations=n_eval[0], n_iterations=int(getattr(res, "nit", 0)),
        grad_norm=grad_norm, simplex_diameter=diameter, initial=init,
        history=tuple(history), message=str(res.message),
    )


def neg_log_marginal(data: DesignData, family, groups: GroupStructure,
                     state: RidgePenaltyState) -> MmlEvaluation:
    """Approximate minus log marginal likelihood at ``state``."""
    return MarginalLikelihood(data, family, groups).evaluate(state)


def grad_neg_log_marginal(data: DesignData, family, groups: GroupStructure,
                          state: RidgePenaltyState) -> tuple[np.ndarray, float]:
    """Gradient with respect to ``rho`` and to ``phi`` (not ``log phi``)."""
    ev = MarginalLikelihood(data, family, groups).evaluate(state, gradient=True)
    return ev.grad_rho, ev.grad_phi
