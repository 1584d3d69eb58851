"""GLM families used by the group-ridge and elastic-net fitters.

Only the two canonical-link families needed here are provided: the
Gaussian family with identity link and free dispersion, and the
binomial family with logit link and dispersion fixed at one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

#: Clamp applied to binomial means before forming IWLS weights.
MU_CLAMP = 1e-10

_KINDS = ("gaussian", "binomial")


@dataclass(frozen=True)
class Family:
    """A canonical-link GLM family.

    Parameters
    ----------
    kind : {"gaussian", "binomial"}
        Family name.
    """

    kind: str

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown family {self.kind!r}; expected one of {_KINDS}")

    @property
    def scale_is_free(self) -> bool:
        return self.kind == "gaussian"

    @property
    def is_gaussian(self) -> bool:
        return self.kind == "gaussian"

    def mean(self, eta):
        eta = np.asarray(eta, dtype=float)
        if self.is_gaussian:
            return eta.copy()
        return expit(eta)

    def clamp(self, mu):
        if self.is_gaussian:
            return mu
        return np.clip(mu, MU_CLAMP, 1.0 - MU_CLAMP)

    def variance(self, mu):
        """Variance function V(mu)."""
        if self.is_gaussian:
            return np.ones_like(mu)
        return mu * (1.0 - mu)

    def link_deriv(self, mu):
        """g'(mu)."""
        if self.is_gaussian:
            return np.ones_like(mu)
        return 1.0 / (mu * (1.0 - mu))

    def weights(self, mu):
        """IWLS weights 1 / (V(mu) g'(mu)^2), after clamping mu."""
        if self.is_gaussian:
            return np.ones_like(mu)
        mu = self.clamp(mu)
        return mu * (1.0 - mu)

    def dweights_deta(self, mu):
        """Derivative of the IWLS weight with respect to the linear predictor."""
        if self.is_gaussian:
            return np.zeros_like(mu)
        clamped = (mu <= MU_CLAMP) | (mu >= 1.0 - MU_CLAMP)
        out = mu * (1.0 - mu) * (1.0 - 2.0 * mu)
        out[clamped] = 0.0
        return out

    def loglik(self, y, eta, phi=1.0) -> float:
        """Full log likelihood, including normalising constants."""
        y = np.asarray(y, dtype=float)
        eta = np.asarray(eta, dtype=float)
        if self.is_gaussian:
            n = y.shape[0]
            resid = y - eta
            return float(-0.5 * n * np.log(2 * np.pi * phi) - resid @ resid / (2 * phi))
        return float(np.sum(y * eta - np.logaddexp(0.0, eta)))

    def deviance(self, y, eta) -> float:
        """Unit deviance summed over observations.

        For the Gaussian family this is the residual sum of squares.
        """
        y = np.asarray(y, dtype=float)
        eta = np.asarray(eta, dtype=float)
        if self.is_gaussian:
            resid = y - eta
            return float(resid @ resid)
        # saturated binomial log likelihood is zero for 0/1 responses
        return float(-2.0 * np.sum(y * eta - np.logaddexp(0.0, eta)))

    def check_response(self, y):
        y = np.asarray(y, dtype=float)
        if not np.all(np.isfinite(y)):
            raise ValueError("response contains missing or non-finite values")
        if self.kind == "binomial" and not np.all((y == 0) | (y == 1)):
            raise ValueError("binomial responses must be coded 0/1")


GAUSSIAN = Family("gaussian")
BINOMIAL = Family("binomial")


def get_family(family) -> Family:
    if isinstance(family, Family):
        return family
    if family in ("logistic", "binomial"):
        return BINOMIAL
    return Family(str(family))
