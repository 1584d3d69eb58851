"""Model-based simulation data with block-correlated covariates and group-wise
Laplace coefficients."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import expit

from .codata import GroupStructure
from .glm import DesignData

#: Prior variances per group for p = 1200; scaled by 1200 / p.
SETTINGS = {
    "none": (0.1, 0.1, 0.1, 0.1, 0.1),
    "weak": (0.141, 0.161, 0.186, 0.336, 0.536),
    "informative": (0.01, 0.05, 0.1, 0.4, 0.8),
}


def setting_variances(name: str, p: int, n_groups: int = 5) -> tuple:
    """Group variances for a named setting, scaled to ``p`` covariates.

    For ``n_groups != 5`` the five-level profile is interpolated linearly
    over the group index.
    """
    base = np.asarray(SETTINGS[name], dtype=float)
    if n_groups != base.size:
        base = np.interp(np.linspace(0, base.size - 1, n_groups), np.arange(base.size), base)
    return tuple(float(v) for v in base * 1200.0 / p)


@dataclass(frozen=True)
class SimSettings:
    n: int = 150
    p: int = 600
    G: int = 5
    rho: float = 0.2
    sigma2: float = 2.0
    group_variances: tuple = field(default_factory=lambda: setting_variances("informative", 600))
    alpha_fit: float = 0.3
    seed: int = 0
    n_blocks: int = 10
    n_test: int | None = None
    family: str = "gaussian"

    def __post_init__(self):
        if self.p % self.n_blocks or self.p % self.G:
            raise ValueError(f"p={self.p} must be divisible by n_blocks={self.n_blocks} "
                             f"and G={self.G}")
        if len(self.group_variances) != self.G:
            raise ValueError("need one variance per group")
        if any(v <= 0 for v in self.group_variances):
            raise ValueError("group variances must be positive")
        if not 0 <= self.rho < 1:
            raise ValueError("rho must lie in [0, 1)")

    @classmethod
    def named(cls, setting: str, **kw) -> "SimSettings":
        p = kw.get("p", 600)
        G = kw.get("G", 5)
        return cls(group_variances=setting_variances(setting, p, G), **kw)

    def with_seed(self, seed: int) -> "SimSettings":
        return replace(self, seed=int(seed))

    def group_labels(self) -> np.ndarray:
        return np.repeat(np.arange(self.G), self.p // self.G)

    def groups(self) -> GroupStructure:
        return GroupStructure.from_labels(self.group_labels(), names=list(range(self.G)))

    def single_group(self) -> GroupStructure:
        return GroupStructure.single(self.p)


def simulate_covariates(n: int, p: int, rho: float, n_blocks: int,
                        rng: np.random.Generator) -> np.ndarray:
    """Rows with block covariance ``I + rho^2 / (1 - rho)^2 * 1 1^T``."""
    size = p // n_blocks
    shared = rng.standard_normal((n, n_blocks)) * (rho / (1.0 - rho))
    return rng.standard_normal((n, p)) + np.repeat(shared, size, axis=1)


def simulate_coefficients(settings: SimSettings, rng: np.random.Generator) -> np.ndarray:
    """Laplace coefficients with scale ``b = sqrt(v / 2)`` per group."""
    scale = np.sqrt(np.asarray(settings.group_variances) / 2.0)
    return rng.laplace(0.0, scale[settings.group_labels()])


def _response(settings, eta, rng):
    if settings.family == "gaussian":
        return eta + rng.standard_normal(eta.shape[0]) * np.sqrt(settings.sigma2)
    return (rng.uniform(size=eta.shape[0]) < expit(eta)).astype(float)


def simulate_dataset(settings: SimSettings) -> tuple[DesignData, DesignData, np.ndarray]:
    """Training set, independent test set and true coefficients.

    The test set has ``n_test`` samples (default: as many as training).
    """
    rng = np.random.default_rng(settings.seed)
    beta = simulate_coefficients(settings, rng)
    n_test = settings.n_test or settings.n
    names = [f"x{j}" for j in range(settings.p)]
    out = []
    for n in (settings.n, n_test):
        X = simulate_covariates(n, settings.p, settings.rho, settings.n_blocks, rng)
        y = _response(settings, X @ beta, rng)
        out.append(DesignData.from_arrays(y, X, feature_names=names))
    return out[0], out[1], beta
