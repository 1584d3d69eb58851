"""Cross-validated global rescaling of fixed relative penalty factors."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .enet import fit_elastic_net, null_threshold
from .families import get_family
from .glm import DesignData
from .transform import ElasticNetPenalty

N_GRID = 40
GRID_SPAN = 1e-4
RIDGE_GRID = (1e-3, 1e3)
#: CV losses within this relative distance of the minimum count as tied
TIE_RTOL = 1e-10


@dataclass(frozen=True)
class CvPlan:
    """Fold assignment and rescaling grid.

    ``lambda0_grid`` of ``None`` requests the default grid.
    """

    folds: np.ndarray
    lambda0_grid: np.ndarray | None = None
    loss: str = "deviance"

    @property
    def n_folds(self) -> int:
        return int(np.max(self.folds)) + 1


@dataclass(frozen=True)
class CvCurve:
    lambda0: np.ndarray
    mean_deviance: np.ndarray
    se_deviance: np.ndarray
    fold_deviance: np.ndarray


def make_folds(y, family, n_folds: int = 10, seed: int = 0) -> np.ndarray:
    """Random fold labels; class-stratified for the binomial family."""
    family = get_family(family)
    y = np.asarray(y)
    n = y.shape[0]
    if not 2 <= n_folds <= n:
        raise ValueError(f"need 2 <= n_folds <= n, got {n_folds} folds for {n} samples")
    rng = np.random.default_rng(seed)
    folds = np.empty(n, dtype=int)
    if family.is_gaussian:
        folds[rng.permutation(n)] = np.arange(n) % n_folds
        return folds
    offset = 0
    for cls in (0, 1):
        idx = np.flatnonzero(y == cls)
        folds[rng.permutation(idx)] = (np.arange(idx.size) + offset) % n_folds
        offset += idx.size
    return folds


def make_plan(data: DesignData, family, n_folds: int = 10, seed: int = 0,
              lambda0_grid=None) -> CvPlan:
    return CvPlan(make_folds(data.y, family, n_folds, seed),
                  None if lambda0_grid is None else np.asarray(lambda0_grid, dtype=float))


def default_grid(data: DesignData, family, penalty: ElasticNetPenalty,
                 dispersion: float = 1.0) -> np.ndarray:
    """40 log-spaced rescalings down from the all-zero threshold."""
    if penalty.alpha == 0:
        return np.geomspace(RIDGE_GRID[1], RIDGE_GRID[0], N_GRID)
    top = null_threshold(data, family, penalty, dispersion)
    return np.geomspace(top, top * GRID_SPAN, N_GRID)


def _check_folds(data: DesignData, family, folds):
    if folds.shape != (data.n,):
        raise ValueError("fold assignment must have one entry per sample")
    if get_family(family).is_gaussian:
        return
    for k in np.unique(folds):
        train = data.y[folds != k]
        if np.unique(train).size < 2:
            raise ValueError(f"training set of fold {k} contains a single class")


def cv_path(data: DesignData, family, penalties, folds, dispersion: float = 1.0) -> np.ndarray:
    """Out-of-fold deviance for a path of penalties, shape (n_folds, len(penalties)).

    The path is traversed in the given order with warm starts within a fold.
    """
    family = get_family(family)
    fold_ids = np.unique(folds)
    out = np.empty((fold_ids.size, len(penalties)))
    for i, k in enumerate(fold_ids):
        test = folds == k
        train_data = data.subset(~test)
        test_data = data.subset(test)
        beta = None
        for j, pen in enumerate(penalties):
            fit = fit_elastic_net(train_data, family, pen, dispersion=dispersion,
                                  beta_init=beta)
            beta = fit.coef(train_data)
            out[i, j] = family.deviance(test_data.y, fit.predict(test_data))
    return out


def recalibrate_lambda0(data: DesignData, family, penalty: ElasticNetPenalty, plan: CvPlan,
                        dispersion: float = 1.0) -> tuple[float, CvCurve]:
    """Choose ``lambda0`` minimising the cross-validated deviance of ``lambda0 * penalty``.

    Losses within ``TIE_RTOL`` (relative) of the minimum are ties; ties go to
    the larger ``lambda0``.  Returns ``(lambda0, curve)``.
    """
    if plan.loss != "deviance":
        raise ValueError(f"unsupported loss {plan.loss!r}")
    folds = np.asarray(plan.folds)
    _check_folds(data, family, folds)
    grid = plan.lambda0_grid
    if grid is None:
        grid = default_grid(data, family, penalty, dispersion)
    grid = np.asarray(grid, dtype=float)
    if np.any(~(grid > 0)):
        raise ValueError("rescaling grid must be positive")
    order = np.argsort(-grid, kind="stable")
    path = [penalty.rescaled(grid[j]) for j in order]
    dev = np.empty((np.unique(folds).size, grid.size))
    dev[:, order] = cv_path(data, family, path, folds, dispersion)
    total = dev.sum(axis=0) / data.n
    fold_sizes = np.bincount(folds)[np.unique(folds)]
    per_sample = dev / fold_sizes[:, None]
    se = per_sample.std(axis=0, ddof=1) / np.sqrt(per_sample.shape[0]) \
        if per_sample.shape[0] > 1 else np.zeros(grid.size)
    best = total.min()
    # tie-break towards more regularisation
    lambda0 = float(grid[total <= best + TIE_RTOL * abs(best)].max())
    return lambda0, CvCurve(grid, total, se, dev)
