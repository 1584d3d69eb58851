"""Group co-data: membership, overlap expansion and prior-variance pooling.

Groups are defined over the penalised covariates only.  A covariate that
belongs to ``I_k`` groups is represented in the expanded design by ``I_k``
copies of its column, each scaled by ``1/sqrt(I_k)``, which turns an
overlapping structure into a non-overlapping one without changing the
linear predictor.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

#: Pairwise overlap fraction above which a warning is emitted.
GRAM_CHUNK = 1024
OVERLAP_WARN_FRACTION = 0.8


class OverlapWarning(UserWarning):
    pass


@dataclass(frozen=True)
class GroupStructure:
    """Membership of the penalised covariates in ``G`` groups.

    Parameters
    ----------
    Z : ndarray of shape (p2, G)
        0/1 membership matrix.
    names : tuple of str, optional
        Group labels, in column order of ``Z``.
    """

    Z: np.ndarray
    names: tuple = field(default=())

    def __post_init__(self):
        Z = np.asarray(self.Z)
        if Z.ndim != 2:
            raise ValueError("membership matrix must be 2-dimensional")
        if not np.all((Z == 0) | (Z == 1)):
            raise ValueError("membership matrix must be 0/1")
        Z = Z.astype(float)
        Z.setflags(write=False)
        object.__setattr__(self, "Z", Z)
        if not self.names:
            object.__setattr__(self, "names", tuple(str(g) for g in range(Z.shape[1])))
        elif len(self.names) != Z.shape[1]:
            raise ValueError("number of group names does not match membership columns")
        missing = np.flatnonzero(self.multiplicity == 0)
        if missing.size:
            raise ValueError(
                f"penalised covariates {missing[:10].tolist()} belong to no group"
            )
        empty = np.flatnonzero(Z.sum(axis=0) == 0)
        if empty.size:
            raise ValueError(f"groups {[self.names[g] for g in empty]} are empty")
        self._warn_high_overlap()

    @classmethod
    def from_labels(cls, labels: Sequence, names: Sequence | None = None) -> "GroupStructure":
        """Non-overlapping groups from one label per covariate."""
        labels = np.asarray(labels)
        if names is None:
            names = list(dict.fromkeys(labels.tolist()))
        index = {name: g for g, name in enumerate(names)}
        Z = np.zeros((labels.shape[0], len(names)))
        for k, lab in enumerate(labels.tolist()):
            Z[k, index[lab]] = 1.0
        return cls(Z, tuple(str(n) for n in names))

    @classmethod
    def from_members(cls, members: Sequence[Sequence[int]], p2: int,
                     names: Sequence | None = None) -> "GroupStructure":
        """Possibly overlapping groups from per-group index lists."""
        Z = np.zeros((p2, len(members)))
        for g, idx in enumerate(members):
            Z[np.asarray(idx, dtype=int), g] = 1.0
        return cls(Z, tuple(str(n) for n in names) if names is not None else ())

    @classmethod
    def single(cls, p2: int) -> "GroupStructure":
        return cls(np.ones((p2, 1)), ("all",))

    @property
    def n_groups(self) -> int:
        return self.Z.shape[1]

    @property
    def n_features(self) -> int:
        return self.Z.shape[0]

    @property
    def multiplicity(self) -> np.ndarray:
        """Number of groups each covariate belongs to."""
        return self.Z.sum(axis=1)

    @property
    def overlapping(self) -> bool:
        return bool(np.any(self.multiplicity > 1))

    @property
    def members(self) -> list[np.ndarray]:
        return [np.flatnonzero(self.Z[:, g]) for g in range(self.n_groups)]

    @property
    def labels(self) -> np.ndarray:
        """Group index per covariate; only defined without overlap."""
        if self.overlapping:
            raise ValueError("covariates have no unique group under overlap")
        return np.argmax(self.Z, axis=1)

    def row_normalized(self) -> np.ndarray:
        """Membership weights ``1/I_k`` so that rows sum to one."""
        return self.Z / self.multiplicity[:, None]

    def permuted(self, perm) -> "GroupStructure":
        return GroupStructure(self.Z[np.asarray(perm)], self.names)

    def _warn_high_overlap(self):
        if not self.overlapping:
            return
        sizes = self.Z.sum(axis=0)
        shared = self.Z.T @ self.Z
        frac = shared / np.minimum.outer(sizes, sizes)
        np.fill_diagonal(frac, 0.0)
        if np.any(frac > OVERLAP_WARN_FRACTION):
            g, h = np.unravel_index(np.argmax(frac), frac.shape)
            warnings.warn(
                f"groups {self.names[g]!r} and {self.names[h]!r} share "
                f"{frac[g, h]:.0%} of their covariates; highly overlapping groups "
                "give highly correlated group penalties",
                OverlapWarning,
                stacklevel=3,
            )


@dataclass(frozen=True)
class ExpandedDesign:
    """Duplicated and rescaled design for overlapping groups.

    ``X_bar_prime[:, j]`` equals ``X[:, feature[j]] * scale[j]`` and belongs
    to group ``group[j]``.
    """

    X_bar_prime: np.ndarray
    feature: np.ndarray
    group: np.ndarray
    scale: np.ndarray
    n_features: int

    @property
    def back_map(self) -> np.ndarray:
        """Array of shape (p_bar, 2) with (original covariate, group) per column."""
        return np.column_stack([self.feature, self.group])

    def pool_coefficients(self, beta_bar_prime) -> np.ndarray:
        """Original coefficients whose linear predictor equals that of the copies."""
        beta_bar_prime = np.asarray(beta_bar_prime, dtype=float)
        return np.bincount(self.feature, weights=self.scale * beta_bar_prime,
                           minlength=self.n_features)

    def pooled_variance(self, tau2) -> np.ndarray:
        """Prior variance of each original covariate when the copy in group
        ``g`` has prior variance ``tau2[g]``."""
        tau2 = np.asarray(tau2, dtype=float)
        return np.bincount(self.feature, weights=self.scale**2 * tau2[self.group],
                           minlength=self.n_features)


def _expanded_index(groups: GroupStructure):
    feature, group = np.nonzero(groups.Z)
    order = np.lexsort((feature, group))
    feature, group = feature[order], group[order]
    scale = 1.0 / np.sqrt(groups.multiplicity[feature])
    return feature, group, scale


def expand_overlapping(X_pen, groups: GroupStructure) -> ExpandedDesign:
    """Build the non-overlapping expanded design.

    Columns are ordered by group, and within a group by original covariate.
    """
    X_pen = np.asarray(X_pen, dtype=float)
    if X_pen.shape[1] != groups.n_features:
        raise ValueError("design and group structure disagree on the number of covariates")
    feature, group, scale = _expanded_index(groups)
    Xb = X_pen[:, feature] * scale
    return ExpandedDesign(Xb, feature, group, scale, groups.n_features)


def iter_group_grams(X_pen, groups: GroupStructure) -> Iterator[np.ndarray]:
    """Yield ``X'_g X'_g^T`` for each group without forming the expanded design."""
    X_pen = np.asarray(X_pen, dtype=float)
    n = X_pen.shape[0]
    inv_mult = 1.0 / groups.multiplicity
    for idx in groups.members:
        gram = np.zeros((n, n))
        # column chunks keep the working copy small for very wide groups
        for start in range(0, idx.size, GRAM_CHUNK):
            cols = idx[start:start + GRAM_CHUNK]
            Xc = X_pen[:, cols]
            gram += (Xc * inv_mult[cols]) @ Xc.T
        yield gram


def group_grams(X_pen, groups: GroupStructure) -> np.ndarray:
    """Stacked Gram matrices, shape (G, n, n)."""
    return np.stack(list(iter_group_grams(X_pen, groups)))


def pool_prior_variance(groups: GroupStructure, tau2) -> np.ndarray:
    """Per-covariate prior variance averaged over the groups it belongs to."""
    tau2 = np.asarray(tau2, dtype=float)
    if tau2.shape != (groups.n_groups,):
        raise ValueError(f"expected {groups.n_groups} group variances, got shape {tau2.shape}")
    if np.any(~np.isfinite(tau2)) or np.any(tau2 <= 0):
        raise ValueError("group variances must be positive and finite")
    return groups.row_normalized() @ tau2


def load_codata_csv(path, feature_ids: Sequence[str]) -> GroupStructure:
    """Read a ``feature_id,group_id`` membership file.

    Every listed feature must appear in ``feature_ids``; group order follows
    first appearance in the file.
    """
    position = {str(f): k for k, f in enumerate(feature_ids)}
    members: dict[str, list[int]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"feature_id", "group_id"} <= set(reader.fieldnames):
            raise ValueError(f"{path}: header must contain feature_id and group_id")
        for lineno, row in enumerate(reader, start=2):
            fid, gid = row["feature_id"], row["group_id"]
            if fid is None or gid is None or fid == "" or gid == "":
                raise ValueError(f"{path}:{lineno}: empty feature_id or group_id")
            if fid not in position:
                raise ValueError(f"{path}:{lineno}: unknown feature {fid!r}")
            members.setdefault(gid, []).append(position[fid])
    if not members:
        raise ValueError(f"{path}: no memberships found")
    return GroupStructure.from_members(list(members.values()), len(feature_ids),
                                       names=list(members.keys()))


def quantile_groups(values, n_groups: int) -> GroupStructure:
    """Discretise continuous co-data into ``n_groups`` equally sized groups."""
    values = np.asarray(values, dtype=float)
    ranks = np.argsort(np.argsort(values, kind="stable"), kind="stable")
    labels = (ranks * n_groups) // values.shape[0]
    return GroupStructure.from_labels(labels, names=list(range(n_groups)))
