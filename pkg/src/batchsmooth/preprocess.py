"""Profile preprocessing: control-based variation filter, MAD normalization,
rank-based inverse normal transform, correlation pruning and PCA.

The pipeline order is fixed: variation filter, MAD, INT, correlation filter, PCA.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri
from scipy.stats import rankdata

from .core import ProfileMatrix
from .errors import NumericError, ValidationError

INT_OFFSET = 3.0 / 8.0
CVAR_THRESHOLD = 1e-3
CORR_THRESHOLD = 0.9


@dataclass(frozen=True)
class ControlMask:
    controls: np.ndarray
    groups: np.ndarray

    def __post_init__(self):
        controls = np.asarray(self.controls, dtype=bool)
        groups = np.asarray(self.groups)
        if controls.shape != groups.shape or controls.ndim != 1:
            raise ValidationError("controls and groups must be equal-length vectors")
        for g in np.unique(groups):
            if np.count_nonzero(controls & (groups == g)) < 2:
                raise ValidationError(f"group {g!r} has fewer than 2 control samples")
        object.__setattr__(self, "controls", controls)
        object.__setattr__(self, "groups", groups)

    def group_controls(self):
        """Yield ``(group_rows, control_rows)`` per group."""
        for g in np.unique(self.groups):
            rows = self.groups == g
            yield rows, rows & self.controls


def _matrix(profiles) -> np.ndarray:
    return profiles.data if isinstance(profiles, ProfileMatrix) else np.asarray(profiles, dtype=np.float64)


def median_mad(values: np.ndarray, axis=0):
    med = np.median(values, axis=axis)
    mad = np.median(np.abs(values - np.expand_dims(med, axis)), axis=axis)
    return med, mad


def variation_filter(profiles, controls: ControlMask, threshold: float = CVAR_THRESHOLD) -> list[int]:
    """Features whose control MAD / |median| reaches ``threshold`` in every group.

    A zero median gives an infinite ratio. Features with zero control MAD are
    dropped whatever the threshold.
    """
    X = _matrix(profiles)
    keep = np.ones(X.shape[1], dtype=bool)
    for _, ctrl in controls.group_controls():
        med, mad = median_mad(X[ctrl])
        with np.errstate(divide="ignore", invalid="ignore"):
            cvar = np.where(mad == 0, 0.0, mad / np.abs(med))
        keep &= (cvar >= threshold) & (mad > 0)
    return np.flatnonzero(keep).tolist()


def mad_normalize(profiles, controls: ControlMask) -> ProfileMatrix:
    """Center on the group's control median and scale by the control MAD."""
    X = _matrix(profiles)
    out = np.empty_like(X)
    for rows, ctrl in controls.group_controls():
        med, mad = median_mad(X[ctrl])
        if (mad == 0).any():
            f = int(np.flatnonzero(mad == 0)[0])
            g = controls.groups[np.flatnonzero(rows)[0]]
            raise NumericError(f"zero control MAD for feature {f} in group {g!r}")
        out[rows] = (X[rows] - med) / mad
    return ProfileMatrix(out)


def rank_int(column, c: float = INT_OFFSET) -> np.ndarray:
    """Rank-based inverse normal transform with average ranks for ties."""
    column = np.asarray(column, dtype=np.float64)
    N = column.size
    if N < 2:
        raise ValidationError("rank_int needs at least 2 values")
    ranks = rankdata(column, method="average")
    return ndtri((ranks - c) / (N - 2 * c + 1))


def rank_int_matrix(profiles) -> ProfileMatrix:
    X = _matrix(profiles)
    return ProfileMatrix(np.column_stack([rank_int(X[:, j]) for j in range(X.shape[1])]))


def _abs_corr(X: np.ndarray) -> np.ndarray:
    Xc = X - X.mean(axis=0)
    norms = np.sqrt((Xc * Xc).sum(axis=0))
    with np.errstate(divide="ignore", invalid="ignore"):
        C = (Xc.T @ Xc) / np.outer(norms, norms)
    C = np.abs(np.nan_to_num(C, nan=0.0, posinf=0.0, neginf=0.0))
    C = 0.5 * (C + C.T)
    np.fill_diagonal(C, 0.0)
    return np.minimum(C, 1.0)


def correlation_select(profiles, threshold: float = CORR_THRESHOLD) -> list[int]:
    """Greedily drop features until no pair has ``|r| > threshold``.

    Each round drops, among features in some over-threshold pair, the one with
    the largest summed |r| to the remaining features (ties drop the higher index).
    Constant features have zero correlation with everything.
    """
    if not 0 < threshold < 1:
        raise ValidationError("correlation threshold must lie in (0, 1)")
    C = _abs_corr(_matrix(profiles))
    alive = np.ones(C.shape[0], dtype=bool)
    while True:
        sub = C[np.ix_(alive, alive)]
        hot = (sub > threshold).any(axis=1)
        if not hot.any():
            break
        idx = np.flatnonzero(alive)
        totals = sub.sum(axis=1)
        cand = np.flatnonzero(hot)
        best = totals[cand].max()
        # summation round-off must not break the lower-index-survives tie rule
        victim = cand[totals[cand] >= best - 1e-12 * max(1.0, best)][-1]
        alive[idx[victim]] = False
    return np.flatnonzero(alive).tolist()


@dataclass(frozen=True)
class PcaResult:
    projected: ProfileMatrix
    components: np.ndarray  # (dims, d)
    explained_variance: np.ndarray
    mean: np.ndarray


def pca(profiles, dims: int) -> PcaResult:
    """Exact PCA from the eigendecomposition of the feature covariance.

    Component signs are fixed so the largest-magnitude loading is positive.
    """
    X = _matrix(profiles)
    if not 1 <= dims <= X.shape[1]:
        raise ValidationError(f"dims must lie in [1, {X.shape[1]}], got {dims}")
    mean = X.mean(axis=0)
    Xc = X - mean
    cov = Xc.T @ Xc / max(X.shape[0] - 1, 1)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1][:dims]
    W = evecs[:, order]
    flip = np.sign(W[np.abs(W).argmax(axis=0), np.arange(dims)])
    W = W * np.where(flip == 0, 1.0, flip)
    return PcaResult(ProfileMatrix(Xc @ W), W.T, np.clip(evals[order], 0.0, None), mean)


def pca_project(profiles, dims: int) -> ProfileMatrix:
    return pca(profiles, dims).projected


@dataclass(frozen=True)
class PreprocessConfig:
    var_filter: float | None = None
    mad_normalize: bool = False
    int_transform: bool = False
    corr_filter: float | None = None
    pca_dims: int | None = None


@dataclass(frozen=True)
class PreprocessResult:
    profiles: ProfileMatrix
    kept: list  # retained original feature positions
    embedding: ProfileMatrix  # what distances are computed on (PCA output or profiles)


def preprocess(profiles, config: PreprocessConfig, controls: ControlMask | None = None) -> PreprocessResult:
    X = _matrix(profiles)
    kept = list(range(X.shape[1]))
    if (config.var_filter is not None or config.mad_normalize) and controls is None:
        raise ValidationError("variation filter and MAD normalization need control samples")
    if config.var_filter is not None:
        sel = variation_filter(X, controls, config.var_filter)
        X, kept = X[:, sel], [kept[j] for j in sel]
    if not kept:
        raise ValidationError("variation filter removed every feature")
    if config.mad_normalize:
        X = mad_normalize(X, controls).data
    if config.int_transform:
        X = rank_int_matrix(X).data
    if config.corr_filter is not None:
        sel = correlation_select(X, config.corr_filter)
        X, kept = X[:, sel], [kept[j] for j in sel]
    result = ProfileMatrix(X)
    embedding = pca_project(result, config.pca_dims) if config.pca_dims else result
    return PreprocessResult(result, kept, embedding)
