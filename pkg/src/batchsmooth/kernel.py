"""Batch-aware local-scale Gaussian affinity rows and elbow sparsification."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import BatchLabels, ProfileMatrix
from .errors import EmptyBatchError, ZeroScaleError

ELBOW_PERCENTILE = 80.0
# gains below this fraction of the largest possible gain are round-off
_GAIN_SNAP = 1e-12


@dataclass(frozen=True)
class LocalScaleTable:
    """Squared per-batch bandwidths seen from one anchor; ``scales[b]`` is for 0-based batch ``b``."""

    scales: np.ndarray
    anchor: int


def distance_row(profiles, anchor: int) -> np.ndarray:
    """Squared Euclidean distances from ``anchor`` to every row."""
    X = profiles.data if isinstance(profiles, ProfileMatrix) else np.asarray(profiles, dtype=np.float64)
    if not 0 <= anchor < X.shape[0]:
        raise IndexError(f"anchor {anchor} out of range for n={X.shape[0]}")
    diff = X - X[anchor]
    return np.einsum("ij,ij->i", diff, diff)


def _batch_members(batches) -> list[np.ndarray]:
    codes = batches.codes if isinstance(batches, BatchLabels) else np.asarray(batches) - 1
    order = np.argsort(codes, kind="stable")
    bounds = np.searchsorted(codes[order], np.arange(codes.max() + 2))
    return [order[bounds[b]:bounds[b + 1]] for b in range(codes.max() + 1)]


def _kth_scale(cand: np.ndarray, k: int) -> float:
    if cand.size == 0:
        raise EmptyBatchError("batch has no candidate neighbors relative to the anchor")
    if cand.size < k:
        sigma2 = float(cand.max())
    else:
        sigma2 = float(np.partition(cand, k - 1)[k - 1])
    if sigma2 == 0.0:
        nonzero = cand[cand > 0]
        if nonzero.size == 0:
            raise ZeroScaleError("all candidate neighbors in a batch duplicate the anchor")
        sigma2 = float(nonzero.min())
    return sigma2


def batch_local_scales(dist_row, batches, anchor: int, k: int, members=None) -> LocalScaleTable:
    """k-th nearest squared distance from the anchor within every batch.

    The anchor is excluded from its own batch. Batches with fewer than ``k``
    candidates fall back to their farthest candidate; a zero k-th distance
    (duplicates) is replaced by the smallest nonzero one.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    dist_row = np.asarray(dist_row, dtype=np.float64)
    members = _batch_members(batches) if members is None else members
    scales = np.empty(len(members))
    for b, idx in enumerate(members):
        cand = dist_row[idx[idx != anchor]]
        scales[b] = _kth_scale(cand, k)
    return LocalScaleTable(scales, anchor)


def affinity_row(dist_row, scales: LocalScaleTable, batches) -> np.ndarray:
    """Dense row ``exp(-d_j / sigma2[b_j])``."""
    dist_row = np.asarray(dist_row, dtype=np.float64)
    codes = batches.codes if isinstance(batches, BatchLabels) else np.asarray(batches) - 1
    sigma2 = scales.scales[codes]
    zero = sigma2 == 0.0
    if zero.any():
        if (dist_row[zero] != 0.0).any():
            raise ZeroScaleError("zero local scale paired with a nonzero distance")
        sigma2 = np.where(zero, 1.0, sigma2)
    return np.exp(-dist_row / sigma2)


def elbow_window(n: int) -> int:
    """Half-width of the change-point window for a row of length ``n``."""
    width = max(4, math.ceil(n / 100))
    return max(1, min(math.ceil(width / 2), n // 2))


def window_gains(values: np.ndarray, half: int) -> np.ndarray:
    """Variance drop from splitting each window ``[t-half, t+half)`` at ``t``.

    For two equal halves the drop equals ``half/2 * (mean_left - mean_right)**2``.
    Entry ``i`` corresponds to cut ``t = half + i``.
    """
    csum = np.concatenate(([0.0], np.cumsum(values)))
    t = np.arange(half, values.size - half + 1)
    left = (csum[t] - csum[t - half]) / half
    right = (csum[t + half] - csum[t]) / half
    gains = 0.5 * half * (left - right) ** 2
    span = float(values.max() - values.min()) if values.size else 0.0
    gains[gains <= _GAIN_SNAP * half * span * span] = 0.0
    return gains


def select_cut(gains: np.ndarray, half: int, n: int) -> int:
    """Number of leading sorted entries to keep.

    The threshold is the 80th percentile of the gains; the cut is the peak of
    the first run of gains strictly above it. No exceedance keeps all ``n``.
    """
    if gains.size == 0:
        return n
    threshold = np.percentile(gains, ELBOW_PERCENTILE)
    above = gains > threshold
    if not above.any():
        return n
    start = int(np.argmax(above))
    below = np.flatnonzero(~above[start:])
    stop = start + int(below[0]) if below.size else gains.size
    return half + start + int(np.argmax(gains[start:stop]))


def elbow_sparsify(row) -> tuple[np.ndarray, np.ndarray]:
    """Keep the entries above the first sharp drop of the descending-sorted row.

    Returns ``(columns, values)`` with columns ascending and zeros dropped.
    """
    row = np.asarray(row, dtype=np.float64)
    if row.size < 2:
        raise ValueError("elbow_sparsify needs at least 2 entries")
    ranked = -np.sort(-row)
    half = elbow_window(row.size)
    cut = select_cut(window_gains(ranked, half), half, row.size)
    # equivalent to a stable descending argsort truncated at ``cut``: ties at
    # the boundary value go to the lowest column indices
    edge = ranked[cut - 1]
    keep = row > edge
    ties = np.flatnonzero(row == edge)[: cut - np.count_nonzero(keep)]
    keep[ties] = True
    cols = np.flatnonzero(keep)
    vals = row[cols]
    keep = vals != 0.0
    return cols[keep], vals[keep]


def compute_sparse_row(profiles, batches, anchor: int, k: int, members=None, sparsify: bool = True):
    """Distance, local scales, affinity and elbow cut for one anchor."""
    dist = distance_row(profiles, anchor)
    scales = batch_local_scales(dist, batches, anchor, k, members)
    dense = affinity_row(dist, scales, batches)
    if not sparsify or dense.size < 2:
        cols = np.flatnonzero(dense)
        return cols, dense[cols]
    return elbow_sparsify(dense)


class AffinityKernel:
    """Row provider that caches batch membership across anchors."""

    def __init__(self, profiles, batches: BatchLabels, k: int, sparsify: bool = True):
        self.X = profiles.data if isinstance(profiles, ProfileMatrix) else np.asarray(profiles, float)
        self.batches = batches
        self.k = k
        self.sparsify = sparsify
        self.members = _batch_members(batches)

    def __call__(self, anchor: int):
        return compute_sparse_row(self.X, self.batches, anchor, self.k, self.members, self.sparsify)
