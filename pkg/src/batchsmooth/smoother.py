"""Corrected profiles from sampled affinity rows.

``smooth`` is the pseudoinverse-free operator
``diag(1/c) A_r^T (A_r X)`` with row-stochastic ``A_r``; ``nystrom_exact``
forms ``A_S^T pinv(A_SS) A_S`` densely for small sample counts.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .core import ProfileMatrix, SparseAffinityRows
from .errors import CapExceededError, DimensionMismatchError, ZeroRowError

NYSTROM_CAP = 2000


@dataclass(frozen=True, eq=False)
class SmoothingOperator:
    normalized: sparse.csr_matrix
    column_weights: np.ndarray
    row_indices: np.ndarray

    @property
    def n(self) -> int:
        return self.normalized.shape[1]

    @property
    def uncovered(self) -> np.ndarray:
        """Columns that no sampled row touches."""
        return np.flatnonzero(self.column_weights == 0.0)


def row_normalize(rows: SparseAffinityRows) -> SmoothingOperator:
    csr = rows.to_csr()
    sums = np.asarray(csr.sum(axis=1)).ravel()
    if (sums <= 0).any():
        bad = int(np.flatnonzero(sums <= 0)[0])
        raise ZeroRowError(f"sampled row {bad} (anchor {rows.row_indices[bad]}) has zero sum")
    normalized = sparse.diags(1.0 / sums) @ csr
    normalized = sparse.csr_matrix(normalized)
    weights = np.asarray(normalized.sum(axis=0)).ravel()
    return SmoothingOperator(normalized, weights, rows.row_indices.copy())


def smooth(op: SmoothingOperator, profiles) -> tuple[np.ndarray, int]:
    """Apply the propagation operator; returns ``(corrected, uncovered_count)``.

    Samples no sampled row reaches keep their input profile.
    """
    X = profiles.data if isinstance(profiles, ProfileMatrix) else np.asarray(profiles, dtype=np.float64)
    if X.shape[0] != op.n:
        raise DimensionMismatchError(f"operator has {op.n} columns but profiles have {X.shape[0]} rows")
    Y = op.normalized @ X
    Z = op.normalized.T @ Y
    covered = op.column_weights > 0
    out = X.copy()
    out[covered] = Z[covered] / op.column_weights[covered, None]
    return out, int(np.count_nonzero(~covered))


def _truncated_pinv(block: np.ndarray, rtol: float, rank: int | None) -> np.ndarray:
    U, s, Vt = np.linalg.svd(block)
    if s.size == 0 or s[0] == 0.0:
        return np.zeros_like(block.T)
    keep = s > rtol * s[0]
    if rank is not None:
        keep[rank:] = False
    return (Vt[keep].T / s[keep]) @ U[:, keep].T


def nystrom_exact(
    rows: SparseAffinityRows,
    profiles=None,
    cap: int = NYSTROM_CAP,
    rtol: float = 1e-10,
    rank: int | None = None,
) -> np.ndarray:
    """Nystrom reconstruction ``A_S^T pinv(A_SS) A_S``.

    Returns the dense ``n x n`` matrix, or ``A_hat @ X`` when ``profiles`` is
    given (without forming ``A_hat``). Singular values of ``A_SS`` below
    ``rtol * sigma_max`` are discarded; ``rank`` additionally keeps only the
    leading ``rank`` of them.
    """
    if rows.m > cap:
        raise CapExceededError(f"m={rows.m} exceeds the exact Nystrom cap {cap}; use smooth()")
    A_S = rows.to_dense()
    A_SS = A_S[:, rows.row_indices]
    pinv = _truncated_pinv(A_SS, rtol, rank)
    if profiles is None:
        return A_S.T @ pinv @ A_S
    X = profiles.data if isinstance(profiles, ProfileMatrix) else np.asarray(profiles, dtype=np.float64)
    return A_S.T @ (pinv @ (A_S @ X))
