"""Synthetic data: a hierarchical Gaussian mixture and noisy block affinities.

Normal and exponential variates come from numpy's PCG64 ``Generator``
(ziggurat samplers); only per-seed determinism is relied upon.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import BatchLabels, ClusterLabels, ProfileMatrix
from .errors import ValidationError


@dataclass(frozen=True)
class GmmSpec:
    L: int = 10
    B: int = 5
    d: int = 10
    n_per: int = 20
    sigma_label: float = 1.0
    sigma_batch: float = 0.5
    sigma_noise: float = 0.1
    seed: int = 0
    shuffle: bool = False

    def __post_init__(self):
        if min(self.L, self.B, self.d, self.n_per) < 1:
            raise ValidationError("GMM counts must all be >= 1")
        if min(self.sigma_label, self.sigma_batch, self.sigma_noise) < 0:
            raise ValidationError("GMM standard deviations must be >= 0")

    @property
    def n(self) -> int:
        return self.L * self.B * self.n_per


@dataclass(frozen=True)
class GmmData:
    profiles: ProfileMatrix
    batches: BatchLabels
    labels: ClusterLabels
    label_means: np.ndarray
    cell_means: np.ndarray  # (L, B, d)


def generate_gmm(spec: GmmSpec) -> GmmData:
    """Label means, per-(label, batch) means around them, then isotropic points.

    Rows are ordered label-major, batch-minor unless ``spec.shuffle``.
    """
    rng = np.random.default_rng(spec.seed)
    mu = rng.normal(0.0, spec.sigma_label, size=(spec.L, spec.d))
    cell = mu[:, None, :] + rng.normal(0.0, spec.sigma_batch, size=(spec.L, spec.B, spec.d))
    noise = rng.normal(0.0, spec.sigma_noise, size=(spec.L, spec.B, spec.n_per, spec.d))
    X = (cell[:, :, None, :] + noise).reshape(-1, spec.d)
    labels = np.repeat(np.arange(1, spec.L + 1), spec.B * spec.n_per)
    batches = np.tile(np.repeat(np.arange(1, spec.B + 1), spec.n_per), spec.L)
    if spec.shuffle:
        perm = rng.permutation(X.shape[0])
        X, labels, batches = X[perm], labels[perm], batches[perm]
    return GmmData(ProfileMatrix(X), BatchLabels(batches), ClusterLabels(labels), mu, cell)


@dataclass(frozen=True)
class BlockModelSpec:
    cluster_sizes: tuple
    affinities: tuple
    lam: float = 0.0
    seed: int = 0
    shuffle: bool = False

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.cluster_sizes)
        affs = tuple(float(p) for p in self.affinities)
        if len(sizes) != len(affs) or not sizes:
            raise ValidationError("cluster_sizes and affinities must be non-empty and equally long")
        if min(sizes) < 1 or min(affs) <= 0:
            raise ValidationError("cluster sizes must be >= 1 and affinities > 0")
        if self.lam < 0:
            raise ValidationError("noise rate must be >= 0 (0 means noiseless)")
        object.__setattr__(self, "cluster_sizes", sizes)
        object.__setattr__(self, "affinities", affs)

    @property
    def n(self) -> int:
        return sum(self.cluster_sizes)

    @property
    def K(self) -> int:
        return len(self.cluster_sizes)


@dataclass(frozen=True)
class BlockModel:
    matrix: np.ndarray  # A0 + E
    clean: np.ndarray  # A0
    labels: np.ndarray  # 0-based cluster id per row

    @property
    def noise(self) -> np.ndarray:
        return self.matrix - self.clean


def block_diagonal(sizes, affinities) -> np.ndarray:
    n = sum(sizes)
    A0 = np.zeros((n, n))
    start = 0
    for size, p in zip(sizes, affinities):
        A0[start:start + size, start:start + size] = p
        start += size
    return A0


def exponential_noise(n: int, lam: float, rng: np.random.Generator) -> np.ndarray:
    """Symmetric noise, ``Exp(lam)`` off the diagonal and ``Exp(lam/2)`` on it."""
    upper = np.triu(rng.exponential(1.0 / lam, size=(n, n)), 1)
    E = upper + upper.T
    E[np.diag_indices(n)] = rng.exponential(2.0 / lam, size=n)
    return E


def generate_block_affinity(spec: BlockModelSpec) -> BlockModel:
    rng = np.random.default_rng(spec.seed)
    A0 = block_diagonal(spec.cluster_sizes, spec.affinities)
    labels = np.repeat(np.arange(spec.K), spec.cluster_sizes)
    A = A0 + exponential_noise(spec.n, spec.lam, rng) if spec.lam > 0 else A0.copy()
    if spec.shuffle:
        perm = rng.permutation(spec.n)
        A, A0, labels = A[np.ix_(perm, perm)], A0[np.ix_(perm, perm)], labels[perm]
    return BlockModel(A, A0, labels)
