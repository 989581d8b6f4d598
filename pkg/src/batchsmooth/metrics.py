"""Batch-mixing and label-conservation metrics, normalized so 1 is ideal."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import gammaincc

from .core import ProfileMatrix
from .errors import DimensionMismatchError, ValidationError

_CHUNK = 256


def _matrix(profiles) -> np.ndarray:
    return profiles.data if isinstance(profiles, ProfileMatrix) else np.asarray(profiles, dtype=np.float64)


def _codes(labels) -> np.ndarray:
    """Dense 0-based codes in order of first appearance."""
    values = labels.labels if hasattr(labels, "labels") else np.asarray(labels)
    _, first, inverse = np.unique(values, return_index=True, return_inverse=True)
    remap = np.empty(first.size, dtype=np.int64)
    remap[np.argsort(np.argsort(first))] = np.arange(first.size)
    return remap[inverse.ravel()]


def _sq_dists(X: np.ndarray, rows: slice) -> np.ndarray:
    diff = X[rows, None, :] - X[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def knn_indices(profiles, k: int) -> np.ndarray:
    """Exact k nearest neighbors of every row, self excluded, ties to lower index."""
    X = _matrix(profiles)
    n = X.shape[0]
    if not 1 <= k < n:
        raise ValidationError(f"neighborhood must lie in [1, n-1={n - 1}], got {k}")
    out = np.empty((n, k), dtype=np.int64)
    cols = np.arange(n)
    for start in range(0, n, _CHUNK):
        stop = min(start + _CHUNK, n)
        D = _sq_dists(X, slice(start, stop))
        D[np.arange(stop - start), np.arange(start, stop)] = np.inf
        for r in range(stop - start):
            part = np.argpartition(D[r], k)[: k + 1] if k + 1 < n else cols
            order = np.lexsort((part, D[r, part]))
            out[start + r] = part[order[:k]]
    return out


def silhouette_samples(profiles, labels) -> np.ndarray:
    """Per-point silhouette with Euclidean distances; singleton labels score 0."""
    X = _matrix(profiles)
    codes = _codes(labels)
    L = codes.max() + 1
    if L < 2:
        raise ValidationError("silhouette needs at least 2 distinct labels")
    onehot = np.zeros((codes.size, L))
    onehot[np.arange(codes.size), codes] = 1.0
    sizes = onehot.sum(axis=0)
    sums = np.empty((codes.size, L))
    for start in range(0, codes.size, _CHUNK):
        stop = min(start + _CHUNK, codes.size)
        sums[start:stop] = np.sqrt(_sq_dists(X, slice(start, stop))) @ onehot
    own = sizes[codes]
    idx = np.arange(codes.size)
    with np.errstate(divide="ignore", invalid="ignore"):
        a = sums[idx, codes] / (own - 1)
        means = sums / sizes
    means[idx, codes] = np.inf
    b = means.min(axis=1)
    denom = np.maximum(a, b)
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(denom > 0, (b - a) / denom, 0.0)
    s[own == 1] = 0.0
    return s


def silhouette(profiles, labels, kind: str = "label") -> tuple[float, float]:
    """Mean silhouette and its normalized score.

    ``kind="label"`` maps ``s -> (s+1)/2``; ``kind="batch"`` maps
    ``s -> 1 - (s+1)/2`` so that well-mixed batches score high.
    """
    raw = float(silhouette_samples(profiles, labels).mean())
    score = (raw + 1) / 2
    return raw, score if kind == "label" else 1.0 - score


def lisi_samples(profiles, labels, neighborhood: int, neighbors=None) -> np.ndarray:
    codes = _codes(labels)
    nbrs = knn_indices(profiles, neighborhood) if neighbors is None else neighbors[:, :neighborhood]
    L = codes.max() + 1
    counts = np.zeros((codes.size, L))
    np.add.at(counts, (np.repeat(np.arange(codes.size), nbrs.shape[1]), codes[nbrs].ravel()), 1.0)
    p = counts / nbrs.shape[1]
    return 1.0 / (p * p).sum(axis=1)


def lisi(profiles, labels, neighborhood: int = 30, kind: str = "batch", neighbors=None) -> tuple[float, float]:
    """Mean inverse Simpson index over ``neighborhood`` nearest neighbors.

    Normalized as ``(LISI-1)/(C-1)`` for batches and ``1-(LISI-1)/(C-1)``
    for labels, where ``C`` is the number of distinct labels.
    """
    if neighborhood < 1:
        raise ValidationError("neighborhood must be >= 1")
    raw = float(lisi_samples(profiles, labels, neighborhood, neighbors).mean())
    C = _codes(labels).max() + 1
    frac = float((raw - 1.0) / (C - 1)) if C > 1 else 0.0
    return raw, frac if kind == "batch" else 1.0 - frac


def chi2_sf(stat, df: int):
    """Upper tail of the chi-square distribution via the regularized gamma function."""
    return gammaincc(df / 2.0, np.asarray(stat, dtype=np.float64) / 2.0)


def kbet(profiles, batches, neighborhood: int = 30, alpha: float = 0.05, neighbors=None) -> float:
    """Fraction of points whose neighborhood batch counts pass a chi-square test
    against the global batch proportions."""
    codes = _codes(batches)
    B = codes.max() + 1
    if neighborhood < B:
        raise ValidationError(f"neighborhood {neighborhood} is smaller than the batch count {B}")
    if B == 1:
        return 1.0
    nbrs = knn_indices(profiles, neighborhood) if neighbors is None else neighbors[:, :neighborhood]
    counts = np.zeros((codes.size, B))
    np.add.at(counts, (np.repeat(np.arange(codes.size), nbrs.shape[1]), codes[nbrs].ravel()), 1.0)
    expected = np.bincount(codes, minlength=B) / codes.size * nbrs.shape[1]
    stat = ((counts - expected) ** 2 / expected).sum(axis=1)
    return float(np.mean(chi2_sf(stat, B - 1) >= alpha))


def graph_connectivity(profiles, labels, neighborhood: int = 30, neighbors=None) -> float:
    """Mean over labels of the within-label density of the symmetrized k-NN graph
    (self-loops included)."""
    if neighborhood < 1:
        raise ValidationError("neighborhood must be >= 1")
    codes = _codes(labels)
    nbrs = knn_indices(profiles, neighborhood) if neighbors is None else neighbors[:, :neighborhood]
    n = codes.size
    src = np.repeat(np.arange(n), nbrs.shape[1])
    dst = nbrs.ravel()
    same = codes[src] == codes[dst]
    # count each undirected within-label edge once
    a, b = np.minimum(src[same], dst[same]), np.maximum(src[same], dst[same])
    edges = np.unique(a * n + b)
    per_label = np.bincount(codes[edges // n], minlength=codes.max() + 1) * 2.0
    sizes = np.bincount(codes).astype(float)
    per_label += sizes
    return float(np.mean(per_label / sizes**2))


def _contingency(a, b) -> np.ndarray:
    ca, cb = _codes(a), _codes(b)
    if ca.size != cb.size:
        raise DimensionMismatchError(f"label vectors differ in length ({ca.size} vs {cb.size})")
    table = np.zeros((ca.max() + 1, cb.max() + 1))
    np.add.at(table, (ca, cb), 1.0)
    return table


def ari(a, b) -> float:
    """Adjusted Rand index; 1 when the chance-corrected maximum is degenerate."""
    table = _contingency(a, b)
    n = table.sum()
    comb = lambda x: x * (x - 1) / 2.0  # noqa: E731
    index = comb(table).sum()
    rows = comb(table.sum(axis=1)).sum()
    cols = comb(table.sum(axis=0)).sum()
    total = comb(n)
    if total == 0:
        return 1.0
    expected = rows * cols / total
    maximum = (rows + cols) / 2.0
    if maximum == expected:
        return 1.0
    return float((index - expected) / (maximum - expected))


def _entropy(counts: np.ndarray) -> float:
    p = counts[counts > 0] / counts.sum()
    return float(-(p * np.log(p)).sum())


def nmi(a, b) -> float:
    """``2 I(a;b) / (H(a) + H(b))``; two constant partitions score 1."""
    table = _contingency(a, b)
    n = table.sum()
    ha, hb = _entropy(table.sum(axis=1)), _entropy(table.sum(axis=0))
    if ha + hb == 0:
        return 1.0
    pij = table / n
    outer = np.outer(table.sum(axis=1), table.sum(axis=0)) / n**2
    nz = pij > 0
    mi = float((pij[nz] * np.log(pij[nz] / outer[nz])).sum())
    return float(np.clip(2.0 * mi / (ha + hb), 0.0, 1.0))


@dataclass
class KMeansResult:
    labels: np.ndarray  # 0-based
    centers: np.ndarray
    objective: list = field(default_factory=list)


def kmeans_cluster(profiles, K: int, seed: int = 0, max_iter: int = 300) -> KMeansResult:
    """Lloyd iterations from a seeded farthest-point initialization.

    The first center is a random row; each next center is the row farthest
    from the centers chosen so far. Empty clusters keep their previous center,
    so the recorded objective never increases.
    """
    X = _matrix(profiles)
    n = X.shape[0]
    if K < 1:
        raise ValidationError("K must be >= 1")
    if K > n:
        raise ValidationError(f"K={K} exceeds n={n}")
    rng = np.random.default_rng(seed)
    chosen = [int(rng.integers(n))]
    nearest = ((X - X[chosen[0]]) ** 2).sum(axis=1)
    for _ in range(1, K):
        nxt = int(np.argmax(nearest))
        chosen.append(nxt)
        nearest = np.minimum(nearest, ((X - X[nxt]) ** 2).sum(axis=1))
    centers = X[chosen].copy()
    labels = None
    objective = []
    for _ in range(max_iter):
        D = ((X[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        new = D.argmin(axis=1)
        objective.append(float(D[np.arange(n), new].sum()))
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        for c in range(K):
            members = labels == c
            if members.any():
                centers[c] = X[members].mean(axis=0)
    return KMeansResult(labels, centers, objective)


@dataclass(frozen=True)
class MetricConfig:
    neighborhood: int = 30
    alpha: float = 0.05
    seed: int = 0
    n_clusters: int | None = None


@dataclass
class MetricReport:
    graph_connectivity: float
    kbet: float
    lisi_batch: float
    silhouette_batch: float
    lisi_label: float
    ari: float
    nmi: float
    silhouette_label: float
    avg_batch: float = 0.0
    avg_label: float = 0.0
    avg_all: float = 0.0
    raw: dict = field(default_factory=dict)

    BATCH = ("graph_connectivity", "kbet", "lisi_batch", "silhouette_batch")
    LABEL = ("lisi_label", "ari", "nmi", "silhouette_label")

    def __post_init__(self):
        self.avg_batch = float(np.mean([getattr(self, k) for k in self.BATCH]))
        self.avg_label = float(np.mean([getattr(self, k) for k in self.LABEL]))
        self.avg_all = (self.avg_batch + self.avg_label) / 2.0

    def scores(self) -> dict:
        return {k: getattr(self, k) for k in (*self.BATCH, *self.LABEL, "avg_batch", "avg_label", "avg_all")}

    def to_dict(self) -> dict:
        return asdict(self)


def evaluate(profiles, batches, labels, config: MetricConfig | None = None) -> MetricReport:
    """Run both metric groups. ARI/NMI compare k-means clusters (K = label count) to ``labels``."""
    config = config or MetricConfig()
    X = _matrix(profiles)
    n = X.shape[0]
    k = min(config.neighborhood, n - 1)
    nbrs = knn_indices(X, k)
    n_clusters = config.n_clusters or int(_codes(labels).max() + 1)
    clusters = kmeans_cluster(X, n_clusters, seed=config.seed).labels
    sil_b_raw, sil_b = silhouette(X, batches, kind="batch")
    sil_l_raw, sil_l = silhouette(X, labels, kind="label")
    lisi_b_raw, lisi_b = lisi(X, batches, k, kind="batch", neighbors=nbrs)
    lisi_l_raw, lisi_l = lisi(X, labels, k, kind="label", neighbors=nbrs)
    ari_raw = ari(clusters, labels)
    return MetricReport(
        graph_connectivity=graph_connectivity(X, labels, k, neighbors=nbrs),
        kbet=kbet(X, batches, k, config.alpha, neighbors=nbrs),
        lisi_batch=lisi_b,
        silhouette_batch=sil_b,
        lisi_label=lisi_l,
        ari=max(ari_raw, 0.0),
        nmi=nmi(clusters, labels),
        silhouette_label=sil_l,
        raw={
            "silhouette_batch": sil_b_raw,
            "silhouette_label": sil_l_raw,
            "lisi_batch": lisi_b_raw,
            "lisi_label": lisi_l_raw,
            "ari": ari_raw,
        },
    )
