"""Monte Carlo checks of the coverage, spectral-error and runtime behaviour
of adaptive sampling on synthetic block models.

Every trial draws from its own stream, derived from ``(seed, trial)`` (and the
``t`` position for spectral runs), so results do not depend on trial order.
"""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .core import HyperParams, SparseAffinityRows
from .errors import ValidationError
from .pipeline import correct
from .sampler import run_adaptive
from .smoother import nystrom_exact
from .synthetic import BlockModelSpec, GmmSpec, generate_block_affinity, generate_gmm


def _stream(seed: int, *key: int) -> tuple[int, int]:
    """Two independent 32-bit seeds (model, sampler) for one trial."""
    state = np.random.SeedSequence(seed, spawn_key=tuple(key)).generate_state(2)
    return int(state[0]), int(state[1])


def _dense_row_fn(matrix: np.ndarray):
    def row(i):
        cols = np.flatnonzero(matrix[i])
        return cols, matrix[i, cols]

    return row


def power_iteration_opnorm(M: np.ndarray, tol: float = 1e-8, max_iter: int = 10000, seed: int = 0) -> float:
    """Largest singular value of ``M`` by power iteration on ``M^T M``.

    Stops when the estimate changes by less than ``tol`` relative to itself.
    """
    M = np.asarray(M, dtype=np.float64)
    if not M.any():
        return 0.0
    v = np.random.default_rng(seed).standard_normal(M.shape[1])
    v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(max_iter):
        w = M.T @ (M @ v)
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return 0.0
        new = math.sqrt(norm)
        v = w / norm
        if abs(new - est) <= tol * new:
            return float(np.linalg.norm(M @ v))
        est = new
    return float(np.linalg.norm(M @ v))


# ---------------------------------------------------------------------------
# Coverage
# ---------------------------------------------------------------------------


@dataclass
class CoverageExperimentResult:
    counts: np.ndarray  # (trials, K) rows sampled per cluster
    m: int
    t: int
    sampler: str
    success: np.ndarray = field(init=False)

    def __post_init__(self):
        self.success = (self.counts >= self.t).all(axis=1)

    @property
    def success_rate(self) -> float:
        return float(self.success.mean()) if self.success.size else 1.0

    def to_dict(self) -> dict:
        return {
            "m": self.m,
            "t": self.t,
            "sampler": self.sampler,
            "success_rate": self.success_rate,
            "counts": self.counts.tolist(),
        }


def run_coverage_experiment(
    spec: BlockModelSpec, t: int, m: int, trials: int, sampler: str = "adaptive"
) -> CoverageExperimentResult:
    """Sample ``m`` rows of the block matrix and count hits per cluster.

    The adaptive sampler runs on the matrix rows directly with block length
    ``K`` and no stopping rule; ``"uniform"`` draws ``m`` rows without
    replacement.
    """
    if sampler not in ("adaptive", "uniform"):
        raise ValidationError(f"sampler must be 'adaptive' or 'uniform', got {sampler!r}")
    if not 0 <= m <= spec.n:
        raise ValidationError(f"m={m} must lie in [0, n={spec.n}]")
    counts = np.zeros((trials, spec.K), dtype=np.int64)
    for trial in range(trials):
        model_seed, draw_seed = _stream(spec.seed, trial)
        model = generate_block_affinity(replace(spec, seed=model_seed))
        if sampler == "adaptive":
            run = run_adaptive(_dense_row_fn(model.matrix), spec.n, spec.K, seed=draw_seed, max_rows=m)
            picked = np.asarray(run.indices, dtype=np.int64)
        else:
            picked = np.random.default_rng(draw_seed).choice(spec.n, size=m, replace=False)
        counts[trial] = np.bincount(model.labels[picked], minlength=spec.K)
    return CoverageExperimentResult(counts, m, t, sampler)


# ---------------------------------------------------------------------------
# Spectral error
# ---------------------------------------------------------------------------


def noise_mean(n: int, lam: float) -> np.ndarray:
    """Expected noise matrix: ``1/lam`` off the diagonal, ``2/lam`` on it."""
    if lam == 0:
        return np.zeros((n, n))
    return (np.ones((n, n)) + np.eye(n)) / lam


@dataclass
class SpectralExperimentResult:
    t_values: list
    errors: np.ndarray  # (len(t), trials) ||A_hat - A0||_op
    centered_errors: np.ndarray  # (len(t), trials) ||A_hat - (A0 + E[E])||_op
    m: np.ndarray  # (len(t), trials) rows used
    mode: str = "stopped"

    @staticmethod
    def _slope(t_values, values) -> float:
        values = np.asarray(values, dtype=np.float64)
        if len(t_values) < 2 or (values <= 0).any():
            return float("nan")
        return float(np.polyfit(np.log(t_values), np.log(values), 1)[0])

    @property
    def median_errors(self) -> np.ndarray:
        return np.median(self.errors, axis=1)

    @property
    def median_centered_errors(self) -> np.ndarray:
        return np.median(self.centered_errors, axis=1)

    @property
    def slope(self) -> float:
        """Log-log slope of the median error against ``A0``."""
        return self._slope(self.t_values, self.median_errors)

    @property
    def centered_slope(self) -> float:
        return self._slope(self.t_values, self.median_centered_errors)

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "t_values": list(self.t_values),
            "median_error": self.median_errors.tolist(),
            "median_centered_error": self.median_centered_errors.tolist(),
            "slope": self.slope,
            "centered_slope": self.centered_slope,
            "median_m": np.median(self.m, axis=1).tolist(),
        }


def run_spectral_experiment(
    spec: BlockModelSpec,
    t_values,
    trials: int,
    rank: int | None = -1,
    mode: str = "stopped",
    C: float = 2.0,
    tol: float = 1e-8,
) -> SpectralExperimentResult:
    """Operator-norm error of the Nystrom reconstruction as ``t`` grows.

    ``mode="stopped"`` samples adaptively until every cluster holds at least
    ``t`` sampled rows (ground-truth labels act as the stopping oracle);
    ``mode="draws"`` takes exactly ``ceil(C t K log K)`` draws.

    ``rank=-1`` (default) keeps the leading ``K`` singular values of the
    sampled core block; ``None`` keeps all above the relative cutoff.
    """
    if mode not in ("stopped", "draws"):
        raise ValidationError(f"mode must be 'stopped' or 'draws', got {mode!r}")
    K, n = spec.K, spec.n
    if mode == "stopped" and max(t_values) > min(spec.cluster_sizes):
        raise ValidationError("largest t exceeds the smallest cluster size")
    keep = K if rank == -1 else rank
    target_shift = noise_mean(n, spec.lam)
    shape = (len(t_values), trials)
    errors, centered, used = np.zeros(shape), np.zeros(shape), np.zeros(shape, dtype=np.int64)
    for i, t in enumerate(t_values):
        for trial in range(trials):
            model_seed, draw_seed = _stream(spec.seed, i, trial)
            model = generate_block_affinity(replace(spec, seed=model_seed))
            if mode == "stopped":
                labels = model.labels

                def enough(state, labels=labels, t=t):
                    return bool((np.bincount(labels[state.sampled], minlength=K) >= t).all())

                run = run_adaptive(_dense_row_fn(model.matrix), n, K, seed=draw_seed, stop=enough)
            else:
                m = min(n, math.ceil(C * t * K * math.log(K))) if K > 1 else min(n, math.ceil(C * t))
                run = run_adaptive(_dense_row_fn(model.matrix), n, K, seed=draw_seed, max_rows=m)
            rows = SparseAffinityRows.from_rows(run.indices, run.rows, n, bounded=False)
            A_hat = nystrom_exact(rows, rank=keep)
            errors[i, trial] = power_iteration_opnorm(A_hat - model.clean, tol=tol)
            centered[i, trial] = power_iteration_opnorm(A_hat - model.clean - target_shift, tol=tol)
            used[i, trial] = rows.m
    return SpectralExperimentResult(list(t_values), errors, centered, used, mode)


def _row_stochastic(M: np.ndarray) -> np.ndarray:
    sums = M.sum(axis=1, keepdims=True)
    out = np.zeros_like(M)
    np.divide(M, sums, out=out, where=sums != 0)
    return out


def run_inverse_gap_experiment(spec: BlockModelSpec, t_values, trials: int, rank: int | None = -1) -> np.ndarray:
    """Relative gap between the inverse-free smoother and Nystrom propagation.

    For each ``t`` and trial, samples until every cluster holds ``t`` rows,
    then compares ``diag(1/c) A_r^T A_r`` (``A_r`` the row-normalized sampled
    rows) with the row-normalized Nystrom estimate. Returns an array of
    ``||P_smooth - P_nys||_op / ||P_nys||_op`` of shape ``(len(t), trials)``.
    """
    K, n = spec.K, spec.n
    if max(t_values) > min(spec.cluster_sizes):
        raise ValidationError("largest t exceeds the smallest cluster size")
    keep = K if rank == -1 else rank
    gaps = np.zeros((len(t_values), trials))
    for i, t in enumerate(t_values):
        for trial in range(trials):
            model_seed, draw_seed = _stream(spec.seed, i, trial)
            model = generate_block_affinity(replace(spec, seed=model_seed))
            labels = model.labels

            def enough(state, labels=labels, t=t):
                return bool((np.bincount(labels[state.sampled], minlength=K) >= t).all())

            run = run_adaptive(_dense_row_fn(model.matrix), n, K, seed=draw_seed, stop=enough)
            rows = SparseAffinityRows.from_rows(run.indices, run.rows, n, bounded=False)
            A_r = _row_stochastic(rows.to_csr().toarray())
            P_smooth = _row_stochastic(A_r.T @ A_r)
            P_nys = _row_stochastic(nystrom_exact(rows, rank=keep))
            gaps[i, trial] = power_iteration_opnorm(P_smooth - P_nys) / power_iteration_opnorm(P_nys)
    return gaps


# ---------------------------------------------------------------------------
# Runtime
# ---------------------------------------------------------------------------


@dataclass
class RuntimeRow:
    n: int
    wall_time: float  # summed over repeats
    m: float  # mean over repeats
    times: list
    ms: list


def run_runtime_experiment(
    n_values, gmm_template: GmmSpec | None = None, repeats: int = 5, params: HyperParams | None = None
) -> list[RuntimeRow]:
    """Time the full correction at each ``n``.

    ``n`` is rounded to a multiple of ``L * B``. Each size is corrected with
    ``repeats`` sampler seeds and the wall time is summed over them, because
    a single run's time is dominated by its random stopping point.
    """
    template = gmm_template or GmmSpec()
    params = params or HyperParams()
    table = []
    for n in n_values:
        n_per = max(1, round(n / (template.L * template.B)))
        data = generate_gmm(replace(template, n_per=n_per))
        times, ms = [], []
        for r in range(repeats):
            start = time.perf_counter()
            result = correct(data.profiles, data.batches, replace(params, seed=params.seed + r))
            times.append(time.perf_counter() - start)
            ms.append(result.m)
        table.append(RuntimeRow(data.profiles.n, float(sum(times)), float(np.mean(ms)), times, ms))
    return table


def runtime_ratios(table: list[RuntimeRow]) -> list[float]:
    return [b.wall_time / a.wall_time for a, b in zip(table, table[1:])]


def runtime_to_dicts(table: list[RuntimeRow]) -> list[dict]:
    return [asdict(row) for row in table]
