"""Coverage-driven adaptive row selection.

Each block of ``block_len`` draws starts from a fresh block-coverage vector.
Draws are uniform over unsampled indices with zero block coverage, otherwise
proportional to ``1 / block_coverage``. The run stops after ``tau``
consecutive draws that cover no new column.

Random streams: block ``b`` draws from
``np.random.default_rng(SeedSequence(seed, spawn_key=(b,)))``, so a block's
draws depend only on the seed, the block number and the coverage state.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .core import HyperParams, SparseAffinityRows, validate_inputs
from .errors import ExhaustedError, ValidationError
from .kernel import AffinityKernel


@dataclass
class CoverageState:
    cumulative: np.ndarray
    block: np.ndarray
    sampled: list = field(default_factory=list)
    sampled_mask: np.ndarray | None = None
    no_change_count: int = 0
    steps_in_block: int = 0
    block_len: int = 50
    delta_against: str = "cumulative"

    @classmethod
    def empty(cls, n: int, block_len: int, delta_against: str = "cumulative") -> "CoverageState":
        return cls(
            cumulative=np.zeros(n),
            block=np.zeros(n),
            sampled_mask=np.zeros(n, dtype=bool),
            block_len=block_len,
            delta_against=delta_against,
        )

    @property
    def n(self) -> int:
        return self.cumulative.size

    @property
    def blocks_done(self) -> int:
        return len(self.sampled) // self.block_len


def _eligible_mask(n: int, already_sampled) -> np.ndarray:
    if already_sampled is None:
        return np.ones(n, dtype=bool)
    already = np.asarray(already_sampled)
    if already.dtype == bool:
        return ~already
    mask = np.ones(n, dtype=bool)
    mask[already.astype(np.int64)] = False
    return mask


def sampling_distribution(block_cov, already_sampled=None) -> np.ndarray:
    """Next-draw probabilities over all indices (sampled ones get 0)."""
    cov = np.asarray(block_cov, dtype=np.float64)
    if (cov < 0).any():
        raise ValidationError("coverage must be non-negative")
    eligible = _eligible_mask(cov.size, already_sampled)
    if not eligible.any():
        raise ExhaustedError("every index has already been sampled")
    zero = eligible & (cov == 0.0)
    if zero.any():
        return zero / np.count_nonzero(zero)
    weights = np.zeros_like(cov)
    # dividing the smallest coverage by each keeps weights in (0, 1] (no overflow)
    weights[eligible] = cov[eligible].min() / cov[eligible]
    return weights / weights.sum()


def draw_index(dist, rng: np.random.Generator) -> int:
    """Inverse-CDF draw; never returns an index with zero probability."""
    dist = np.asarray(dist, dtype=np.float64)
    cdf = np.cumsum(dist)
    u = rng.random() * cdf[-1]
    i = int(np.searchsorted(cdf, u, side="right"))
    if i >= dist.size or dist[i] <= 0.0:
        positive = np.flatnonzero(dist > 0)
        # round-off at a CDF plateau: fall back to the nearest positive index below
        i = int(positive[max(np.searchsorted(positive, i, side="right") - 1, 0)])
    return i


def update_coverage(state: CoverageState, index: int, row) -> tuple[CoverageState, int]:
    """Add one sampled row; returns the state and the newly covered column count."""
    if state.sampled_mask[index]:
        raise ValidationError(f"index {index} was already sampled")
    cols, vals = row
    cols = np.asarray(cols, dtype=np.int64)
    vals = np.asarray(vals, dtype=np.float64)
    ref = state.cumulative if state.delta_against == "cumulative" else state.block
    positive = cols[vals > 0]
    delta = int(np.count_nonzero(ref[positive] == 0.0))
    state.no_change_count = state.no_change_count + 1 if delta == 0 else 0
    np.add.at(state.cumulative, cols, vals)
    np.add.at(state.block, cols, vals)
    state.sampled.append(int(index))
    state.sampled_mask[index] = True
    state.steps_in_block += 1
    if state.steps_in_block == state.block_len:
        state.block[:] = 0.0
        state.steps_in_block = 0
    return state, delta


def block_rng(seed: int, block: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(block,)))


@dataclass
class SamplingRun:
    indices: list
    rows: list
    state: CoverageState
    deltas: list


def run_adaptive(
    row_fn: Callable[[int], tuple],
    n: int,
    block_len: int,
    seed: int = 0,
    tau: int | None = None,
    max_rows: int | None = None,
    stop: Callable[[CoverageState], bool] | None = None,
    delta_against: str = "cumulative",
    on_step: Callable[[dict], None] | None = None,
) -> SamplingRun:
    """Adaptive sampling loop over an arbitrary sparse row provider.

    Terminates when ``tau`` consecutive draws add no coverage (if ``tau`` is
    given), after ``max_rows`` draws, when ``stop(state)`` is true, or when
    every index has been sampled.
    """
    state = CoverageState.empty(n, block_len, delta_against)
    rows, deltas = [], []
    limit = n if max_rows is None else min(max_rows, n)
    rng = None
    while len(state.sampled) < limit:
        if tau is not None and state.no_change_count >= tau:
            break
        if stop is not None and stop(state):
            break
        if state.steps_in_block == 0 or rng is None:
            rng = block_rng(seed, state.blocks_done)
        dist = sampling_distribution(state.block, state.sampled_mask)
        index = draw_index(dist, rng)
        row = row_fn(index)
        state, delta = update_coverage(state, index, row)
        rows.append(row)
        deltas.append(delta)
        if on_step is not None:
            on_step({"step": len(state.sampled) - 1, "index": index, "delta": delta, "nnz": int(len(row[0]))})
    return SamplingRun(state.sampled, rows, state, deltas)


def run_sampling(profiles, batches, params: HyperParams | None = None, seed: int | None = None, on_step=None):
    """Sample kernel rows until the stopping rule fires.

    Returns ``(SparseAffinityRows, CoverageState)``.
    """
    inputs = validate_inputs(profiles, batches, params)
    params = inputs.params
    kernel = AffinityKernel(inputs.profiles, inputs.batches, params.k)
    run = run_adaptive(
        kernel,
        inputs.profiles.n,
        params.block_len,
        seed=params.seed if seed is None else seed,
        tau=params.tau,
        delta_against=params.delta_against,
        on_step=on_step,
    )
    rows = SparseAffinityRows.from_rows(run.indices, run.rows, inputs.profiles.n)
    return rows, run.state
