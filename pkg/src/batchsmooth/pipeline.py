"""End-to-end correction: preprocess, sample affinity rows, smooth."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .core import HyperParams, ProfileMatrix, SparseAffinityRows, validate_inputs
from .kernel import AffinityKernel
from .preprocess import ControlMask, PreprocessConfig, preprocess
from .sampler import CoverageState, run_adaptive
from .smoother import row_normalize, smooth


@dataclass
class CorrectionResult:
    corrected: ProfileMatrix
    rows: SparseAffinityRows
    state: CoverageState
    kept: list  # original feature positions present in ``corrected``
    uncovered: int
    timing: dict = field(default_factory=dict)

    @property
    def m(self) -> int:
        return self.rows.m


def correct(
    profiles,
    batches,
    params: HyperParams | None = None,
    preprocessing: PreprocessConfig | None = None,
    controls: ControlMask | None = None,
    on_step=None,
) -> CorrectionResult:
    """Correct ``profiles`` for batch effects.

    Affinities are computed on the PCA embedding when ``pca_dims`` is set
    (in either ``params`` or ``preprocessing``); smoothing is always applied to
    the preprocessed feature matrix so the output keeps feature columns.
    """
    inputs = validate_inputs(profiles, batches, params)
    params = inputs.params
    preprocessing = preprocessing or PreprocessConfig()
    if params.pca_dims is not None and preprocessing.pca_dims is None:
        preprocessing = PreprocessConfig(**{**preprocessing.__dict__, "pca_dims": params.pca_dims})
    timing = {}
    t0 = time.perf_counter()
    prep = preprocess(inputs.profiles, preprocessing, controls)
    t1 = time.perf_counter()
    kernel = AffinityKernel(prep.embedding, inputs.batches, params.k)
    run = run_adaptive(
        kernel,
        prep.embedding.n,
        params.block_len,
        seed=params.seed,
        tau=params.tau,
        delta_against=params.delta_against,
        on_step=on_step,
    )
    rows = SparseAffinityRows.from_rows(run.indices, run.rows, prep.embedding.n)
    t2 = time.perf_counter()
    out, uncovered = smooth(row_normalize(rows), prep.profiles)
    t3 = time.perf_counter()
    timing.update(preprocess=t1 - t0, sampling=t2 - t1, smoothing=t3 - t2, total=t3 - t0)
    return CorrectionResult(ProfileMatrix(out), rows, run.state, prep.kept, uncovered, timing)


def correct_array(profiles, batches, **kwargs) -> np.ndarray:
    """Convenience wrapper returning just the corrected matrix."""
    return correct(profiles, batches, **kwargs).corrected.data
