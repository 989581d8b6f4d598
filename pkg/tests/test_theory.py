import numpy as np
import pytest

from batchsmooth.errors import ValidationError
from batchsmooth.synthetic import BlockModelSpec, GmmSpec
from batchsmooth.theory import (
    noise_mean,
    power_iteration_opnorm,
    run_coverage_experiment,
    run_inverse_gap_experiment,
    run_runtime_experiment,
    run_spectral_experiment,
    runtime_ratios,
)


class TestPowerIteration:
    def test_matches_dense_solver(self):
        rng = np.random.default_rng(0)
        for n in (5, 50, 200):
            M = rng.standard_normal((n, n))
            M = M + M.T
            assert power_iteration_opnorm(M) == pytest.approx(np.linalg.norm(M, 2), rel=1e-6)

    def test_rectangular(self):
        M = np.random.default_rng(1).standard_normal((30, 10))
        assert power_iteration_opnorm(M) == pytest.approx(np.linalg.norm(M, 2), rel=1e-6)

    def test_zero(self):
        assert power_iteration_opnorm(np.zeros((4, 4))) == 0.0


class TestCoverage:
    def test_equal_clusters_one_per_block(self):
        spec = BlockModelSpec((20,) * 10, (1.0,) * 10)
        res = run_coverage_experiment(spec, t=1, m=10, trials=25)
        assert res.success_rate == 1.0
        assert np.all(res.counts == 1)

    def test_exact_at_m_equals_tk(self):
        spec = BlockModelSpec((30, 5, 12, 8), (1.0, 0.3, 2.0, 0.7))
        res = run_coverage_experiment(spec, t=4, m=16, trials=20)
        assert res.success_rate == 1.0

    def test_counts_sum_to_m(self):
        spec = BlockModelSpec((40, 3, 3), (1.0, 1.0, 1.0))
        for sampler in ("adaptive", "uniform"):
            res = run_coverage_experiment(spec, t=1, m=7, trials=10, sampler=sampler)
            assert np.all(res.counts.sum(axis=1) == 7)

    def test_t_zero(self):
        spec = BlockModelSpec((10, 10), (1.0, 1.0))
        assert run_coverage_experiment(spec, t=0, m=0, trials=5, sampler="uniform").success_rate == 1.0

    def test_adaptive_beats_uniform_on_skew(self):
        spec = BlockModelSpec((910,) + (10,) * 9, (1.0,) * 10)
        adaptive = run_coverage_experiment(spec, t=1, m=10, trials=200)
        uniform = run_coverage_experiment(spec, t=1, m=10, trials=200, sampler="uniform")
        assert adaptive.success_rate > uniform.success_rate

    def test_bad_m(self):
        with pytest.raises(ValidationError):
            run_coverage_experiment(BlockModelSpec((2,), (1.0,)), t=1, m=3, trials=1)


class TestSpectral:
    def test_noiseless_exact(self):
        spec = BlockModelSpec((15, 25, 20), (1.0, 2.0, 0.5))
        res = run_spectral_experiment(spec, [1, 2, 4], trials=5)
        assert res.errors.max() <= 1e-8

    def test_medians_non_increasing(self):
        spec = BlockModelSpec((100,) * 4, (1.0, 1.5, 2.0, 2.5), lam=4000.0)
        res = run_spectral_experiment(spec, [4, 8, 16], trials=20)
        med = res.median_errors
        assert np.all(med >= 0)
        assert np.all(np.diff(med) <= 0)
        assert np.all(np.diff(res.median_centered_errors) <= 0)

    def test_stopped_mode_uses_tk_rows(self):
        spec = BlockModelSpec((50,) * 3, (1.0, 2.0, 3.0), lam=1000.0)
        res = run_spectral_experiment(spec, [2, 5], trials=4)
        np.testing.assert_array_equal(np.median(res.m, axis=1), [6, 15])

    def test_draws_mode_row_count(self):
        spec = BlockModelSpec((50,) * 4, (1.0,) * 4, lam=1000.0)
        res = run_spectral_experiment(spec, [2], trials=2, mode="draws", C=2.0)
        assert res.m[0, 0] == int(np.ceil(2.0 * 2 * 4 * np.log(4)))

    def test_noise_mean(self):
        np.testing.assert_array_equal(noise_mean(2, 2.0), [[1.0, 0.5], [0.5, 1.0]])
        assert not noise_mean(3, 0.0).any()

    def test_t_too_large(self):
        with pytest.raises(ValidationError):
            run_spectral_experiment(BlockModelSpec((3, 3), (1.0, 1.0)), [4], trials=1)


class TestRuntime:
    def test_single_row(self):
        table = run_runtime_experiment([200], GmmSpec(L=2, B=2), repeats=1)
        assert len(table) == 1
        assert table[0].n == 200 and table[0].wall_time > 0
        assert 1 <= table[0].m <= 200
        assert runtime_ratios(table) == []


class TestSpectralRate:
    def test_centered_error_slope(self):
        # the noise has mean (11^T + I)/lam; measured against A0 + E[E] the error decays at rate t^-1/2
        spec = BlockModelSpec((100,) * 4, (1.0, 1.5, 2.0, 2.5), lam=4000.0, seed=7)
        res = run_spectral_experiment(spec, [4, 8, 16, 32, 64], trials=20)
        assert -0.70 <= res.centered_slope <= -0.30


class TestInverseGap:
    def test_noiseless_gap_vanishes(self):
        spec = BlockModelSpec((40, 10, 25), (1.0, 0.4, 2.0))
        assert run_inverse_gap_experiment(spec, [1, 3], trials=3).max() <= 1e-10

    def test_noise_opens_a_small_gap(self):
        spec = BlockModelSpec((50,) * 3, (1.0, 1.5, 2.0), lam=1500.0, seed=2)
        gaps = run_inverse_gap_experiment(spec, [2, 8], trials=5)
        assert (gaps > 0).all() and np.median(gaps) < 0.5
