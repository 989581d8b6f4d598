"""Acceptance criteria, each run at its stated size and tolerance.

Every test prints one ``[criterion N] PASS|FAIL`` line with the measured
quantities, then asserts.
"""

import time

import numpy as np
import pytest
from scipy.special import ndtri

import oracles
from batchsmooth.cli import main
from batchsmooth.core import BatchLabels, HyperParams, SparseAffinityRows
from batchsmooth.kernel import affinity_row, batch_local_scales, distance_row, elbow_sparsify
from batchsmooth.metrics import ari, graph_connectivity, lisi, nmi, silhouette
from batchsmooth.pipeline import correct
from batchsmooth.preprocess import INT_OFFSET, ControlMask, median_mad, rank_int, variation_filter
from batchsmooth.sampler import run_adaptive
from batchsmooth.smoother import nystrom_exact
from batchsmooth.synthetic import BlockModelSpec, GmmSpec, generate_block_affinity, generate_gmm
from batchsmooth.theory import (
    run_coverage_experiment,
    run_runtime_experiment,
    run_spectral_experiment,
    runtime_ratios,
)


@pytest.fixture()
def report(capsys):
    def emit(number, ok, detail):
        with capsys.disabled():
            print(f"\n[criterion {number}] {'PASS' if ok else 'FAIL'}: {detail}")

    return emit


def _dense_rows(A):
    def row(i):
        cols = np.flatnonzero(A[i])
        return cols, A[i, cols]

    return row


def test_noiseless_nystrom_is_exact(report):
    rng = np.random.default_rng(2024)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(50):
        K = int(rng.integers(1, 7))
        sizes = rng.multinomial(int(rng.integers(K, 121)) - K, np.ones(K) / K) + 1
        spec = BlockModelSpec(tuple(sizes), tuple(rng.uniform(0.1, 3.0, K)), seed=int(rng.integers(2**31)))
        model = generate_block_affinity(spec)
        labels = model.labels
        extra = int(rng.integers(0, 4))

        def covered(state, labels=labels, K=K, extra=extra):
            return bool((np.bincount(labels[state.sampled], minlength=K) >= 1).all()) and len(state.sampled) >= K + extra

        run = run_adaptive(_dense_rows(model.matrix), spec.n, K, seed=int(rng.integers(2**31)), stop=covered)
        rows = SparseAffinityRows.from_rows(run.indices, run.rows, spec.n, bounded=False)
        worst = max(worst, float(np.abs(nystrom_exact(rows) - model.clean).max()))
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-8 and elapsed < 10
    report(1, ok, f"max |A_hat - A0| = {worst:.2e} (<= 1e-8), {elapsed:.1f}s (< 10s)")
    assert ok


def test_adaptive_coverage_beats_uniform(report):
    spec = BlockModelSpec((910,) + (10,) * 9, (1.0,) * 10)
    start = time.perf_counter()
    adaptive = run_coverage_experiment(spec, t=3, m=30, trials=200, sampler="adaptive")
    uniform = run_coverage_experiment(spec, t=3, m=30, trials=200, sampler="uniform")
    elapsed = time.perf_counter() - start
    ok = adaptive.success_rate == 1.0 and uniform.success_rate < 0.5 and elapsed < 30
    report(
        2,
        ok,
        f"adaptive success {adaptive.success_rate:.3f} (== 1), uniform {uniform.success_rate:.3f} (< 0.5), "
        f"{elapsed:.1f}s (< 30s)",
    )
    assert ok


def test_spectral_error_rate(report):
    n = 400
    spec = BlockModelSpec((100,) * 4, (1.0, 1.5, 2.0, 2.5), lam=10.0 * n, seed=7)
    start = time.perf_counter()
    res = run_spectral_experiment(spec, [4, 8, 16, 32, 64], trials=20)
    elapsed = time.perf_counter() - start
    ok = -0.70 <= res.slope <= -0.30 and elapsed < 300
    report(
        3,
        ok,
        f"slope of median ||A_hat - A0||_op vs t = {res.slope:.3f} (in [-0.70, -0.30]); "
        f"medians {np.array2string(res.median_errors, precision=4)}; "
        f"against A0 + E[E] the slope is {res.centered_slope:.3f}; {elapsed:.1f}s (< 300s)",
    )
    assert ok


def test_runtime_near_linear(report):
    start = time.perf_counter()
    table = run_runtime_experiment([5000, 10000, 20000, 40000], GmmSpec(L=10, B=5, d=10), repeats=5)
    elapsed = time.perf_counter() - start
    ratios = runtime_ratios(table)
    ok = max(ratios) <= 2.4 and elapsed < 600
    summary = ", ".join(f"n={r.n}: {r.wall_time:.2f}s (mean m {r.m:.0f})" for r in table)
    report(4, ok, f"doubling ratios {np.round(ratios, 2).tolist()} (<= 2.4); {summary}; {elapsed:.1f}s (< 600s)")
    assert ok


def test_correction_quality(report):
    start = time.perf_counter()
    lines, ok = [], True
    for seed in range(10):
        data = generate_gmm(GmmSpec(sigma_label=1.0, sigma_batch=1.0, seed=seed))
        out = correct(data.profiles, data.batches, HyperParams(seed=seed)).corrected
        lisi_before = lisi(data.profiles, data.batches, 30)[1]
        lisi_after = lisi(out, data.batches, 30)[1]
        sil_drop = silhouette(data.profiles, data.labels)[1] - silhouette(out, data.labels)[1]
        ok &= lisi_after > lisi_before and sil_drop <= 0.05
        lines.append(f"{lisi_before:.3f}->{lisi_after:.3f}/{sil_drop:+.3f}")
    elapsed = time.perf_counter() - start
    ok &= elapsed < 120
    report(5, ok, f"LISI-batch before->after / silhouette-label drop per seed: {', '.join(lines)}; {elapsed:.1f}s (< 120s)")
    assert ok


def test_metric_oracles(report):
    rng = np.random.default_rng(6)
    start = time.perf_counter()
    worst = {"silhouette": 0.0, "lisi": 0.0, "connectivity": 0.0, "ari": 0.0, "nmi": 0.0}
    for _ in range(200):
        n = int(rng.integers(4, 31))
        L = int(rng.integers(2, min(5, n) + 1))
        labels = np.concatenate([np.arange(L), rng.integers(0, L, n - L)])
        rng.shuffle(labels)
        X = rng.standard_normal((n, int(rng.integers(1, 4)))) + labels[:, None]
        k = int(rng.integers(1, n))
        other = rng.integers(0, int(rng.integers(1, 6)), n)
        Xl, ll, ol = X.tolist(), labels.tolist(), other.tolist()
        worst["silhouette"] = max(worst["silhouette"], abs(silhouette(X, labels)[0] - oracles.silhouette(Xl, ll)))
        worst["lisi"] = max(worst["lisi"], abs(lisi(X, labels, k)[0] - oracles.lisi(Xl, ll, k)))
        worst["connectivity"] = max(
            worst["connectivity"], abs(graph_connectivity(X, labels, k) - oracles.graph_connectivity(Xl, ll, k))
        )
        worst["ari"] = max(worst["ari"], abs(ari(labels, other) - oracles.ari(ll, ol)))
        worst["nmi"] = max(worst["nmi"], abs(nmi(labels, other) - oracles.nmi(ll, ol)))
    elapsed = time.perf_counter() - start
    ok = max(worst.values()) <= 1e-10 and elapsed < 30
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    report(6, ok, f"max deviation from oracles over 200 instances: {detail} (<= 1e-10); {elapsed:.1f}s (< 30s)")
    assert ok


def test_preprocessing_formulas(report):
    rng = np.random.default_rng(7)
    # rank-INT: the median element maps to exactly 0, and the offset is 3/8
    median_zero = True
    for N in (5, 21, 99):
        x = rng.permutation(np.arange(float(N)))
        median_zero &= rank_int(x)[x == (N - 1) / 2][0] == 0.0
    n4 = rank_int(np.array([10.0, 20.0, 30.0, 40.0]))
    offset_ok = INT_OFFSET == 3 / 8 and np.allclose(n4, ndtri((np.arange(1, 5) - 0.375) / 4.25), rtol=0, atol=1e-15)
    # MAD against the sort-based oracle
    mad_err = 0.0
    for _ in range(100):
        col = rng.standard_normal(int(rng.integers(2, 80))) * rng.uniform(0.1, 100)
        med, mad = median_mad(col[:, None])
        mad_err = max(mad_err, abs(med[0] - oracles.median(col.tolist())), abs(mad[0] - oracles.mad(col.tolist())))
    # variation filter with any threshold drops constant features
    const_dropped = True
    for threshold in (0.0, 1e-6, 1e-3, 0.1):
        X = rng.standard_normal((30, 5)) + 4
        X[:, 1] = 0.0
        X[:, 3] = 2.5
        kept = variation_filter(X, ControlMask(np.ones(30, dtype=bool), np.zeros(30)), threshold)
        const_dropped &= 1 not in kept and 3 not in kept
    ok = median_zero and offset_ok and mad_err <= 1e-12 and const_dropped
    report(
        7,
        ok,
        f"INT median->0 {median_zero}, c=3/8 {offset_ok}, MAD max error {mad_err:.1e} (<= 1e-12), "
        f"constant features dropped {const_dropped}",
    )
    assert ok


def test_kernel_correctness(report):
    rng = np.random.default_rng(8)
    scale_err = aff_err = 0.0
    elbow_mismatch = 0
    for trial in range(100):
        B = int(rng.integers(1, 6))
        n = int(rng.integers(2 * B + 2, 201))
        batches = np.concatenate([np.arange(1, B + 1), np.arange(1, B + 1), rng.integers(1, B + 1, n - 2 * B)])
        rng.shuffle(batches)
        X = rng.standard_normal((n, int(rng.integers(1, 6)))) + 2 * rng.standard_normal((B, 1))[batches - 1]
        anchor, k = int(rng.integers(n)), int(rng.integers(1, 8))
        dist = distance_row(X, anchor)
        scales = batch_local_scales(dist, BatchLabels(batches), anchor, k)
        want = np.array(oracles.local_scales(X.tolist(), batches.tolist(), anchor, k))
        scale_err = max(scale_err, float(np.max(np.abs(scales.scales - want) / want)))
        row = affinity_row(dist, scales, batches)
        aff_err = max(aff_err, float(np.max(np.abs(row - oracles.affinity(X.tolist(), batches.tolist(), anchor, k)))))
        if trial % 4 == 0:
            row = rng.choice([0.0, 0.3, 0.7, 1.0], size=n)
        cols, vals = elbow_sparsify(row)
        want_cols, want_vals = oracles.elbow(row.tolist())
        elbow_mismatch += cols.tolist() != want_cols or vals.tolist() != want_vals
    ok = scale_err <= 1e-14 and aff_err <= 1e-14 and elbow_mismatch == 0
    report(
        8,
        ok,
        f"local-scale relative error {scale_err:.1e}, affinity error {aff_err:.1e} (<= 1e-14), "
        f"elbow mismatches {elbow_mismatch}/100",
    )
    assert ok


def test_determinism(report, tmp_path):
    data_path = tmp_path / "data.csv"
    assert main(["synth", "--output", str(data_path), "--sigma-batch", "1.0", "--seed", "9"]) == 0
    outputs = []
    for name in ("a", "b"):
        out = tmp_path / f"{name}.csv"
        code = main([
            "correct", "--input", str(data_path), "--output", str(out), "--batch-col", "batch",
            "--label-col", "label", "--seed", "4", "--dump-rows", str(tmp_path / f"{name}.bin"),
        ])
        assert code == 0
        outputs.append((out.read_bytes(), (tmp_path / f"{name}.bin").read_bytes()))
    ok = outputs[0] == outputs[1]
    report(9, ok, f"corrected CSV ({len(outputs[0][0])} bytes) and sampled rows byte-identical: {ok}")
    assert ok
