import numpy as np
import pytest

from batchsmooth.core import HyperParams
from batchsmooth.errors import DimensionMismatchError, HyperParamError
from batchsmooth.metrics import lisi, silhouette
from batchsmooth.pipeline import correct
from batchsmooth.preprocess import ControlMask, PreprocessConfig
from batchsmooth.synthetic import GmmSpec, generate_gmm


@pytest.fixture(scope="module")
def gmm():
    return generate_gmm(GmmSpec(L=4, B=3, n_per=20, sigma_batch=1.0, seed=3))


class TestCorrect:
    def test_shapes_and_counts(self, gmm):
        res = correct(gmm.profiles, gmm.batches, HyperParams(tau=10, block_len=10))
        assert res.corrected.data.shape == gmm.profiles.data.shape
        assert 1 <= res.m <= gmm.profiles.n
        assert 0 <= res.uncovered <= gmm.profiles.n
        assert set(res.timing) == {"preprocess", "sampling", "smoothing", "total"}

    def test_deterministic(self, gmm):
        a = correct(gmm.profiles, gmm.batches, HyperParams(seed=5)).corrected.data
        b = correct(gmm.profiles, gmm.batches, HyperParams(seed=5)).corrected.data
        assert a.tobytes() == b.tobytes()

    def test_mixes_batches(self):
        data = generate_gmm(GmmSpec(sigma_batch=1.0, seed=11))
        out = correct(data.profiles, data.batches).corrected
        assert lisi(out, data.batches, 30)[1] > lisi(data.profiles, data.batches, 30)[1]
        assert silhouette(data.profiles, data.labels)[1] - silhouette(out, data.labels)[1] <= 0.05

    def test_pca_embedding_keeps_features(self, gmm):
        res = correct(gmm.profiles, gmm.batches, HyperParams(pca_dims=3))
        assert res.corrected.d == gmm.profiles.d

    def test_preprocessing_drops_features(self, gmm):
        X = np.column_stack([gmm.profiles.data, np.full(gmm.profiles.n, 2.0)])
        controls = ControlMask(np.arange(X.shape[0]) % 5 == 0, np.zeros(X.shape[0]))
        res = correct(X, gmm.batches, preprocessing=PreprocessConfig(var_filter=0.0), controls=controls)
        assert res.kept == list(range(gmm.profiles.d))
        assert res.corrected.d == gmm.profiles.d

    def test_trace(self, gmm):
        events = []
        res = correct(gmm.profiles, gmm.batches, HyperParams(tau=5), on_step=events.append)
        assert len(events) == res.m

    def test_errors(self, gmm):
        with pytest.raises(DimensionMismatchError):
            correct(gmm.profiles, gmm.batches.labels[:-1])
        with pytest.raises(HyperParamError):
            correct(gmm.profiles, gmm.batches, HyperParams(pca_dims=99))
