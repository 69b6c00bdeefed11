"""The sklearn-facing wrapper: validation, fit/predict contract, ecosystem
compatibility (get_params/clone)."""

import numpy as np
import numpy.testing as npt
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from cenet.estimator import CENetSegmenter, check_image_batch, check_mask_batch
from cenet.train import synth_dataset


def small_problem(n=4, seed=11):
    samples = synth_dataset(n, (32, 32), 2, seed=seed)
    X = np.concatenate([s.image for s in samples], axis=0)
    y = np.stack([s.mask for s in samples], axis=0)
    return X, y


def make_estimator(**overrides):
    defaults = dict(stage_channels=(16, 16, 16, 16), steps=4, lr=1e-3, seed=2)
    defaults.update(overrides)
    return CENetSegmenter(**defaults)


class TestValidation:
    def test_image_batch_canonicalized(self):
        X = check_image_batch(np.zeros((2, 32, 32)))
        assert X.shape == (2, 1, 32, 32)

    def test_bad_extent_rejected(self):
        with pytest.raises(ValueError, match="divisible by 32"):
            check_image_batch(np.zeros((1, 30, 30)))

    def test_nonfinite_rejected(self):
        bad = np.zeros((1, 32, 32))
        bad[0, 0, 0] = np.nan
        with pytest.raises(ValueError, match="non-finite"):
            check_image_batch(bad)

    def test_mask_shape_mismatch_rejected(self):
        with pytest.raises(ValueError, match="shape"):
            check_mask_batch(np.zeros((2, 16, 16)), 2, (32, 32))

    def test_fractional_mask_rejected(self):
        with pytest.raises(ValueError, match="integer"):
            check_mask_batch(np.full((1, 32, 32), 0.5), 1, (32, 32))

    def test_float_integer_mask_accepted(self):
        out = check_mask_batch(np.ones((1, 32, 32)), 1, (32, 32))
        assert out.dtype == np.int64


class TestEstimatorContract:
    def test_fit_predict_shapes(self):
        X, y = small_problem()
        est = make_estimator().fit(X, y)
        pred = est.predict(X)
        assert pred.shape == (4, 32, 32)
        proba = est.predict_proba(X[:2])
        assert proba.shape == (2, 2, 32, 32)
        npt.assert_allclose(proba.sum(axis=1), 1.0, rtol=0, atol=1e-12)

    def test_predict_before_fit_raises(self):
        X, _ = small_problem()
        with pytest.raises(NotFittedError):
            make_estimator().predict(X)

    def test_score_in_unit_interval(self):
        X, y = small_problem()
        est = make_estimator().fit(X, y)
        score = est.score(X, y)
        assert 0.0 <= score <= 1.0

    def test_refit_deterministic(self):
        X, y = small_problem()
        a = make_estimator().fit(X, y)
        b = make_estimator().fit(X, y)
        npt.assert_array_equal(a.predict(X), b.predict(X))
        assert a.loss_trace_ == b.loss_trace_

    def test_class_count_inferred(self):
        samples = synth_dataset(3, (32, 32), 3, seed=4)
        X = np.concatenate([s.image for s in samples], axis=0)
        y = np.stack([s.mask for s in samples], axis=0)
        est = make_estimator().fit(X, y)
        assert est.n_classes_ == 3
        assert est.predict_proba(X[:1]).shape == (1, 3, 32, 32)


class TestSklearnCompat:
    def test_get_params_roundtrip(self):
        est = make_estimator(heads=1)
        params = est.get_params()
        assert params["heads"] == 1
        assert params["stage_channels"] == (16, 16, 16, 16)
        est.set_params(steps=9)
        assert est.steps == 9

    def test_clone_preserves_params(self):
        est = make_estimator(enable_wnlb=False, lr=5e-3)
        cloned = clone(est)
        assert cloned.get_params() == est.get_params()

    def test_channel_mismatch_at_predict_rejected(self):
        X, y = small_problem()
        est = make_estimator().fit(X, y)
        with pytest.raises(ValueError, match="channels"):
            est.predict(np.zeros((1, 3, 32, 32)))
