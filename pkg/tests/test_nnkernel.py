"""
Tests for the parameter layout, losses, recurrent models and gradient checks.
"""

import math

import numpy as np
import pytest

from fallchain.nnkernel import (
    DenseNet,
    FrozenEncoderClassifier,
    ModelParams,
    SequenceAutoencoder,
    backward,
    cce_loss,
    forward_autoencoder,
    grad_check,
    minibatches,
    model_from_config,
    mse_loss,
    sgd_epoch,
    sgd_step,
)
from fallchain.utils.exceptions import (
    ArtifactError,
    LayoutMismatch,
    NonDistribution,
    NonFiniteGradient,
    ShapeMismatch,
)

SMALL = (4, 3, 2)


def small_windows(n=3, l=5, seed=0):
    return np.random.default_rng(seed).uniform(-1, 1, size=(n, l, 6))


class TestModelParams:
    """Flat vectors with a named block layout."""

    def test_views_share_storage(self):
        params = ModelParams((("a", (2, 2)), ("b", (3,))), np.arange(7.0))
        np.testing.assert_array_equal(params.view("b"), [4.0, 5.0, 6.0])
        params.view("a")[0, 0] = 9.0
        assert params.vector[0] == 9.0

    def test_size_mismatch(self):
        with pytest.raises(LayoutMismatch):
            ModelParams((("a", (2, 2)),), np.zeros(5))

    def test_dict_roundtrip_keeps_digest(self):
        model = SequenceAutoencoder(SMALL, "gated", seed=3)
        again = ModelParams.from_dict(model.params.to_dict())
        assert again.digest() == model.params.digest()

    def test_bad_version(self):
        data = ModelParams((("a", (1,)),), np.zeros(1)).to_dict()
        data["version"] = 7
        with pytest.raises(ArtifactError):
            ModelParams.from_dict(data)

    def test_mask_and_subset(self):
        model = FrozenEncoderClassifier(SMALL, "simple_tanh", (3,), seed=1)
        mask = model.params.mask(["enc"])
        assert mask.sum() == len(model.params.subset(["enc"]))
        assert not model.trainable_mask()[mask].any()


class TestSgdAndLosses:
    def test_sgd_step(self):
        params = ModelParams((("w", (1,)),), np.array([1.0]))
        grads = ModelParams((("w", (1,)),), np.array([0.5]))
        assert sgd_step(params, grads, 0.1).vector[0] == pytest.approx(0.95)

    def test_sgd_rejects_nan(self):
        params = ModelParams((("w", (1,)),), np.array([1.0]))
        grads = ModelParams((("w", (1,)),), np.array([np.nan]))
        with pytest.raises(NonFiniteGradient):
            sgd_step(params, grads, 0.1)

    def test_sgd_layout_mismatch(self):
        params = ModelParams((("w", (1,)),), np.array([1.0]))
        grads = ModelParams((("v", (1,)),), np.array([1.0]))
        with pytest.raises(LayoutMismatch):
            sgd_step(params, grads, 0.1)

    def test_mse(self):
        assert mse_loss(np.ones((2, 3)), np.ones((2, 3))) == 0.0
        assert mse_loss(np.array([0.0, 2.0]), np.array([0.0, 0.0])) == pytest.approx(2.0)
        with pytest.raises(ShapeMismatch):
            mse_loss(np.zeros(2), np.zeros(3))

    def test_cce(self):
        assert cce_loss(np.array([0.5, 0.5]), 1) == pytest.approx(math.log(2))
        assert cce_loss(np.array([0.0, 1.0]), 1) == pytest.approx(0.0)
        assert cce_loss(np.array([1.0, 0.0]), 1) == math.inf

    def test_cce_rejects_non_distribution(self):
        with pytest.raises(NonDistribution):
            cce_loss(np.array([0.7, 0.7]), 0)

    def test_minibatches(self):
        assert len(minibatches(10, None, None)) == 1
        batches = minibatches(10, 4, np.random.default_rng(0))
        assert [len(b) for b in batches] == [4, 4, 2]
        assert sorted(np.concatenate(batches).tolist()) == list(range(10))


class TestAutoencoder:
    """Stacked recurrent encoder/decoder."""

    @pytest.mark.parametrize("kind", ["simple_tanh", "gated"])
    def test_shapes(self, kind):
        model = SequenceAutoencoder(SMALL, kind, seed=0)
        X = small_windows()
        assert model.forward(X).shape == X.shape
        assert forward_autoencoder(model, X[0]).shape == (5, 6)
        assert model.embed(X).shape == (3, 2)

    def test_zero_params_reconstruct_zero(self):
        model = SequenceAutoencoder(SMALL, "gated", zeros=True)
        np.testing.assert_array_equal(model.forward(small_windows()), 0.0)

    def test_rejects_wrong_channels(self):
        model = SequenceAutoencoder(SMALL, "gated")
        with pytest.raises(ShapeMismatch):
            model.forward(np.zeros((2, 5, 4)))

    def test_deterministic_init(self):
        a = SequenceAutoencoder(SMALL, "gated", seed=9)
        b = SequenceAutoencoder(SMALL, "gated", seed=9)
        assert a.params.digest() == b.params.digest()

    @pytest.mark.parametrize("kind", ["simple_tanh", "gated"])
    def test_grad_check(self, kind):
        model = SequenceAutoencoder(SMALL, kind, seed=2)
        assert grad_check(model, small_windows(2, 4)) < 1e-4

    def test_training_reduces_loss(self):
        model = SequenceAutoencoder(SMALL, "gated", seed=4)
        X = small_windows(6, 5, seed=1) * 0.5
        before = model.reconstruction_loss(X)
        params = model.params
        for _ in range(20):
            params, _ = sgd_epoch(model, params, X, None, 0.1, None, None)
        assert model.reconstruction_loss(X, params) < before


class TestFrozenEncoderClassifier:
    """Encoder copied from the autoencoder, only the head trains."""

    def test_encoder_copied(self):
        ae = SequenceAutoencoder(SMALL, "gated", seed=5)
        clf = FrozenEncoderClassifier.from_autoencoder(ae, (3,), seed=6)
        np.testing.assert_array_equal(clf.params.view("enc0.W"), ae.params.view("enc0.W"))
        np.testing.assert_allclose(clf.embed(small_windows()), ae.embed(small_windows()))

    def test_encoder_gradient_is_zero(self):
        ae = SequenceAutoencoder(SMALL, "gated", seed=5)
        clf = FrozenEncoderClassifier.from_autoencoder(ae, (3,), seed=6)
        grads = backward(clf, (small_windows(), np.array([0, 1, 1])))
        assert not np.any(grads.vector[grads.mask(["enc"])])
        assert np.any(grads.vector[grads.mask(["head", "cls"])])

    def test_probabilities(self):
        clf = FrozenEncoderClassifier(SMALL, "simple_tanh", (3,), seed=0)
        probs = clf.predict_proba(small_windows())
        np.testing.assert_allclose(probs.sum(axis=1), 1.0)
        assert set(clf.predict(small_windows()).tolist()) <= {0, 1}

    def test_grad_check(self):
        clf = FrozenEncoderClassifier(SMALL, "gated", (3,), seed=8)
        assert grad_check(clf, (small_windows(4, 4), np.array([0, 1, 0, 1]))) < 1e-4


class TestDenseNet:
    def test_grad_check(self):
        net = DenseNet((3, 5, 2), seed=1)
        X = np.random.default_rng(0).normal(size=(6, 3))
        Y = np.random.default_rng(1).normal(size=(6, 2))
        assert grad_check(net, (X, Y)) < 1e-4

    def test_config_rebuild(self):
        net = DenseNet((3, 4, 2), seed=1)
        again = model_from_config(net.config(), net.params)
        X = np.ones((2, 3))
        np.testing.assert_array_equal(again.forward(X), net.forward(X))

    def test_unknown_kind(self):
        with pytest.raises(ArtifactError):
            model_from_config({"kind": "transformer"})
