"""
Tests for RSSI features, regressors and localization metrics.
"""

import json

import numpy as np
import pytest

from fallchain.config import LocConfig
from fallchain.fingerprint import FingerprintTable
from fallchain.locmodel import (
    FeatureScaler,
    KNNRegressor,
    LocalizationModel,
    compare_models,
    engineer_features,
    evaluate_loc,
    feature_matrix,
    make_regressor,
    split_table,
)
from fallchain.mission import RadioModel, default_anchors, synth_fingerprint_table, synth_room
from fallchain.utils.exceptions import EmptyTestSet, EmptyVector, LengthMismatch, NotFitted, ParameterValidationError

FAST = LocConfig(forest_trees=5, mlp_epochs=20, tree_max_depth=8)


@pytest.fixture(scope="module")
def survey_table():
    room = synth_room(10.0, 10.0, 0.25)
    return synth_fingerprint_table(room, default_anchors(), RadioModel(sigma=1.0), n=200, seed=3)


class TestFeatures:
    """Mean, population std and visible-anchor count."""

    def test_two_anchors(self):
        row = engineer_features([-60.0, -80.0])
        assert (row.mean, row.std, row.anchors_visible) == (-70.0, 10.0, 2)

    def test_floor_not_visible(self):
        row = engineer_features([-50.0, -100.0], floor_dbm=-100.0)
        assert row.anchors_visible == 1
        assert row.mean == pytest.approx(-75.0)
        assert row.std == pytest.approx(25.0)

    def test_empty(self):
        with pytest.raises(EmptyVector):
            engineer_features([])

    def test_matrix_modes(self):
        rssi = np.array([[-60.0, -80.0], [-50.0, -100.0]])
        engineered = feature_matrix(rssi)
        assert engineered.shape == (2, 5)
        np.testing.assert_allclose(engineered[1], [-50.0, -100.0, -75.0, 25.0, 1.0])
        np.testing.assert_array_equal(feature_matrix(rssi, mode="raw"), rssi)
        with pytest.raises(ParameterValidationError):
            feature_matrix(rssi, mode="fancy")

    def test_scaler(self):
        scaler = FeatureScaler().fit(np.array([[0.0, 5.0], [10.0, 5.0]]))
        np.testing.assert_allclose(scaler.transform(np.array([[5.0, 5.0], [20.0, 1.0]])), [[0.0, 0.0], [3.0, 0.0]])
        with pytest.raises(NotFitted):
            FeatureScaler().transform(np.zeros((1, 2)))


class TestEvaluateLoc:
    def test_values(self):
        m = evaluate_loc(np.array([[0.0, 0.0]]), np.array([[3.0, 4.0]]))
        assert (m.mde, m.mae, m.mse) == (5.0, 3.5, 12.5)

    def test_perfect(self):
        points = np.array([[1.0, 2.0], [3.0, 4.0]])
        assert evaluate_loc(points, points).to_dict() == {"mae": 0.0, "mse": 0.0, "mde": 0.0}

    def test_errors(self):
        with pytest.raises(LengthMismatch):
            evaluate_loc(np.zeros((2, 2)), np.zeros((3, 2)))
        with pytest.raises(EmptyTestSet):
            evaluate_loc(np.zeros((0, 2)), np.zeros((0, 2)))


class TestRegressors:
    def test_knn_one_neighbor_memorizes(self):
        X = np.array([[0.0], [1.0], [2.0]])
        Y = np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 4.0]])
        knn = KNNRegressor(1).fit(X, Y)
        np.testing.assert_array_equal(knn.predict(X), Y)

    def test_knn_mean_of_neighbors(self):
        X = np.array([[0.0], [1.0], [10.0]])
        Y = np.array([[0.0, 0.0], [2.0, 2.0], [9.0, 9.0]])
        np.testing.assert_allclose(KNNRegressor(2).fit(X, Y).predict([[0.4]]), [[1.0, 1.0]])

    def test_unknown_kind(self):
        with pytest.raises(ParameterValidationError):
            make_regressor("svm")

    @pytest.mark.parametrize("kind", ["knn", "decision_tree", "random_forest", "mlp"])
    def test_fit_predict_shapes(self, kind):
        rng = np.random.default_rng(0)
        X = rng.uniform(-1, 1, size=(40, 3))
        Y = X[:, :2] * 4.0
        regressor = make_regressor(kind, FAST, seed=1).fit(X, Y)
        assert np.asarray(regressor.predict(X[:5])).reshape(-1, 2).shape == (5, 2)


class TestLocalizationModel:
    """Train, persist and query the end-to-end model."""

    @pytest.mark.parametrize("kind", ["knn", "decision_tree", "random_forest", "mlp"])
    def test_roundtrip(self, survey_table, kind):
        model = LocalizationModel.train(survey_table, kind, "engineered", FAST, seed=2)
        again = LocalizationModel.from_dict(json.loads(json.dumps(model.to_dict())))
        np.testing.assert_allclose(again.predict_table(survey_table), model.predict_table(survey_table))

    def test_locate_ignores_unmapped_anchor(self, survey_table):
        model = LocalizationModel.train(survey_table, "knn", "engineered", FAST)
        reading = {mac: float(v) for mac, v in zip(survey_table.macs, survey_table.rssi[0])}
        with_extra = dict(reading, **{"11:22:33:44:55:66": -30.0})
        assert model.locate(reading) == model.locate(with_extra)

    def test_column_order_does_not_matter(self, survey_table):
        model = LocalizationModel.train(survey_table, "knn", "raw", FAST)
        order = list(reversed(range(len(survey_table.macs))))
        shuffled = FingerprintTable(survey_table.timestamps, survey_table.xs, survey_table.ys,
                                    [survey_table.macs[k] for k in order], survey_table.rssi[:, order])
        np.testing.assert_allclose(model.predict_table(shuffled), model.predict_table(survey_table))

    def test_missing_cells_take_floor(self, survey_table):
        model = LocalizationModel.train(survey_table, "knn", "raw", FAST)
        sparse = np.full((1, len(survey_table.macs)), np.nan)
        sparse[0, 0] = -45.0
        dense = np.full((1, len(survey_table.macs)), FAST.floor_dbm)
        dense[0, 0] = -45.0
        np.testing.assert_array_equal(model.predict_rssi(sparse), model.predict_rssi(dense))

    def test_split_and_compare(self, survey_table):
        train, test = split_table(survey_table, 0.2, seed=0)
        assert (len(train), len(test)) == (160, 40)
        assert not set(train.timestamps) & set(test.timestamps)
        results = compare_models(train, test, kinds=("knn", "decision_tree"), config=FAST)
        assert set(results) == {"knn", "decision_tree"}
        assert set(results["knn"]) == {"raw", "engineered"}
        assert results["knn"]["raw"]["mde"] < 5.0

    def test_split_rejects_empty_side(self, survey_table):
        with pytest.raises(ParameterValidationError):
            split_table(survey_table, 0.0, seed=0)


@pytest.mark.slow
class TestSyntheticRadioAccuracy:
    """10 m room, five anchors, log-distance radio with 2 dB shadowing."""

    def test_random_forest_engineered(self):
        room = synth_room(10.0, 10.0, 0.25)
        table = synth_fingerprint_table(room, default_anchors(), RadioModel(sigma=2.0), n=1800, seed=7)
        train, test = table.take(np.arange(1500)), table.take(np.arange(1500, 1800))
        results = compare_models(train, test, kinds=("random_forest",), config=LocConfig(), seed=7)
        engineered = results["random_forest"]["engineered"]["mde"]
        raw = results["random_forest"]["raw"]["mde"]
        assert engineered <= 1.5
        # forest randomness differs between the two feature sets
        assert engineered <= raw + 0.05
