"""
Tests for CART trees and bootstrap forests.
"""

import numpy as np
import pytest

from fallchain.trees import DecisionTree, RandomForest, resolve_max_features
from fallchain.utils.exceptions import EmptyTrainSet, NotFitted, ParameterValidationError


def step_data():
    X = np.arange(10, dtype=float).reshape(-1, 1)
    y = np.where(X[:, 0] < 5, 1.0, 3.0)
    return X, y


class TestDecisionTree:
    """Regression and Gini trees on small hand-made sets."""

    def test_step_function(self):
        X, y = step_data()
        tree = DecisionTree("mse", max_depth=3, leaf_min=1).fit(X, y)
        np.testing.assert_allclose(tree.predict(X), y)
        assert tree.threshold[0] == pytest.approx(4.5)

    def test_threshold_goes_left(self):
        X, y = step_data()
        tree = DecisionTree("mse", max_depth=1, leaf_min=1).fit(X, y)
        assert tree.predict(np.array([[4.5]]))[0] == pytest.approx(1.0)
        assert tree.predict(np.array([[4.50001]]))[0] == pytest.approx(3.0)

    def test_pure_node_is_leaf(self):
        X = np.arange(6, dtype=float).reshape(-1, 1)
        tree = DecisionTree("mse", leaf_min=1).fit(X, np.full(6, 2.0))
        assert tree.node_count == 1

    def test_depth_one_is_stump(self):
        X = np.random.default_rng(0).normal(size=(50, 3))
        tree = DecisionTree("mse", max_depth=1, leaf_min=1).fit(X, X[:, 0] ** 2)
        assert tree.node_count == 3

    def test_multi_output(self):
        X, y = step_data()
        Y = np.column_stack([y, -y])
        tree = DecisionTree("mse", leaf_min=1).fit(X, Y)
        np.testing.assert_allclose(tree.predict(X), Y)

    def test_gini_classification(self):
        X = np.array([[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]])
        y = np.array([0, 0, 1, 1])
        tree = DecisionTree("gini", leaf_min=1).fit(X, y)
        np.testing.assert_array_equal(tree.predict(X), y)
        np.testing.assert_allclose(tree.predict_proba(X).sum(axis=1), 1.0)

    def test_errors(self):
        with pytest.raises(NotFitted):
            DecisionTree().predict(np.zeros((1, 1)))
        with pytest.raises(EmptyTrainSet):
            DecisionTree().fit(np.zeros((0, 2)), np.zeros(0))
        with pytest.raises(ParameterValidationError):
            DecisionTree("entropy")

    def test_dict_roundtrip(self):
        X, y = step_data()
        tree = DecisionTree("mse", leaf_min=1).fit(X, y)
        again = DecisionTree.from_dict(tree.to_dict())
        np.testing.assert_array_equal(again.predict(X), tree.predict(X))


class TestRandomForest:
    def test_seeded(self):
        rng = np.random.default_rng(1)
        X = rng.uniform(0, 10, size=(80, 4))
        y = X[:, :2]
        a = RandomForest(n_trees=8, seed=5).fit(X, y)
        b = RandomForest(n_trees=8, seed=5, jobs=4).fit(X, y)
        np.testing.assert_array_equal(a.predict(X), b.predict(X))

    def test_regression_quality(self):
        rng = np.random.default_rng(2)
        X = rng.uniform(0, 10, size=(200, 2))
        y = X[:, 0] + 0.01 * rng.normal(size=200)
        forest = RandomForest(n_trees=20, max_features="all", seed=0).fit(X, y)
        error = np.abs(forest.predict(X) - X[:, 0]).mean()
        assert error < 0.5

    def test_classification_vote(self):
        X = np.array([[0.0], [0.1], [0.2], [0.9], [1.0], [1.1]] * 5)
        y = np.array([0, 0, 0, 1, 1, 1] * 5)
        forest = RandomForest("gini", n_trees=9, leaf_min=1, seed=3).fit(X, y)
        np.testing.assert_array_equal(forest.predict(np.array([[0.05], [1.05]])), [0, 1])
        proba = forest.predict_proba(np.array([[0.05]]))
        assert proba.shape == (1, 2)
        assert proba.sum() == pytest.approx(1.0)

    def test_dict_roundtrip(self):
        X = np.random.default_rng(3).normal(size=(30, 3))
        forest = RandomForest(n_trees=3, seed=1).fit(X, X[:, 0])
        again = RandomForest.from_dict(forest.to_dict())
        np.testing.assert_array_equal(again.predict(X), forest.predict(X))

    def test_invalid(self):
        with pytest.raises(ParameterValidationError):
            RandomForest(n_trees=0)
        with pytest.raises(ParameterValidationError):
            RandomForest(bootstrap=1.5)
        with pytest.raises(NotFitted):
            RandomForest().predict(np.zeros((1, 1)))


class TestMaxFeatures:
    def test_resolve(self):
        assert resolve_max_features("sqrt", 10) == 3
        assert resolve_max_features("all", 10) == 10
        assert resolve_max_features(None, 4) == 4
        assert resolve_max_features(20, 4) == 4
        with pytest.raises(ParameterValidationError):
            resolve_max_features("half", 4)
