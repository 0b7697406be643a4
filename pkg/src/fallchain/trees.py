"""
CART decision trees and bootstrap forests.

Trees are stored as flat node arrays (feature, threshold, left, right, value)
so they serialize to plain JSON. Regression splits minimize the summed squared
error over all targets; classification splits minimize weighted Gini impurity,
which is the same quantity computed on one-hot targets.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from typing import Dict, List, Optional, Union

import numpy as np

from fallchain.utils.exceptions import ArtifactError, EmptyTrainSet, NotFitted, ParameterValidationError
from fallchain.utils.seeding import stream

logger = logging.getLogger(__name__)

CRITERIA = ("mse", "gini")
LEAF = -1


def resolve_max_features(max_features: Union[str, int, None], n_features: int) -> int:
    if max_features in (None, "all"):
        return n_features
    if max_features == "sqrt":
        return max(1, int(math.sqrt(n_features)))
    if isinstance(max_features, (int, np.integer)) and max_features >= 1:
        return min(int(max_features), n_features)
    raise ParameterValidationError(f"max_features must be 'sqrt', 'all' or a positive integer, got {max_features!r}")


class DecisionTree:
    """Axis-aligned binary tree; ``x <= threshold`` goes left."""

    def __init__(self, criterion: str = "mse", max_depth: int = 12, leaf_min: int = 2,
                 max_features: Union[str, int, None] = "all", n_classes: Optional[int] = None):
        if criterion not in CRITERIA:
            raise ParameterValidationError(f"criterion must be one of {CRITERIA}")
        if max_depth < 1 or leaf_min < 1:
            raise ParameterValidationError("max_depth and leaf_min must be >= 1")
        self.criterion = criterion
        self.max_depth = max_depth
        self.leaf_min = leaf_min
        self.max_features = max_features
        self.n_classes = n_classes
        self.feature: Optional[np.ndarray] = None
        self.threshold: Optional[np.ndarray] = None
        self.left: Optional[np.ndarray] = None
        self.right: Optional[np.ndarray] = None
        self.value: Optional[np.ndarray] = None
        self.squeeze = False

    @property
    def fitted(self) -> bool:
        return self.value is not None

    @property
    def node_count(self) -> int:
        return 0 if self.value is None else int(self.value.shape[0])

    def _targets(self, y: np.ndarray) -> np.ndarray:
        if self.criterion == "gini":
            labels = np.asarray(y, dtype=np.int64).reshape(-1)
            if self.n_classes is None:
                self.n_classes = int(labels.max()) + 1
            if labels.min() < 0 or labels.max() >= self.n_classes:
                raise ParameterValidationError(f"class labels must be in 0..{self.n_classes - 1}")
            return np.eye(self.n_classes)[labels]
        Y = np.asarray(y, dtype=np.float64)
        self.squeeze = Y.ndim == 1
        return Y.reshape(Y.shape[0], -1)

    def _best_split(self, X: np.ndarray, Y: np.ndarray, idx: np.ndarray, features: np.ndarray):
        m = idx.size
        Yn = Y[idx]
        total_sum = Yn.sum(axis=0)
        total_sq = float((Yn * Yn).sum())
        parent = total_sq - float((total_sum * total_sum).sum()) / m
        best = None
        best_impurity = parent - 1e-12 * max(1.0, abs(parent))
        n_left = np.arange(1, m, dtype=np.float64)
        for f in features:
            column = X[idx, f]
            order = np.argsort(column, kind="mergesort")
            xs = column[order]
            ys = Yn[order]
            left_sum = np.cumsum(ys, axis=0)[:-1]
            left_sq = np.cumsum((ys * ys).sum(axis=1))[:-1]
            right_sum = total_sum - left_sum
            right_sq = total_sq - left_sq
            impurity = (left_sq - (left_sum * left_sum).sum(axis=1) / n_left
                        + right_sq - (right_sum * right_sum).sum(axis=1) / (m - n_left))
            valid = (xs[:-1] < xs[1:]) & (n_left >= self.leaf_min) & (m - n_left >= self.leaf_min)
            if not valid.any():
                continue
            candidates = np.where(valid, impurity, np.inf)
            k = int(np.argmin(candidates))
            if candidates[k] < best_impurity:
                best_impurity = float(candidates[k])
                best = (int(f), float((xs[k] + xs[k + 1]) / 2.0), order[:k + 1], order[k + 1:])
        return best

    def fit(self, X: np.ndarray, y: np.ndarray, rng: Optional[np.random.Generator] = None) -> "DecisionTree":
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[0] == 0:
            raise EmptyTrainSet("tree needs at least one training row")
        Y = self._targets(y)
        if Y.shape[0] != X.shape[0]:
            raise ParameterValidationError("X and y lengths differ")
        n_features = X.shape[1]
        k = resolve_max_features(self.max_features, n_features)
        if k < n_features and rng is None:
            rng = np.random.default_rng(0)

        feature: List[int] = []
        threshold: List[float] = []
        left: List[int] = []
        right: List[int] = []
        value: List[np.ndarray] = []

        def new_node(idx: np.ndarray) -> int:
            feature.append(LEAF)
            threshold.append(0.0)
            left.append(LEAF)
            right.append(LEAF)
            value.append(Y[idx].mean(axis=0))
            return len(value) - 1

        root = new_node(np.arange(X.shape[0]))
        stack = [(root, np.arange(X.shape[0]), 0)]
        while stack:
            node, idx, depth = stack.pop()
            if depth >= self.max_depth or idx.size < 2 * self.leaf_min:
                continue
            features = np.arange(n_features) if k == n_features else np.sort(rng.choice(n_features, size=k, replace=False))
            split = self._best_split(X, Y, idx, features)
            if split is None:
                continue
            f, t, left_pos, right_pos = split
            left_idx, right_idx = idx[left_pos], idx[right_pos]
            l_node, r_node = new_node(left_idx), new_node(right_idx)
            feature[node], threshold[node], left[node], right[node] = f, t, l_node, r_node
            stack.append((r_node, right_idx, depth + 1))
            stack.append((l_node, left_idx, depth + 1))

        self.feature = np.array(feature, dtype=np.int64)
        self.threshold = np.array(threshold, dtype=np.float64)
        self.left = np.array(left, dtype=np.int64)
        self.right = np.array(right, dtype=np.int64)
        self.value = np.stack(value)
        logger.debug(f"Fitted {self.criterion} tree with {self.node_count} nodes on {X.shape[0]} rows")
        return self

    def leaf_values(self, X: np.ndarray) -> np.ndarray:
        if not self.fitted:
            raise NotFitted("tree is not fitted")
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        nodes = np.zeros(X.shape[0], dtype=np.int64)
        active = self.feature[nodes] != LEAF
        while active.any():
            rows = np.flatnonzero(active)
            current = nodes[rows]
            go_left = X[rows, self.feature[current]] <= self.threshold[current]
            nodes[rows] = np.where(go_left, self.left[current], self.right[current])
            active = self.feature[nodes] != LEAF
        return self.value[nodes]

    def predict(self, X: np.ndarray) -> np.ndarray:
        values = self.leaf_values(X)
        if self.criterion == "gini":
            return np.argmax(values, axis=1)
        return values[:, 0] if self.squeeze else values

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        if self.criterion != "gini":
            raise ParameterValidationError("predict_proba is only defined for classification trees")
        return self.leaf_values(X)

    def to_dict(self) -> Dict:
        if not self.fitted:
            raise NotFitted("cannot serialize an unfitted tree")
        return {
            "criterion": self.criterion,
            "max_depth": self.max_depth,
            "leaf_min": self.leaf_min,
            "max_features": self.max_features,
            "n_classes": self.n_classes,
            "squeeze": self.squeeze,
            "feature": self.feature.tolist(),
            "threshold": [float(v) for v in self.threshold],
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": [[float(v) for v in row] for row in self.value],
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "DecisionTree":
        try:
            tree = cls(data["criterion"], data["max_depth"], data["leaf_min"], data["max_features"], data["n_classes"])
            tree.squeeze = bool(data["squeeze"])
            tree.feature = np.array(data["feature"], dtype=np.int64)
            tree.threshold = np.array(data["threshold"], dtype=np.float64)
            tree.left = np.array(data["left"], dtype=np.int64)
            tree.right = np.array(data["right"], dtype=np.int64)
            tree.value = np.array(data["value"], dtype=np.float64)
        except KeyError as e:
            raise ArtifactError(f"tree artifact missing key {e}")
        return tree


class RandomForest:
    """Bootstrap ensemble; tree ``t`` draws from its own seeded stream."""

    def __init__(self, criterion: str = "mse", n_trees: int = 50, max_depth: int = 12, leaf_min: int = 2,
                 max_features: Union[str, int, None] = "sqrt", bootstrap: float = 1.0, seed: int = 0,
                 jobs: int = 1, n_classes: Optional[int] = None):
        if n_trees < 1:
            raise ParameterValidationError("n_trees must be >= 1")
        if not (0 < bootstrap <= 1.0):
            raise ParameterValidationError("bootstrap ratio must be in (0, 1]")
        self.criterion = criterion
        self.n_trees = n_trees
        self.max_depth = max_depth
        self.leaf_min = leaf_min
        self.max_features = max_features
        self.bootstrap = bootstrap
        self.seed = seed
        self.jobs = max(1, jobs)
        self.n_classes = n_classes
        self.trees: List[DecisionTree] = []
        self.logger = logging.getLogger(__name__)

    @property
    def fitted(self) -> bool:
        return bool(self.trees)

    def _fit_tree(self, t: int, X: np.ndarray, y: np.ndarray) -> DecisionTree:
        rng = stream(self.seed, f"forest/{t}")
        n = X.shape[0]
        size = max(1, int(round(self.bootstrap * n)))
        rows = rng.integers(0, n, size=size)
        tree = DecisionTree(self.criterion, self.max_depth, self.leaf_min, self.max_features, self.n_classes)
        return tree.fit(X[rows], y[rows], rng)

    def fit(self, X: np.ndarray, y: np.ndarray) -> "RandomForest":
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y)
        if X.ndim != 2 or X.shape[0] == 0:
            raise EmptyTrainSet("forest needs at least one training row")
        if self.criterion == "gini" and self.n_classes is None:
            self.n_classes = int(np.max(y)) + 1
        with ThreadPoolExecutor(max_workers=self.jobs) as pool:
            self.trees = list(pool.map(lambda t: self._fit_tree(t, X, y), range(self.n_trees)))
        self.logger.info(
            f"Fitted {self.n_trees} {self.criterion} trees on {X.shape[0]} rows "
            f"({sum(t.node_count for t in self.trees)} nodes)"
        )
        return self

    def tree_predictions(self, X: np.ndarray) -> np.ndarray:
        if not self.fitted:
            raise NotFitted("forest is not fitted")
        return np.stack([tree.predict(X) for tree in self.trees])

    def predict(self, X: np.ndarray) -> np.ndarray:
        """Regression: mean over trees. Classification: majority vote, ties to the lowest class."""
        votes = self.tree_predictions(X)
        if self.criterion == "gini":
            counts = np.stack([(votes == c).sum(axis=0) for c in range(self.n_classes)], axis=1)
            return np.argmax(counts, axis=1)
        return votes.mean(axis=0)

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        """Fraction of tree votes per class."""
        votes = self.tree_predictions(X)
        counts = np.stack([(votes == c).sum(axis=0) for c in range(self.n_classes)], axis=1)
        return counts / float(len(self.trees))

    def to_dict(self) -> Dict:
        if not self.fitted:
            raise NotFitted("cannot serialize an unfitted forest")
        return {
            "criterion": self.criterion,
            "n_trees": self.n_trees,
            "max_depth": self.max_depth,
            "leaf_min": self.leaf_min,
            "max_features": self.max_features,
            "bootstrap": self.bootstrap,
            "seed": self.seed,
            "n_classes": self.n_classes,
            "trees": [tree.to_dict() for tree in self.trees],
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "RandomForest":
        try:
            forest = cls(data["criterion"], data["n_trees"], data["max_depth"], data["leaf_min"],
                         data["max_features"], data["bootstrap"], data["seed"], n_classes=data["n_classes"])
            forest.trees = [DecisionTree.from_dict(t) for t in data["trees"]]
        except KeyError as e:
            raise ArtifactError(f"forest artifact missing key {e}")
        return forest
