"""
RSSI localization models.

Engineered features (mean, population std and visible-anchor count appended
to the RSSI vector), [-1, 1] feature scaling, four regressors mapping features
to (x, y) and the MAE / MSE / MDE evaluation.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial.distance import cdist

from fallchain.config import LocConfig
from fallchain.fingerprint import FingerprintTable, fill_missing, normalize_mac
from fallchain.nnkernel import DenseNet, ModelParams, sgd_epoch
from fallchain.trees import DecisionTree, RandomForest
from fallchain.utils.exceptions import (
    ArtifactError,
    EmptyTestSet,
    EmptyTrainSet,
    EmptyVector,
    LengthMismatch,
    NotFitted,
    ParameterValidationError,
)
from fallchain.utils.seeding import stream

logger = logging.getLogger(__name__)

# Random forest with and without engineered features on a published reference capture
REFERENCE_RF = {"engineered": {"mae": 0.6240, "mse": 0.7843, "mde": 0.9873}, "raw": {"mde": 1.0700}}


@dataclass(frozen=True)
class FeatureRow:
    rssi: Tuple[float, ...]
    mean: float
    std: float
    anchors_visible: int
    target: Optional[Tuple[float, float]] = None

    def vector(self) -> np.ndarray:
        return np.array([*self.rssi, self.mean, self.std, float(self.anchors_visible)])


def engineer_features(row: Sequence[float], floor_dbm: float = -100.0,
                      target: Optional[Tuple[float, float]] = None) -> FeatureRow:
    rssi = np.asarray(row, dtype=np.float64).reshape(-1)
    if rssi.size == 0:
        raise EmptyVector("RSSI vector is empty")
    return FeatureRow(
        rssi=tuple(float(v) for v in rssi),
        mean=float(rssi.mean()),
        std=float(rssi.std()),
        anchors_visible=int(np.sum(rssi > floor_dbm)),
        target=target,
    )


def feature_matrix(rssi: np.ndarray, floor_dbm: float = -100.0, mode: str = "engineered") -> np.ndarray:
    """Row-wise :func:`engineer_features` (``engineered``) or the bare RSSI matrix (``raw``)."""
    rssi = np.atleast_2d(np.asarray(rssi, dtype=np.float64))
    if rssi.shape[1] == 0:
        raise EmptyVector("RSSI vectors are empty")
    if mode == "raw":
        return rssi.copy()
    if mode != "engineered":
        raise ParameterValidationError(f"features must be 'raw' or 'engineered', got {mode!r}")
    extra = np.column_stack([rssi.mean(axis=1), rssi.std(axis=1), (rssi > floor_dbm).sum(axis=1)])
    return np.hstack([rssi, extra])


class FeatureScaler:
    """Per-feature min/max learned on training rows, mapped to [-1, 1]."""

    def __init__(self, lo: Optional[np.ndarray] = None, hi: Optional[np.ndarray] = None):
        self.lo = None if lo is None else np.asarray(lo, dtype=np.float64)
        self.hi = None if hi is None else np.asarray(hi, dtype=np.float64)

    def fit(self, X: np.ndarray) -> "FeatureScaler":
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[0] == 0:
            raise EmptyTrainSet("cannot fit a scaler on zero rows")
        self.lo = X.min(axis=0)
        self.hi = X.max(axis=0)
        return self

    def transform(self, X: np.ndarray) -> np.ndarray:
        if self.lo is None:
            raise NotFitted("scaler is not fitted")
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        span = self.hi - self.lo
        degenerate = span == 0
        out = 2.0 * (X - self.lo) / np.where(degenerate, 1.0, span) - 1.0
        return np.where(degenerate, 0.0, out)

    def to_dict(self) -> Dict:
        if self.lo is None:
            raise NotFitted("scaler is not fitted")
        return {"lo": [float(v) for v in self.lo], "hi": [float(v) for v in self.hi]}

    @classmethod
    def from_dict(cls, data: Mapping) -> "FeatureScaler":
        return cls(np.asarray(data["lo"]), np.asarray(data["hi"]))


# ---------------------------------------------------------------------------
# Regressors
# ---------------------------------------------------------------------------

class KNNRegressor:
    """Mean target of the k nearest training rows (Euclidean, stable order on ties)."""

    kind = "knn"

    def __init__(self, k: int = 5):
        if k < 1:
            raise ParameterValidationError("k must be >= 1")
        self.k = k
        self.X: Optional[np.ndarray] = None
        self.Y: Optional[np.ndarray] = None

    def fit(self, X: np.ndarray, Y: np.ndarray) -> "KNNRegressor":
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[0] == 0:
            raise EmptyTrainSet("kNN needs at least one training row")
        self.X = X
        self.Y = np.asarray(Y, dtype=np.float64).reshape(X.shape[0], -1)
        return self

    def predict(self, X: np.ndarray) -> np.ndarray:
        if self.X is None:
            raise NotFitted("kNN regressor is not fitted")
        distances = cdist(np.atleast_2d(np.asarray(X, dtype=np.float64)), self.X)
        k = min(self.k, self.X.shape[0])
        nearest = np.argsort(distances, axis=1, kind="stable")[:, :k]
        return self.Y[nearest].mean(axis=1)

    def to_dict(self) -> Dict:
        if self.X is None:
            raise NotFitted("kNN regressor is not fitted")
        return {"kind": self.kind, "k": self.k, "X": self.X.tolist(), "Y": self.Y.tolist()}

    @classmethod
    def from_dict(cls, data: Mapping) -> "KNNRegressor":
        return cls(int(data["k"])).fit(np.asarray(data["X"]), np.asarray(data["Y"]))


class TreeRegressor:
    kind = "decision_tree"

    def __init__(self, max_depth: int = 12, leaf_min: int = 2):
        self.tree = DecisionTree("mse", max_depth, leaf_min, "all")

    def fit(self, X: np.ndarray, Y: np.ndarray) -> "TreeRegressor":
        self.tree.fit(X, np.asarray(Y, dtype=np.float64))
        return self

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.tree.predict(X)

    def to_dict(self) -> Dict:
        return {"kind": self.kind, "tree": self.tree.to_dict()}

    @classmethod
    def from_dict(cls, data: Mapping) -> "TreeRegressor":
        model = cls()
        model.tree = DecisionTree.from_dict(data["tree"])
        return model


class ForestRegressor:
    kind = "random_forest"

    def __init__(self, n_trees: int = 50, max_depth: int = 12, leaf_min: int = 2, max_features="sqrt",
                 bootstrap: float = 1.0, seed: int = 0, jobs: int = 1):
        self.forest = RandomForest("mse", n_trees, max_depth, leaf_min, max_features, bootstrap, seed, jobs)

    def fit(self, X: np.ndarray, Y: np.ndarray) -> "ForestRegressor":
        self.forest.fit(X, np.asarray(Y, dtype=np.float64))
        return self

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.forest.predict(X)

    def to_dict(self) -> Dict:
        return {"kind": self.kind, "forest": self.forest.to_dict()}

    @classmethod
    def from_dict(cls, data: Mapping) -> "ForestRegressor":
        model = cls()
        model.forest = RandomForest.from_dict(data["forest"])
        return model


class MLPRegressor:
    """DenseNet on standardized targets, trained with plain SGD."""

    kind = "mlp"

    def __init__(self, hidden: Sequence[int] = (32, 16), epochs: int = 200, learning_rate: float = 0.01,
                 batch_size: int = 32, seed: int = 0):
        self.hidden = tuple(int(h) for h in hidden)
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.seed = seed
        self.net: Optional[DenseNet] = None
        self.y_mean: Optional[np.ndarray] = None
        self.y_std: Optional[np.ndarray] = None

    def fit(self, X: np.ndarray, Y: np.ndarray) -> "MLPRegressor":
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[0] == 0:
            raise EmptyTrainSet("MLP needs at least one training row")
        Y = np.asarray(Y, dtype=np.float64).reshape(X.shape[0], -1)
        self.y_mean = Y.mean(axis=0)
        self.y_std = np.where(Y.std(axis=0) > 0, Y.std(axis=0), 1.0)
        target = (Y - self.y_mean) / self.y_std
        net = DenseNet([X.shape[1], *self.hidden, Y.shape[1]], rng=stream(self.seed, "mlp-init"))
        params = net.params
        loss = float("nan")
        for epoch in range(self.epochs):
            params, loss = sgd_epoch(net, params, X, target, self.learning_rate, self.batch_size,
                                     stream(self.seed, f"mlp/{epoch}"))
        self.net = net.with_params(params)
        logger.debug(f"MLP trained {self.epochs} epochs, final loss {loss:.6f}")
        return self

    def predict(self, X: np.ndarray) -> np.ndarray:
        if self.net is None:
            raise NotFitted("MLP regressor is not fitted")
        return self.net.forward(X) * self.y_std + self.y_mean

    def to_dict(self) -> Dict:
        if self.net is None:
            raise NotFitted("MLP regressor is not fitted")
        return {"kind": self.kind, "sizes": list(self.net.sizes), "params": self.net.params.to_dict(),
                "y_mean": self.y_mean.tolist(), "y_std": self.y_std.tolist()}

    @classmethod
    def from_dict(cls, data: Mapping) -> "MLPRegressor":
        model = cls(hidden=data["sizes"][1:-1])
        model.net = DenseNet(data["sizes"], params=ModelParams.from_dict(data["params"]))
        model.y_mean = np.asarray(data["y_mean"])
        model.y_std = np.asarray(data["y_std"])
        return model


REGRESSORS = {cls.kind: cls for cls in (KNNRegressor, TreeRegressor, ForestRegressor, MLPRegressor)}


def make_regressor(kind: str, config: Optional[LocConfig] = None, seed: int = 0, jobs: int = 1):
    config = config or LocConfig()
    if kind == "knn":
        return KNNRegressor(config.knn_k)
    if kind == "decision_tree":
        return TreeRegressor(config.tree_max_depth, config.tree_leaf_min)
    if kind == "random_forest":
        return ForestRegressor(config.forest_trees, config.tree_max_depth, config.tree_leaf_min,
                               config.forest_max_features, config.forest_bootstrap, seed, jobs)
    if kind == "mlp":
        return MLPRegressor(config.mlp_hidden, config.mlp_epochs, config.mlp_learning_rate,
                            config.mlp_batch_size, seed)
    raise ParameterValidationError(f"unknown regressor kind {kind!r}; available {sorted(REGRESSORS)}")


def regressor_from_dict(data: Mapping):
    try:
        return REGRESSORS[data["kind"]].from_dict(data)
    except KeyError as e:
        raise ArtifactError(f"unreadable regressor block: {e}")


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LocMetrics:
    mae: float
    mse: float
    mde: float

    def to_dict(self) -> Dict[str, float]:
        return {"mae": self.mae, "mse": self.mse, "mde": self.mde}


def evaluate_loc(preds: np.ndarray, truths: np.ndarray) -> LocMetrics:
    """MAE / MSE averaged over both coordinates; MDE = mean Euclidean distance."""
    preds = np.atleast_2d(np.asarray(preds, dtype=np.float64))
    truths = np.atleast_2d(np.asarray(truths, dtype=np.float64))
    if preds.shape != truths.shape:
        raise LengthMismatch(f"predictions {preds.shape} and truths {truths.shape} differ")
    if preds.shape[0] == 0 or preds.size == 0:
        raise EmptyTestSet("nothing to evaluate")
    diff = preds - truths
    return LocMetrics(
        mae=float(np.mean(np.abs(diff))),
        mse=float(np.mean(diff * diff)),
        mde=float(np.mean(np.sqrt((diff * diff).sum(axis=1)))),
    )


# ---------------------------------------------------------------------------
# End-to-end model
# ---------------------------------------------------------------------------

class LocalizationModel:
    """Frozen MAC column map + floor + feature mode + scaler + regressor."""

    def __init__(self, macs: Sequence[str], floor_dbm: float, features: str, scaler: FeatureScaler, regressor):
        self.macs = [normalize_mac(m) for m in macs]
        self.floor_dbm = float(floor_dbm)
        self.features = features
        self.scaler = scaler
        self.regressor = regressor
        self.logger = logging.getLogger(__name__)

    @classmethod
    def train(cls, table: FingerprintTable, kind: str = "random_forest", features: str = "engineered",
              config: Optional[LocConfig] = None, seed: int = 0, jobs: int = 1) -> "LocalizationModel":
        config = config or LocConfig()
        if len(table) == 0:
            raise EmptyTrainSet("fingerprint table has no rows")
        filled = fill_missing(table, config.floor_dbm)
        X = feature_matrix(filled.rssi, config.floor_dbm, features)
        scaler = FeatureScaler().fit(X)
        regressor = make_regressor(kind, config, seed, jobs).fit(scaler.transform(X), filled.positions)
        model = cls(filled.macs, config.floor_dbm, features, scaler, regressor)
        model.logger.info(f"Trained {kind} localization model ({features} features) on {len(table)} rows")
        return model

    def predict_rssi(self, rssi: np.ndarray) -> np.ndarray:
        rssi = np.where(np.isnan(rssi), self.floor_dbm, rssi)
        X = feature_matrix(rssi, self.floor_dbm, self.features)
        return np.asarray(self.regressor.predict(self.scaler.transform(X))).reshape(-1, 2)

    def predict_table(self, table: FingerprintTable) -> np.ndarray:
        if list(table.macs) != self.macs:
            index = {mac: k for k, mac in enumerate(table.macs)}
            rssi = np.full((len(table), len(self.macs)), self.floor_dbm)
            for k, mac in enumerate(self.macs):
                if mac in index:
                    rssi[:, k] = table.rssi[:, index[mac]]
        else:
            rssi = table.rssi
        return self.predict_rssi(rssi)

    def locate(self, rssi_by_mac: Mapping[str, float]) -> Tuple[float, float]:
        """Position estimate from a sparse reading; unheard anchors take the floor value."""
        row = np.full(len(self.macs), self.floor_dbm)
        index = {mac: k for k, mac in enumerate(self.macs)}
        for mac, value in rssi_by_mac.items():
            key = normalize_mac(mac)
            if key in index:
                row[index[key]] = value
            else:
                self.logger.debug(f"Ignoring reading from unmapped anchor {key}")
        x, y = self.predict_rssi(row[None, :])[0]
        return float(x), float(y)

    def to_dict(self) -> Dict:
        return {
            "macs": self.macs,
            "floor_dbm": self.floor_dbm,
            "features": self.features,
            "scaler": self.scaler.to_dict(),
            "regressor": self.regressor.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "LocalizationModel":
        try:
            return cls(data["macs"], data["floor_dbm"], data["features"],
                       FeatureScaler.from_dict(data["scaler"]), regressor_from_dict(data["regressor"]))
        except KeyError as e:
            raise ArtifactError(f"localization artifact missing key {e}")


def split_table(table: FingerprintTable, test_fraction: float, seed: int) -> Tuple[FingerprintTable, FingerprintTable]:
    """Seeded row permutation; the first ``round(test_fraction * n)`` rows form the test set."""
    n = len(table)
    n_test = int(round(test_fraction * n))
    if n_test < 1 or n_test >= n:
        raise ParameterValidationError(f"test_fraction {test_fraction} leaves an empty split for {n} rows")
    order = stream(seed, "loc-split").permutation(n)
    return table.take(np.sort(order[n_test:])), table.take(np.sort(order[:n_test]))


def compare_models(train: FingerprintTable, test: FingerprintTable,
                   kinds: Iterable[str] = ("knn", "decision_tree", "random_forest", "mlp"),
                   feature_modes: Iterable[str] = ("raw", "engineered"),
                   config: Optional[LocConfig] = None, seed: int = 0, jobs: int = 1) -> Dict[str, Dict[str, Dict]]:
    """Metrics of every (kind, features) pair on the same split."""
    config = config or LocConfig()
    truths = test.positions
    results: Dict[str, Dict[str, Dict]] = {}
    for kind in kinds:
        results[kind] = {}
        for mode in feature_modes:
            model = LocalizationModel.train(train, kind, mode, config, seed, jobs)
            metrics = evaluate_loc(model.predict_table(test), truths)
            results[kind][mode] = metrics.to_dict()
            logger.info(f"{kind:>14} / {mode:<10} mae={metrics.mae:.4f} mse={metrics.mse:.4f} mde={metrics.mde:.4f}")
    return results
