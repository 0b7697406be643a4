"""
Semi-supervised federated training simulator.

Unlabeled client windows train a shared sequence autoencoder with FedAvg; a
small labeled benchmark set held by the server trains a classifier head on the
frozen encoder. The centralized baseline runs the same epochs on pooled data.
"""

from __future__ import annotations

import csv
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from fallchain.config import PreprocConfig, RunConfig, TrainConfig
from fallchain.nnkernel import (
    FrozenEncoderClassifier,
    ModelParams,
    SequenceAutoencoder,
    sgd_epoch,
)
from fallchain.preproc import (
    NormBounds,
    TimeSeries,
    TrialSeries,
    WindowSet,
    build_window_set,
    fit_normalizer,
    merge_bounds,
    normalize_array,
)
from fallchain.signal_io import samples_to_arrays, synth_trace
from fallchain.utils.exceptions import (
    EmptyClient,
    EmptyDataset,
    EmptyTestSet,
    EmptyUpdateSet,
    LayoutMismatch,
    NonPositiveWeight,
    ParameterValidationError,
    ShapeMismatch,
    SingleClassDataset,
    TooFewSubjects,
)
from fallchain.utils.seeding import derive_seed, stream

logger = logging.getLogger(__name__)

# Comparison of centralized and federated training on SisFall, in percent
REFERENCE_METRICS = {
    "federated": {"acc": 99.19, "pr": 99.69, "re": 99.47, "f1": 99.58},
    "centralized": {"acc": 99.33, "pr": 99.67, "re": 99.63, "f1": 99.65},
}
MODES = ("federated", "centralized")


def _round_half_up(value: Fraction) -> int:
    return int(value + Fraction(1, 2)) if value >= 0 else -int(-value + Fraction(1, 2))


@dataclass(frozen=True)
class SplitPlan:
    """Subject-level partition: L (labeled), D (unlabeled) = D_train + D_test."""

    labeled_users: Tuple[str, ...]
    unlabeled_users: Tuple[str, ...]
    train_users: Tuple[str, ...]
    test_users: Tuple[str, ...]
    seed: int

    def to_dict(self) -> Dict:
        return {
            "labeled_users": list(self.labeled_users),
            "unlabeled_users": list(self.unlabeled_users),
            "train_users": list(self.train_users),
            "test_users": list(self.test_users),
            "seed": self.seed,
        }


def make_split(subjects: Iterable[str], seed: int, labeled_fraction: float = 0.3,
               train_fraction: float = 0.85) -> SplitPlan:
    """round(labeled_fraction * n) subjects go to L, the rest is split train/test (half-up rounding)."""
    pool = sorted(set(subjects))
    n = len(pool)
    if n < 4:
        raise TooFewSubjects(f"need at least 4 subjects, got {n}")
    n_labeled = _round_half_up(Fraction(str(labeled_fraction)) * n)
    n_labeled = min(max(n_labeled, 1), n - 2)
    rest = n - n_labeled
    n_train = _round_half_up(Fraction(str(train_fraction)) * rest)
    if train_fraction < 1:
        n_train = min(max(n_train, 1), rest - 1)
    order = [pool[i] for i in stream(seed, "split").permutation(n)]
    labeled = tuple(sorted(order[:n_labeled]))
    unlabeled = order[n_labeled:]
    plan = SplitPlan(
        labeled_users=labeled,
        unlabeled_users=tuple(sorted(unlabeled)),
        train_users=tuple(sorted(unlabeled[:n_train])),
        test_users=tuple(sorted(unlabeled[n_train:])),
        seed=seed,
    )
    logger.info(
        f"Split {n} subjects: |L|={len(plan.labeled_users)} |D|={len(plan.unlabeled_users)} "
        f"|D_train|={len(plan.train_users)} |D_test|={len(plan.test_users)}"
    )
    return plan


# ---------------------------------------------------------------------------
# Clients and aggregation
# ---------------------------------------------------------------------------

@dataclass
class ClientState:
    """One wearable user; ``windows`` never leave this object."""

    client_id: str
    windows: np.ndarray
    params: Optional[ModelParams] = None
    last_loss: float = float("nan")

    def __post_init__(self):
        self.windows = np.asarray(self.windows, dtype=np.float64)
        if self.windows.ndim != 3 or self.windows.shape[0] == 0:
            raise EmptyClient(f"client {self.client_id} has no local windows")

    @property
    def weight(self) -> int:
        """r_i: the number of local training windows."""
        return int(self.windows.shape[0])


@dataclass
class ServerState:
    params: ModelParams
    max_rounds: int
    round: int = 0
    # the labeled benchmark set L (windows, labels); it stays on the server
    labeled: Optional[Tuple[np.ndarray, np.ndarray]] = None

    def __post_init__(self):
        if self.labeled is not None:
            x, y = (np.asarray(a) for a in self.labeled)
            if x.ndim != 3 or y.ndim != 1 or len(x) != len(y):
                raise ShapeMismatch("labeled set needs (n, l, channels) windows and n labels")
            self.labeled = (x.astype(np.float64), y.astype(np.int64))

    def advance(self, params: ModelParams) -> None:
        if self.round >= self.max_rounds:
            raise ParameterValidationError(f"round limit {self.max_rounds} reached")
        self.params = params
        self.round += 1


@dataclass(frozen=True)
class RoundLog:
    round: int
    mean_recon_loss: float
    wall_ms: float


def local_train_round(client: ClientState, global_params: ModelParams, model: SequenceAutoencoder,
                      config: TrainConfig, rng: Optional[np.random.Generator] = None) -> ModelParams:
    """One local epoch of SGD starting from the broadcast parameters."""
    if client.weight == 0:
        raise EmptyClient(f"client {client.client_id} has no local windows")
    params, loss = sgd_epoch(model, global_params.copy(), client.windows, None,
                             config.learning_rate, config.batch_size, rng)
    client.params = params
    client.last_loss = loss
    return params


def fedavg(updates: Sequence[Tuple[ModelParams, float]],
           client_ids: Optional[Sequence[str]] = None) -> ModelParams:
    """theta = sum(r_i * theta_i) / sum(r_i), elementwise.

    Updates are reduced in a canonical order, by client id when ``client_ids``
    is given and by (weight, parameter digest) otherwise, so the result does not
    depend on the order clients report in. The sum is taken as offsets from the
    first update in that order: identical parameters come back bit-exact for any
    weights, and so does a single client.
    """
    updates = list(updates)
    if not updates:
        raise EmptyUpdateSet("fedavg needs at least one update")
    layout = updates[0][0].layout
    for params, weight in updates:
        if params.layout != layout:
            raise LayoutMismatch("client parameter layouts differ")
        if not weight > 0:
            raise NonPositiveWeight(f"client weight must be positive, got {weight}")
    if client_ids is None:
        ordered = sorted(updates, key=lambda u: (u[1], u[0].digest()))
    else:
        client_ids = list(client_ids)
        if len(client_ids) != len(updates) or len(set(client_ids)) != len(client_ids):
            raise ParameterValidationError("fedavg needs one distinct client id per update")
        ordered = [u for _, u in sorted(zip(client_ids, updates), key=lambda pair: pair[0])]
    total = sum(weight for _, weight in ordered)
    base = ordered[0][0].vector
    acc = base.copy()
    for params, weight in ordered:
        acc += (weight / total) * (params.vector - base)
    return ModelParams(layout, acc, updates[0][0].version)


@dataclass
class FedResult:
    params: ModelParams
    loss_log: List[RoundLog]
    server: Optional[ServerState] = None


def run_federated(clients: Sequence[ClientState], model: SequenceAutoencoder, rounds: int,
                  config: TrainConfig, jobs: int = 1,
                  labeled: Optional[Tuple[np.ndarray, np.ndarray]] = None) -> FedResult:
    """rounds x (broadcast, one local epoch per client, FedAvg).

    ``labeled`` is the server-side benchmark set L; it is held by the server and
    never sent to clients.
    """
    if not clients:
        raise EmptyUpdateSet("run_federated needs at least one client")
    ordered = sorted(clients, key=lambda c: c.client_id)
    server = ServerState(params=model.params.copy(), max_rounds=rounds, labeled=labeled)
    log: List[RoundLog] = []

    def train(client: ClientState, round_no: int) -> ModelParams:
        rng = stream(config.seed, f"client/{client.client_id}/{round_no}")
        return local_train_round(client, server.params, model, config, rng)

    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        for round_no in range(rounds):
            started = time.perf_counter()
            new_params = list(pool.map(lambda c: train(c, round_no), ordered))
            server.advance(fedavg([(p, c.weight) for p, c in zip(new_params, ordered)],
                                  [c.client_id for c in ordered]))
            total = sum(c.weight for c in ordered)
            mean_loss = sum(c.last_loss * c.weight for c in ordered) / total
            entry = RoundLog(round_no + 1, float(mean_loss), (time.perf_counter() - started) * 1000.0)
            log.append(entry)
            logger.info(f"Round {entry.round}/{rounds}: mean reconstruction loss {entry.mean_recon_loss:.6f}")
    return FedResult(server.params, log, server)


def run_centralized(windows: np.ndarray, model: SequenceAutoencoder, epochs: int,
                    config: TrainConfig) -> FedResult:
    """The centralized baseline: ``epochs`` SGD epochs over all pooled windows."""
    windows = np.asarray(windows, dtype=np.float64)
    if windows.ndim != 3 or windows.shape[0] == 0:
        raise EmptyDataset("run_centralized needs at least one window")
    params = model.params.copy()
    log: List[RoundLog] = []
    for epoch in range(epochs):
        started = time.perf_counter()
        rng = stream(config.seed, f"central/{epoch}")
        params, loss = sgd_epoch(model, params, windows, None, config.learning_rate, config.batch_size, rng)
        log.append(RoundLog(epoch + 1, float(loss), (time.perf_counter() - started) * 1000.0))
        logger.info(f"Epoch {epoch + 1}/{epochs}: mean reconstruction loss {loss:.6f}")
    return FedResult(params, log)


# ---------------------------------------------------------------------------
# Classifier
# ---------------------------------------------------------------------------

@dataclass
class ClassificationMetrics:
    tp: int
    tn: int
    fp: int
    fn: int
    acc: float
    pr: float
    re: float
    f1: float

    @classmethod
    def from_counts(cls, tp: int, tn: int, fp: int, fn: int) -> "ClassificationMetrics":
        total = tp + tn + fp + fn
        acc = (tp + tn) / total if total else 0.0
        pr = tp / (tp + fp) if tp + fp else 0.0
        re = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * pr * re / (pr + re) if pr + re else 0.0
        return cls(int(tp), int(tn), int(fp), int(fn), acc, pr, re, f1)

    @classmethod
    def from_predictions(cls, y_true: Sequence[int], y_pred: Sequence[int]) -> "ClassificationMetrics":
        y_true = np.asarray(y_true, dtype=np.int64)
        y_pred = np.asarray(y_pred, dtype=np.int64)
        tp = int(np.sum((y_true == 1) & (y_pred == 1)))
        tn = int(np.sum((y_true == 0) & (y_pred == 0)))
        fp = int(np.sum((y_true == 0) & (y_pred == 1)))
        fn = int(np.sum((y_true == 1) & (y_pred == 0)))
        return cls.from_counts(tp, tn, fp, fn)

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn

    def to_dict(self) -> Dict:
        return {"tp": self.tp, "tn": self.tn, "fp": self.fp, "fn": self.fn,
                "acc": self.acc, "pr": self.pr, "re": self.re, "f1": self.f1}


@dataclass(frozen=True)
class ClassifierLog:
    epoch: int
    loss: float
    accuracy: float


def train_classifier(classifier: FrozenEncoderClassifier, windows: np.ndarray, labels: np.ndarray,
                     epochs: int, config: TrainConfig) -> Tuple[FrozenEncoderClassifier, List[ClassifierLog]]:
    """Train the head on L; encoder blocks are never updated."""
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size == 0:
        raise EmptyDataset("labeled set L is empty")
    if len(np.unique(labels)) < 2:
        raise SingleClassDataset(f"labeled set has a single class {np.unique(labels).tolist()}")
    encoder_digest = classifier.params.digest(classifier.frozen_prefixes)
    embeddings = classifier.embed(windows)
    params = classifier.params
    history: List[ClassifierLog] = []
    for epoch in range(epochs):
        rng = stream(config.seed, f"classifier/{epoch}")
        params, loss = sgd_epoch(
            classifier, params, embeddings, labels, config.classifier_learning_rate,
            config.classifier_batch_size, rng,
            loss_and_grad=lambda batch, p: classifier.head_loss_and_grad(batch[0], batch[1], p),
        )
        probs, _ = classifier.head_forward(embeddings, params)
        accuracy = float(np.mean(np.argmax(probs, axis=1) == labels))
        history.append(ClassifierLog(epoch + 1, float(loss), accuracy))
        logger.debug(f"Classifier epoch {epoch + 1}/{epochs}: loss {loss:.6f}, accuracy {accuracy:.4f}")
    trained = classifier.with_params(params)
    if trained.params.digest(trained.frozen_prefixes) != encoder_digest:
        raise LayoutMismatch("encoder parameters changed during classifier training")
    if history:
        logger.info(f"Classifier trained: loss {history[-1].loss:.6f}, training accuracy {history[-1].accuracy:.4f}")
    return trained, history


def evaluate(model: FrozenEncoderClassifier, windows: np.ndarray, labels: Sequence[int]) -> ClassificationMetrics:
    """Argmax decision over class probabilities; fall (1) is the positive class."""
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size == 0:
        raise EmptyTestSet("cannot evaluate on an empty test set")
    predictions = np.argmax(model.predict_proba(np.asarray(windows, dtype=np.float64)), axis=-1)
    return ClassificationMetrics.from_predictions(labels, np.atleast_1d(predictions))


# ---------------------------------------------------------------------------
# Full protocol
# ---------------------------------------------------------------------------

@dataclass
class ExperimentResult:
    mode: str
    split: SplitPlan
    bounds: NormBounds
    autoencoder: SequenceAutoencoder
    classifier: FrozenEncoderClassifier
    metrics: ClassificationMetrics
    round_log: List[RoundLog] = field(default_factory=list)
    classifier_log: List[ClassifierLog] = field(default_factory=list)


def fit_bounds(windows: WindowSet, subjects: Sequence[str], labeled_users: Sequence[str]) -> NormBounds:
    """Bounds fitted per training subject and merged (no window leaves its subject)."""
    parts = [fit_normalizer(windows.for_subjects([s]).values) for s in subjects]
    labeled = windows.for_subjects(labeled_users)
    if len(labeled):
        parts.append(fit_normalizer(labeled.values))
    return merge_bounds(parts)


def run_experiment(windows: WindowSet, mode: str = "federated", config: Optional[RunConfig] = None,
                   feedback: Optional[np.ndarray] = None, jobs: int = 1) -> ExperimentResult:
    """Split -> bounds -> autoencoder (FL or CL) -> frozen-encoder classifier -> evaluation.

    ``feedback`` holds raw windows from false alarms; they join L as class 0.
    """
    if mode not in MODES:
        raise ParameterValidationError(f"mode must be one of {MODES}, got {mode!r}")
    config = config or RunConfig()
    train_cfg, fed_cfg = config.train, config.fed
    plan = make_split(windows.subject_ids(), config.seed, fed_cfg.labeled_fraction, fed_cfg.train_fraction)

    bounds = fit_bounds(windows, plan.train_users, plan.labeled_users)
    autoencoder = SequenceAutoencoder(train_cfg.hidden_sizes, train_cfg.cell_kind,
                                      rng=stream(config.seed, "autoencoder-init"))
    seeded_train = TrainConfig(**{**train_cfg.to_dict(), "seed": config.seed})

    labeled = windows.for_subjects(plan.labeled_users)
    L_x = normalize_array(labeled.values, bounds)
    L_y = labeled.labels
    if feedback is not None and len(feedback):
        L_x = np.concatenate([L_x, normalize_array(np.asarray(feedback, dtype=np.float64), bounds)])
        L_y = np.concatenate([L_y, np.zeros(len(feedback), dtype=np.int64)])
        logger.info(f"Added {len(feedback)} false-alarm feedback windows to L as class 0")

    if mode == "federated":
        clients = [
            ClientState(s, normalize_array(windows.for_subjects([s]).values, bounds))
            for s in plan.train_users
        ]
        result = run_federated(clients, autoencoder, fed_cfg.rounds, seeded_train, jobs=jobs,
                               labeled=(L_x, L_y))
        L_x, L_y = result.server.labeled
    else:
        pooled = normalize_array(windows.for_subjects(plan.train_users).values, bounds)
        result = run_centralized(pooled, autoencoder, fed_cfg.central_epochs, seeded_train)
    autoencoder = autoencoder.with_params(result.params)

    classifier = FrozenEncoderClassifier.from_autoencoder(
        autoencoder, train_cfg.head_sizes, rng=stream(config.seed, "classifier-init")
    )
    classifier, classifier_log = train_classifier(classifier, L_x, L_y, fed_cfg.classifier_epochs, seeded_train)

    test = windows.for_subjects(plan.test_users)
    metrics = evaluate(classifier, normalize_array(test.values, bounds), test.labels)
    logger.info(
        f"{mode} evaluation on {metrics.total} windows: acc={metrics.acc:.4f} pr={metrics.pr:.4f} "
        f"re={metrics.re:.4f} f1={metrics.f1:.4f}"
    )
    return ExperimentResult(mode, plan, bounds, autoencoder, classifier, metrics, result.loss_log, classifier_log)


# ---------------------------------------------------------------------------
# Synthetic dataset and reports
# ---------------------------------------------------------------------------

def synth_trials(n_subjects: int, fall_trials: int, adl_trials: int, seed: int,
                 duration: float = 10.0, rate: float = 200.0) -> List[TrialSeries]:
    """Per-subject synthetic traces; subject SAnn doubles as federated client nn."""
    if n_subjects < 1 or fall_trials < 0 or adl_trials < 0:
        raise ParameterValidationError("synthetic dataset sizes must be non-negative (at least one subject)")
    trials: List[TrialSeries] = []
    for s in range(1, n_subjects + 1):
        subject = f"SA{s:02d}"
        for kind, count, prefix, codes in (("fall", fall_trials, "F", 15), ("adl", adl_trials, "D", 19)):
            for k in range(count):
                code = f"{prefix}{k % codes + 1:02d}"
                trial_index = k // codes + 1
                trace_seed = derive_seed(seed, "synth", s, 1 if kind == "fall" else 0, k)
                t, values = samples_to_arrays(synth_trace(kind, trace_seed, duration, rate))
                trials.append(TrialSeries(subject, code, trial_index, TimeSeries(t, values)))
    return trials


def synth_window_set(n_subjects: int, fall_trials: int, adl_trials: int, seed: int,
                     preproc: Optional[PreprocConfig] = None, duration: float = 10.0,
                     rate: float = 200.0) -> WindowSet:
    return build_window_set(synth_trials(n_subjects, fall_trials, adl_trials, seed, duration, rate), preproc)


def write_round_log(log: Sequence[RoundLog], path: Union[str, Path]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["round", "mean_recon_loss", "wall_ms"])
        for entry in log:
            writer.writerow([entry.round, repr(entry.mean_recon_loss), f"{entry.wall_ms:.3f}"])


def evaluation_report(metrics: ClassificationMetrics, mode: str, extra: Optional[Dict] = None) -> Dict:
    report = {
        "mode": mode,
        "metrics": metrics.to_dict(),
        "reference_percent": REFERENCE_METRICS.get(mode, {}),
        "reference_note": "SisFall figures; not reproducible on synthetic data",
    }
    if extra:
        report.update(extra)
    return report


def write_eval_report(metrics: ClassificationMetrics, mode: str, path: Union[str, Path],
                      extra: Optional[Dict] = None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(evaluation_report(metrics, mode, extra), sort_keys=True, indent=2) + "\n",
                    encoding="utf-8")
