"""
Tests for subject splits, FedAvg, the classifier stage and the full protocol.
"""

import numpy as np
import pytest

from fallchain.config import FedConfig, RunConfig, TrainConfig
from fallchain.fedsim import (
    ClassificationMetrics,
    ClientState,
    evaluate,
    evaluation_report,
    fedavg,
    local_train_round,
    make_split,
    run_centralized,
    run_experiment,
    run_federated,
    synth_window_set,
    train_classifier,
    write_eval_report,
    write_round_log,
)
from fallchain.nnkernel import FrozenEncoderClassifier, ModelParams, SequenceAutoencoder, sgd_epoch
from fallchain.utils.exceptions import (
    EmptyClient,
    EmptyUpdateSet,
    LayoutMismatch,
    NonPositiveWeight,
    ParameterValidationError,
    ShapeMismatch,
    SingleClassDataset,
    TooFewSubjects,
)
from fallchain.utils.seeding import stream

SMALL = [4, 3, 2]
LAYOUT = (("w", (2, 2)),)


def params(value):
    return ModelParams(LAYOUT, np.full(4, float(value)))


def small_config(seed=0, **fed):
    fed = {"rounds": 2, "central_epochs": 2, "classifier_epochs": 3, **fed}
    return RunConfig(
        seed=seed,
        train=TrainConfig(hidden_sizes=SMALL, head_sizes=[3], batch_size=16, classifier_batch_size=16),
        fed=FedConfig(**fed),
    )


class TestMakeSplit:
    """Subject-level partitions."""

    def test_sizes(self):
        subjects = [f"S{i:02d}" for i in range(38)]
        plan = make_split(subjects, seed=1)
        assert (len(plan.labeled_users), len(plan.train_users), len(plan.test_users)) == (11, 23, 4)
        assert len(plan.unlabeled_users) == 27

        plan = make_split([f"S{i}" for i in range(10)], seed=1)
        assert (len(plan.labeled_users), len(plan.train_users), len(plan.test_users)) == (3, 6, 1)

    def test_disjoint_and_covering(self):
        subjects = [f"S{i:02d}" for i in range(20)]
        plan = make_split(subjects, seed=4)
        parts = [set(plan.labeled_users), set(plan.train_users), set(plan.test_users)]
        assert set.union(*parts) == set(subjects)
        assert sum(len(p) for p in parts) == len(subjects)

    def test_seeded(self):
        subjects = [f"S{i:02d}" for i in range(20)]
        assert make_split(subjects, 7) == make_split(reversed(subjects), 7)

    def test_too_few(self):
        with pytest.raises(TooFewSubjects):
            make_split(["a", "b", "c"], 0)


class TestFedAvg:
    """Weighted parameter averaging."""

    def test_weighted_mean(self):
        out = fedavg([(params(1), 3), (params(2), 1)])
        np.testing.assert_allclose(out.vector, 1.25)

    def test_single_client_is_identity(self):
        p = ModelParams(LAYOUT, np.array([0.1, -3.7, 1e-9, 42.0]))
        np.testing.assert_array_equal(fedavg([(p, 17)]).vector, p.vector)

    def test_identical_params_are_a_fixed_point(self):
        rng = np.random.default_rng(11)
        for _ in range(200):
            p = ModelParams(LAYOUT, rng.normal(size=4))
            weights = rng.integers(1, 50, size=int(rng.integers(2, 6)))
            out = fedavg([(p.copy(), int(w)) for w in weights])
            np.testing.assert_array_equal(out.vector, p.vector)

    def test_client_id_order(self):
        updates = [(params(0.3), 2), (params(0.7), 5), (params(-1.1), 3)]
        ids = ["SA03", "SA01", "SA02"]
        a = fedavg(updates, ids).vector
        b = fedavg(list(reversed(updates)), list(reversed(ids))).vector
        np.testing.assert_array_equal(a, b)
        np.testing.assert_allclose(a, (0.3 * 2 + 0.7 * 5 - 1.1 * 3) / 10)
        with pytest.raises(ParameterValidationError):
            fedavg(updates, ["SA01", "SA01", "SA02"])
        with pytest.raises(ParameterValidationError):
            fedavg(updates, ["SA01"])

    def test_order_independent(self):
        updates = [(params(0.3), 2), (params(0.7), 5), (params(-1.1), 3)]
        a = fedavg(updates).vector
        b = fedavg(list(reversed(updates))).vector
        np.testing.assert_array_equal(a, b)

    def test_scale_invariant(self):
        updates = [(params(1), 3), (params(2), 5), (params(7), 2)]
        scaled = [(p, 4.5 * w) for p, w in updates]
        np.testing.assert_allclose(fedavg(scaled).vector, fedavg(updates).vector, rtol=1e-12)

    def test_errors(self):
        with pytest.raises(EmptyUpdateSet):
            fedavg([])
        with pytest.raises(NonPositiveWeight):
            fedavg([(params(1), 0)])
        other = ModelParams((("v", (4,)),), np.zeros(4))
        with pytest.raises(LayoutMismatch):
            fedavg([(params(1), 1), (other, 1)])


class TestFederatedRounds:
    def test_empty_client(self):
        with pytest.raises(EmptyClient):
            ClientState("SA01", np.zeros((0, 5, 6)))

    def test_single_client_matches_local_training(self):
        model = SequenceAutoencoder(SMALL, "gated", seed=1)
        windows = np.random.default_rng(2).uniform(-1, 1, size=(10, 5, 6))
        config = TrainConfig(hidden_sizes=SMALL, batch_size=4, seed=3)
        result = run_federated([ClientState("SA01", windows)], model, 1, config)
        expected, _ = sgd_epoch(model, model.params.copy(), windows, None, config.learning_rate,
                                config.batch_size, stream(3, "client/SA01/0"))
        np.testing.assert_array_equal(result.params.vector, expected.vector)
        assert len(result.loss_log) == 1

    def test_single_client_full_batch_equals_centralized(self):
        """One client, full batch: R rounds are bit-equal to R centralized epochs"""
        model = SequenceAutoencoder([8, 6, 4], "gated", seed=4)
        windows = np.random.default_rng(8).uniform(-1, 1, size=(50, 8, 6))
        config = TrainConfig(hidden_sizes=[8, 6, 4], batch_size=None, seed=2)
        federated = run_federated([ClientState("SA01", windows)], model, 5, config)
        centralized = run_centralized(windows, model, 5, config)
        np.testing.assert_array_equal(federated.params.vector, centralized.params.vector)

    def test_jobs_do_not_change_result(self):
        model = SequenceAutoencoder(SMALL, "simple_tanh", seed=1)
        rng = np.random.default_rng(5)
        clients = [ClientState(f"SA0{i}", rng.uniform(-1, 1, size=(4 + i, 5, 6))) for i in range(3)]
        config = TrainConfig(hidden_sizes=SMALL, batch_size=2, seed=9)
        serial = run_federated(clients, model, 2, config, jobs=1)
        parallel = run_federated(clients, model, 2, config, jobs=3)
        np.testing.assert_array_equal(serial.params.vector, parallel.params.vector)

    def test_server_holds_labeled_set(self):
        model = SequenceAutoencoder(SMALL, "simple_tanh", seed=1)
        windows = np.random.default_rng(6).uniform(-1, 1, size=(4, 5, 6))
        config = TrainConfig(hidden_sizes=SMALL, batch_size=None, seed=1)
        labels = np.array([0, 1, 1, 0])
        result = run_federated([ClientState("SA01", windows)], model, 2, config, labeled=(windows, labels))
        assert result.server.round == 2
        x, y = result.server.labeled
        assert x.shape == (4, 5, 6)
        np.testing.assert_array_equal(y, labels)
        with pytest.raises(ShapeMismatch):
            run_federated([ClientState("SA01", windows)], model, 1, config, labeled=(windows, labels[:3]))

    def test_local_round_records_loss(self):
        model = SequenceAutoencoder(SMALL, "gated", seed=1)
        client = ClientState("SA01", np.zeros((3, 5, 6)))
        local_train_round(client, model.params, model, TrainConfig(hidden_sizes=SMALL, batch_size=None))
        assert client.params is not None
        assert np.isfinite(client.last_loss)

    def test_centralized_log(self):
        model = SequenceAutoencoder(SMALL, "gated", seed=1)
        windows = np.random.default_rng(0).uniform(-1, 1, size=(6, 5, 6))
        result = run_centralized(windows, model, 3, TrainConfig(hidden_sizes=SMALL))
        assert [entry.round for entry in result.loss_log] == [1, 2, 3]


class TestClassifierStage:
    def test_single_class_rejected(self):
        clf = FrozenEncoderClassifier(SMALL, "gated", (3,), seed=0)
        with pytest.raises(SingleClassDataset):
            train_classifier(clf, np.zeros((4, 5, 6)), np.zeros(4), 1, TrainConfig())

    def test_encoder_untouched(self):
        ae = SequenceAutoencoder(SMALL, "gated", seed=0)
        clf = FrozenEncoderClassifier.from_autoencoder(ae, (3,), seed=1)
        X = np.random.default_rng(1).uniform(-1, 1, size=(8, 5, 6))
        y = np.array([0, 1] * 4)
        trained, history = train_classifier(clf, X, y, 5, TrainConfig())
        assert trained.params.digest(["enc"]) == ae.params.digest(["enc"])
        assert len(history) == 5
        metrics = evaluate(trained, X, y)
        assert metrics.total == 8


class TestMetrics:
    def test_from_counts(self):
        m = ClassificationMetrics.from_counts(tp=3, tn=5, fp=1, fn=1)
        assert m.pr == pytest.approx(0.75)
        assert m.re == pytest.approx(0.75)
        assert m.f1 == pytest.approx(0.75)
        assert m.acc == pytest.approx(0.8)

    def test_no_positive_predictions(self):
        m = ClassificationMetrics.from_predictions([1, 0, 0], [0, 0, 0])
        assert (m.pr, m.re, m.f1) == (0.0, 0.0, 0.0)
        assert m.acc == pytest.approx(2 / 3)

    def test_report_files(self, tmp_path):
        m = ClassificationMetrics.from_counts(1, 1, 0, 0)
        report = evaluation_report(m, "federated", {"split": {"seed": 0}})
        assert report["reference_percent"]["acc"] == 99.19
        write_eval_report(m, "federated", tmp_path / "eval.json")
        assert (tmp_path / "eval.json").read_text().endswith("\n")


class TestExperiment:
    """The full split, pretrain, classify, evaluate protocol on synthetic subjects."""

    @pytest.mark.parametrize("mode", ["federated", "centralized"])
    def test_runs_and_is_reproducible(self, mode, tmp_path):
        windows = synth_window_set(4, 1, 1, seed=3)
        first = run_experiment(windows, mode, small_config(seed=3))
        second = run_experiment(windows, mode, small_config(seed=3))
        assert first.metrics.to_dict() == second.metrics.to_dict()
        assert first.autoencoder.params.digest() == second.autoencoder.params.digest()
        test_windows = len(windows.for_subjects(first.split.test_users))
        assert first.metrics.total == test_windows
        assert len(first.round_log) == 2
        write_round_log(first.round_log, tmp_path / "rounds.csv")
        assert len((tmp_path / "rounds.csv").read_text().splitlines()) == 3

    def test_feedback_windows_join_labeled_set(self):
        windows = synth_window_set(4, 1, 1, seed=3)
        feedback = windows.values[:2]
        result = run_experiment(windows, "centralized", small_config(seed=3), feedback=feedback)
        assert result.metrics.total > 0

    def test_unknown_mode(self):
        windows = synth_window_set(4, 1, 1, seed=3)
        with pytest.raises(ParameterValidationError):
            run_experiment(windows, "gossip", small_config())

    @pytest.mark.slow
    def test_desk_scale_federated_accuracy(self):
        """Six clients of ~100 fall and ~100 ADL windows each, 30 rounds"""
        windows = synth_window_set(10, 8, 2, seed=21)
        config = RunConfig(
            seed=21,
            train=TrainConfig(hidden_sizes=[16, 8, 8], head_sizes=[8]),
            fed=FedConfig(rounds=30, classifier_epochs=30),
        )
        result = run_experiment(windows, "federated", config)
        assert len(result.split.train_users) == 6
        assert result.metrics.acc >= 0.95
