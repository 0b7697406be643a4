"""
Tests for detection scoring, scene features and the fall classifiers.
"""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fallchain.config import VisionConfig
from fallchain.visionstage import (
    FALLEN,
    N_FEATURES,
    NOT_FALLEN,
    Detection,
    FrameRecord,
    GroundTruthBox,
    ap50,
    ap_from_hits,
    eval_detection_set,
    evaluate_fall_classifier,
    extract_features,
    fall_classifier_from_dict,
    feature_table,
    iou,
    load_detection_set,
    map50,
    match_detections,
    read_features_csv,
    read_truths,
    synth_frames,
    train_fall_classifier,
    write_features_csv,
    write_frame_files,
)
from fallchain.utils.exceptions import MalformedRow, ParameterValidationError, SingleClassDataset


def brute_force_ap(hits, n_truths):
    """Area under the precision envelope, one recall step per hit."""
    if n_truths == 0:
        return 0.0
    precisions = []
    tp = 0
    for k, hit in enumerate(hits, start=1):
        tp += hit
        precisions.append(tp / k)
    area = 0.0
    for k, hit in enumerate(hits):
        if hit:
            area += max(precisions[k:]) / n_truths
    return area


coord = st.floats(0.05, 0.95)
size = st.floats(0.01, 1.0)
boxes = st.tuples(coord, coord, size, size)


class TestIou:
    """Intersection over union of center-format boxes."""

    def test_quarter_overlap(self):
        assert iou((0.25, 0.25, 0.5, 0.5), (0.5, 0.5, 0.5, 0.5)) == pytest.approx(1 / 7)

    def test_disjoint(self):
        assert iou((0.1, 0.1, 0.1, 0.1), (0.9, 0.9, 0.1, 0.1)) == 0.0

    @settings(max_examples=300, deadline=None)
    @given(boxes, boxes)
    def test_properties(self, a, b):
        value = iou(a, b)
        assert 0.0 <= value <= 1.0
        assert value == pytest.approx(iou(b, a))
        assert iou(a, a) == pytest.approx(1.0)


class TestAveragePrecision:
    def test_hand_example(self):
        assert ap_from_hits([True, False, True], 2) == pytest.approx(5 / 6)

    def test_no_truth(self):
        det = Detection("person", (0.5, 0.5, 0.2, 0.2), 0.9)
        result = ap50([det], [])
        assert result.ap == 0.0
        assert result.no_ground_truth

    def test_below_threshold(self):
        det = Detection("person", (0.25, 0.25, 0.5, 0.5), 0.9)
        truth = GroundTruthBox("person", (0.5, 0.5, 0.5, 0.5))
        assert ap50([det], [truth]).ap == 0.0

    def test_duplicate_detection_is_false_positive(self):
        truth = GroundTruthBox("person", (0.5, 0.5, 0.2, 0.2))
        dets = [Detection("person", (0.5, 0.5, 0.2, 0.2), 0.9), Detection("person", (0.5, 0.5, 0.2, 0.2), 0.8)]
        assert match_detections(dets, [truth]) == [True, False]
        assert ap50(dets, [truth]).ap == pytest.approx(1.0)

    def test_matches_brute_force(self):
        rng = np.random.default_rng(2024)
        for _ in range(500):
            n_truths = int(rng.integers(0, 5))
            n_dets = int(rng.integers(0, 7))
            truths = [GroundTruthBox("person", tuple(rng.uniform([0.2, 0.2, 0.1, 0.1], [0.8, 0.8, 0.4, 0.4])))
                      for _ in range(n_truths)]
            dets = [Detection("person", tuple(rng.uniform([0.2, 0.2, 0.1, 0.1], [0.8, 0.8, 0.4, 0.4])),
                              float(rng.uniform(0.0, 1.0))) for _ in range(n_dets)]
            hits = match_detections(dets, truths)
            assert ap50(dets, truths).ap == pytest.approx(brute_force_ap(hits, n_truths), abs=1e-12)

    def test_map_skips_classes_without_truth(self):
        truth = GroundTruthBox(FALLEN, (0.5, 0.5, 0.2, 0.2))
        dets = [Detection(FALLEN, (0.5, 0.5, 0.2, 0.2), 0.9), Detection("chair", (0.2, 0.2, 0.1, 0.1), 0.9)]
        mean_ap, per_class = map50(dets, [truth])
        assert mean_ap == pytest.approx(1.0)
        assert per_class["chair"].no_ground_truth


class TestDetectionSet:
    def test_metrics(self):
        frames = [
            FrameRecord("a", [Detection(FALLEN, (0.5, 0.5, 0.2, 0.2), 0.9),
                              Detection("bed", (0.5, 0.7, 0.3, 0.2), 0.9)],
                        [GroundTruthBox(FALLEN, (0.5, 0.5, 0.2, 0.2))], 0.02),
            FrameRecord("b", [Detection(NOT_FALLEN, (0.1, 0.1, 0.1, 0.1), 0.7)],
                        [GroundTruthBox(NOT_FALLEN, (0.6, 0.6, 0.2, 0.2))], 0.04),
        ]
        metrics = eval_detection_set(frames)
        assert (metrics.tp, metrics.fp, metrics.fn) == (1, 1, 1)
        assert metrics.precision == pytest.approx(0.5)
        assert metrics.map50 == pytest.approx(0.5)
        assert metrics.mean_inference_s == pytest.approx(0.03)
        assert metrics.to_dict()["interpolation"] == "all-points"

    def test_same_box_other_frame_is_not_a_match(self):
        frames = [
            FrameRecord("a", [Detection(FALLEN, (0.5, 0.5, 0.2, 0.2), 0.9)], []),
            FrameRecord("b", [], [GroundTruthBox(FALLEN, (0.5, 0.5, 0.2, 0.2))]),
        ]
        metrics = eval_detection_set(frames)
        assert metrics.tp == 0
        assert metrics.mean_inference_s is None


class TestSceneFeatures:
    """Fixed-length scene vectors."""

    def test_person_and_bed(self):
        person = Detection("person", (0.5, 0.5, 0.2, 0.1), 0.9)
        bed = Detection("bed", (0.5, 0.6, 0.4, 0.2), 0.8)
        features = extract_features([person, bed])
        assert features.shape == (N_FEATURES,) == (13,)
        expected = [1, 0, 1, 0, 2, 0.3, 0.15, 0.5, 0.0, 0.5, 0.5, 2.0, 0.1]
        np.testing.assert_allclose(features, expected, atol=1e-12)

    def test_two_persons(self):
        dets = [Detection("person", (0.3, 0.2, 0.1, 0.2)), Detection("person", (0.7, 0.6, 0.1, 0.2))]
        features = extract_features(dets)
        assert features[7] == pytest.approx(0.4)
        assert features[8] == pytest.approx(0.2)
        assert features[12] == 2.0

    def test_empty_frame(self):
        features = extract_features([])
        assert features[:12].tolist() == [0.0] * 12
        assert features[12] == 2.0

    def test_irrelevant_classes_ignored(self):
        dets = [Detection("person", (0.5, 0.5, 0.2, 0.4)), Detection("dog", (0.2, 0.2, 0.1, 0.1))]
        np.testing.assert_array_equal(extract_features(dets), extract_features(dets[:1]))

    def test_permutation_invariant(self):
        frame = synth_frames(1, seed=4)[0]
        forward = extract_features(frame.detections)
        backward = extract_features(list(reversed(frame.detections)))
        np.testing.assert_array_equal(forward, backward)

    def test_min_confidence(self):
        dets = [Detection("person", (0.5, 0.5, 0.2, 0.4), 0.2)]
        assert extract_features(dets, VisionConfig(min_confidence=0.5))[0] == 0.0

    def test_feature_csv_roundtrip(self, tmp_path):
        frames = synth_frames(5, seed=1)
        X, y = feature_table(frames)
        write_features_csv([f.frame for f in frames], X, y, tmp_path / "features.csv")
        names, X2, y2 = read_features_csv(tmp_path / "features.csv")
        assert names == [f.frame for f in frames]
        np.testing.assert_array_equal(X2, X)
        np.testing.assert_array_equal(y2, y)


class TestFallClassifiers:
    def separable(self):
        rng = np.random.default_rng(0)
        X = rng.normal(0.0, 0.1, size=(60, N_FEATURES))
        y = np.array([0, 1] * 30)
        X[y == 1, 11] += 2.0
        X[y == 1, 7] += 1.0
        return X, y

    @pytest.mark.parametrize("kind", ["logistic", "random_forest"])
    def test_separable_accuracy(self, kind):
        X, y = self.separable()
        model = train_fall_classifier(kind, X, y, VisionConfig(forest_trees=10, logistic_epochs=500))
        assert evaluate_fall_classifier(model, X, y).acc >= 0.95
        again = fall_classifier_from_dict(model.to_dict())
        np.testing.assert_array_equal(again.predict(X), model.predict(X))

    def test_synthetic_frames(self):
        frames = synth_frames(120, seed=6)
        X, y = feature_table(frames)
        model = train_fall_classifier("logistic", X[:80], y[:80])
        assert evaluate_fall_classifier(model, X[80:], y[80:]).acc >= 0.9

    def test_single_class(self):
        with pytest.raises(SingleClassDataset):
            train_fall_classifier("logistic", np.zeros((4, N_FEATURES)), np.zeros(4))

    def test_unknown_kind(self):
        with pytest.raises(ParameterValidationError):
            train_fall_classifier("svm", *self.separable())


class TestRecordFiles:
    def test_roundtrip(self, tmp_path):
        frames = synth_frames(4, seed=2)
        write_frame_files(frames, tmp_path / "det", tmp_path / "truth", tmp_path / "classes.txt", tmp_path / "times.csv")
        loaded = load_detection_set(tmp_path / "det", tmp_path / "classes.txt", tmp_path / "truth", tmp_path / "times.csv")
        assert [f.frame for f in loaded] == [f.frame for f in frames]
        for original, again in zip(frames, loaded):
            assert [(d.class_name, d.bbox, d.confidence) for d in again.detections] == \
                [(d.class_name, d.bbox, d.confidence) for d in original.detections]
            assert again.truths == original.truths
            assert again.inference_s == original.inference_s
            assert again.label == original.label

    def test_missing_truth_file_is_not_fallen(self, tmp_path):
        (tmp_path / "det").mkdir()
        (tmp_path / "det" / "empty_room.txt").write_text("0 0.5 0.5 0.2 0.2 0.9\n")
        (tmp_path / "classes.txt").write_text("0 chair\n")
        frames = load_detection_set(tmp_path / "det", tmp_path / "classes.txt", tmp_path / "missing")
        assert frames[0].truths == []
        assert frames[0].label == 0

    def test_minus_one_reads_not_fallen(self, tmp_path):
        path = tmp_path / "f.txt"
        path.write_text("-1 0.5 0.5 0.2 0.2\n")
        assert read_truths(path, {})[0].class_name == NOT_FALLEN

    def test_bad_line(self, tmp_path):
        path = tmp_path / "f.txt"
        path.write_text("0 0.5 0.5 0.2\n")
        with pytest.raises(MalformedRow):
            read_truths(path, {0: "person"})
