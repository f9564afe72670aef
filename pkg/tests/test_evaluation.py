"""Metrics, blackout disruption, and study orchestration."""

import json

import numpy as np
import pytest

from intentlab.errors import ConfigError, InputError
from intentlab.evaluation import (
    aggregate_runs,
    blackout_fraction,
    evaluate_rows,
    f1_binary,
    group_report,
    macro_f1,
    per_class_f1,
    read_study,
    run_disruption_study,
    sweep_thresholds,
    write_study,
)
from intentlab.model import ModelConfig, build_model
from intentlab.taxonomy import DisruptionSeries


class TestF1:
    def test_zero_over_zero_is_zero(self):
        assert f1_binary(0, 0, 0) == 0.0

    def test_perfect(self):
        assert f1_binary(5, 0, 0) == 1.0

    def test_hand_value(self):
        # precision 2/3, recall 2/4 -> F1 = 2*2 / (4 + 1 + 2)
        assert f1_binary(2, 1, 2) == pytest.approx(4.0 / 7.0)

    def test_per_class_hand_case(self):
        labels = np.array([[1, 0], [1, 1], [0, 1], [0, 0]])
        preds = np.array([[1, 1], [0, 1], [0, 1], [0, 0]])
        got = per_class_f1(labels, preds)
        # class 0: tp=1 fp=0 fn=1; class 1: tp=2 fp=1 fn=0
        np.testing.assert_allclose(got, [2 / 3, 4 / 5])

    def test_shape_mismatch_rejected(self):
        with pytest.raises(InputError):
            per_class_f1(np.zeros((2, 3)), np.zeros((2, 4)))
        with pytest.raises(InputError):
            per_class_f1(np.zeros(3), np.zeros(3))

    def test_macro_threshold_is_inclusive(self):
        labels = np.array([[1], [0]])
        scores = np.array([[0.5], [0.49]])
        got = macro_f1(labels, scores, threshold=0.5)
        assert got["macro_f1"] == 1.0

    def test_sweep_matches_pointwise(self, rng):
        labels = rng.integers(0, 2, size=(20, 4))
        scores = rng.uniform(size=(20, 4))
        rows = sweep_thresholds(labels, scores, [0.25, 0.5, 0.75])
        assert [r["threshold"] for r in rows] == [0.25, 0.5, 0.75]
        for row in rows:
            want = macro_f1(labels, scores, threshold=row["threshold"])
            assert row["macro_f1"] == pytest.approx(want["macro_f1"])


class TestGroupReport:
    def test_unweighted_group_means(self):
        per_class = {0: 0.2, 1: 0.4, 2: 0.9}
        groups = {0: "easy", 1: "easy", 2: "hard"}
        report = group_report(per_class, groups)
        assert report["easy"] == pytest.approx(0.3)
        assert report["hard"] == pytest.approx(0.9)
        assert report["All"] == pytest.approx(0.5)

    def test_coverage_mismatch_rejected(self):
        with pytest.raises(ConfigError):
            group_report({0: 0.5}, {0: "easy", 1: "easy"})
        with pytest.raises(ConfigError):
            group_report({0: 0.5, 1: 0.5}, {0: "easy"})


class TestAggregateRuns:
    def test_mean_and_sample_std(self):
        runs = [{"f1": 0.4}, {"f1": 0.5}, {"f1": 0.6}]
        got = aggregate_runs(runs)
        assert got["mean"]["f1"] == pytest.approx(0.5)
        assert got["std"]["f1"] == pytest.approx(np.std([0.4, 0.5, 0.6], ddof=1))
        assert got["n"] == 3
        assert not got["single_run"]

    def test_single_run_flagged(self):
        got = aggregate_runs([{"f1": 0.7}])
        assert got["single_run"]
        assert got["std"]["f1"] == 0.0
        assert got["mean"]["f1"] == pytest.approx(0.7)

    def test_key_mismatch_rejected(self):
        with pytest.raises(InputError):
            aggregate_runs([{"f1": 0.5}, {"accuracy": 0.5}])

    def test_empty_rejected(self):
        with pytest.raises(InputError):
            aggregate_runs([])


class TestBlackout:
    def test_region_granularity_removes_largest_components_first(self):
        region = np.zeros((4, 6), dtype=bool)
        region[0, :4] = True      # component of 4
        region[3, :2] = True      # component of 2
        image = np.ones((4, 6, 3), dtype=np.uint8) * 9
        out = blackout_fraction(image, region, 0.5)
        # target 3 pixels: the 4-pixel component alone crosses it.
        assert (out[0, :4] == 0).all()
        assert (out[3, :2] == 9).all()

    def test_region_tie_broken_by_discovery_order(self):
        region = np.zeros((3, 5), dtype=bool)
        region[0, :2] = True      # first component, size 2
        region[2, 3:] = True      # second component, size 2
        image = np.ones((3, 5), dtype=np.uint8)
        out = blackout_fraction(image, region, 0.4)
        assert (out[0, :2] == 0).all()
        assert (out[2, 3:] == 1).all()

    def test_pixel_granularity_exact_count_raster_order(self):
        region = np.ones((2, 4), dtype=bool)
        image = np.arange(8, dtype=np.uint8).reshape(2, 4) + 1
        out = blackout_fraction(image, region, 0.5, granularity="pixel")
        np.testing.assert_array_equal(out.reshape(-1),
                                      [0, 0, 0, 0, 5, 6, 7, 8])

    def test_pixel_count_rounds_up(self):
        region = np.ones((1, 3), dtype=bool)
        image = np.ones((1, 3), dtype=np.uint8)
        out = blackout_fraction(image, region, 0.5, granularity="pixel")
        assert int((out == 0).sum()) == 2

    def test_fraction_zero_copies_input(self):
        image = np.ones((2, 2), dtype=np.uint8)
        out = blackout_fraction(image, np.ones((2, 2), dtype=bool), 0.0)
        np.testing.assert_array_equal(out, image)
        out[0, 0] = 5
        assert image[0, 0] == 1

    def test_fraction_one_clears_region(self):
        region = np.eye(3, dtype=bool)
        image = np.full((3, 3), 7, dtype=np.uint8)
        for granularity in ("region", "pixel"):
            out = blackout_fraction(image, region, 1.0, granularity)
            assert (out[region] == 0).all()
            assert (out[~region] == 7).all()

    def test_empty_region_is_noop(self):
        image = np.full((2, 2), 3, dtype=np.uint8)
        out = blackout_fraction(image, np.zeros((2, 2), dtype=bool), 1.0)
        np.testing.assert_array_equal(out, image)

    def test_validation(self):
        image = np.zeros((2, 2), dtype=np.uint8)
        with pytest.raises(InputError):
            blackout_fraction(image, np.zeros((2, 2), dtype=bool), 1.5)
        with pytest.raises(InputError):
            blackout_fraction(image, np.zeros((3, 3), dtype=bool), 0.5)
        with pytest.raises(ConfigError):
            blackout_fraction(image, np.zeros((2, 2), dtype=bool), 0.5,
                              granularity="row")


def tiny_model():
    return build_model(ModelConfig(num_classes=4, feature_dim=16))


class TestEvaluateRows:
    def test_report_structure(self, tiny_dataset):
        report = evaluate_rows(tiny_model(), tiny_dataset["rows"], crop_size=32)
        assert set(report) == {"macro_f1", "per_class_f1", "threshold",
                               "n_images"}
        assert report["n_images"] == 16
        assert len(report["per_class_f1"]) == 4
        assert 0.0 <= report["macro_f1"] <= 1.0


class TestDisruptionStudy:
    def test_structure_and_level_zero_identity(self, tiny_dataset):
        model = tiny_model()
        outcome = run_disruption_study(model, tiny_dataset["rows"],
                                       [0.0, 1.0], crop_size=32)
        assert outcome.target == "object"
        assert outcome.macro.levels == (0.0, 1.0)
        assert set(outcome.per_class) == {0, 1, 2, 3}
        plain = evaluate_rows(model, tiny_dataset["rows"], crop_size=32)
        assert outcome.macro.f1[0] == pytest.approx(plain["macro_f1"])

    def test_unknown_target_rejected(self, tiny_dataset):
        with pytest.raises(ConfigError):
            run_disruption_study(tiny_model(), tiny_dataset["rows"],
                                 [0.0, 1.0], target="background", crop_size=32)

    def test_fine_tune_requires_work_dir(self, tiny_dataset):
        from intentlab.training import TrainSettings
        settings = TrainSettings(epochs=1, batch_size=8, base_lr=0.01,
                                 warmup_epochs=0, crop_size=32)
        with pytest.raises(ConfigError):
            run_disruption_study(tiny_model(), tiny_dataset["rows"],
                                 [0.0, 1.0], crop_size=32, fine_tune=settings)


class TestStudyFiles:
    def outcome(self):
        macro = DisruptionSeries((0.0, 0.5, 1.0), (0.8, 0.5, 0.2))
        per_class = {0: DisruptionSeries((0.0, 0.5, 1.0), (0.9, 0.6, 0.3)),
                     1: DisruptionSeries((0.0, 0.5, 1.0), (0.7, 0.4, 0.1))}
        from intentlab.evaluation import StudyOutcome
        return StudyOutcome(target="context", macro=macro, per_class=per_class)

    def test_round_trip(self, tmp_path):
        outcome = self.outcome()
        path = tmp_path / "study.json"
        write_study(path, outcome)
        loaded = read_study(path)
        assert loaded.target == "context"
        assert loaded.macro == outcome.macro
        assert loaded.per_class == outcome.per_class

    def test_version_gate(self, tmp_path):
        path = tmp_path / "study.json"
        path.write_text(json.dumps({"version": 5}))
        with pytest.raises(InputError):
            read_study(path)
