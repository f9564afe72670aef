"""Experiment config files and the documented default values."""

import pytest

from intentlab.annotation_quality import HITL_THRESHOLD
from intentlab.config import (
    EvalSettings,
    ExperimentConfig,
    StudySettings,
    dump_experiment_config,
    load_experiment_config,
    parse_experiment_config,
)
from intentlab.errors import ConfigError
from intentlab.hashtags import DEFAULT_NEIGHBORS
from intentlab.model import LAMBDA_LOC, POSITIVE_PRIOR, ModelConfig
from intentlab.saliency import CAM_THRESHOLD
from intentlab.taxonomy import DEFAULT_DIFFICULTY_CUTS
from intentlab.training import TrainSettings


class TestDefaults:
    """The documented default operating point, spot-checked in one place."""

    def test_loss_and_prior(self):
        assert LAMBDA_LOC == 0.1
        assert POSITIVE_PRIOR == 0.01
        assert CAM_THRESHOLD == 0.4

    def test_retrieval_and_annotation(self):
        assert DEFAULT_NEIGHBORS == 150
        assert HITL_THRESHOLD == 0.35
        assert DEFAULT_DIFFICULTY_CUTS == (5.0, 15.0)

    def test_training_defaults(self):
        s = TrainSettings()
        assert s.batch_size == 128
        assert s.momentum == 0.9
        assert s.warmup_epochs == 5
        assert s.crop_size == 224
        assert s.lambda_loc == 0.1

    def test_config_defaults_compose(self):
        cfg = ExperimentConfig()
        assert cfg.model.num_classes == 28
        assert cfg.eval.threshold == 0.5
        assert cfg.study.levels == (0.0, 0.25, 0.5, 0.75, 1.0)
        assert cfg.study.target == "object"


class TestSectionValidation:
    def test_eval_settings(self):
        with pytest.raises(ConfigError):
            EvalSettings(threshold=1.5)
        with pytest.raises(ConfigError):
            EvalSettings(batch_size=0)

    def test_study_settings(self):
        with pytest.raises(ConfigError):
            StudySettings(target="edges")
        with pytest.raises(ConfigError):
            StudySettings(granularity="column")
        with pytest.raises(ConfigError):
            StudySettings(levels=(0.0,))


class TestParse:
    def base(self, **extra):
        data = {"version": 1}
        data.update(extra)
        return data

    def test_empty_sections_use_defaults(self):
        cfg = parse_experiment_config(self.base())
        assert cfg.model == ModelConfig()
        assert cfg.train == TrainSettings()

    def test_section_values_applied(self):
        cfg = parse_experiment_config(self.base(
            model={"num_classes": 4, "feature_dim": 16},
            train={"epochs": 3, "base_lr": 0.05},
        ))
        assert cfg.model.num_classes == 4
        assert cfg.train.epochs == 3
        assert cfg.train.base_lr == 0.05

    def test_lists_become_tuples(self):
        cfg = parse_experiment_config(self.base(
            train={"object_classes": [0, 1], "context_classes": [2, 3]},
            study={"levels": [0.0, 1.0]},
        ))
        assert cfg.train.object_classes == (0, 1)
        assert cfg.study.levels == (0.0, 1.0)

    def test_missing_version_rejected(self):
        with pytest.raises(ConfigError):
            parse_experiment_config({})

    def test_wrong_version_rejected(self):
        with pytest.raises(ConfigError):
            parse_experiment_config({"version": 2})

    def test_unknown_top_level_key_rejected(self):
        with pytest.raises(ConfigError):
            parse_experiment_config(self.base(modle={}))

    def test_unknown_section_key_rejected(self):
        with pytest.raises(ConfigError):
            parse_experiment_config(self.base(train={"learning_rate": 0.1}))

    def test_non_mapping_section_rejected(self):
        with pytest.raises(ConfigError):
            parse_experiment_config(self.base(train=[1, 2]))

    def test_non_mapping_config_rejected(self):
        with pytest.raises(ConfigError):
            parse_experiment_config([1, 2])

    def test_section_validation_propagates(self):
        with pytest.raises(ConfigError):
            parse_experiment_config(self.base(model={"backbone": "vgg"}))


class TestRoundTrip:
    def test_dump_then_load(self, tmp_path):
        cfg = ExperimentConfig(
            model=ModelConfig(num_classes=4, feature_dim=16),
            train=TrainSettings(epochs=3, batch_size=4, base_lr=0.2,
                                warmup_epochs=0, schedule="cosine",
                                object_classes=(0, 1), context_classes=(2, 3),
                                grad_clip=1.0, pos_weight=3.0, seed=7,
                                crop_size=32, augment=False),
            eval=EvalSettings(threshold=0.4, batch_size=8),
            study=StudySettings(levels=(0.0, 0.5, 1.0), target="context"),
        )
        path = tmp_path / "config.yaml"
        dump_experiment_config(cfg, path)
        loaded = load_experiment_config(path)
        assert loaded.model == cfg.model
        assert loaded.train == cfg.train
        assert loaded.eval == cfg.eval
        assert loaded.study == cfg.study

    def test_defaults_round_trip(self, tmp_path):
        path = tmp_path / "config.yaml"
        dump_experiment_config(ExperimentConfig(), path)
        loaded = load_experiment_config(path)
        assert loaded == ExperimentConfig()
