"""End-to-end command-line flows and exit code contract."""

import json

import numpy as np
import pytest
import yaml

from intentlab import synthetic
from intentlab.annotation_quality import fleiss_kappa
from intentlab.cli import main
from intentlab.evaluation import StudyOutcome, read_study, write_study
from intentlab.taxonomy import (
    DisruptionSeries,
    build_group_table,
    read_class_scores,
    read_group_assignments,
    write_class_scores,
)
from intentlab.training import write_manifest


def tiny_config(tmp_path, **train_overrides):
    train = dict(epochs=1, batch_size=8, base_lr=0.05, warmup_epochs=0,
                 object_classes=[0, 1], context_classes=[2, 3], seed=0,
                 crop_size=32)
    train.update(train_overrides)
    data = {
        "version": 1,
        "model": {"num_classes": 4, "feature_dim": 16},
        "train": train,
        "eval": {"batch_size": 8},
        "study": {"levels": [0.0, 1.0]},
    }
    path = tmp_path / "config.yaml"
    path.write_text(yaml.safe_dump(data))
    return str(path)


class TestExitCodes:
    def test_no_command_is_usage_error(self, capsys):
        assert main([]) == 1
        assert "command" in capsys.readouterr().err

    def test_missing_required_argument(self, capsys):
        assert main(["train", "--manifest", "m.txt"]) == 1
        assert "--out" in capsys.readouterr().err

    def test_unknown_command(self, capsys):
        assert main(["transmogrify"]) == 1

    def test_config_error_exits_2(self, tmp_path, capsys):
        bad = tmp_path / "bad.yaml"
        bad.write_text(yaml.safe_dump({"version": 1,
                                       "train": {"cls_loss": "hinge"}}))
        manifest = tmp_path / "m.txt"
        manifest.write_text("img.png\t0101\t-\t-\n")
        code = main(["train", "--manifest", str(manifest),
                     "--out", str(tmp_path / "run"), "--config", str(bad)])
        assert code == 2
        assert "config error" in capsys.readouterr().err

    def test_missing_input_exits_3(self, tmp_path, capsys):
        code = main(["train", "--manifest", str(tmp_path / "nope.txt"),
                     "--out", str(tmp_path / "run")])
        assert code == 3
        assert "input error" in capsys.readouterr().err

    def test_malformed_manifest_exits_3(self, tmp_path):
        manifest = tmp_path / "m.txt"
        manifest.write_text("img.png\tnot-bits\t-\t-\n")
        assert main(["train", "--manifest", str(manifest),
                     "--out", str(tmp_path / "run")]) == 3


class TestKappaCommand:
    def test_pooled(self, tmp_path, capsys):
        path = tmp_path / "ratings.csv"
        path.write_text("item_id,rater_id,category\n"
                        "i1,r1,yes\ni1,r2,yes\ni2,r1,yes\ni2,r2,no\n")
        assert main(["kappa", "--ratings", str(path)]) == 0
        out = capsys.readouterr().out
        want = fleiss_kappa([[2, 0], [1, 1]])
        assert f"kappa={want:.6f}" in out

    def test_per_task(self, tmp_path, capsys):
        path = tmp_path / "ratings.csv"
        path.write_text("i1,r1,yes,taskA\ni1,r2,yes,taskA\n"
                        "i2,r1,no,taskB\ni2,r2,no,taskB\n")
        assert main(["kappa", "--ratings", str(path), "--per-task",
                     "--categories", "yes,no"]) == 0
        out = capsys.readouterr().out
        assert "tasks=2" in out

    def test_empty_ratings_exit_3(self, tmp_path):
        path = tmp_path / "ratings.csv"
        path.write_text("item_id,rater_id,category\n")
        assert main(["kappa", "--ratings", str(path)]) == 3


def study_fixture(path, target, per_class):
    levels = (0.0, 0.5, 1.0)
    series = {cid: DisruptionSeries(levels, f1) for cid, f1 in per_class.items()}
    macro_f1 = tuple(float(np.mean([f1[i] for f1 in per_class.values()]))
                     for i in range(len(levels)))
    outcome = StudyOutcome(target=target,
                           macro=DisruptionSeries(levels, macro_f1),
                           per_class=series)
    write_study(path, outcome)
    return outcome


class TestGroupClassesCommand:
    def test_matches_direct_pipeline(self, tmp_path, capsys):
        object_path = tmp_path / "object_study.json"
        context_path = tmp_path / "context_study.json"
        object_study = study_fixture(object_path, "object",
                                     {0: (0.9, 0.5, 0.1), 1: (0.5, 0.5, 0.5)})
        context_study = study_fixture(context_path, "context",
                                      {0: (0.5, 0.5, 0.5), 1: (0.8, 0.5, 0.2)})
        scores_path = tmp_path / "scores.json"
        write_class_scores(scores_path, {0: (5.0, 10.0), 1: (5.0, 80.0)})
        out_path = tmp_path / "groups.json"
        code = main(["group-classes", "--studies", str(object_path),
                     str(context_path), "--f1", str(scores_path),
                     "--out", str(out_path)])
        assert code == 0
        table = read_group_assignments(out_path)
        want = build_group_table(
            {cid: s.flip_orientation()
             for cid, s in object_study.per_class.items()},
            {cid: s.flip_orientation()
             for cid, s in context_study.per_class.items()},
            read_class_scores(scores_path))
        assert table == want
        printed = capsys.readouterr().out
        assert "class=0 content=object_dependent" in printed
        assert "class=1 content=context_dependent" in printed

    def test_swapped_studies_exit_3(self, tmp_path):
        object_path = tmp_path / "object_study.json"
        context_path = tmp_path / "context_study.json"
        study_fixture(object_path, "object", {0: (0.9, 0.5, 0.1)})
        study_fixture(context_path, "context", {0: (0.5, 0.5, 0.5)})
        scores_path = tmp_path / "scores.json"
        write_class_scores(scores_path, {0: (5.0, 10.0)})
        code = main(["group-classes", "--studies", str(context_path),
                     str(object_path), "--f1", str(scores_path),
                     "--out", str(tmp_path / "groups.json")])
        assert code == 3

    def test_custom_cuts(self, tmp_path):
        object_path = tmp_path / "object_study.json"
        context_path = tmp_path / "context_study.json"
        study_fixture(object_path, "object", {0: (0.9, 0.5, 0.1)})
        study_fixture(context_path, "context", {0: (0.5, 0.5, 0.5)})
        scores_path = tmp_path / "scores.json"
        write_class_scores(scores_path, {0: (5.0, 20.0)})  # gain about 6.93
        out_path = tmp_path / "groups.json"
        assert main(["group-classes", "--studies", str(object_path),
                     str(context_path), "--f1", str(scores_path),
                     "--out", str(out_path), "--cuts", "1,2"]) == 0
        table = read_group_assignments(out_path)
        assert table[0].difficulty_group.value == "hard"


@pytest.fixture(scope="module")
def hashtag_corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    return synthetic.make_hashtag_corpus(root, n_train=120, n_val=18,
                                         dim=8, n_topics=3, seed=0)


class TestHashtagCommands:
    def test_knn_sweep_writes_tsv(self, hashtag_corpus, tmp_path, capsys):
        out = tmp_path / "sweep.tsv"
        code = main(["knn-sweep",
                     "--index", hashtag_corpus["train_vectors"],
                     "--tags", hashtag_corpus["train_tags"],
                     "--train-labels", hashtag_corpus["train_labels"],
                     "--queries", hashtag_corpus["val_vectors"],
                     "--query-labels", hashtag_corpus["val_labels"],
                     "--dictionary", hashtag_corpus["dictionary"],
                     "--embeddings", hashtag_corpus["embeddings"],
                     "--out", str(out), "--k", "5,20"])
        assert code == 0
        lines = out.read_text().splitlines()
        assert lines[0] == "k\tmacro_f1"
        ks = [int(line.split("\t")[0]) for line in lines[1:]]
        assert ks == [5, 20]
        for line in lines[1:]:
            assert 0.0 <= float(line.split("\t")[1]) <= 1.0
        assert "k=5" in capsys.readouterr().out

    def test_hashtag_build_writes_features(self, hashtag_corpus, tmp_path):
        out_dir = tmp_path / "features_out"
        code = main(["hashtag-build",
                     "--index", hashtag_corpus["train_vectors"],
                     "--tags", hashtag_corpus["train_tags"],
                     "--queries", hashtag_corpus["val_vectors"],
                     "--dictionary", hashtag_corpus["dictionary"],
                     "--embeddings", hashtag_corpus["embeddings"],
                     "--out", str(out_dir), "--k", "10"])
        assert code == 0
        rows = (out_dir / "features.tsv").read_text().splitlines()
        assert len(rows) == 18
        first_id, count, rel = rows[0].split("\t")
        assert int(count) > 0
        vec = np.load(out_dir / rel)
        assert vec.shape == (8,)
        assert np.any(vec)

    def test_bad_k_value_exits_3(self, hashtag_corpus, tmp_path):
        code = main(["knn-sweep",
                     "--index", hashtag_corpus["train_vectors"],
                     "--tags", hashtag_corpus["train_tags"],
                     "--train-labels", hashtag_corpus["train_labels"],
                     "--queries", hashtag_corpus["val_vectors"],
                     "--query-labels", hashtag_corpus["val_labels"],
                     "--dictionary", hashtag_corpus["dictionary"],
                     "--embeddings", hashtag_corpus["embeddings"],
                     "--out", str(tmp_path / "sweep.tsv"), "--k", "5,abc"])
        assert code == 3


class TestTrainingPipeline:
    def test_train_eval_study_plot(self, tiny_dataset, tmp_path, capsys):
        config = tiny_config(tmp_path)
        manifest = str(tiny_dataset["manifest"])
        run_dir = tmp_path / "run"
        assert main(["train", "--manifest", manifest, "--out", str(run_dir),
                     "--config", config]) == 0
        assert (run_dir / "best.ckpt").exists()
        capsys.readouterr()

        metrics_path = tmp_path / "metrics.json"
        assert main(["eval", "--manifest", manifest,
                     "--ckpt", str(run_dir / "best.ckpt"),
                     "--out", str(metrics_path), "--config", config]) == 0
        metrics = json.loads(metrics_path.read_text())
        assert metrics["n_images"] == 16
        assert "macro_f1" in capsys.readouterr().out

        study_path = tmp_path / "study.json"
        assert main(["study-disruption", "--manifest", manifest,
                     "--ckpt", str(run_dir / "best.ckpt"),
                     "--out", str(study_path), "--config", config,
                     "--target", "object"]) == 0
        outcome = read_study(study_path)
        assert outcome.target == "object"
        assert outcome.macro.levels == (0.0, 1.0)
        assert outcome.macro.f1[0] == pytest.approx(metrics["macro_f1"])

        plot_path = tmp_path / "curves.png"
        assert main(["plot", "--kind", "disruption",
                     "--inputs", str(study_path), "--out", str(plot_path)]) == 0
        assert plot_path.stat().st_size > 0

        train_plot = tmp_path / "training.png"
        assert main(["plot", "--kind", "training",
                     "--inputs", str(run_dir / "epochs.jsonl"),
                     "--out", str(train_plot)]) == 0
        assert train_plot.stat().st_size > 0

    def test_seed_flag_overrides_config(self, tiny_dataset, tmp_path):
        config = tiny_config(tmp_path)
        manifest = str(tiny_dataset["manifest"])
        main(["train", "--manifest", manifest, "--out", str(tmp_path / "a"),
              "--config", config, "--seed", "5"])
        main(["train", "--manifest", manifest, "--out", str(tmp_path / "b"),
              "--config", config, "--seed", "5"])
        main(["train", "--manifest", manifest, "--out", str(tmp_path / "c"),
              "--config", config, "--seed", "6"])
        a = (tmp_path / "a" / "steps.tsv").read_bytes()
        b = (tmp_path / "b" / "steps.tsv").read_bytes()
        c = (tmp_path / "c" / "steps.tsv").read_bytes()
        assert a == b
        assert a != c

    def test_eval_group_reports(self, tiny_dataset, tmp_path):
        config = tiny_config(tmp_path)
        manifest = str(tiny_dataset["manifest"])
        run_dir = tmp_path / "run"
        main(["train", "--manifest", manifest, "--out", str(run_dir),
              "--config", config])

        object_path = tmp_path / "object_study.json"
        context_path = tmp_path / "context_study.json"
        study_fixture(object_path, "object",
                      {0: (0.9, 0.5, 0.1), 1: (0.8, 0.5, 0.2),
                       2: (0.5, 0.5, 0.5), 3: (0.5, 0.5, 0.5)})
        study_fixture(context_path, "context",
                      {0: (0.5, 0.5, 0.5), 1: (0.5, 0.5, 0.5),
                       2: (0.9, 0.5, 0.1), 3: (0.8, 0.5, 0.2)})
        scores_path = tmp_path / "scores.json"
        write_class_scores(scores_path, {0: (5.0, 10.0), 1: (5.0, 40.0),
                                         2: (5.0, 80.0), 3: (5.0, 200.0)})
        groups_path = tmp_path / "groups.json"
        main(["group-classes", "--studies", str(object_path), str(context_path),
              "--f1", str(scores_path), "--out", str(groups_path)])

        metrics_path = tmp_path / "metrics.json"
        assert main(["eval", "--manifest", manifest,
                     "--ckpt", str(run_dir / "best.ckpt"),
                     "--out", str(metrics_path), "--config", config,
                     "--groups", str(groups_path)]) == 0
        metrics = json.loads(metrics_path.read_text())
        assert "by_content_group" in metrics
        assert "by_difficulty_group" in metrics
        assert "All" in metrics["by_content_group"]
