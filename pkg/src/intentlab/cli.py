"""Command-line entry point.

Exit codes: 0 on success, 1 for usage errors and other runtime failures,
2 for configuration errors, 3 for input errors.
"""

from __future__ import annotations

import argparse
import json
import sys

from .errors import ConfigError, InputError, IntentLabError


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    # argparse exits 2 on bad usage; the contract here is exit code 1.
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _load_config(path):
    from .config import ExperimentConfig, load_experiment_config

    return load_experiment_config(path) if path else ExperimentConfig()


def _floats(text: str) -> list:
    try:
        return [float(x) for x in text.split(",") if x != ""]
    except ValueError:
        raise InputError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text: str) -> list:
    try:
        return [int(x) for x in text.split(",") if x != ""]
    except ValueError:
        raise InputError(f"expected comma-separated integers, got {text!r}") from None


# --- commands -----------------------------------------------------------------


def cmd_train(args) -> int:
    from .model import build_model
    from .training import read_manifest, train

    cfg = _load_config(args.config)
    if args.seed is not None:
        cfg.train.seed = args.seed
    model = build_model(cfg.model, seed=cfg.train.seed)
    rows = read_manifest(args.manifest, num_classes=cfg.model.num_classes)
    val_rows = (read_manifest(args.val_manifest, num_classes=cfg.model.num_classes)
                if args.val_manifest else None)
    result = train(model, rows, cfg.train, args.out, val_rows=val_rows)
    print(f"trained {len(rows)} images for {cfg.train.epochs} epochs")
    print(f"best_epoch={result.best_epoch} best_macro_f1={result.best_macro_f1:.4f} "
          f"final_macro_f1={result.final_macro_f1:.4f}")
    print(f"checkpoints: {result.best_checkpoint} {result.last_checkpoint}")
    return 0


def cmd_eval(args) -> int:
    from .evaluation import evaluate_rows, group_report
    from .model import load_checkpoint
    from .training import read_manifest

    cfg = _load_config(args.config)
    model = load_checkpoint(args.ckpt)
    rows = read_manifest(args.manifest, num_classes=model.config.num_classes)
    metrics = evaluate_rows(model, rows, crop_size=cfg.train.crop_size,
                            batch_size=cfg.eval.batch_size,
                            threshold=cfg.eval.threshold)
    if args.groups:
        from .taxonomy import read_group_assignments

        assignments = read_group_assignments(args.groups)
        per_class = {cid: metrics["per_class_f1"][cid] for cid in assignments}
        metrics["by_content_group"] = group_report(
            per_class, {cid: a.content_group.value for cid, a in assignments.items()})
        metrics["by_difficulty_group"] = group_report(
            per_class, {cid: a.difficulty_group.value for cid, a in assignments.items()})
    with open(args.out, "w") as fh:
        json.dump(metrics, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"macro_f1={metrics['macro_f1']:.4f} over {metrics['n_images']} images "
          f"at threshold {metrics['threshold']}")
    return 0


def cmd_study_disruption(args) -> int:
    from .evaluation import run_disruption_study, write_study
    from .model import load_checkpoint
    from .training import read_manifest

    cfg = _load_config(args.config)
    if args.seed is not None:
        cfg.train.seed = args.seed
    model = load_checkpoint(args.ckpt)
    rows = read_manifest(args.manifest, num_classes=model.config.num_classes)
    levels = _floats(args.levels) if args.levels else list(cfg.study.levels)
    target = args.target or cfg.study.target
    fine_tune = cfg.train if cfg.study.fine_tune else None
    outcome = run_disruption_study(model, rows, levels, target=target,
                                   granularity=cfg.study.granularity,
                                   crop_size=cfg.train.crop_size,
                                   batch_size=cfg.eval.batch_size,
                                   threshold=cfg.eval.threshold,
                                   fine_tune=fine_tune,
                                   work_dir=args.work_dir)
    write_study(args.out, outcome)
    for level, f1 in zip(outcome.macro.levels, outcome.macro.f1):
        print(f"level={level:g} macro_f1={f1:.4f}")
    return 0


def cmd_group_classes(args) -> int:
    from .evaluation import read_study
    from .taxonomy import (DEFAULT_DIFFICULTY_CUTS, DEFAULT_NEUTRAL_BAND,
                           build_group_table, read_class_scores,
                           write_group_assignments)

    object_path, context_path = args.studies
    object_study = read_study(object_path)
    context_study = read_study(context_path)
    if object_study.target != "object" or context_study.target != "context":
        raise InputError("studies must target 'object' and 'context' respectively, got "
                         f"{object_study.target!r} and {context_study.target!r}")
    # Studies sweep the removed fraction; the grouping rules read slopes
    # over the retained fraction, so flip both curves.
    object_series = {cid: series.flip_orientation()
                     for cid, series in object_study.per_class.items()}
    context_series = {cid: series.flip_orientation()
                      for cid, series in context_study.per_class.items()}
    scores = read_class_scores(args.f1)
    cuts = tuple(_floats(args.cuts)) if args.cuts else DEFAULT_DIFFICULTY_CUTS
    band = args.neutral_band if args.neutral_band is not None else DEFAULT_NEUTRAL_BAND
    table = build_group_table(object_series, context_series, scores,
                              neutral_band=band, difficulty_cuts=cuts)
    write_group_assignments(args.out, table)
    for cid in sorted(table):
        a = table[cid]
        print(f"class={cid} content={a.content_group.value} "
              f"difficulty={a.difficulty_group.value} gain={a.gain:.3f}")
    return 0


def cmd_hashtag_build(args) -> int:
    import os

    import numpy as np

    from .hashtags import (SegDictionary, WordEmbeddings, build_hashtag_feature,
                           load_hashtag_table, load_vector_table)

    index = load_vector_table(args.index)
    tags = load_hashtag_table(args.tags)
    queries = load_vector_table(args.queries)
    dictionary = SegDictionary.from_file(args.dictionary)
    provider = WordEmbeddings.from_text_file(args.embeddings)
    features_dir = os.path.join(args.out, "features")
    os.makedirs(features_dir, exist_ok=True)
    with open(os.path.join(args.out, "features.tsv"), "w") as fh:
        for i, query_id in enumerate(queries.ids.tolist()):
            feature = build_hashtag_feature(
                queries.vectors[i], index, tags, args.k,
                dictionary=dictionary, provider=provider, metric=args.metric,
                dedupe=args.dedupe, segment=not args.no_segment)
            npy_path = os.path.join(features_dir, f"{query_id}.npy")
            np.save(npy_path, feature.vector)
            fh.write(f"{query_id}\t{feature.source_count}\t"
                     f"{os.path.join('features', f'{query_id}.npy')}\n")
    print(f"wrote {len(queries)} hashtag features to {features_dir}")
    return 0


def cmd_knn_sweep(args) -> int:
    from .hashtags import (SWEEP_NEIGHBOR_COUNTS, SegDictionary, WordEmbeddings,
                           load_hashtag_table, load_label_table,
                           load_vector_table, sweep_neighbor_counts)

    index = load_vector_table(args.index)
    tags = load_hashtag_table(args.tags)
    train_labels = load_label_table(args.train_labels)
    queries_index = load_vector_table(args.queries)
    query_labels = load_label_table(args.query_labels)
    dictionary = SegDictionary.from_file(args.dictionary)
    provider = WordEmbeddings.from_text_file(args.embeddings)
    ks = _ints(args.k) if args.k else list(SWEEP_NEIGHBOR_COUNTS)
    queries = list(zip(queries_index.ids.tolist(), queries_index.vectors))
    results = sweep_neighbor_counts(ks, index, tags, train_labels, queries,
                                    query_labels, dictionary=dictionary,
                                    provider=provider, metric=args.metric)
    with open(args.out, "w") as fh:
        fh.write("k\tmacro_f1\n")
        for row in results:
            fh.write(f"{row['k']}\t{row['macro_f1']!r}\n")
    for row in results:
        print(f"k={row['k']} macro_f1={row['macro_f1']:.4f}")
    return 0


def cmd_kappa(args) -> int:
    from .annotation_quality import (build_count_matrix, fleiss_kappa,
                                     group_records_by_task, mean_task_kappa,
                                     read_ratings_csv)

    records = read_ratings_csv(args.ratings)
    categories = args.categories.split(",") if args.categories else None
    if args.per_task:
        by_task = group_records_by_task(records)
        matrices = [build_count_matrix(by_task[task], categories)[0]
                    for task in sorted(by_task)]
        value = mean_task_kappa(matrices)
        print(f"tasks={len(matrices)} mean_kappa={value:.6f}")
    else:
        matrix, _, _ = build_count_matrix(records, categories)
        value = fleiss_kappa(matrix)
        print(f"kappa={value:.6f}")
    return 0


def cmd_plot(args) -> int:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    if args.kind == "training":
        epochs, losses, f1s = [], [], []
        with open(args.inputs[0]) as fh:
            for line in fh:
                if line.strip():
                    record = json.loads(line)
                    epochs.append(record["epoch"])
                    losses.append(record["train_loss"])
                    f1s.append(record["val_macro_f1"])
        if not epochs:
            raise InputError(f"no epoch records in {args.inputs[0]}")
        ax.plot(epochs, losses, marker="o", label="train loss")
        ax.plot(epochs, f1s, marker="s", label="val macro F1")
        ax.set_xlabel("epoch")
    elif args.kind == "disruption":
        from .evaluation import read_study

        for path in args.inputs:
            outcome = read_study(path)
            ax.plot(outcome.macro.levels, outcome.macro.f1, marker="o",
                    label=f"{outcome.target} removed")
        ax.set_xlabel("removed fraction")
        ax.set_ylabel("macro F1")
    else:
        raise ConfigError(f"unknown plot kind {args.kind!r}")
    ax.legend()
    fig.tight_layout()
    fig.savefig(args.out, dpi=120)
    plt.close(fig)
    print(f"wrote {args.out}")
    return 0


# --- wiring --------------------------------------------------------------------


def build_parser() -> Parser:
    parser = Parser(prog="intentlab",
                    description="Intent classification with localization supervision")
    sub = parser.add_subparsers(dest="command", metavar="command")

    p = sub.add_parser("train", help="train a model from a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--val-manifest")
    p.add_argument("--config", help="experiment config YAML")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--out", required=True, help="metrics JSON path")
    p.add_argument("--config")
    p.add_argument("--groups", help="group assignment JSON for grouped reports")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("study-disruption",
                       help="F1 versus removed object/context fraction")
    p.add_argument("--manifest", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--out", required=True, help="study JSON path")
    p.add_argument("--target", choices=["object", "context"])
    p.add_argument("--levels", help="comma-separated removed fractions")
    p.add_argument("--config")
    p.add_argument("--work-dir", help="scratch dir when fine-tuning per level")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.set_defaults(func=cmd_study_disruption)

    p = sub.add_parser("group-classes",
                       help="derive content and difficulty groups from studies")
    p.add_argument("--studies", nargs=2, required=True,
                   metavar=("OBJECT_STUDY", "CONTEXT_STUDY"))
    p.add_argument("--f1", required=True,
                   help="class scores JSON (random and model percents)")
    p.add_argument("--out", required=True)
    p.add_argument("--neutral-band", type=float)
    p.add_argument("--cuts", help="difficulty cut pair, e.g. 5,15")
    p.set_defaults(func=cmd_group_classes)

    p = sub.add_parser("hashtag-build",
                       help="build pooled hashtag features for query posts")
    p.add_argument("--index", required=True, help="indexed post vectors")
    p.add_argument("--tags", required=True, help="post id -> hashtags table")
    p.add_argument("--queries", required=True, help="query post vectors")
    p.add_argument("--dictionary", required=True)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--k", type=int, default=150)
    p.add_argument("--metric", choices=["euclidean", "cosine"], default="euclidean")
    p.add_argument("--dedupe", action="store_true")
    p.add_argument("--no-segment", action="store_true")
    p.set_defaults(func=cmd_hashtag_build)

    p = sub.add_parser("knn-sweep", help="score neighbor counts with a linear probe")
    p.add_argument("--index", required=True)
    p.add_argument("--tags", required=True)
    p.add_argument("--train-labels", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--query-labels", required=True)
    p.add_argument("--dictionary", required=True)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--out", required=True, help="sweep TSV path")
    p.add_argument("--k", help="comma-separated neighbor counts")
    p.add_argument("--metric", choices=["euclidean", "cosine"], default="euclidean")
    p.set_defaults(func=cmd_knn_sweep)

    p = sub.add_parser("kappa", help="inter-rater agreement from a ratings CSV")
    p.add_argument("--ratings", required=True)
    p.add_argument("--per-task", action="store_true")
    p.add_argument("--categories", help="fixed category order, comma-separated")
    p.set_defaults(func=cmd_kappa)

    p = sub.add_parser("plot", help="plot training curves or disruption studies")
    p.add_argument("--kind", choices=["training", "disruption"], required=True)
    p.add_argument("--inputs", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "func", None):
            raise UsageError("a command is required (see --help)")
        return args.func(args)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (InputError, OSError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return 3
    except IntentLabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
