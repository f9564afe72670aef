"""Evaluation: per-class F1, group reports, and the disruption study.

The disruption study re-scores a model while blacking out a growing
fraction of each image's object (or context) region, producing the F1
curve that the taxonomy grouping rules consume after orientation flipping.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import torch
from scipy import ndimage

from .errors import ConfigError, InputError
from .model import IntentClassifier
from .taxonomy import DisruptionSeries
from .training import (ManifestRow, Sample, TrainSettings, assemble_batch,
                       load_sample, transform_sample, write_manifest)

EVAL_THRESHOLD = 0.5


def f1_binary(tp: int, fp: int, fn: int) -> float:
    """F1 with the 0/0 -> 0 convention for classes with no support or hits."""
    denom = 2 * tp + fp + fn
    return 2.0 * tp / denom if denom else 0.0


def per_class_f1(labels: np.ndarray, predictions: np.ndarray) -> np.ndarray:
    labels = np.asarray(labels).astype(bool)
    predictions = np.asarray(predictions).astype(bool)
    if labels.shape != predictions.shape or labels.ndim != 2:
        raise InputError("labels and predictions must both be N x K")
    tp = (labels & predictions).sum(axis=0)
    fp = (~labels & predictions).sum(axis=0)
    fn = (labels & ~predictions).sum(axis=0)
    return np.array([f1_binary(int(t), int(f), int(n))
                     for t, f, n in zip(tp, fp, fn)], dtype=np.float64)


def macro_f1(labels: np.ndarray, scores: np.ndarray,
             threshold: float = EVAL_THRESHOLD) -> dict:
    """Unweighted mean of per-class F1; prediction rule is score >= threshold."""
    predictions = np.asarray(scores, dtype=np.float64) >= threshold
    per_class = per_class_f1(labels, predictions)
    return {"macro_f1": float(per_class.mean()), "per_class_f1": per_class}


def sweep_thresholds(labels: np.ndarray, scores: np.ndarray,
                     thresholds: Sequence[float]) -> list:
    return [{"threshold": float(t),
             "macro_f1": macro_f1(labels, scores, threshold=float(t))["macro_f1"]}
            for t in thresholds]


def group_report(per_class: dict, groups: dict) -> dict:
    """Unweighted per-group means of a per-class metric, plus an "All" row.

    ``per_class`` maps class id -> value and ``groups`` maps class id ->
    group label; the two must cover exactly the same classes.
    """
    if set(per_class) != set(groups):
        raise ConfigError("per-class metric and group assignment cover different classes: "
                          f"{sorted(set(per_class) ^ set(groups))}")
    by_group = {}
    for class_id, value in per_class.items():
        by_group.setdefault(groups[class_id], []).append(float(value))
    report = {label: sum(vals) / len(vals) for label, vals in sorted(by_group.items())}
    report["All"] = sum(map(float, per_class.values())) / len(per_class)
    return report


def aggregate_runs(runs: Sequence[dict]) -> dict:
    """Mean and sample standard deviation (ddof=1) across repeated runs.

    A single run reports zero deviations and is flagged, so downstream
    tables cannot mistake it for a measured spread.
    """
    if not runs:
        raise InputError("no runs to aggregate")
    keys = set(runs[0])
    for run in runs:
        if set(run) != keys:
            raise InputError("runs report different metric keys")
    mean, std = {}, {}
    for key in sorted(keys):
        values = np.array([float(run[key]) for run in runs], dtype=np.float64)
        mean[key] = float(values.mean())
        std[key] = 0.0 if len(values) == 1 else float(values.std(ddof=1))
    return {"mean": mean, "std": std, "n": len(runs), "single_run": len(runs) == 1}


# --- scoring -----------------------------------------------------------------


def _score_samples(model: IntentClassifier, samples: Sequence[Sample],
                   crop_size: int, batch_size: int) -> np.ndarray:
    model.eval()
    chunks = []
    with torch.no_grad():
        for start in range(0, len(samples), batch_size):
            batch_samples = samples[start:start + batch_size]
            images, tags = [], []
            for sample in batch_samples:
                image, _, _ = transform_sample(sample, crop_size, train=False)
                images.append(torch.from_numpy(image.astype(np.float32) / 255.0)
                              .permute(2, 0, 1))
                if model.multimodal:
                    if sample.hashtag is None:
                        raise InputError("multimodal model but a sample has no hashtag feature")
                    tags.append(torch.from_numpy(np.asarray(sample.hashtag,
                                                            dtype=np.float32)))
            hashtags = torch.stack(tags) if model.multimodal else None
            output = model(torch.stack(images), hashtags)
            chunks.append(torch.sigmoid(output.logits).double().numpy())
    return np.concatenate(chunks, axis=0)


def predict_scores(model: IntentClassifier, rows: Sequence[ManifestRow], *,
                   crop_size: int, batch_size: int = 64):
    samples = [load_sample(row) for row in rows]
    scores = _score_samples(model, samples, crop_size, batch_size)
    labels = np.array([row.labels for row in rows], dtype=np.float64)
    return scores, labels


def evaluate_rows(model: IntentClassifier, rows: Sequence[ManifestRow], *,
                  crop_size: int, batch_size: int = 64,
                  threshold: float = EVAL_THRESHOLD) -> dict:
    scores, labels = predict_scores(model, rows, crop_size=crop_size,
                                    batch_size=batch_size)
    result = macro_f1(labels, scores, threshold=threshold)
    result["per_class_f1"] = result["per_class_f1"].tolist()
    result["threshold"] = threshold
    result["n_images"] = len(rows)
    return result


# --- disruption study ----------------------------------------------------------


def blackout_fraction(image: np.ndarray, region: np.ndarray, fraction: float,
                      granularity: str = "region") -> np.ndarray:
    """Zero out at least ``fraction`` of the region's pixels; returns a copy.

    "region" granularity removes connected components largest-first (ties by
    discovery order) until the removed area reaches the target, so partial
    levels knock out whole segments. "pixel" granularity removes the exact
    pixel count in raster-scan order.
    """
    if granularity not in ("region", "pixel"):
        raise ConfigError(f"unknown granularity {granularity!r}")
    if not 0.0 <= fraction <= 1.0:
        raise InputError(f"fraction must be in [0, 1], got {fraction}")
    region = np.asarray(region).astype(bool)
    if region.shape != image.shape[:2]:
        raise InputError("region shape does not match image")
    out = image.copy()
    total = int(region.sum())
    if fraction == 0.0 or total == 0:
        return out
    target = fraction * total
    if granularity == "region":
        labeled, count = ndimage.label(region)
        sizes = ndimage.sum_labels(region, labeled, index=range(1, count + 1))
        order = sorted(range(1, count + 1), key=lambda i: (-sizes[i - 1], i))
        removed = np.zeros_like(region)
        removed_area = 0.0
        for component in order:
            removed |= labeled == component
            removed_area += sizes[component - 1]
            if removed_area >= target - 1e-9:
                break
    else:
        k = int(math.ceil(target - 1e-9))
        flat = np.flatnonzero(region.reshape(-1))[:k]
        removed = np.zeros(region.size, dtype=bool)
        removed[flat] = True
        removed = removed.reshape(region.shape)
    out[removed] = 0
    return out


def _disrupted_samples(samples: Sequence[Sample], level: float, target: str,
                       granularity: str) -> list:
    disrupted = []
    for sample in samples:
        if sample.object_mask is None:
            raise InputError("disruption study requires masks for every image")
        region = sample.object_mask if target == "object" else sample.context_mask
        image = blackout_fraction(sample.image, region, level, granularity)
        disrupted.append(Sample(image, sample.labels, sample.object_mask,
                                sample.context_mask, sample.hashtag))
    return disrupted


@dataclass
class StudyOutcome:
    """Macro and per-class F1 curves over the swept disruption levels."""

    target: str
    macro: DisruptionSeries
    per_class: dict                # class id -> DisruptionSeries


def run_disruption_study(model: IntentClassifier, rows: Sequence[ManifestRow],
                         levels: Sequence[float], *, target: str = "object",
                         granularity: str = "region", crop_size: int,
                         batch_size: int = 64, threshold: float = EVAL_THRESHOLD,
                         fine_tune: Optional[TrainSettings] = None,
                         work_dir=None) -> StudyOutcome:
    """F1 as a function of the removed target-region fraction.

    Level 0 scores the untouched images, so its F1 matches a plain
    evaluation exactly. With ``fine_tune`` settings the model is re-trained
    per level on the disrupted images (requires ``work_dir``) instead of
    being scored frozen.
    """
    if target not in ("object", "context"):
        raise ConfigError(f"target must be 'object' or 'context', got {target!r}")
    levels = [float(level) for level in levels]
    if fine_tune is not None and work_dir is None:
        raise ConfigError("fine_tune requires a work_dir for per-level datasets")
    samples = [load_sample(row) for row in rows]
    labels = np.array([row.labels for row in rows], dtype=np.float64)
    macro_values, per_class_rows = [], []
    for level in levels:
        disrupted = _disrupted_samples(samples, level, target, granularity)
        if fine_tune is None:
            scored_model = model
        else:
            scored_model = _fine_tuned_copy(model, rows, disrupted, fine_tune,
                                            os.path.join(work_dir, f"level_{level:g}"))
        scores = _score_samples(scored_model, disrupted, crop_size, batch_size)
        result = macro_f1(labels, scores, threshold=threshold)
        macro_values.append(result["macro_f1"])
        per_class_rows.append(result["per_class_f1"])
    matrix = np.stack(per_class_rows)      # levels x classes
    per_class = {cid: DisruptionSeries(levels=tuple(levels), f1=tuple(matrix[:, cid]))
                 for cid in range(matrix.shape[1])}
    return StudyOutcome(target=target,
                        macro=DisruptionSeries(levels=tuple(levels),
                                               f1=tuple(macro_values)),
                        per_class=per_class)


STUDY_FORMAT_VERSION = 1


def write_study(path, outcome: StudyOutcome) -> None:
    payload = {
        "version": STUDY_FORMAT_VERSION,
        "target": outcome.target,
        "levels": list(outcome.macro.levels),
        "macro_f1": list(outcome.macro.f1),
        "per_class_f1": {str(cid): list(series.f1)
                         for cid, series in outcome.per_class.items()},
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_study(path) -> StudyOutcome:
    with open(path) as fh:
        payload = json.load(fh)
    if payload.get("version") != STUDY_FORMAT_VERSION:
        raise InputError(f"unsupported study file version: {payload.get('version')!r}")
    levels = tuple(payload["levels"])
    return StudyOutcome(
        target=payload["target"],
        macro=DisruptionSeries(levels=levels, f1=tuple(payload["macro_f1"])),
        per_class={int(cid): DisruptionSeries(levels=levels, f1=tuple(f1))
                   for cid, f1 in payload["per_class_f1"].items()})


def _fine_tuned_copy(model: IntentClassifier, rows, disrupted_samples,
                     settings: TrainSettings, level_dir) -> IntentClassifier:
    # Materialize the disrupted images so the ordinary training path applies.
    from PIL import Image

    from .model import build_model
    from .training import train

    os.makedirs(level_dir, exist_ok=True)
    new_rows = []
    for i, (row, sample) in enumerate(zip(rows, disrupted_samples)):
        image_path = os.path.join(level_dir, f"img_{i:05d}.png")
        Image.fromarray(sample.image).save(image_path)
        new_rows.append(ManifestRow(image_path=image_path, labels=row.labels,
                                    mask_dir=row.mask_dir,
                                    hashtag_path=row.hashtag_path))
    manifest_path = os.path.join(level_dir, "manifest.tsv")
    write_manifest(manifest_path, new_rows)
    copy = build_model(model.config)
    copy.load_state_dict({k: v.clone() for k, v in model.state_dict().items()})
    train(copy, new_rows, settings, os.path.join(level_dir, "run"))
    return copy
