"""Annotation quality: agreement, catch-trial filtering, vote aggregation.

Ratings arrive either as an item x category count matrix (every item rated
by the same number of raters) or as long-form (item, rater, category)
records that are first tabulated. Agreement is chance-corrected via Fleiss
kappa; multi-task studies average the per-task kappas.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import InputError

HITL_THRESHOLD = 0.35
VOTES_PER_ITEM = 3

VOTE_LABELS = ("no", "possible_no", "possible_yes", "definite_yes")


def fleiss_kappa(counts) -> float:
    """Fleiss kappa for an item x category rating-count matrix.

    Every row must sum to the same rater count n >= 2. When expected chance
    agreement is 1 (all ratings in one category) the statistic is undefined;
    observed agreement is then also 1, so this returns 1.0 with a warning.
    """
    counts = np.asarray(counts, dtype=np.float64)
    if counts.ndim != 2 or counts.size == 0:
        raise InputError("counts must be a nonempty 2-D matrix")
    if np.any(counts < 0) or np.any(counts != np.round(counts)):
        raise InputError("counts must be nonnegative integers")
    row_sums = counts.sum(axis=1)
    n = row_sums[0]
    if n < 2:
        raise InputError("each item needs at least 2 ratings")
    if np.any(row_sums != n):
        raise InputError("all items must have the same number of ratings")
    big_n = counts.shape[0]
    # P_i: agreement within item i; p_j: category prevalence.
    p_i = ((counts ** 2).sum(axis=1) - n) / (n * (n - 1))
    p_bar = p_i.mean()
    p_j = counts.sum(axis=0) / (big_n * n)
    p_e = float((p_j ** 2).sum())
    if p_e >= 1.0:
        warnings.warn("chance agreement is 1; kappa is undefined and reported as 1.0")
        return 1.0
    return float((p_bar - p_e) / (1.0 - p_e))


def mean_task_kappa(matrices: Sequence) -> float:
    """Average of per-task Fleiss kappas (each task tabulated separately)."""
    if not matrices:
        raise InputError("no rating matrices given")
    return float(np.mean([fleiss_kappa(m) for m in matrices]))


@dataclass(frozen=True)
class RatingRecord:
    item_id: str
    rater_id: str
    category: str
    task_id: Optional[str] = None


def build_count_matrix(records: Sequence[RatingRecord],
                       categories: Optional[Sequence[str]] = None):
    """Tabulate long-form records into (matrix, item_ids, categories).

    Items appear in first-seen order; categories likewise unless given
    explicitly. A rater rating the same item twice is an input error.
    """
    if not records:
        raise InputError("no rating records")
    if categories is None:
        categories = list(dict.fromkeys(r.category for r in records))
    else:
        categories = list(categories)
        unknown = {r.category for r in records} - set(categories)
        if unknown:
            raise InputError(f"records use categories outside the given set: {sorted(unknown)}")
    col = {c: j for j, c in enumerate(categories)}
    item_ids = list(dict.fromkeys(r.item_id for r in records))
    row = {it: i for i, it in enumerate(item_ids)}
    matrix = np.zeros((len(item_ids), len(categories)), dtype=np.int64)
    seen = set()
    for record in records:
        key = (record.item_id, record.rater_id)
        if key in seen:
            raise InputError(f"duplicate rating by {record.rater_id!r} on {record.item_id!r}")
        seen.add(key)
        matrix[row[record.item_id], col[record.category]] += 1
    return matrix, item_ids, categories


def read_ratings_csv(path) -> list:
    """Read item_id,rater_id,category[,task_id] rows (header optional)."""
    records = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        for lineno, row in enumerate(reader, 1):
            if not row or (lineno == 1 and [c.strip().lower() for c in row[:3]]
                           == ["item_id", "rater_id", "category"]):
                continue
            if len(row) not in (3, 4):
                raise InputError(f"{path}:{lineno}: expected 3 or 4 columns")
            records.append(RatingRecord(*[c.strip() for c in row]))
    if not records:
        raise InputError(f"no ratings found in {path}")
    return records


def group_records_by_task(records: Sequence[RatingRecord]) -> dict:
    """Split records on task_id; records without one fall into task ''."""
    by_task = {}
    for record in records:
        by_task.setdefault(record.task_id or "", []).append(record)
    return by_task


def filter_catch_trials(hits: Sequence[dict], catch_answers: dict) -> list:
    """Drop every HIT whose worker missed any catch trial.

    A HIT is a dict with a ``responses`` mapping (item id -> category).
    All catch items must be present in each HIT's responses; a HIT that
    never saw its catch trial cannot be validated and is an input error.
    """
    if not catch_answers:
        raise InputError("no catch answers given")
    kept = []
    for hit in hits:
        responses = hit.get("responses")
        if responses is None:
            raise InputError("HIT record has no responses")
        missing = [item for item in catch_answers if item not in responses]
        if missing:
            raise InputError(f"HIT is missing catch items: {missing}")
        if all(responses[item] == answer for item, answer in catch_answers.items()):
            kept.append(hit)
    return kept


def aggregate_label(yes_votes: int, total_votes: int = VOTES_PER_ITEM) -> str:
    """Map yes-vote counts from a fixed 3-rater panel to a consensus label."""
    if total_votes != VOTES_PER_ITEM:
        raise InputError(f"aggregation is defined for {VOTES_PER_ITEM} votes per item")
    if not 0 <= yes_votes <= total_votes:
        raise InputError(f"yes_votes must be in [0, {total_votes}], got {yes_votes}")
    return VOTE_LABELS[yes_votes]


def aggregate_labels(votes: dict, total_votes: int = VOTES_PER_ITEM) -> dict:
    return {item: aggregate_label(count, total_votes)
            for item, count in votes.items()}


def hitl_select(scores: dict, threshold: float = HITL_THRESHOLD) -> dict:
    """Queue images for human review, keyed by class.

    ``scores`` maps image id -> {class: model score in [0, 1]}.  An image is
    queued for a class only when its score strictly exceeds ``threshold``;
    the boundary score itself is excluded.  Classes with no qualifying image
    are omitted, so an empty dict means the loop has converged.  Image lists
    are sorted for reproducibility.
    """
    queues: dict = {}
    for image, per_class in scores.items():
        for cls, score in per_class.items():
            if not 0.0 <= score <= 1.0:
                raise InputError(
                    f"score for {image!r}/{cls!r} outside [0, 1]: {score}")
            if score > threshold:
                queues.setdefault(cls, []).append(image)
    return {cls: sorted(images) for cls, images in sorted(queues.items())}
