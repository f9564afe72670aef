"""Intent taxonomy and class-grouping analysis.

Holds the 28 intent classes (9 supercategories) as built-in metadata and
implements the two grouping schemes used for reporting:

* difficulty -- information gain of a trained model over random guessing,
  bucketed at the standard cuts (easy <= 5 < medium <= 15 < hard);
* content -- object-dependent / context-dependent / others, decided from
  normalized slopes of F1-vs-information curves.

All functions here are pure and operate on immutable inputs.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import ConfigError, InputError

DEFAULT_DIFFICULTY_CUTS = (5.0, 15.0)
DEFAULT_NEUTRAL_BAND = 0.5
TAXONOMY_FORMAT_VERSION = 1
GROUPS_FORMAT_VERSION = 1


class ContentGroup(Enum):
    """Which part of the image a class depends on."""

    OBJECT_DEPENDENT = "object_dependent"
    CONTEXT_DEPENDENT = "context_dependent"
    OTHERS = "others"


class DifficultyGroup(Enum):
    """Difficulty buckets ordered easy < medium < hard."""

    EASY = "easy"
    MEDIUM = "medium"
    HARD = "hard"

    @property
    def order(self) -> int:
        return ("easy", "medium", "hard").index(self.value)


class Correlation(Enum):
    """Sign label of a fitted slope after neutral-band thresholding."""

    POSITIVE = "positive"
    NEUTRAL = "neutral"
    NEGATIVE = "negative"


@dataclass(frozen=True)
class IntentClass:
    id: int
    name: str
    supercategory: str
    description: str


# Built-in 28-class intent metadata. Class ids are dense 0..27 in
# alphabetical name order. Supercategory labels form the 9-way grouping
# used for reporting.
_CLASS_ROWS = [
    ("Attractive", "appearance", "Being good looking, attractive."),
    ("BeatCompete", "achievement", "Beat people in a competition."),
    ("Communicate", "social", "To communicate or express myself."),
    ("CreativeUnique", "creativity",
     "Being creative (artistically, scientifically, intellectually). Being unique or different."),
    ("CuriousAdventurousExcitingLife", "experience",
     "Exploration - being curious and adventurous. Having an exciting, stimulating life."),
    ("EasyLife", "enjoyment", "Having an easy and comfortable life."),
    ("EnjoyLife", "enjoyment", "Enjoying life."),
    ("FineDesignLearnArt-Arch", "aesthetics",
     "Appreciating fine design (man-made wonders like architecture)."),
    ("FineDesignLearnArt-Art", "aesthetics", "Appreciating fine design (artwork)."),
    ("FineDesignLearnArt-Culture", "aesthetics", "Appreciating other cultures."),
    ("GoodParentEmoCloseChild", "love",
     "Being a good parent (teaching, transmitting values). Being emotionally close to my children."),
    ("Happy", "enjoyment",
     "Being happy and content. Feeling satisfied with one's life. Feeling good about myself."),
    ("HardWorking", "achievement", "Being ambitious, hard-working."),
    ("Harmony", "wellbeing", "Achieving harmony and oneness (with self and the universe)."),
    ("Health", "wellbeing",
     "Being physically active, fit, healthy. Being able to do daily activities. Having athletic ability."),
    ("InLove", "love", "Being in love."),
    ("InLoveAnimal", "love", "Being in love with animals."),
    ("InspirOthers", "creativity", "Inspiring others. Influencing, persuading others."),
    ("ManagableMakePlan", "wellbeing", "To keep things manageable. To make plans."),
    ("NatBeauty", "experience", "Experiencing natural beauty."),
    ("PassionAbSmthing", "creativity", "Being really passionate about something."),
    ("Playful", "enjoyment", "Being playful, carefree, lighthearted."),
    ("ShareFeelings", "social", "Sharing my feelings with others."),
    ("SocialLifeFriendship", "social",
     "Being part of a social group. Having close friends, others to rely on. Making friends."),
    ("SuccInOccupHavGdJob", "achievement",
     "Being successful in my occupation. Having a good job."),
    ("TeachOthers", "creativity", "Teaching others."),
    ("ThngsInOrdr", "wellbeing", "Keeping things in order (desk, office, house)."),
    ("WorkILike", "achievement", "Having work I really like."),
]

NUM_CLASSES = 28
NUM_SUPERCATEGORIES = 9


class Taxonomy:
    """The full class list plus lookup helpers.

    Invariants enforced at construction: exactly 28 classes with dense ids
    0..27, unique names, exactly 9 distinct supercategories.
    """

    def __init__(self, classes: list[IntentClass]):
        if len(classes) != NUM_CLASSES:
            raise InputError(f"expected {NUM_CLASSES} classes, got {len(classes)}")
        if sorted(c.id for c in classes) != list(range(NUM_CLASSES)):
            raise InputError("class ids must be dense 0..27")
        names = [c.name for c in classes]
        if len(set(names)) != NUM_CLASSES:
            raise InputError("class names must be unique")
        supers = {c.supercategory for c in classes}
        if len(supers) != NUM_SUPERCATEGORIES:
            raise InputError(
                f"expected {NUM_SUPERCATEGORIES} supercategories, got {len(supers)}")
        self.classes = sorted(classes, key=lambda c: c.id)
        self._by_name = {c.name: c for c in self.classes}

    def __len__(self) -> int:
        return len(self.classes)

    def __iter__(self):
        return iter(self.classes)

    def __getitem__(self, class_id: int) -> IntentClass:
        return self.classes[class_id]

    def by_name(self, name: str) -> IntentClass:
        return self._by_name[name]

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.classes]

    @property
    def supercategories(self) -> list[str]:
        return sorted({c.supercategory for c in self.classes})

    def to_file(self, path) -> None:
        payload = {
            "version": TAXONOMY_FORMAT_VERSION,
            "classes": [
                {"id": c.id, "name": c.name, "supercategory": c.supercategory,
                 "description": c.description}
                for c in self.classes
            ],
        }
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def from_file(cls, path) -> "Taxonomy":
        with open(path) as fh:
            payload = json.load(fh)
        if payload.get("version") != TAXONOMY_FORMAT_VERSION:
            raise InputError(f"unsupported taxonomy file version: {payload.get('version')!r}")
        return cls([IntentClass(**row) for row in payload["classes"]])


def default_taxonomy() -> Taxonomy:
    """The built-in 28-class taxonomy."""
    return Taxonomy([
        IntentClass(i, name, sup, desc)
        for i, (name, sup, desc) in enumerate(_CLASS_ROWS)
    ])


@dataclass(frozen=True)
class DisruptionSeries:
    """An (x, F1) curve from a content study for one class.

    ``levels`` must be strictly increasing; ``f1`` holds matching scores
    in [0, 1].
    """

    levels: tuple
    f1: tuple

    def __init__(self, levels, f1):
        levels = tuple(float(x) for x in levels)
        f1 = tuple(float(y) for y in f1)
        if len(levels) != len(f1):
            raise InputError("levels and f1 must have equal length")
        if len(levels) < 2:
            raise InputError("a series needs at least two points")
        if any(b <= a for a, b in zip(levels, levels[1:])):
            raise InputError("levels must be strictly increasing")
        if any(not 0.0 <= y <= 1.0 for y in f1):
            raise InputError("f1 values must lie in [0, 1]")
        object.__setattr__(self, "levels", levels)
        object.__setattr__(self, "f1", f1)

    def flip_orientation(self, total: float = 1.0) -> "DisruptionSeries":
        """Re-express the x axis as ``total - level``, reversing the order.

        A study sweeping the *removed* fraction of a region becomes a curve
        over the *retained* fraction, which is the orientation the content
        rules are stated in (slopes positive when information helps).
        """
        return DisruptionSeries(
            [total - x for x in reversed(self.levels)], tuple(reversed(self.f1)))


@dataclass(frozen=True)
class SlopeSummary:
    """Fitted line over a DisruptionSeries plus its normalized slope label."""

    alpha: float
    beta: float
    alpha_bar: float
    rho: Correlation


def information_gain(random_score: float, model_score: float, *, base: float = math.e) -> float:
    """Gain of a model score over random guessing: ``r * log(s / r)``.

    Scores are expressed in percent (0..100) so the standard difficulty cuts
    of 5 and 15 apply. Natural log by default; ``base`` is configurable.
    """
    if not (random_score > 0 and model_score > 0):
        raise InputError("scores must be strictly positive")
    if math.isnan(random_score) or math.isnan(model_score):
        raise InputError("scores must not be NaN")
    d = random_score * math.log(model_score / random_score)
    if base != math.e:
        d /= math.log(base)
    return d


def assign_difficulty(gain: float, cuts: tuple = DEFAULT_DIFFICULTY_CUTS) -> DifficultyGroup:
    """Bucket an information gain value: easy <= cuts[0] < medium <= cuts[1] < hard."""
    if math.isnan(gain):
        raise InputError("gain must not be NaN")
    low, high = cuts
    if not low < high:
        raise ConfigError("difficulty cuts must be increasing")
    if gain <= low:
        return DifficultyGroup.EASY
    if gain <= high:
        return DifficultyGroup.MEDIUM
    return DifficultyGroup.HARD


def fit_disruption_line(series: DisruptionSeries,
                        neutral_band: float = DEFAULT_NEUTRAL_BAND) -> SlopeSummary:
    """Ordinary least squares fit of f1 against levels.

    The normalized slope is ``alpha / len(levels) * 10``; ``rho`` is neutral
    when its magnitude is within ``neutral_band``, otherwise the sign.
    """
    x = np.asarray(series.levels, dtype=np.float64)
    y = np.asarray(series.f1, dtype=np.float64)
    alpha, beta = np.polyfit(x, y, deg=1)
    alpha_bar = alpha / len(x) * 10.0
    if abs(alpha_bar) <= neutral_band:
        rho = Correlation.NEUTRAL
    elif alpha_bar > 0:
        rho = Correlation.POSITIVE
    else:
        rho = Correlation.NEGATIVE
    return SlopeSummary(float(alpha), float(beta), float(alpha_bar), rho)


def assign_content_group(object_summary: SlopeSummary,
                         context_summary: SlopeSummary) -> ContentGroup:
    """Decide object/context dependence from the two slope summaries.

    Both summaries must describe the same class, fitted over curves of F1
    versus the amount of object (resp. context) information available.
    """
    if (object_summary.alpha_bar > context_summary.alpha_bar
            and context_summary.rho is not Correlation.POSITIVE):
        return ContentGroup.OBJECT_DEPENDENT
    if (object_summary.alpha_bar < context_summary.alpha_bar
            and object_summary.rho is not Correlation.POSITIVE):
        return ContentGroup.CONTEXT_DEPENDENT
    return ContentGroup.OTHERS


@dataclass(frozen=True)
class GroupAssignment:
    """Per-class grouping record emitted by the analysis pipeline."""

    content_group: ContentGroup
    difficulty_group: DifficultyGroup
    gain: float
    alpha_bar_object: float
    alpha_bar_context: float


def build_group_table(object_series: dict,
                      context_series: dict,
                      class_scores: dict,
                      *,
                      neutral_band: float = DEFAULT_NEUTRAL_BAND,
                      difficulty_cuts: tuple = DEFAULT_DIFFICULTY_CUTS) -> dict:
    """Compose the grouping pipeline for a set of classes.

    ``object_series`` / ``context_series`` map class id -> DisruptionSeries
    (oriented as F1 vs information retained); ``class_scores`` maps class
    id -> (random_score, model_score) in percent. Returns class id ->
    GroupAssignment. Every class must appear in all three inputs.
    """
    ids = sorted(class_scores)
    if sorted(object_series) != ids or sorted(context_series) != ids:
        raise InputError("object/context series and scores must cover the same class ids")
    table = {}
    for cid in ids:
        summary_o = fit_disruption_line(object_series[cid], neutral_band)
        summary_c = fit_disruption_line(context_series[cid], neutral_band)
        random_score, model_score = class_scores[cid]
        gain = information_gain(random_score, model_score)
        table[cid] = GroupAssignment(
            content_group=assign_content_group(summary_o, summary_c),
            difficulty_group=assign_difficulty(gain, difficulty_cuts),
            gain=gain,
            alpha_bar_object=summary_o.alpha_bar,
            alpha_bar_context=summary_c.alpha_bar,
        )
    return table


SCORES_FORMAT_VERSION = 1


def write_class_scores(path, scores: dict) -> None:
    """Write class id -> (random_score, model_score) percents as JSON."""
    payload = {
        "version": SCORES_FORMAT_VERSION,
        "scores": {str(cid): [float(r), float(s)] for cid, (r, s) in scores.items()},
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_class_scores(path) -> dict:
    with open(path) as fh:
        payload = json.load(fh)
    if payload.get("version") != SCORES_FORMAT_VERSION:
        raise InputError(f"unsupported scores file version: {payload.get('version')!r}")
    return {int(cid): (float(pair[0]), float(pair[1]))
            for cid, pair in payload["scores"].items()}


def write_group_assignments(path, table: dict) -> None:
    """Write a class id -> GroupAssignment mapping as versioned JSON."""
    payload = {
        "version": GROUPS_FORMAT_VERSION,
        "classes": {
            str(cid): {
                "content_group": a.content_group.value,
                "difficulty_group": a.difficulty_group.value,
                "gain": a.gain,
                "alpha_bar_object": a.alpha_bar_object,
                "alpha_bar_context": a.alpha_bar_context,
            }
            for cid, a in table.items()
        },
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_group_assignments(path) -> dict:
    with open(path) as fh:
        payload = json.load(fh)
    if payload.get("version") != GROUPS_FORMAT_VERSION:
        raise InputError(f"unsupported group file version: {payload.get('version')!r}")
    table = {}
    for cid, row in payload["classes"].items():
        table[int(cid)] = GroupAssignment(
            content_group=ContentGroup(row["content_group"]),
            difficulty_group=DifficultyGroup(row["difficulty_group"]),
            gain=float(row["gain"]),
            alpha_bar_object=float(row["alpha_bar_object"]),
            alpha_bar_context=float(row["alpha_bar_context"]),
        )
    return table
