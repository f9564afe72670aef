"""Binary object/context mask construction from segmentation dumps.

Two aggregation modes are supported:

* panoptic -- thing regions form the object mask, stuff regions the context
  mask, both gated by a score threshold (default 0.7) and a minimum area
  fraction (default 10% of the image);
* complement -- detected thing regions above a score threshold (default 0.6)
  are merged into the object mask and the context mask is its complement.

Rasters are numpy arrays; files on disk are 8-bit single-channel PNGs
(0/255) with a JSON sidecar per region.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from .errors import InputError

PANOPTIC_SCORE_THRESHOLD = 0.7
DETECTION_SCORE_THRESHOLD = 0.6
MIN_AREA_FRACTION = 0.10
RESIZE_LONGEST_SIDE = 1280


@dataclass(frozen=True)
class SegmentRegion:
    """One segmentation output: a binary raster plus its metadata."""

    raster: np.ndarray
    category_id: int
    kind: str  # "thing" or "stuff"
    score: float
    area_fraction: float = field(default=None)

    def __post_init__(self):
        raster = np.asarray(self.raster)
        if raster.ndim != 2:
            raise InputError("region raster must be 2-D")
        raster = raster.astype(bool)
        object.__setattr__(self, "raster", raster)
        if self.kind not in ("thing", "stuff"):
            raise InputError(f"kind must be 'thing' or 'stuff', got {self.kind!r}")
        if not 0.0 <= self.score <= 1.0:
            raise InputError("score must lie in [0, 1]")
        actual = float(raster.sum()) / raster.size
        if self.area_fraction is None:
            object.__setattr__(self, "area_fraction", actual)
        elif abs(self.area_fraction - actual) > 1e-9:
            raise InputError(
                f"area_fraction {self.area_fraction} disagrees with raster ({actual})")

    @property
    def shape(self):
        return self.raster.shape


@dataclass(frozen=True)
class MaskPair:
    """Aggregated object/context masks for one image."""

    mask_object: np.ndarray
    mask_context: np.ndarray
    mode: str  # "panoptic" or "complement"

    def __post_init__(self):
        mo = np.asarray(self.mask_object).astype(bool)
        mc = np.asarray(self.mask_context).astype(bool)
        if mo.shape != mc.shape:
            raise InputError("object and context masks must share a shape")
        if self.mode == "complement":
            if not np.array_equal(mc, ~mo):
                raise InputError("complement mode requires mask_context == ~mask_object")
        elif self.mode == "panoptic":
            if np.any(mo & mc):
                raise InputError("panoptic masks must be disjoint")
        else:
            raise InputError(f"unknown mode {self.mode!r}")
        object.__setattr__(self, "mask_object", mo)
        object.__setattr__(self, "mask_context", mc)

    @property
    def shape(self):
        return self.mask_object.shape


def _common_shape(regions, shape):
    shapes = {r.shape for r in regions}
    if shape is not None:
        shapes.add(tuple(shape))
    if len(shapes) > 1:
        raise InputError(f"regions have mismatched shapes: {sorted(shapes)}")
    if not shapes:
        raise InputError("shape is required when no regions are given")
    return next(iter(shapes))


def aggregate_masks_panoptic(regions,
                             score_threshold: float = PANOPTIC_SCORE_THRESHOLD,
                             min_area: float = MIN_AREA_FRACTION,
                             *,
                             shape=None,
                             min_area_kinds=("thing", "stuff")) -> MaskPair:
    """Union qualifying thing/stuff regions into a disjoint mask pair.

    A region qualifies when score >= score_threshold and (if its kind is in
    ``min_area_kinds``) area_fraction >= min_area. Pixels claimed by both a
    thing and a stuff region go to the object mask: things occlude stuff.
    ``shape`` is required when ``regions`` is empty.
    """
    shape = _common_shape(regions, shape)
    mask_o = np.zeros(shape, dtype=bool)
    mask_c = np.zeros(shape, dtype=bool)
    for region in regions:
        if region.score < score_threshold:
            continue
        if region.kind in min_area_kinds and region.area_fraction < min_area:
            continue
        if region.kind == "thing":
            mask_o |= region.raster
        else:
            mask_c |= region.raster
    mask_c &= ~mask_o
    return MaskPair(mask_o, mask_c, "panoptic")


def aggregate_masks_complement(regions,
                               score_threshold: float = DETECTION_SCORE_THRESHOLD,
                               *,
                               shape=None) -> MaskPair:
    """Merge detected thing regions; the context mask is the complement."""
    for region in regions:
        if region.kind != "thing":
            raise InputError("complement mode accepts thing regions only")
    shape = _common_shape(regions, shape)
    mask_o = np.zeros(shape, dtype=bool)
    for region in regions:
        if region.score >= score_threshold:
            mask_o |= region.raster
    return MaskPair(mask_o, ~mask_o, "complement")


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def resize_nearest(raster: np.ndarray, out_shape) -> np.ndarray:
    """Nearest-neighbor resample of a 2-D raster to ``out_shape`` (H, W)."""
    raster = np.asarray(raster)
    if raster.ndim != 2:
        raise InputError("resize_nearest expects a 2-D raster")
    h, w = raster.shape
    out_h, out_w = out_shape
    if h == out_h and w == out_w:
        return raster.copy()
    rows = np.minimum((np.arange(out_h) + 0.5) * h / out_h, h - 1).astype(np.int64)
    cols = np.minimum((np.arange(out_w) + 0.5) * w / out_w, w - 1).astype(np.int64)
    return raster[rows[:, None], cols[None, :]]


def resize_longest_side(array: np.ndarray, target: int = RESIZE_LONGEST_SIDE) -> np.ndarray:
    """Resize so the longest side equals ``target``, keeping aspect ratio.

    The short side is rounded half up. 2-D rasters are resampled with
    nearest-neighbor; H x W x 3 images bilinearly.
    """
    array = np.asarray(array)
    if array.ndim not in (2, 3):
        raise InputError("expected an H x W raster or H x W x C image")
    h, w = array.shape[:2]
    if h <= 0 or w <= 0 or target <= 0:
        raise InputError("sizes must be positive")
    if max(h, w) == target:
        return array.copy()
    if h >= w:
        out_h, out_w = target, _round_half_up(w * target / h)
    else:
        out_h, out_w = _round_half_up(h * target / w), target
    out_w = max(out_w, 1)
    out_h = max(out_h, 1)
    if array.ndim == 2:
        return resize_nearest(array, (out_h, out_w))
    img = Image.fromarray(array)
    return np.asarray(img.resize((out_w, out_h), Image.BILINEAR))


# --- disk layout -----------------------------------------------------------
#
# Per-image directory:
#   region_000.png / region_000.json, region_001.png / ... (ingest)
#   mask_object.png, mask_context.png, pair.json            (emitted)


def _write_raster(path, raster: np.ndarray) -> None:
    Image.fromarray(np.asarray(raster, dtype=bool).astype(np.uint8) * 255, mode="L").save(path)


def _read_raster(path) -> np.ndarray:
    return np.asarray(Image.open(path).convert("L")) >= 128


def write_regions(directory, regions) -> None:
    os.makedirs(directory, exist_ok=True)
    for i, region in enumerate(regions):
        stem = os.path.join(directory, f"region_{i:03d}")
        _write_raster(stem + ".png", region.raster)
        with open(stem + ".json", "w") as fh:
            json.dump({"category_id": region.category_id, "kind": region.kind,
                       "score": region.score}, fh, sort_keys=True)
            fh.write("\n")


def read_regions(directory) -> list:
    regions = []
    for name in sorted(os.listdir(directory)):
        if not (name.startswith("region_") and name.endswith(".json")):
            continue
        stem = os.path.join(directory, name[:-len(".json")])
        with open(stem + ".json") as fh:
            meta = json.load(fh)
        regions.append(SegmentRegion(
            raster=_read_raster(stem + ".png"),
            category_id=int(meta["category_id"]),
            kind=meta["kind"],
            score=float(meta["score"]),
        ))
    return regions


def write_mask_pair(directory, pair: MaskPair) -> None:
    os.makedirs(directory, exist_ok=True)
    _write_raster(os.path.join(directory, "mask_object.png"), pair.mask_object)
    _write_raster(os.path.join(directory, "mask_context.png"), pair.mask_context)
    with open(os.path.join(directory, "pair.json"), "w") as fh:
        json.dump({"mode": pair.mode}, fh, sort_keys=True)
        fh.write("\n")


def read_mask_pair(directory) -> MaskPair:
    with open(os.path.join(directory, "pair.json")) as fh:
        meta = json.load(fh)
    return MaskPair(
        _read_raster(os.path.join(directory, "mask_object.png")),
        _read_raster(os.path.join(directory, "mask_context.png")),
        meta["mode"],
    )
