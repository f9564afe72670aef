"""Class activation maps and the localization loss.

A class activation map is the channel-weighted sum of backbone features,
clamped at zero and divided by its maximum so values land in [0, 1]
(constant or all-nonpositive raw maps normalize to all zeros). The
localization loss penalizes activation mass falling on the image region a
class should not depend on: object-dependent classes on the context mask,
context-dependent classes on the object mask.

Everything here is torch-based so the loss chain stays differentiable;
numpy inputs are converted on the way in.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .errors import ConfigError, InputError
from .masks import MaskPair

CAM_THRESHOLD = 0.4


def _as_tensor(x) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        return x
    return torch.as_tensor(np.asarray(x))


@dataclass(frozen=True)
class Cam:
    """Normalized activation map for one class; values in [0, 1]."""

    values: torch.Tensor
    class_id: int

    def __post_init__(self):
        v = self.values.detach()
        if v.ndim != 2:
            raise InputError("Cam values must be H x W")
        if v.numel() and (v.min() < -1e-6 or v.max() > 1 + 1e-6):
            raise InputError("Cam values must lie in [0, 1]")
        if v.numel() and v.max() > 0 and abs(float(v.max()) - 1.0) > 1e-6:
            raise InputError("nonzero Cam must be normalized to max 1")

    def numpy(self) -> np.ndarray:
        return self.values.detach().cpu().numpy()


@dataclass(frozen=True)
class BinaryCam:
    """A Cam thresholded at ``threshold`` (inclusive)."""

    values: torch.Tensor
    threshold: float


def normalize_activation(raw: torch.Tensor) -> torch.Tensor:
    """Clamp negatives to zero and divide by the per-map maximum.

    Works on (..., H, W); each leading index is normalized independently.
    Maps whose raw values are constant, or nonpositive everywhere, come out
    all zeros. Differentiable except at the clamp boundary.
    """
    clamped = raw.clamp_min(0)
    peak = torch.amax(clamped, dim=(-2, -1), keepdim=True)
    raw_max = torch.amax(raw, dim=(-2, -1), keepdim=True)
    raw_min = torch.amin(raw, dim=(-2, -1), keepdim=True)
    ok = (peak > 0) & (raw_max > raw_min)
    denom = torch.where(ok, peak, torch.ones_like(peak))
    return torch.where(ok, clamped / denom, torch.zeros_like(clamped))


def compute_cam(features, class_weights, class_id: int = 0) -> Cam:
    """Weighted channel sum of ``features`` (C x H x W), then normalization."""
    features = _as_tensor(features)
    class_weights = _as_tensor(class_weights)
    if features.ndim != 3 or class_weights.ndim != 1:
        raise InputError("expected features C x H x W and a weight vector of length C")
    if features.shape[0] != class_weights.shape[0]:
        raise InputError(
            f"channel mismatch: {features.shape[0]} features vs {class_weights.shape[0]} weights")
    raw = torch.einsum("c,chw->hw", class_weights.to(features.dtype), features)
    return Cam(normalize_activation(raw), class_id)


def class_activation_maps(feature_maps: torch.Tensor,
                          class_weights: torch.Tensor) -> tuple:
    """Batched raw and normalized maps.

    ``feature_maps`` is B x C x H x W, ``class_weights`` K x C; returns
    (normalized B x K x H x W, raw B x K x H x W).
    """
    if feature_maps.shape[1] != class_weights.shape[1]:
        raise InputError("feature channels must match weight columns")
    raw = torch.einsum("kc,bchw->bkhw", class_weights, feature_maps)
    return normalize_activation(raw), raw


def binarize_cam(cam: Cam, threshold: float = CAM_THRESHOLD) -> BinaryCam:
    """Threshold a Cam at ``threshold`` in (0, 1), boundary inclusive."""
    if not 0.0 < threshold < 1.0:
        raise ConfigError(f"cam threshold must be in (0, 1), got {threshold}")
    return BinaryCam(cam.values.detach() >= threshold, threshold)


def _resize_nearest_t(plane: torch.Tensor, out_shape) -> torch.Tensor:
    """Nearest-neighbor resample over the last two dims; differentiable (gather)."""
    h, w = plane.shape[-2:]
    out_h, out_w = out_shape
    if (h, w) == (out_h, out_w):
        return plane
    rows = torch.clamp(((torch.arange(out_h) + 0.5) * h / out_h).long(), max=h - 1)
    cols = torch.clamp(((torch.arange(out_w) + 0.5) * w / out_w).long(), max=w - 1)
    return plane.index_select(-2, rows).index_select(-1, cols)


def localization_loss(cams: dict,
                      mask_pair: MaskPair,
                      object_classes,
                      context_classes,
                      *,
                      resample: str = "mask_to_cam") -> torch.Tensor:
    """Total activation mass on forbidden regions.

    Sums, over object-dependent classes, the elementwise product of their
    map with the context mask, plus the symmetric term for context-dependent
    classes over the object mask. ``cams`` maps class id -> Cam and must
    contain every listed class. By default masks are downsampled (nearest)
    to map resolution; ``resample="cam_to_mask"`` upsamples the maps instead.
    """
    object_classes = set(object_classes)
    context_classes = set(context_classes)
    both = object_classes & context_classes
    if both:
        raise ConfigError(f"classes in both groups: {sorted(both)}")
    if resample not in ("mask_to_cam", "cam_to_mask"):
        raise ConfigError(f"unknown resample mode {resample!r}")
    missing = (object_classes | context_classes) - set(cams)
    if missing:
        raise InputError(f"no activation map for classes: {sorted(missing)}")

    if not (object_classes or context_classes):
        return torch.zeros((), dtype=torch.float64)

    any_cam = cams[next(iter(object_classes or context_classes))].values
    dtype = any_cam.dtype

    def mask_tensor(mask: np.ndarray, shape) -> torch.Tensor:
        t = torch.as_tensor(np.ascontiguousarray(mask)).to(dtype)
        if resample == "mask_to_cam":
            return _resize_nearest_t(t, shape)
        return t

    total = torch.zeros((), dtype=dtype)
    for class_ids, forbidden in ((object_classes, mask_pair.mask_context),
                                 (context_classes, mask_pair.mask_object)):
        for class_id in sorted(class_ids):
            cam = cams[class_id].values
            if resample == "cam_to_mask":
                cam = _resize_nearest_t(cam, mask_pair.shape)
            m = mask_tensor(forbidden, cam.shape)
            if m.shape != cam.shape:
                raise InputError("mask and map shapes disagree after resampling")
            total = total + (cam * m).sum()
    return total


def localization_loss_batch(cams: torch.Tensor,
                            object_masks: torch.Tensor,
                            context_masks: torch.Tensor,
                            object_classes,
                            context_classes) -> torch.Tensor:
    """Batch-mean localization loss over B x K x H x W normalized maps.

    Masks are B x H x W; when their resolution differs from the maps they
    are downsampled with the shared nearest-neighbor convention. Returns a
    scalar: per-sample forbidden mass summed over listed classes, averaged
    over the batch.
    """
    object_classes = sorted(set(object_classes))
    context_classes = sorted(set(context_classes))
    if set(object_classes) & set(context_classes):
        raise ConfigError("object and context class sets must be disjoint")
    if object_masks.shape[0] != cams.shape[0] or context_masks.shape[0] != cams.shape[0]:
        raise InputError("masks and maps disagree on batch size")
    object_masks = _resize_nearest_t(object_masks.to(cams.dtype), cams.shape[-2:])
    context_masks = _resize_nearest_t(context_masks.to(cams.dtype), cams.shape[-2:])
    batch = cams.shape[0]
    total = cams.new_zeros(batch)
    if object_classes:
        total = total + (cams[:, object_classes] * context_masks[:, None]).sum(dim=(1, 2, 3))
    if context_classes:
        total = total + (cams[:, context_classes] * object_masks[:, None]).sum(dim=(1, 2, 3))
    return total.mean()


def mass_fraction_in(cam_values: torch.Tensor, mask) -> float:
    """Fraction of a map's total mass lying inside ``mask`` (0 if the map is empty)."""
    values = cam_values.detach()
    m = torch.as_tensor(np.ascontiguousarray(mask)).to(values.dtype)
    if m.shape != values.shape:
        m = _resize_nearest_t(m, values.shape)
    total = float(values.sum())
    if total == 0.0:
        return 0.0
    return float((values * m).sum()) / total


def cam_content_association(binary_cam: BinaryCam, regions) -> dict:
    """Overlap fraction of a binarized map with each region category.

    Regions sharing a category id are unioned first. Fractions are
    |support AND region| / |support|, or 0 for an empty support. Region
    rasters must already be aligned to map resolution.
    """
    support = binary_cam.values.cpu().numpy().astype(bool)
    by_category = {}
    for region in regions:
        if region.shape != support.shape:
            raise InputError(
                f"region raster {region.shape} not aligned to map {support.shape}")
        if region.category_id in by_category:
            by_category[region.category_id] = by_category[region.category_id] | region.raster
        else:
            by_category[region.category_id] = region.raster
    denom = support.sum()
    if denom == 0:
        return {cat: 0.0 for cat in by_category}
    return {cat: float((support & union).sum()) / float(denom)
            for cat, union in by_category.items()}
