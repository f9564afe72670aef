"""Training loop and data plumbing.

A dataset is a tab-separated manifest: image path, a 0/1 label bitstring
(one char per class), a mask directory or "-", and a hashtag-feature .npy
path or "-". Augmentation (random resized crop + horizontal flip) is applied
jointly to the image and its masks so localization supervision stays aligned
with the pixels. All RNG flows through seeded torch generators and metric
files carry no timestamps, so reruns are byte-identical.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import torch
from PIL import Image

from . import masks as mask_ops
from .errors import ConfigError, InputError
from .model import (IntentClassifier, LossBreakdown, save_checkpoint,
                    total_loss)
from .taxonomy import NUM_CLASSES

BATCH_SIZE = 128
MOMENTUM = 0.9
BASE_LR_IMAGE_ONLY = 1e-3
BASE_LR_MULTIMODAL = 5e-4
WARMUP_EPOCHS = 5
CROP_SIZE = 224
HFLIP_PROB = 0.5


# --- manifests ---------------------------------------------------------------


@dataclass(frozen=True)
class ManifestRow:
    image_path: str
    labels: tuple                      # 0/1 ints, one per class
    mask_dir: Optional[str] = None
    hashtag_path: Optional[str] = None


def _resolve(base_dir: str, path: str) -> str:
    return path if os.path.isabs(path) else os.path.join(base_dir, path)


def read_manifest(path, num_classes: int = NUM_CLASSES) -> list:
    """Read manifest rows; relative paths resolve against the manifest dir."""
    base = os.path.dirname(os.path.abspath(path))
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise InputError(f"{path}:{lineno}: expected 4 tab-separated fields")
            image_path, bits, mask_dir, hashtag_path = parts
            if len(bits) != num_classes or set(bits) - {"0", "1"}:
                raise InputError(f"{path}:{lineno}: labels must be a {num_classes}-char 0/1 string")
            rows.append(ManifestRow(
                image_path=_resolve(base, image_path),
                labels=tuple(int(b) for b in bits),
                mask_dir=None if mask_dir == "-" else _resolve(base, mask_dir),
                hashtag_path=None if hashtag_path == "-" else _resolve(base, hashtag_path),
            ))
    if not rows:
        raise InputError(f"empty manifest: {path}")
    return rows


def write_manifest(path, rows: Sequence[ManifestRow]) -> None:
    with open(path, "w") as fh:
        for row in rows:
            bits = "".join(str(b) for b in row.labels)
            fh.write("\t".join([row.image_path, bits,
                                row.mask_dir or "-", row.hashtag_path or "-"]) + "\n")


@dataclass
class Sample:
    image: np.ndarray                       # H x W x 3 uint8
    labels: np.ndarray                      # K float32
    object_mask: Optional[np.ndarray]       # H x W bool
    context_mask: Optional[np.ndarray]
    hashtag: Optional[np.ndarray]           # D float


def load_sample(row: ManifestRow) -> Sample:
    with Image.open(row.image_path) as img:
        image = np.asarray(img.convert("RGB"), dtype=np.uint8)
    labels = np.asarray(row.labels, dtype=np.float32)
    object_mask = context_mask = None
    if row.mask_dir is not None:
        pair = mask_ops.read_mask_pair(row.mask_dir)
        if pair.mask_object.shape != image.shape[:2]:
            raise InputError(f"mask shape {pair.mask_object.shape} does not match "
                             f"image shape {image.shape[:2]} for {row.image_path}")
        object_mask, context_mask = pair.mask_object, pair.mask_context
    hashtag = np.load(row.hashtag_path) if row.hashtag_path is not None else None
    return Sample(image, labels, object_mask, context_mask, hashtag)


# --- paired augmentation -----------------------------------------------------


def _rand(generator) -> float:
    return torch.rand((), generator=generator).item()


def sample_crop_params(height: int, width: int, generator, *,
                       scale=(0.08, 1.0), ratio=(3.0 / 4.0, 4.0 / 3.0)):
    """Random-resized-crop window (top, left, crop_h, crop_w)."""
    area = float(height * width)
    log_ratio = (math.log(ratio[0]), math.log(ratio[1]))
    for _ in range(10):
        target_area = area * (scale[0] + (scale[1] - scale[0]) * _rand(generator))
        aspect = math.exp(log_ratio[0] + (log_ratio[1] - log_ratio[0]) * _rand(generator))
        crop_w = int(round(math.sqrt(target_area * aspect)))
        crop_h = int(round(math.sqrt(target_area / aspect)))
        if 0 < crop_w <= width and 0 < crop_h <= height:
            top = int(_rand(generator) * (height - crop_h + 1))
            left = int(_rand(generator) * (width - crop_w + 1))
            return top, left, crop_h, crop_w
    # fallback: largest centered window with an in-range aspect ratio
    in_ratio = width / height
    if in_ratio < ratio[0]:
        crop_w, crop_h = width, min(height, int(round(width / ratio[0])))
    elif in_ratio > ratio[1]:
        crop_h, crop_w = height, min(width, int(round(height * ratio[1])))
    else:
        crop_h, crop_w = height, width
    return (height - crop_h) // 2, (width - crop_w) // 2, crop_h, crop_w


def _resize_image(image: np.ndarray, size: int) -> np.ndarray:
    out = Image.fromarray(image).resize((size, size), Image.BILINEAR)
    return np.asarray(out, dtype=np.uint8)


def transform_sample(sample: Sample, crop_size: int, *, train: bool,
                     generator=None, hflip_prob: float = HFLIP_PROB,
                     scale=(0.08, 1.0), ratio=(3.0 / 4.0, 4.0 / 3.0),
                     augment: bool = True):
    """Produce aligned (image, object_mask, context_mask) arrays at crop size."""
    image = sample.image
    obj, ctx = sample.object_mask, sample.context_mask
    if train and augment:
        if generator is None:
            raise InputError("training transform requires a generator")
        top, left, ch, cw = sample_crop_params(image.shape[0], image.shape[1],
                                               generator, scale=scale, ratio=ratio)
        image = image[top:top + ch, left:left + cw]
        if obj is not None:
            obj = obj[top:top + ch, left:left + cw]
            ctx = ctx[top:top + ch, left:left + cw]
        if hflip_prob > 0 and _rand(generator) < hflip_prob:
            image = image[:, ::-1]
            if obj is not None:
                obj, ctx = obj[:, ::-1], ctx[:, ::-1]
    image = _resize_image(np.ascontiguousarray(image), crop_size)
    if obj is not None:
        obj = mask_ops.resize_nearest(np.ascontiguousarray(obj), (crop_size, crop_size))
        ctx = mask_ops.resize_nearest(np.ascontiguousarray(ctx), (crop_size, crop_size))
    return image, obj, ctx


def assemble_batch(rows: Sequence[ManifestRow], crop_size: int, *, train: bool,
                   multimodal: bool, generator=None, hflip_prob: float = HFLIP_PROB,
                   scale=(0.08, 1.0), ratio=(3.0 / 4.0, 4.0 / 3.0),
                   augment: bool = True) -> dict:
    """Load, transform and stack a list of manifest rows into tensors.

    Rows without masks contribute all-zero masks, which makes their
    localization term vanish instead of erroring out.
    """
    images, labels, objs, ctxs, tags = [], [], [], [], []
    for row in rows:
        sample = load_sample(row)
        image, obj, ctx = transform_sample(sample, crop_size, train=train,
                                           generator=generator, hflip_prob=hflip_prob,
                                           scale=scale, ratio=ratio, augment=augment)
        images.append(torch.from_numpy(image.astype(np.float32) / 255.0).permute(2, 0, 1))
        labels.append(torch.from_numpy(sample.labels))
        zero = np.zeros((crop_size, crop_size), dtype=bool)
        objs.append(torch.from_numpy((obj if obj is not None else zero).astype(np.float32)))
        ctxs.append(torch.from_numpy((ctx if ctx is not None else zero).astype(np.float32)))
        if multimodal:
            if sample.hashtag is None:
                raise InputError(f"multimodal model but no hashtag feature for {row.image_path}")
            tags.append(torch.from_numpy(np.asarray(sample.hashtag, dtype=np.float32)))
    batch = {
        "images": torch.stack(images),
        "labels": torch.stack(labels),
        "object_masks": torch.stack(objs),
        "context_masks": torch.stack(ctxs),
    }
    if multimodal:
        batch["hashtags"] = torch.stack(tags)
    return batch


# --- schedule ----------------------------------------------------------------


def lr_at(step: int, base_lr: float, warmup_steps: int, total_steps: int,
          schedule: str = "constant", *, milestones: Sequence[int] = (),
          gamma: float = 0.1) -> float:
    """Learning rate at a 0-indexed optimizer step.

    Linear warmup runs 0 -> base over ``warmup_steps`` (zero steps means no
    warmup); afterwards the named schedule applies to the remaining steps.
    """
    if step < 0 or base_lr <= 0 or warmup_steps < 0:
        raise ConfigError("step must be >= 0, base_lr > 0, warmup_steps >= 0")
    if warmup_steps > 0 and step < warmup_steps:
        return base_lr * step / warmup_steps
    if schedule == "constant":
        return base_lr
    if schedule == "step":
        drops = sum(1 for m in milestones if step >= m)
        return base_lr * gamma ** drops
    if schedule == "cosine":
        span = max(1, total_steps - warmup_steps)
        progress = min(1.0, (step - warmup_steps) / span)
        return 0.5 * base_lr * (1.0 + math.cos(math.pi * progress))
    raise ConfigError(f"unknown schedule {schedule!r}")


# --- training ----------------------------------------------------------------


@dataclass
class TrainSettings:
    epochs: int = 10
    batch_size: int = BATCH_SIZE
    base_lr: Optional[float] = None        # None -> pick by modality
    momentum: float = MOMENTUM
    weight_decay: float = 0.0
    warmup_epochs: float = WARMUP_EPOCHS
    schedule: str = "constant"
    milestones: tuple = ()
    gamma: float = 0.1
    lambda_loc: float = 0.1
    cls_loss: str = "bce"
    focal_gamma: float = 2.0
    focal_alpha: float = 0.25
    pos_weight: Optional[float] = None
    grad_clip: Optional[float] = None      # max grad norm; None disables
    object_classes: tuple = ()
    context_classes: tuple = ()
    seed: int = 0
    crop_size: int = CROP_SIZE
    augment: bool = True
    hflip_prob: float = HFLIP_PROB
    crop_scale: tuple = (0.08, 1.0)
    crop_ratio: tuple = (0.75, 4.0 / 3.0)
    eval_threshold: float = 0.5

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be positive")
        if self.base_lr is not None and self.base_lr <= 0:
            raise ConfigError("base_lr must be positive")
        if self.warmup_epochs < 0:
            raise ConfigError("warmup_epochs must be >= 0")
        if set(self.object_classes) & set(self.context_classes):
            raise ConfigError("object_classes and context_classes overlap")
        if self.cls_loss not in ("bce", "focal"):
            raise ConfigError(f"unknown cls_loss {self.cls_loss!r}")
        if self.grad_clip is not None and self.grad_clip <= 0:
            raise ConfigError("grad_clip must be positive")


def resolve_base_lr(settings: TrainSettings, model: IntentClassifier) -> float:
    if settings.base_lr is not None:
        return settings.base_lr
    return BASE_LR_MULTIMODAL if model.multimodal else BASE_LR_IMAGE_ONLY


@dataclass
class TrainResult:
    best_epoch: int
    best_macro_f1: float
    final_macro_f1: float
    epochs: list = field(default_factory=list)
    best_checkpoint: str = ""
    last_checkpoint: str = ""


def train(model: IntentClassifier, rows: Sequence[ManifestRow],
          settings: TrainSettings, out_dir, val_rows=None) -> TrainResult:
    """SGD training with warmup; keeps the best-macro-F1 checkpoint.

    Writes ``steps.tsv`` (per-step lr and loss), ``epochs.jsonl`` (per-epoch
    aggregates and validation macro F1), ``best.ckpt`` and ``last.ckpt``
    under ``out_dir``.
    """
    from .evaluation import evaluate_rows

    os.makedirs(out_dir, exist_ok=True)
    if val_rows is None:
        val_rows = rows
    torch.manual_seed(settings.seed)
    data_gen = torch.Generator().manual_seed(settings.seed + 1)

    base_lr = resolve_base_lr(settings, model)
    steps_per_epoch = math.ceil(len(rows) / settings.batch_size)
    total_steps = steps_per_epoch * settings.epochs
    warmup_steps = int(round(settings.warmup_epochs * steps_per_epoch))
    optimizer = torch.optim.SGD(model.parameters(), lr=base_lr,
                                momentum=settings.momentum,
                                weight_decay=settings.weight_decay)

    best = TrainResult(best_epoch=-1, best_macro_f1=-1.0, final_macro_f1=0.0)
    best_path = os.path.join(out_dir, "best.ckpt")
    last_path = os.path.join(out_dir, "last.ckpt")
    step = 0
    with open(os.path.join(out_dir, "steps.tsv"), "w") as steps_fh, \
         open(os.path.join(out_dir, "epochs.jsonl"), "w") as epochs_fh:
        steps_fh.write("step\tlr\tloss\tcls\tloc\n")
        for epoch in range(settings.epochs):
            model.train()
            order = torch.randperm(len(rows), generator=data_gen).tolist()
            sums = {"loss": 0.0, "cls": 0.0, "loc": 0.0}
            for start in range(0, len(order), settings.batch_size):
                chunk = [rows[i] for i in order[start:start + settings.batch_size]]
                batch = assemble_batch(chunk, settings.crop_size, train=True,
                                       multimodal=model.multimodal, generator=data_gen,
                                       hflip_prob=settings.hflip_prob,
                                       scale=settings.crop_scale,
                                       ratio=settings.crop_ratio,
                                       augment=settings.augment)
                lr = lr_at(step, base_lr, warmup_steps, total_steps,
                           settings.schedule, milestones=settings.milestones,
                           gamma=settings.gamma)
                for group in optimizer.param_groups:
                    group["lr"] = lr
                output = model(batch["images"], batch.get("hashtags"))
                losses: LossBreakdown = total_loss(
                    output, batch["labels"],
                    object_masks=batch["object_masks"],
                    context_masks=batch["context_masks"],
                    object_classes=settings.object_classes,
                    context_classes=settings.context_classes,
                    lambda_loc=settings.lambda_loc,
                    cls_kind=settings.cls_loss,
                    focal_gamma=settings.focal_gamma,
                    focal_alpha=settings.focal_alpha,
                    pos_weight=settings.pos_weight)
                optimizer.zero_grad()
                losses.total.backward()
                if settings.grad_clip is not None:
                    torch.nn.utils.clip_grad_norm_(model.parameters(),
                                                   settings.grad_clip)
                optimizer.step()
                sums["loss"] += float(losses.total.detach())
                sums["cls"] += float(losses.classification.detach())
                sums["loc"] += float(losses.localization.detach())
                steps_fh.write(f"{step}\t{lr!r}\t{float(losses.total.detach())!r}"
                               f"\t{float(losses.classification.detach())!r}"
                               f"\t{float(losses.localization.detach())!r}\n")
                step += 1
            metrics = evaluate_rows(model, val_rows, crop_size=settings.crop_size,
                                    batch_size=settings.batch_size,
                                    threshold=settings.eval_threshold)
            record = {
                "epoch": epoch,
                "train_loss": sums["loss"] / steps_per_epoch,
                "train_cls": sums["cls"] / steps_per_epoch,
                "train_loc": sums["loc"] / steps_per_epoch,
                "val_macro_f1": metrics["macro_f1"],
            }
            epochs_fh.write(json.dumps(record, sort_keys=True) + "\n")
            best.epochs.append(record)
            if metrics["macro_f1"] > best.best_macro_f1:
                best.best_macro_f1 = metrics["macro_f1"]
                best.best_epoch = epoch
                save_checkpoint(best_path, model,
                                extra={"epoch": epoch, "macro_f1": metrics["macro_f1"]})
            best.final_macro_f1 = metrics["macro_f1"]
    save_checkpoint(last_path, model,
                    extra={"epoch": settings.epochs - 1,
                           "macro_f1": best.final_macro_f1})
    best.best_checkpoint = best_path
    best.last_checkpoint = last_path
    return best
