"""Multi-label intent classifier with CAM heads and optional hashtag fusion.

The classifier scores 28 intent classes from a convolutional feature map
(spatially mean-pooled), optionally concatenated with an MLP-fused hashtag
feature. Class activation maps reuse the visual slice of the classifier
weights, so the spatial mean of a raw map equals that class's visual logit
contribution exactly.
"""

from __future__ import annotations

import dataclasses
import io
import json
import math
import zipfile
from dataclasses import dataclass
from typing import Optional

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from .errors import ConfigError, InputError, NumericError
from .saliency import class_activation_maps
from .taxonomy import NUM_CLASSES

POSITIVE_PRIOR = 0.01
FUSION_HIDDEN = 1024
FUSION_OUT = 2048
FUSION_DROPOUT = 0.25
LAMBDA_LOC = 0.1
FOCAL_GAMMA = 2.0
FOCAL_ALPHA = 0.25
CHECKPOINT_FORMAT_VERSION = 1


def prior_bias(prior: float = POSITIVE_PRIOR) -> float:
    """Classifier bias such that an all-zero representation scores ``prior``."""
    if not 0.0 < prior < 1.0:
        raise ConfigError(f"prior must be in (0, 1), got {prior}")
    return -math.log((1.0 - prior) / prior)


class TinyConvBackbone(nn.Module):
    """Small 4-layer CNN for CPU-scale experiments (32x32 -> 8x8 features).

    GroupNorm keeps optimization healthy without batch statistics, so runs
    stay deterministic and batch-size independent. The final layer is a bare
    convolution: signed feature maps let the localization penalty zero out
    forbidden CAM cells (the normalization clamps negatives) without driving
    the whole feature tensor into ReLU death. All biases start at zero and
    GroupNorm starts as identity scaling, so a zero image yields a zero
    feature map and the freshly initialized classifier output reduces to
    its bias.
    """

    def __init__(self, feature_dim: int = 64):
        super().__init__()
        self.feature_dim = feature_dim

        def block(c_in, c_out, stride):
            return [nn.Conv2d(c_in, c_out, 3, stride=stride, padding=1),
                    nn.GroupNorm(8, c_out), nn.ReLU(inplace=True)]

        self.layers = nn.Sequential(*block(3, 32, 1), *block(32, 64, 2),
                                    *block(64, 64, 1),
                                    nn.Conv2d(64, feature_dim, 3, stride=2, padding=1))
        for module in self.layers:
            if isinstance(module, nn.Conv2d):
                nn.init.zeros_(module.bias)

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        return self.layers(images)


class ResNet50Backbone(nn.Module):
    """ResNet-50 trunk up to the last residual stage (2048-channel maps)."""

    def __init__(self, pretrained: bool = True):
        super().__init__()
        import torchvision.models as tvm  # heavyweight, imported on demand

        weights = tvm.ResNet50_Weights.IMAGENET1K_V1 if pretrained else None
        resnet = tvm.resnet50(weights=weights)
        self.feature_dim = 2048
        self.trunk = nn.Sequential(*list(resnet.children())[:-2])

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        return self.trunk(images)


class FusionHead(nn.Module):
    """Two-layer MLP lifting the hashtag feature before concatenation."""

    def __init__(self, in_dim: int, hidden: int = FUSION_HIDDEN,
                 out_dim: int = FUSION_OUT, dropout: float = FUSION_DROPOUT):
        super().__init__()
        self.net = nn.Sequential(
            nn.Linear(in_dim, hidden), nn.ReLU(inplace=True),
            nn.Dropout(dropout), nn.Linear(hidden, out_dim),
        )
        for module in self.net:
            if isinstance(module, nn.Linear):
                nn.init.zeros_(module.bias)

    def forward(self, feature: torch.Tensor) -> torch.Tensor:
        return self.net(feature)


@dataclass
class ModelOutput:
    logits: torch.Tensor      # B x K
    cams: torch.Tensor        # B x K x H x W, normalized to [0, 1]
    raw_cams: torch.Tensor    # B x K x H x W, pre-normalization


@dataclass(frozen=True)
class ModelConfig:
    """Architecture description, sufficient to rebuild the network."""

    backbone: str = "tiny"                  # "tiny" | "resnet50"
    num_classes: int = NUM_CLASSES
    hashtag_dim: Optional[int] = None       # None -> image-only
    feature_dim: int = 64                   # tiny backbone channels
    fusion_hidden: int = FUSION_HIDDEN
    fusion_out: int = FUSION_OUT
    dropout: float = FUSION_DROPOUT
    prior: float = POSITIVE_PRIOR
    pretrained: bool = False

    def __post_init__(self):
        if self.backbone not in ("tiny", "resnet50"):
            raise ConfigError(f"unknown backbone {self.backbone!r}")
        if self.num_classes < 1:
            raise ConfigError("num_classes must be positive")
        if self.hashtag_dim is not None and self.hashtag_dim < 1:
            raise ConfigError("hashtag_dim must be positive when set")
        if not 0.0 < self.prior < 1.0:
            raise ConfigError(f"prior must be in (0, 1), got {self.prior}")


class IntentClassifier(nn.Module):
    """Backbone + optional hashtag fusion + linear multi-label head."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        if config.backbone == "tiny":
            self.backbone = TinyConvBackbone(config.feature_dim)
        else:
            self.backbone = ResNet50Backbone(pretrained=config.pretrained)
        self.visual_dim = self.backbone.feature_dim
        if config.hashtag_dim is not None:
            self.fusion = FusionHead(config.hashtag_dim, config.fusion_hidden,
                                     config.fusion_out, config.dropout)
            rep_dim = self.visual_dim + config.fusion_out
        else:
            self.fusion = None
            rep_dim = self.visual_dim
        self.classifier = nn.Linear(rep_dim, config.num_classes)
        # Zero weight: activation maps start flat, so the spatial penalty only
        # acts on evidence the classification signal actually builds up.
        nn.init.zeros_(self.classifier.weight)
        nn.init.constant_(self.classifier.bias, prior_bias(config.prior))

    @property
    def multimodal(self) -> bool:
        return self.fusion is not None

    def forward(self, images: torch.Tensor,
                hashtag_features: Optional[torch.Tensor] = None) -> ModelOutput:
        if self.multimodal and hashtag_features is None:
            raise InputError("model is multimodal but no hashtag features were given")
        if not self.multimodal and hashtag_features is not None:
            raise InputError("model is image-only but hashtag features were given")
        features = self.backbone(images)
        pooled = features.mean(dim=(-2, -1))
        if self.multimodal:
            fused = self.fusion(hashtag_features.to(pooled.dtype))
            representation = torch.cat([pooled, fused], dim=1)
        else:
            representation = pooled
        logits = self.classifier(representation)
        # CAMs come from the visual slice of the head weights only, never
        # from the hashtag slice.
        visual_weights = self.classifier.weight[:, :self.visual_dim]
        cams, raw_cams = class_activation_maps(features, visual_weights)
        return ModelOutput(logits=logits, cams=cams, raw_cams=raw_cams)


def build_model(config: ModelConfig, seed: Optional[int] = None) -> IntentClassifier:
    """Construct a model; ``seed`` pins the random weight initialization.

    Without a seed the backbone init depends on ambient RNG state, so two
    builds differ. Reproducible runs must seed here and in the trainer with
    the same value (the CLI does both from its single seed flag).
    """
    if seed is not None:
        torch.manual_seed(seed)
    return IntentClassifier(config)


# --- losses ------------------------------------------------------------------


def classification_loss(logits: torch.Tensor, targets: torch.Tensor,
                        kind: str = "bce", *, focal_gamma: float = FOCAL_GAMMA,
                        focal_alpha: float = FOCAL_ALPHA,
                        pos_weight: Optional[float] = None) -> torch.Tensor:
    """Multi-label classification loss, mean-reduced over batch and classes.

    ``pos_weight`` rescales the positive terms of the plain BCE (useful when
    positives are roughly 1-in-K); it does not apply to the focal variant,
    which has its own alpha balancing.
    """
    targets = targets.to(logits.dtype)
    if logits.shape != targets.shape:
        raise InputError(f"logits {tuple(logits.shape)} vs targets {tuple(targets.shape)}")
    per_element = F.binary_cross_entropy_with_logits(logits, targets, reduction="none")
    if kind == "bce":
        if pos_weight is not None:
            weights = torch.where(targets > 0.5,
                                  torch.as_tensor(float(pos_weight), dtype=logits.dtype),
                                  torch.ones((), dtype=logits.dtype))
            return (weights * per_element).mean()
        return per_element.mean()
    if kind == "focal":
        prob = torch.sigmoid(logits)
        pt = torch.where(targets > 0.5, prob, 1.0 - prob)
        alpha_t = torch.where(targets > 0.5,
                              torch.as_tensor(focal_alpha, dtype=logits.dtype),
                              torch.as_tensor(1.0 - focal_alpha, dtype=logits.dtype))
        return (alpha_t * (1.0 - pt) ** focal_gamma * per_element).mean()
    raise ConfigError(f"unknown classification loss {kind!r}")


@dataclass
class LossBreakdown:
    total: torch.Tensor
    classification: torch.Tensor
    localization: torch.Tensor


def total_loss(output: ModelOutput, targets: torch.Tensor, *,
               object_masks: Optional[torch.Tensor] = None,
               context_masks: Optional[torch.Tensor] = None,
               object_classes=(), context_classes=(),
               lambda_loc: float = LAMBDA_LOC,
               cls_kind: str = "bce",
               focal_gamma: float = FOCAL_GAMMA,
               focal_alpha: float = FOCAL_ALPHA,
               pos_weight: Optional[float] = None) -> LossBreakdown:
    """Classification loss plus ``lambda_loc`` times the localization loss.

    The localization term is computed whenever masks are supplied (even at
    lambda 0, so it can be logged); otherwise it is zero. A non-finite total
    raises NumericError rather than silently corrupting training.
    """
    from .saliency import localization_loss_batch

    cls = classification_loss(output.logits, targets, cls_kind,
                              focal_gamma=focal_gamma, focal_alpha=focal_alpha,
                              pos_weight=pos_weight)
    if object_masks is not None or context_masks is not None:
        if object_masks is None or context_masks is None:
            raise InputError("object and context masks must be supplied together")
        loc = localization_loss_batch(output.cams, object_masks, context_masks,
                                      object_classes, context_classes)
    else:
        loc = torch.zeros((), dtype=cls.dtype)
    total = cls + lambda_loc * loc
    if not torch.isfinite(total):
        raise NumericError(f"non-finite loss: cls={float(cls)}, loc={float(loc)}")
    return LossBreakdown(total=total, classification=cls, localization=loc)


# --- checkpoints -------------------------------------------------------------
# A checkpoint is a zip of config.json plus one .npy per named parameter, so
# it can be inspected or loaded without torch.


def save_checkpoint(path, model: IntentClassifier, extra: Optional[dict] = None) -> None:
    header = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "model": dataclasses.asdict(model.config),
        "extra": extra or {},
    }
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_DEFLATED) as zf:
        zf.writestr("config.json", json.dumps(header, indent=2, sort_keys=True))
        for name, tensor in model.state_dict().items():
            buf = io.BytesIO()
            np.save(buf, tensor.detach().cpu().numpy())
            zf.writestr(f"params/{name}.npy", buf.getvalue())


def read_checkpoint_header(path) -> dict:
    with zipfile.ZipFile(path) as zf:
        header = json.loads(zf.read("config.json"))
    if header.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        raise InputError(f"unsupported checkpoint version {header.get('format_version')!r}")
    return header


def load_checkpoint(path) -> IntentClassifier:
    header = read_checkpoint_header(path)
    config = ModelConfig(**header["model"])
    model = build_model(config)
    state = {}
    with zipfile.ZipFile(path) as zf:
        for info in zf.infolist():
            if not info.filename.startswith("params/"):
                continue
            name = info.filename[len("params/"):-len(".npy")]
            state[name] = torch.from_numpy(np.load(io.BytesIO(zf.read(info))))
    missing = set(model.state_dict()) - set(state)
    if missing:
        raise InputError(f"checkpoint is missing parameters: {sorted(missing)[:3]}...")
    model.load_state_dict(state)
    return model
