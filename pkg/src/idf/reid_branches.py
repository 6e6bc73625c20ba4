"""Master branch (raw night images) and illumination-enhancement branch.

The two branches have the same architecture and never share parameters.
"""

from __future__ import annotations

from typing import NamedTuple

import torch
import torch.nn.functional as F
from torch import nn

from .config import EnhancementLossConfig, ModelConfig
from .curve_enhancer import CurveEstimator, enhance, estimate_curves
from .enhancement_losses import loss_dce_terms
from .errors import DimensionError, ParameterError

PROB_FLOOR = 1e-12


class Backbone(nn.Module):
    """Stride-2 conv blocks (conv, batch-norm, ReLU), global average pooling, linear projection to D."""

    def __init__(self, widths=(16, 32, 64, 128), feature_dim: int = 128, input_size=(256, 128)):
        super().__init__()
        self.input_size = tuple(input_size)
        chans = (3, *widths)
        self.blocks = nn.ModuleList(
            nn.Sequential(nn.Conv2d(a, b, 3, 2, 1), nn.BatchNorm2d(b), nn.ReLU())
            for a, b in zip(chans[:-1], chans[1:])
        )
        self.proj = nn.Linear(chans[-1], feature_dim)
        self.feature_dim = feature_dim

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        for block in self.blocks:
            x = block(x)
        return self.proj(x.mean((2, 3)))


def extract_features(params: Backbone, img: torch.Tensor) -> torch.Tensor:
    """Feature vector (D,) for one image, or (B, D) for a batch."""
    if img.dim() not in (3, 4) or tuple(img.shape[-3:]) != (3, *params.input_size):
        raise DimensionError(f"expected image of shape (3, {params.input_size[0]}, {params.input_size[1]}), "
                             f"got {tuple(img.shape)}")
    x = img if img.dim() == 4 else img.unsqueeze(0)
    f = params(x)
    return f if img.dim() == 4 else f.squeeze(0)


def classify(head: nn.Linear, f: torch.Tensor) -> torch.Tensor:
    """Softmax identity distribution from a linear head."""
    if f.shape[-1] != head.in_features:
        raise DimensionError(f"feature dimension {f.shape[-1]} != classifier input {head.in_features}")
    return F.softmax(head(f), dim=-1)


def id_loss(probs: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Mean negative log-probability of the true identity (probabilities floored at 1e-12)."""
    probs = probs if probs.dim() == 2 else probs.unsqueeze(0)
    labels = torch.as_tensor(labels, dtype=torch.long).reshape(-1)
    if labels.shape[0] != probs.shape[0]:
        raise DimensionError(f"{probs.shape[0]} distributions but {labels.shape[0]} labels")
    if labels.numel() and (labels.min() < 0 or labels.max() >= probs.shape[1]):
        raise ParameterError(f"label out of range for {probs.shape[1]} identities")
    p_true = probs.gather(1, labels[:, None]).squeeze(1)
    return -p_true.clamp_min(PROB_FLOOR).log().mean()


class BranchOutput(NamedTuple):
    features: torch.Tensor
    probs: torch.Tensor


class Branch(nn.Module):
    def __init__(self, cfg: ModelConfig, num_classes: int):
        super().__init__()
        self.backbone = Backbone(cfg.backbone_widths, cfg.feature_dim, cfg.input_size)
        self.head = nn.Linear(cfg.feature_dim, num_classes)

    def forward(self, img: torch.Tensor) -> BranchOutput:
        f = extract_features(self.backbone, img)
        return BranchOutput(f, classify(self.head, f))


def mbranch_forward(branch: Branch, img: torch.Tensor) -> BranchOutput:
    return branch(img)


class IEBranchOutput(NamedTuple):
    enhanced: torch.Tensor
    maps: torch.Tensor
    features: torch.Tensor
    probs: torch.Tensor


def iebranch_forward(enhancer: CurveEstimator, branch: Branch, img: torch.Tensor) -> IEBranchOutput:
    maps = estimate_curves(enhancer, img)
    # tanh keeps the maps in range; skip the per-step range scan in the hot path
    enhanced = enhance(img, maps, check=False)
    f, p = branch(enhanced)
    return IEBranchOutput(enhanced, maps, f, p)


def mbranch_loss(out: BranchOutput, labels) -> torch.Tensor:
    return id_loss(out.probs, labels)


def iebranch_loss(img, out: IEBranchOutput, labels, cfg: EnhancementLossConfig = EnhancementLossConfig()):
    """Returns (total, id term, dce terms)."""
    l_id = id_loss(out.probs, labels)
    dce = loss_dce_terms(img, out.enhanced, out.maps, cfg)
    return l_id + dce.total, l_id, dce
