"""Illumination distillation module: bottleneck fusion of the two branch
features, reconstruction loss, fused-feature classifier (the teacher) and
KL distillation into the two branch classifiers (the students).
"""

from __future__ import annotations

from typing import NamedTuple, Sequence

import torch
import torch.nn.functional as F
from torch import nn

from .config import DistillationConfig, ModelConfig
from .errors import ConfigError, DimensionError
from .reid_branches import PROB_FLOOR, id_loss


class FusionState(NamedTuple):
    z_in: torch.Tensor
    z_cf: torch.Tensor
    z_out: torch.Tensor


class IDModule(nn.Module):
    """Encoder 2D -> h -> D_cf, mirrored decoder, and linear-BN-dropout-linear classifier."""

    def __init__(self, feature_dim: int, num_classes: int, hidden: int | None = None,
                 bottleneck: int | None = None, cls_hidden: int | None = None, dropout: float = 0.5):
        super().__init__()
        d_in = 2 * feature_dim
        hidden = hidden or d_in
        bottleneck = bottleneck or feature_dim
        if bottleneck >= d_in:
            raise ConfigError(f"bottleneck dimension {bottleneck} must be smaller than 2D = {d_in}")
        self.feature_dim = feature_dim
        self.bottleneck = bottleneck
        self.encoder = nn.Sequential(nn.Linear(d_in, hidden), nn.ReLU(), nn.Linear(hidden, bottleneck))
        self.decoder = nn.Sequential(nn.Linear(bottleneck, hidden), nn.ReLU(), nn.Linear(hidden, d_in))
        cls_hidden = cls_hidden or feature_dim
        self.classifier = nn.Sequential(
            nn.Linear(bottleneck, cls_hidden), nn.BatchNorm1d(cls_hidden), nn.Dropout(dropout),
            nn.Linear(cls_hidden, num_classes),
        )

    @classmethod
    def from_config(cls, cfg: ModelConfig, num_classes: int) -> "IDModule":
        return cls(cfg.feature_dim, num_classes, cfg.fusion_hidden_dim, cfg.bottleneck,
                   cfg.idm_hidden, cfg.dropout)

    def classify(self, z_cf: torch.Tensor) -> torch.Tensor:
        return F.softmax(self.classifier(z_cf), dim=-1)


def fuse(f_mb: torch.Tensor, f_ieb: torch.Tensor, params: IDModule) -> FusionState:
    d = params.feature_dim
    if f_mb.shape[-1] != d or f_ieb.shape[-1] != d or f_mb.shape != f_ieb.shape:
        raise DimensionError(f"fusion expects two features of dimension {d}, got "
                             f"{tuple(f_mb.shape)} and {tuple(f_ieb.shape)}")
    z_in = torch.cat([f_mb, f_ieb], dim=-1)
    z_cf = params.encoder(z_in)
    return FusionState(z_in, z_cf, params.decoder(z_cf))


def rec_loss(state: FusionState) -> torch.Tensor:
    """Squared Euclidean reconstruction error, averaged over a batch."""
    return (state.z_out - state.z_in).pow(2).sum(-1).mean()


def ifd_loss(teacher: torch.Tensor, students: Sequence[torch.Tensor]) -> torch.Tensor:
    """Sum over students of KL(teacher || student), averaged over a batch.

    The teacher distribution is detached, so no gradient reaches it.
    """
    t = teacher.detach()
    total = t.new_zeros(())
    for s in students:
        if s.shape != t.shape:
            raise DimensionError(f"student shape {tuple(s.shape)} != teacher shape {tuple(t.shape)}")
        # 0 * log 0 contributes nothing
        kl = torch.where(t > 0, t * (t.clamp_min(PROB_FLOOR).log() - s.clamp_min(PROB_FLOOR).log()),
                         torch.zeros_like(t))
        total = total + kl.sum(-1).mean()
    return total


class IDMLossTerms(NamedTuple):
    total: torch.Tensor
    id: torch.Tensor
    rec: torch.Tensor
    ifd: torch.Tensor


def idm_loss_terms(probs_idm, labels, state: FusionState, teacher, students,
                   cfg: DistillationConfig = DistillationConfig()) -> IDMLossTerms:
    l_id = id_loss(probs_idm, labels)
    l_rec = rec_loss(state)
    l_ifd = ifd_loss(teacher, students)
    return IDMLossTerms(l_id + cfg.lambda1 * l_rec + cfg.lambda2 * l_ifd, l_id, l_rec, l_ifd)


def idm_loss(probs_idm, labels, state, teacher, students, cfg: DistillationConfig = DistillationConfig()):
    return idm_loss_terms(probs_idm, labels, state, teacher, students, cfg).total
