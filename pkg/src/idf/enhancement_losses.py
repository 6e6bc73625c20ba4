"""Reference-free enhancement losses: spatial consistency, exposure control,
curve-map smoothness and colour constancy, plus their weighted sum.

Images may be ``(3, H, W)`` or batched ``(B, 3, H, W)``; batched losses are
averaged over the batch.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F

from .config import EnhancementLossConfig
from .errors import DimensionError, ParameterError


def _batched(img: torch.Tensor) -> torch.Tensor:
    if img.dim() == 3:
        return img.unsqueeze(0)
    if img.dim() != 4:
        raise DimensionError(f"expected (3,H,W) or (B,3,H,W), got {tuple(img.shape)}")
    return img


def _region_means(gray: torch.Tensor, region: int) -> torch.Tensor:
    """Mean over non-overlapping ``region x region`` tiles; partial edge tiles are dropped."""
    if gray.shape[-1] < region or gray.shape[-2] < region:
        raise ParameterError(f"image {tuple(gray.shape[-2:])} is smaller than one {region}x{region} region")
    return F.avg_pool2d(gray, region, stride=region)


def loss_spa(i0: torch.Tensor, i_n: torch.Tensor, cfg: EnhancementLossConfig = EnhancementLossConfig()) -> torch.Tensor:
    if i0.shape != i_n.shape:
        raise DimensionError(f"shape mismatch {tuple(i0.shape)} vs {tuple(i_n.shape)}")
    y0 = _region_means(_batched(i0).mean(1, keepdim=True), cfg.spa_region)
    yn = _region_means(_batched(i_n).mean(1, keepdim=True), cfg.spa_region)
    # each unordered neighbour pair appears twice in the per-region sum (m->k and k->m)
    dv = (yn[..., 1:, :] - yn[..., :-1, :]).abs() - (y0[..., 1:, :] - y0[..., :-1, :]).abs()
    dh = (yn[..., :, 1:] - yn[..., :, :-1]).abs() - (y0[..., :, 1:] - y0[..., :, :-1]).abs()
    n_regions = y0.shape[-1] * y0.shape[-2]
    total = 2 * (dv.pow(2).flatten(1).sum(1) + dh.pow(2).flatten(1).sum(1))
    return (total / n_regions).mean()


def loss_exp(i_n: torch.Tensor, cfg: EnhancementLossConfig = EnhancementLossConfig()) -> torch.Tensor:
    # subtracting first keeps the loss exactly zero at the target
    diff = _region_means((_batched(i_n) - cfg.exposure_target).mean(1, keepdim=True), cfg.exp_region)
    dist = diff.pow(2) if cfg.exp_squared else diff.abs()
    return dist.flatten(1).mean(1).mean()


def loss_tva(maps: torch.Tensor) -> torch.Tensor:
    """Smoothness of curve maps ``(N, 3, H, W)`` or ``(B, N, 3, H, W)``.

    Forward differences are mean-reduced per channel map before squaring.
    """
    if maps.dim() == 4:
        maps = maps.unsqueeze(0)
    if maps.dim() != 5 or maps.shape[2] != 3:
        raise DimensionError(f"expected curve maps (N,3,H,W), got {tuple(maps.shape)}")
    n_iter = maps.shape[1]
    gx = (maps[..., :, 1:] - maps[..., :, :-1]).abs()
    gy = (maps[..., 1:, :] - maps[..., :-1, :]).abs()
    mx = gx.flatten(3).mean(3) if gx.numel() else maps.new_zeros(maps.shape[:3])
    my = gy.flatten(3).mean(3) if gy.numel() else maps.new_zeros(maps.shape[:3])
    per_sample = (mx + my).pow(2).sum((1, 2)) / n_iter
    return per_sample.mean()


def loss_col(i_n: torch.Tensor) -> torch.Tensor:
    c = _batched(i_n).flatten(2).mean(2)
    r, g, b = c[:, 0], c[:, 1], c[:, 2]
    return ((r - g).pow(2) + (r - b).pow(2) + (g - b).pow(2)).mean()


@dataclass
class DCELossTerms:
    spa: torch.Tensor
    exp: torch.Tensor
    tva: torch.Tensor
    col: torch.Tensor
    total: torch.Tensor


def loss_dce_terms(i0, i_n, maps, cfg: EnhancementLossConfig = EnhancementLossConfig()) -> DCELossTerms:
    spa, exp, tva, col = loss_spa(i0, i_n, cfg), loss_exp(i_n, cfg), loss_tva(maps), loss_col(i_n)
    total = cfg.w_spa * spa + cfg.w_exp * exp + cfg.w_tva * tva + cfg.w_col * col
    return DCELossTerms(spa, exp, tva, col, total)


def loss_dce(i0, i_n, maps, cfg: EnhancementLossConfig = EnhancementLossConfig()) -> torch.Tensor:
    return loss_dce_terms(i0, i_n, maps, cfg).total
