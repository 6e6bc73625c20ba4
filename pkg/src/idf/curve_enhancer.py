"""Pixel-wise iterative curve mapping and the curve-estimation network.

Each iteration applies ``x + a * x * (1 - x)`` with per-pixel, per-channel
coefficients ``a`` in [-1, 1]. For ``x`` in [0, 1] the result stays in [0, 1]:
``a = 1`` gives ``1 - (1 - x)**2`` and ``a = -1`` gives ``x**2``.
"""

from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import nn

from .errors import ContractViolation, DimensionError, StateError


def curve_step(img: torch.Tensor, a: torch.Tensor, *, check: bool = True) -> torch.Tensor:
    if img.shape != a.shape:
        raise DimensionError(f"curve map shape {tuple(a.shape)} != image shape {tuple(img.shape)}")
    if check and a.numel() and (a.min() < -1 or a.max() > 1):
        raise ContractViolation("curve coefficients must lie in [-1, 1]")
    return img + a * img * (1 - img)


def split_maps(maps: torch.Tensor) -> torch.Tensor:
    """Reshape stacked ``(..., 3*N, H, W)`` network output into ``(..., N, 3, H, W)``."""
    *lead, c, h, w = maps.shape
    if c % 3:
        raise DimensionError(f"channel count {c} is not a multiple of 3")
    return maps.reshape(*lead, c // 3, 3, h, w)


def enhance(img: torch.Tensor, maps: torch.Tensor, *, check: bool = True) -> torch.Tensor:
    """Apply the curve once per map, threading the intermediate image.

    ``img`` is ``(3, H, W)`` with ``maps`` ``(N, 3, H, W)``, or the batched
    ``(B, 3, H, W)`` with ``(B, N, 3, H, W)``.
    """
    it_dim = img.dim() - 3
    if maps.dim() != img.dim() + 1 or maps.shape[:it_dim] != img.shape[:it_dim] \
            or maps.shape[it_dim + 1:] != img.shape[it_dim:]:
        raise DimensionError(f"curve maps {tuple(maps.shape)} do not match image {tuple(img.shape)}")
    out = img
    for a in maps.unbind(it_dim):
        out = curve_step(out, a, check=check)
    return out


class CurveEstimator(nn.Module):
    """Seven 3x3 convolutions with symmetric skip concatenation.

    Layer k's activation is concatenated into the input of layer 8-k for
    k = 1..3; the last layer emits ``3 * n_iter`` channels through tanh.
    """

    def __init__(self, n_iter: int = 8, width: int = 32, init_std: float = 0.02, zero_head: bool = False):
        super().__init__()
        self.n_iter = n_iter
        conv = lambda cin, cout: nn.Conv2d(cin, cout, 3, 1, 1)  # noqa: E731
        self.convs = nn.ModuleList([
            conv(3, width), conv(width, width), conv(width, width), conv(width, width),
            conv(2 * width, width), conv(2 * width, width), conv(2 * width, 3 * n_iter),
        ])
        self.reset_parameters(init_std, zero_head)

    def reset_parameters(self, std: float = 0.02, zero_head: bool = False) -> None:
        for c in self.convs:
            nn.init.normal_(c.weight, 0.0, std)
            nn.init.zeros_(c.bias)
        if zero_head:
            nn.init.zeros_(self.convs[-1].weight)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        c = self.convs
        x1 = F.relu(c[0](x))
        x2 = F.relu(c[1](x1))
        x3 = F.relu(c[2](x2))
        x4 = F.relu(c[3](x3))
        x5 = F.relu(c[4](torch.cat([x3, x4], 1)))
        x6 = F.relu(c[5](torch.cat([x2, x5], 1)))
        return torch.tanh(c[6](torch.cat([x1, x6], 1)))


def estimate_curves(params: CurveEstimator | None, img: torch.Tensor) -> torch.Tensor:
    """Curve maps ``(N, 3, H, W)`` for one image, or ``(B, N, 3, H, W)`` for a batch."""
    if params is None:
        raise StateError("curve estimator parameters are not initialised")
    if img.dim() not in (3, 4) or img.shape[-3] != 3:
        raise DimensionError(f"expected a 3-channel image, got shape {tuple(img.shape)}")
    x = img if img.dim() == 4 else img.unsqueeze(0)
    maps = split_maps(params(x))
    return maps if img.dim() == 4 else maps.squeeze(0)
