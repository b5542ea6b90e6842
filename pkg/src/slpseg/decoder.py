from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .layers import group_norm


@dataclass
class Prediction:
    logits: torch.Tensor  # [B, 1, H, W]
    probs: torch.Tensor


class SegmentationDecoder(nn.Module):
    """Four x2 nearest-upsample stages, each concatenating one skip (f4 first, f1 last),
    then a depth mean and a 1x1 sigmoid head."""

    def __init__(self, latent_channels: int, skip_widths, stage_widths=(64, 32, 16, 16)):
        super().__init__()
        skip_widths = list(skip_widths)[:4][::-1]
        cin = latent_channels
        self.stages = nn.ModuleList()
        for skip, width in zip(skip_widths, stage_widths):
            self.stages.append(nn.Sequential(nn.Conv3d(cin + skip, width, 3, padding=1),
                                             group_norm(width), nn.ReLU()))
            cin = width
        self.head = nn.Conv2d(cin, 1, kernel_size=1)

    def forward(self, skips: list[torch.Tensor], z6: torch.Tensor) -> Prediction:
        x = z6
        for stage, skip in zip(self.stages, skips[:4][::-1]):
            d, h, w = x.shape[2:]
            if tuple(skip.shape[2:]) != (d, 2 * h, 2 * w):
                raise ValueError(f"skip of shape {tuple(skip.shape)} does not match x2 upsample of {tuple(x.shape)}")
            x = F.interpolate(x, scale_factor=(1, 2, 2), mode="nearest")
            x = stage(torch.cat([x, skip], dim=1))
        logits = self.head(x.mean(dim=2))
        return Prediction(logits, torch.sigmoid(logits))
