"""Per-modality 3D convolutional feature pyramids with availability gating."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .availability import gate
from .errors import ConfigError
from .layers import group_norm

N_LEVELS = 6


@dataclass(frozen=True)
class EncoderConfig:
    base_width: int = 8
    level_widths: tuple[int, ...] = (16, 32, 64, 64, 96, 96)
    level_strides: tuple[int, ...] = (1, 2, 2, 2, 2, 1)
    depth_extent: int = 2
    residual: bool = True

    def __post_init__(self):
        object.__setattr__(self, "level_widths", tuple(self.level_widths))
        object.__setattr__(self, "level_strides", tuple(self.level_strides))
        if len(self.level_widths) != N_LEVELS or len(self.level_strides) != N_LEVELS:
            raise ConfigError("encoder needs exactly 6 level widths and 6 level strides")
        s = self.level_strides
        # decoder: f1 at full resolution, then four x2 stages ending at level 6
        if s[0] != 1 or s[1:4] != (2, 2, 2) or s[4] * s[5] != 2:
            raise ConfigError("encoder.level_strides must be (1, 2, 2, 2, a, b) with a*b == 2")
        if self.depth_extent < 1 or self.base_width < 1:
            raise ConfigError("encoder.depth_extent and base_width must be >= 1")

    @property
    def total_stride(self) -> int:
        return int(np.prod(self.level_strides))

    def level_sizes(self, tile_size: int) -> list[int]:
        return [tile_size // int(np.prod(self.level_strides[:i + 1])) for i in range(N_LEVELS)]


class EncoderBlock(nn.Module):
    def __init__(self, cin: int, cout: int, stride: int, residual: bool):
        super().__init__()
        self.conv = nn.Conv3d(cin, cout, 3, stride=(1, stride, stride), padding=1)
        self.norm = group_norm(cout)
        self.act = nn.ReLU()
        self.residual = residual and cin == cout and stride == 1

    def forward(self, x):
        y = self.act(self.norm(self.conv(x)))
        return x + y if self.residual else y


class ModalityEncoder(nn.Module):
    """Toy stand-in for an inflated ResNet: stem + six 3D conv blocks.

    The stem maps the modality's ``C_m`` bands onto a common depth axis of size
    ``depth_extent`` so modalities with different band counts share one layout.
    """

    def __init__(self, n_channels: int, cfg: EncoderConfig):
        super().__init__()
        self.n_channels = n_channels
        self.cfg = cfg
        self.depth_map = nn.Conv2d(n_channels, cfg.depth_extent, kernel_size=1)
        self.stem = nn.Sequential(nn.Conv3d(1, cfg.base_width, 3, padding=1),
                                  group_norm(cfg.base_width), nn.ReLU())
        widths = (cfg.base_width,) + cfg.level_widths
        self.blocks = nn.ModuleList(
            EncoderBlock(widths[i], widths[i + 1], cfg.level_strides[i], cfg.residual)
            for i in range(N_LEVELS))

    def forward(self, x_m: torch.Tensor) -> list[torch.Tensor]:
        """``x_m`` is ``[B, 1, C_max, H, W]`` (or ``[B, C_max, H, W]``); returns six maps."""
        if x_m.ndim == 5:
            x_m = x_m[:, 0]
        if x_m.ndim != 4 or x_m.shape[1] < self.n_channels:
            raise ValueError(f"expected [B, 1, >={self.n_channels}, H, W], got {tuple(x_m.shape)}")
        h, w = x_m.shape[-2:]
        t = self.cfg.total_stride
        if h % t or w % t:
            raise ValueError(f"spatial size {h}x{w} not divisible by cumulative stride {t}")
        x = self.depth_map(x_m[:, :self.n_channels]).unsqueeze(1)
        x = self.stem(x)
        levels = []
        for block in self.blocks:
            x = block(x)
            levels.append(x)
        return levels


def encode_all_gated(encoders: nn.ModuleList, inputs: torch.Tensor, mask: torch.Tensor
                     ) -> list[list[torch.Tensor]]:
    """Run every modality encoder and gate each level by the availability mask.

    Returns ``gated[m][l]``. Level ``l + 1`` is computed from the raw level ``l``;
    gating is applied to the outputs only.
    """
    if inputs.shape[1] != len(encoders) or mask.shape != (inputs.shape[0], len(encoders)):
        raise ValueError(f"mask {tuple(mask.shape)} incompatible with inputs {tuple(inputs.shape)}")
    gated = []
    for m, enc in enumerate(encoders):
        raw = enc(inputs[:, m])
        gated.append([gate(x, mask[:, m]) for x in raw])
    return gated
