import torch
from torch import nn

from .layers import group_norm

ACTIVATIONS = {"relu": nn.ReLU, "identity": nn.Identity}


class LevelFusion(nn.Module):
    """Concatenate gated modality maps on channels, then 1x1x1 conv -> activation -> norm."""

    def __init__(self, in_widths, out_width: int, activation: str = "relu", norm: bool = True):
        super().__init__()
        self.in_widths = tuple(in_widths)
        self.proj = nn.Conv3d(sum(self.in_widths), out_width, kernel_size=1)
        self.act = ACTIVATIONS[activation]()
        self.norm = group_norm(out_width) if norm else nn.Identity()

    def forward(self, maps: list[torch.Tensor]) -> torch.Tensor:
        if len(maps) != len(self.in_widths):
            raise ValueError(f"expected {len(self.in_widths)} modality maps, got {len(maps)}")
        ref = maps[0].shape
        for x in maps[1:]:
            if x.shape[0] != ref[0] or x.shape[2:] != ref[2:]:
                raise ValueError(f"modality maps disagree in shape: {tuple(ref)} vs {tuple(x.shape)}")
        return self.norm(self.act(self.proj(torch.cat(maps, dim=1))))


class CrossModalFusion(nn.Module):
    """Independent fusion operator per pyramid level."""

    def __init__(self, n_modalities: int, level_widths):
        super().__init__()
        self.levels = nn.ModuleList(LevelFusion([w] * n_modalities, w) for w in level_widths)

    def forward(self, gated: list[list[torch.Tensor]]) -> list[torch.Tensor]:
        return [fuse([g[l] for g in gated]) for l, fuse in enumerate(self.levels)]
