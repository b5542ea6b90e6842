"""Structured latent projection: shared latent, per-modality private latents, mask routing."""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from .availability import gate


@dataclass
class LatentBundle:
    z_sh: torch.Tensor
    z_pr: list[torch.Tensor]
    z_pr_routed: list[torch.Tensor]
    z6: torch.Tensor


def compose_decoder_input(z_sh: torch.Tensor, z_pr: list[torch.Tensor], mask: torch.Tensor):
    """Channel layout ``[shared, private_1, ..., private_M]`` with missing privates zeroed."""
    if mask.ndim != 2 or mask.shape[1] != len(z_pr):
        raise ValueError(f"mask of shape {tuple(mask.shape)} does not match {len(z_pr)} private latents")
    routed = [gate(z, mask[:, m]) for m, z in enumerate(z_pr)]
    return torch.cat([z_sh] + routed, dim=1), routed


class StructuredLatentProjection(nn.Module):
    def __init__(self, n_modalities: int, inter_channels: int, corr_channels: int, latent_channels: int,
                 shared_only: bool = False):
        super().__init__()
        self.shared_only = shared_only
        self.shared = nn.Conv3d(inter_channels, latent_channels, 1)
        self.private = nn.ModuleList() if shared_only else nn.ModuleList(
            nn.Conv3d(corr_channels, latent_channels, 1) for _ in range(n_modalities))

    @property
    def out_channels(self) -> int:
        return self.shared.out_channels * (1 + len(self.private))

    def project_shared(self, x_inter: torch.Tensor) -> torch.Tensor:
        return self.shared(x_inter)

    def project_private(self, z_corr: list[torch.Tensor]) -> list[torch.Tensor]:
        # takes the ungated correlation volumes; missingness is handled by routing only
        return [proj(z) for proj, z in zip(self.private, z_corr)]

    def forward(self, x_inter: torch.Tensor, z_corr: list[torch.Tensor], mask: torch.Tensor) -> LatentBundle:
        z_sh = self.project_shared(x_inter)
        if self.shared_only:
            return LatentBundle(z_sh, [], [], z_sh)
        z_pr = self.project_private(z_corr)
        z6, routed = compose_decoder_input(z_sh, z_pr, mask)
        return LatentBundle(z_sh, z_pr, routed, z6)
