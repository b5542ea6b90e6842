"""Pixel-wise inter-modal correlation and the multimodal token transformer."""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import nn

from .availability import gate
from .intra_attention import (TokenSequence, TransformerStack, tokens_to_volume,
                              volume_to_tokens)


@dataclass
class CorrelationOutputs:
    z_corr: list[torch.Tensor]        # ungated, one [B, C_t, D, H, W] per modality
    z_corr_gated: list[torch.Tensor]
    alpha: torch.Tensor               # [M_target, M_source, B, C_t, D, H, W]
    x_inter: torch.Tensor | None = None


class QKVProjection(nn.Module):
    """One 1x1x1 conv per modality, split three ways into Q, K, V."""

    def __init__(self, n_modalities: int, dim: int):
        super().__init__()
        self.convs = nn.ModuleList(nn.Conv3d(dim, 3 * dim, 1) for _ in range(n_modalities))

    def forward(self, seqs: list[TokenSequence]):
        out = []
        for conv, seq in zip(self.convs, seqs):
            if getattr(seq, "grid", None) is None:
                raise ValueError("token sequence carries no grid for the inverse reshape")
            vol = tokens_to_volume(seq.tokens, seq.grid, seq.patch)
            out.append(tuple(conv(vol).chunk(3, dim=1)))
        return out


def correlate(qkv, mask: torch.Tensor | None = None, renormalize_over_available: bool = False):
    """Softmax over source modalities of ``Q_m * K_j / sqrt(M)`` at every element.

    Returns ``(z_corr list, alpha)``. With ``renormalize_over_available`` the softmax
    is restricted to the sources available for each sample; by default every source
    takes part.
    """
    q = torch.stack([t[0] for t in qkv])
    k = torch.stack([t[1] for t in qkv])
    v = torch.stack([t[2] for t in qkv])
    n_mod = q.shape[0]
    scores = q.unsqueeze(1) * k.unsqueeze(0) / math.sqrt(n_mod)  # [m, j, ...]
    if renormalize_over_available and mask is not None:
        avail = mask.t().bool().reshape(1, n_mod, -1, *([1] * (q.ndim - 2)))
        # keep at least the target itself if a sample has no available source
        none = ~avail.any(dim=1, keepdim=True)
        eye = torch.eye(n_mod, dtype=torch.bool, device=q.device).reshape(n_mod, n_mod, *([1] * (q.ndim - 1)))
        avail = avail | (none & eye)
        scores = scores.masked_fill(~avail, float("-inf"))
    alpha = torch.softmax(scores, dim=1)
    z_corr = (alpha * v.unsqueeze(0)).sum(dim=1)
    return list(z_corr.unbind(0)), alpha


def gate_and_fuse_tokens(seqs: list[TokenSequence], z_corr: list[torch.Tensor], mask: torch.Tensor):
    """Gate each correlation volume by its own modality bit and add it to the token stream."""
    gated = [gate(zc, mask[:, m]) for m, zc in enumerate(z_corr)]
    fused = [s.tokens + volume_to_tokens(g, s.patch) for s, g in zip(seqs, gated)]
    return fused, gated


class MultimodalFusion(nn.Module):
    """Joint transformer over the M fused token streams plus the fused deep feature.

    The inverse reshape averages the M + 1 aligned streams back onto a single grid.
    """

    def __init__(self, n_modalities: int, f6_channels: int, n_tokens: int, dim: int,
                 heads: int, n_layers: int, out_channels: int, mlp_ratio: int = 2):
        super().__init__()
        self.n_modalities = n_modalities
        self.n_tokens = n_tokens
        self.fuse_proj = nn.Conv3d(f6_channels, dim, 1)
        self.pos = nn.Parameter(torch.zeros((n_modalities + 1) * n_tokens, dim))
        nn.init.trunc_normal_(self.pos, std=0.02)
        self.transformer = TransformerStack(dim, heads, n_layers, mlp_ratio)
        self.dec_proj = nn.Conv3d(dim, out_channels, 1)

    def forward(self, fused_tokens: list[torch.Tensor], f6: torch.Tensor, grid, patch: int):
        if len(fused_tokens) != self.n_modalities:
            raise ValueError(f"expected {self.n_modalities} token streams, got {len(fused_tokens)}")
        deep = volume_to_tokens(self.fuse_proj(f6), patch)
        streams = list(fused_tokens) + [deep]
        if any(s.shape[1] != self.n_tokens for s in streams):
            raise ValueError(f"all streams must carry {self.n_tokens} tokens, got {[s.shape[1] for s in streams]}")
        u = torch.cat(streams, dim=1) + self.pos
        u = self.transformer(u)
        b, _, c = u.shape
        merged = u.reshape(b, self.n_modalities + 1, self.n_tokens, c).mean(dim=1)
        return self.dec_proj(tokens_to_volume(merged, grid, patch))
