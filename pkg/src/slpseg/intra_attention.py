"""Per-modality tokenization and pre-norm multi-head self-attention."""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .errors import ConfigError


@dataclass(frozen=True)
class AttentionConfig:
    embed_dim: int = 64
    heads: int = 4
    n_layers: int = 2
    patch: int = 1
    mlp_ratio: int = 2

    def __post_init__(self):
        if self.embed_dim % self.heads:
            raise ConfigError("attention.embed_dim must be divisible by attention.heads")
        if min(self.embed_dim, self.heads, self.patch, self.mlp_ratio) < 1 or self.n_layers < 0:
            raise ConfigError("attention sizes must be positive")


@dataclass
class TokenSequence:
    tokens: torch.Tensor           # [B, N, C_t]
    grid: tuple[int, int, int]     # volume grid (D_t, H_t, W_t) the tokens came from
    patch: int

    @property
    def token_grid(self) -> tuple[int, int, int]:
        return tuple(g // self.patch for g in self.grid)


def check_grid(grid, patch: int) -> None:
    if any(g % patch for g in grid):
        raise ValueError(f"patch size {patch} does not tile grid {tuple(grid)}")


def patch_flatten(volume: torch.Tensor, patch: int) -> torch.Tensor:
    """``[B, C, D, H, W]`` -> ``[B, N, P^3 C]`` with patches in row-major (d, h, w) order."""
    b, c, d, h, w = volume.shape
    check_grid((d, h, w), patch)
    p = patch
    x = volume.reshape(b, c, d // p, p, h // p, p, w // p, p)
    x = x.permute(0, 2, 4, 6, 3, 5, 7, 1)
    return x.reshape(b, (d // p) * (h // p) * (w // p), p ** 3 * c)


def volume_to_tokens(volume: torch.Tensor, patch: int = 1) -> torch.Tensor:
    """Flatten a volume's grid into tokens; cells within a patch are averaged."""
    if patch > 1:
        volume = F.avg_pool3d(volume, patch)
    return volume.flatten(2).transpose(1, 2)


def tokens_to_volume(tokens: torch.Tensor, grid, patch: int = 1) -> torch.Tensor:
    """Inverse of :func:`volume_to_tokens`; each token fills its whole patch."""
    check_grid(grid, patch)
    tg = [g // patch for g in grid]
    b, n, c = tokens.shape
    if n != tg[0] * tg[1] * tg[2]:
        raise ValueError(f"{n} tokens cannot fill token grid {tuple(tg)}")
    vol = tokens.transpose(1, 2).reshape(b, c, *tg)
    if patch > 1:
        vol = vol.repeat_interleave(patch, 2).repeat_interleave(patch, 3).repeat_interleave(patch, 4)
    return vol


class Tokenizer(nn.Module):
    """1x1x1 projection to the embedding width, P^3 patch flatten, linear token map, plus
    a learnable positional embedding."""

    def __init__(self, in_channels: int, grid, cfg: AttentionConfig):
        super().__init__()
        check_grid(grid, cfg.patch)
        self.grid = tuple(grid)
        self.patch = cfg.patch
        n = math.prod(grid) // cfg.patch ** 3
        self.proj = nn.Conv3d(in_channels, cfg.embed_dim, kernel_size=1)
        self.token_map = nn.Linear(cfg.patch ** 3 * cfg.embed_dim, cfg.embed_dim)
        self.pos = nn.Parameter(torch.zeros(n, cfg.embed_dim))
        nn.init.trunc_normal_(self.pos, std=0.02)

    def forward(self, x: torch.Tensor) -> TokenSequence:
        if tuple(x.shape[2:]) != self.grid:
            raise ValueError(f"tokenizer built for grid {self.grid}, got {tuple(x.shape[2:])}")
        patches = patch_flatten(self.proj(x), self.patch)
        return TokenSequence(self.token_map(patches) + self.pos, self.grid, self.patch)


class TransformerLayer(nn.Module):
    """``U = F + MSA(LN(F))``, ``Z = U + MLP(LN(U))``."""

    def __init__(self, dim: int, heads: int, mlp_ratio: int = 2):
        super().__init__()
        self.heads = heads
        self.ln1 = nn.LayerNorm(dim)
        self.qkv = nn.Linear(dim, 3 * dim)
        self.out = nn.Linear(dim, dim)
        self.ln2 = nn.LayerNorm(dim)
        self.mlp = nn.Sequential(nn.Linear(dim, mlp_ratio * dim), nn.GELU(),
                                 nn.Linear(mlp_ratio * dim, dim))

    def attention(self, x: torch.Tensor):
        """Return (multi-head output before the residual, attention weights [B, L, N, N])."""
        b, n, c = x.shape
        dk = c // self.heads
        q, k, v = self.qkv(self.ln1(x)).reshape(b, n, 3, self.heads, dk).permute(2, 0, 3, 1, 4)
        weights = torch.softmax(q @ k.transpose(-1, -2) / math.sqrt(dk), dim=-1)
        heads = (weights @ v).transpose(1, 2).reshape(b, n, c)
        return self.out(heads), weights

    def forward(self, x: torch.Tensor, return_attention: bool = False):
        msa, weights = self.attention(x)
        u = x + msa
        z = u + self.mlp(self.ln2(u))
        return (z, weights) if return_attention else z


class TransformerStack(nn.Module):
    def __init__(self, dim: int, heads: int, n_layers: int, mlp_ratio: int = 2):
        super().__init__()
        self.layers = nn.ModuleList(TransformerLayer(dim, heads, mlp_ratio) for _ in range(n_layers))

    def forward(self, x: torch.Tensor, return_attention: bool = False):
        maps = []
        for layer in self.layers:
            x, w = layer(x, return_attention=True)
            maps.append(w)
        return (x, maps) if return_attention else x


class IntraModalAttention(nn.Module):
    def __init__(self, in_channels: int, grid, cfg: AttentionConfig):
        super().__init__()
        self.tokenizer = Tokenizer(in_channels, grid, cfg)
        self.transformer = TransformerStack(cfg.embed_dim, cfg.heads, cfg.n_layers, cfg.mlp_ratio)

    def forward(self, x6_m: torch.Tensor, return_attention: bool = False):
        seq = self.tokenizer(x6_m)
        z, maps = self.transformer(seq.tokens, return_attention=True)
        out = TokenSequence(z, seq.grid, seq.patch)
        return (out, maps) if return_attention else out
