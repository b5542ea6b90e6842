"""End-to-end multimodal segmentation network with structured latent projection."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field

import torch
from torch import nn

from .correlation import (CorrelationOutputs, MultimodalFusion, QKVProjection, correlate,
                          gate_and_fuse_tokens)
from .decoder import Prediction, SegmentationDecoder
from .encoder import EncoderConfig, ModalityEncoder, encode_all_gated
from .errors import ConfigError
from .fusion import CrossModalFusion
from .intra_attention import AttentionConfig, IntraModalAttention, TokenSequence
from .slp import LatentBundle, StructuredLatentProjection

VARIANTS = ("slp", "baseline")


@dataclass(frozen=True)
class ModelConfig:
    channels_per_modality: tuple[int, ...] = (3, 1, 2)
    tile_size: int = 32
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    attention: AttentionConfig = field(default_factory=AttentionConfig)
    multimodal_layers: int = 1
    inter_channels: int = 64
    latent_channels: int = 32
    decoder_widths: tuple[int, ...] = (64, 32, 16, 16)
    variant: str = "slp"
    renormalize_over_available: bool = False

    def __post_init__(self):
        object.__setattr__(self, "channels_per_modality", tuple(self.channels_per_modality))
        object.__setattr__(self, "decoder_widths", tuple(self.decoder_widths))
        if isinstance(self.encoder, dict):
            object.__setattr__(self, "encoder", EncoderConfig(**self.encoder))
        if isinstance(self.attention, dict):
            object.__setattr__(self, "attention", AttentionConfig(**self.attention))
        if self.variant not in VARIANTS:
            raise ConfigError(f"model.variant must be one of {VARIANTS}, got {self.variant!r}")
        if not self.channels_per_modality:
            raise ConfigError("model needs at least one modality")
        if self.tile_size % self.encoder.total_stride:
            raise ConfigError("tile_size must be divisible by the encoder's cumulative stride")
        if len(self.decoder_widths) != 4:
            raise ConfigError("model.decoder_widths needs four entries")
        grid = self.token_grid
        if any(g % self.attention.patch for g in grid):
            raise ConfigError(f"attention.patch {self.attention.patch} does not tile grid {grid}")

    @property
    def n_modalities(self) -> int:
        return len(self.channels_per_modality)

    @property
    def token_grid(self) -> tuple[int, int, int]:
        s = self.encoder.level_sizes(self.tile_size)[-1]
        return (self.encoder.depth_extent, s, s)

    @property
    def n_tokens(self) -> int:
        d, h, w = self.token_grid
        return d * h * w // self.attention.patch ** 3

    def to_dict(self) -> dict:
        return json.loads(json.dumps(dataclasses.asdict(self)))

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


@dataclass
class ForwardOutputs:
    prediction: Prediction
    fused: list[torch.Tensor]
    gated: list[list[torch.Tensor]]
    intra: list[TokenSequence]
    intra_attention: list[list[torch.Tensor]]
    correlation: CorrelationOutputs
    latents: LatentBundle

    @property
    def probs(self):
        return self.prediction.probs

    @property
    def logits(self):
        return self.prediction.logits


class SegmentationModel(nn.Module):
    """Encoders -> per-level fusion -> intra-modal transformers -> inter-modal correlation
    -> multimodal transformer -> structured latent projection -> decoder.

    ``variant="baseline"`` feeds the decoder the shared latent alone.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        m, enc, att = cfg.n_modalities, cfg.encoder, cfg.attention
        grid = cfg.token_grid
        self.encoders = nn.ModuleList(ModalityEncoder(c, enc) for c in cfg.channels_per_modality)
        self.fusion = CrossModalFusion(m, enc.level_widths)
        self.intra = nn.ModuleList(IntraModalAttention(enc.level_widths[-1], grid, att) for _ in range(m))
        self.qkv = QKVProjection(m, att.embed_dim)
        self.multimodal = MultimodalFusion(m, enc.level_widths[-1], cfg.n_tokens, att.embed_dim, att.heads,
                                           cfg.multimodal_layers, cfg.inter_channels, att.mlp_ratio)
        self.slp = StructuredLatentProjection(m, cfg.inter_channels, att.embed_dim, cfg.latent_channels,
                                              shared_only=cfg.variant == "baseline")
        self.decoder = SegmentationDecoder(self.slp.out_channels, enc.level_widths, cfg.decoder_widths)

    def _check(self, inputs: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        cfg = self.cfg
        if inputs.ndim != 5 or inputs.shape[1] != cfg.n_modalities:
            raise ValueError(f"inputs must be [B, {cfg.n_modalities}, C, H, W], got {tuple(inputs.shape)}")
        mask = torch.as_tensor(mask, device=inputs.device)
        if mask.ndim == 1:
            mask = mask.unsqueeze(0).expand(inputs.shape[0], -1)
        if tuple(mask.shape) != (inputs.shape[0], cfg.n_modalities):
            raise ValueError(f"mask shape {tuple(mask.shape)} does not match batch/modalities")
        return mask.to(torch.int64)

    def forward_all(self, inputs: torch.Tensor, mask) -> ForwardOutputs:
        mask = self._check(inputs, mask)
        gated = encode_all_gated(self.encoders, inputs, mask)
        fused = self.fusion(gated)

        intra, intra_maps = [], []
        for attn, g in zip(self.intra, gated):
            seq, maps = attn(g[-1], return_attention=True)
            intra.append(seq)
            intra_maps.append(maps)

        qkv = self.qkv(intra)
        z_corr, alpha = correlate(qkv, mask, self.cfg.renormalize_over_available)
        fused_tokens, z_corr_gated = gate_and_fuse_tokens(intra, z_corr, mask)
        x_inter = self.multimodal(fused_tokens, fused[-1], self.cfg.token_grid, self.cfg.attention.patch)
        corr = CorrelationOutputs(z_corr, z_corr_gated, alpha, x_inter)

        latents = self.slp(x_inter, z_corr, mask)
        # f5 is computed and fused but the decoder does not consume it
        prediction = self.decoder(fused[:4], latents.z6)
        return ForwardOutputs(prediction, fused, gated, intra, intra_maps, corr, latents)

    def forward(self, inputs: torch.Tensor, mask) -> torch.Tensor:
        """Return probabilities ``[B, 1, H, W]``."""
        return self.forward_all(inputs, mask).probs

    def decoder_input(self, inputs: torch.Tensor, mask) -> torch.Tensor:
        return self.forward_all(inputs, mask).latents.z6


def build_model(cfg: ModelConfig, seed: int = 0) -> SegmentationModel:
    torch.manual_seed(seed)
    return SegmentationModel(cfg)
