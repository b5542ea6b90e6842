"""Modality availability masks: sampling, scenario enumeration and gating."""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch

from .errors import ConfigError

POLICY_MODES = ("uniform_nonempty", "full_only", "fixed")


@dataclass(frozen=True)
class DropoutPolicy:
    """How training masks are drawn.

    ``uniform_nonempty`` draws uniformly over the ``2**M - 1`` nonempty subsets,
    with ``full_probability`` of extra mass on the all-ones row.
    """

    mode: str = "uniform_nonempty"
    full_probability: float = 0.0
    fixed: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.mode not in POLICY_MODES:
            raise ConfigError(f"dropout_policy.mode: unknown mode {self.mode!r}")
        if not 0.0 <= self.full_probability <= 1.0:
            raise ConfigError("dropout_policy.full_probability must lie in [0, 1]")
        if self.mode == "fixed":
            if not self.fixed or any(v not in (0, 1) for v in self.fixed):
                raise ConfigError("dropout_policy.fixed must be a nonempty 0/1 row")
            if sum(self.fixed) == 0:
                raise ConfigError("dropout_policy.fixed must keep at least one modality")


def validate_mask(mask: np.ndarray, n_modalities: int | None = None) -> np.ndarray:
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise ValueError(f"mask must be [B, M], got shape {mask.shape}")
    if n_modalities is not None and mask.shape[1] != n_modalities:
        raise ValueError(f"mask has {mask.shape[1]} modalities, expected {n_modalities}")
    if not np.isin(mask, (0, 1)).all():
        raise ValueError("mask entries must be 0 or 1")
    if (mask.sum(axis=1) == 0).any():
        raise ValueError("mask contains an all-missing row")
    return mask.astype(np.int64)


def sample_mask(batch: int, n_modalities: int, policy: DropoutPolicy,
                rng: np.random.Generator) -> np.ndarray:
    """Draw a [batch, M] availability mask, one independent row per sample."""
    if batch < 1 or n_modalities < 1:
        raise ValueError("batch and n_modalities must be >= 1")
    if policy.mode == "full_only":
        return np.ones((batch, n_modalities), dtype=np.int64)
    if policy.mode == "fixed":
        row = np.asarray(policy.fixed, dtype=np.int64)
        if row.size != n_modalities:
            raise ValueError(f"fixed mask has {row.size} entries, expected {n_modalities}")
        return np.tile(row, (batch, 1))

    # subset codes 1 .. 2**M - 1; bit m set <=> modality m available
    codes = rng.integers(1, 2 ** n_modalities, size=batch)
    if policy.full_probability > 0:
        full = rng.random(batch) < policy.full_probability
        codes = np.where(full, 2 ** n_modalities - 1, codes)
    bits = (codes[:, None] >> np.arange(n_modalities)[None, :]) & 1
    return bits.astype(np.int64)


def enumerate_scenarios(n_modalities: int) -> list[tuple[int, ...]]:
    """All nonempty availability patterns, most modalities first, then lexicographic
    descending (so ``[1, 0]`` precedes ``[0, 1]``)."""
    if n_modalities < 1:
        raise ValueError("need at least one modality")
    rows = [r for r in itertools.product((1, 0), repeat=n_modalities) if any(r)]
    return sorted(rows, key=lambda r: -sum(r))


def gate(x: torch.Tensor, mask_column) -> torch.Tensor:
    """Zero the samples whose availability bit is 0; others pass through untouched.

    ``torch.where`` is used instead of multiplication so that masked rows are
    exact +0.0 and NaN/inf in masked inputs cannot leak.
    """
    keep = torch.as_tensor(mask_column, device=x.device)
    if keep.ndim != 1 or keep.shape[0] != x.shape[0]:
        raise ValueError(f"mask column of shape {tuple(keep.shape)} does not match batch {x.shape[0]}")
    keep = keep.bool().reshape((-1,) + (1,) * (x.ndim - 1))
    return torch.where(keep, x, torch.zeros((), dtype=x.dtype, device=x.device))


def parse_scenario(text: str) -> tuple[int, ...]:
    """Parse ``"1,0,1"`` into a scenario row."""
    try:
        row = tuple(int(v) for v in text.replace(" ", "").split(","))
    except ValueError as exc:
        raise ConfigError(f"scenario: cannot parse {text!r}") from exc
    if not row or any(v not in (0, 1) for v in row) or sum(row) == 0:
        raise ConfigError(f"scenario: {text!r} must be a nonempty 0/1 list")
    return row


def masks_to_json(mask: Sequence[Sequence[int]]) -> list[list[int]]:
    return [[int(v) for v in row] for row in mask]
