"""Probe-based conditional-entropy estimates and exact discrete alignment-penalty checks."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import ConfigError

FEATURE_SOURCES = ("decoder_input_z6", "shared_only")
PMF_TOL = 1e-12


# -- exact discrete quantities ------------------------------------------------

@dataclass
class DiscreteJoint:
    """pmf over ``(X_1, ..., X_M, Y)``; the last axis is the target."""

    pmf: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.pmf, dtype=np.float64)
        if p.ndim < 2:
            raise ValueError("joint needs at least one input variable and the target")
        if (p < 0).any() or abs(p.sum() - 1.0) > PMF_TOL:
            raise ValueError(f"invalid pmf: min {p.min():.3g}, total {p.sum()!r}")
        self.pmf = p

    @property
    def n_inputs(self) -> int:
        return self.pmf.ndim - 1

    @property
    def alphabet_sizes(self) -> tuple[int, ...]:
        return self.pmf.shape


def _entropy(p: np.ndarray) -> float:
    p = p[p > 0]
    return float(-(p * np.log(p)).sum())


def exact_conditional_entropy(joint: DiscreteJoint, conditioning: Sequence[int] = ()) -> float:
    """H(Y | X_S) in nats by enumeration, ``S`` given as input-variable indices."""
    keep = sorted(set(conditioning))
    if any(not 0 <= i < joint.n_inputs for i in keep):
        raise ValueError(f"conditioning indices {conditioning} out of range")
    drop = tuple(i for i in range(joint.n_inputs) if i not in keep)
    p_sy = joint.pmf.sum(axis=drop) if drop else joint.pmf
    return _entropy(p_sy.ravel()) - _entropy(p_sy.sum(axis=-1).ravel())


def mutual_information(joint: DiscreteJoint, i: int) -> float:
    return exact_conditional_entropy(joint, ()) - exact_conditional_entropy(joint, (i,))


def alignment_penalty(joint: DiscreteJoint) -> float:
    """Spread between the most and least target-informative single modality."""
    mi = [mutual_information(joint, i) for i in range(joint.n_inputs)]
    return max(mi) - min(mi)


Encoder = Callable[[int], int] | Sequence[int]


def _lookup(enc: Encoder, x: int) -> int:
    return int(enc(x)) if callable(enc) else int(enc[x])


def aligned_target_joint(joint: DiscreteJoint, encoders: Sequence[Encoder]) -> np.ndarray:
    """Joint of (Z, Y) where ``Z = g_i(X_i)`` for every i; fails unless the encoded
    features coincide on every support point."""
    if len(encoders) != joint.n_inputs:
        raise ValueError(f"need {joint.n_inputs} encoders, got {len(encoders)}")
    table: dict[int, np.ndarray] = {}
    for idx in zip(*np.nonzero(joint.pmf.sum(axis=-1))):
        codes = {_lookup(g, x) for g, x in zip(encoders, idx)}
        if len(codes) != 1:
            raise ValueError(f"encoders are not sample-wise aligned at {tuple(int(i) for i in idx)}: {codes}")
        z = codes.pop()
        table[z] = table.get(z, 0.0) + joint.pmf[idx]
    return np.stack([table[z] for z in sorted(table)])


@dataclass
class AlignmentResult:
    lhs_gap: float
    delta_p: float
    holds: bool


def alignment_penalty_demo(joint: DiscreteJoint, encoders: Sequence[Encoder], tol: float = 1e-9) -> AlignmentResult:
    """Compare H(Y|Z,...,Z) - H(Y|X_1..X_M) with the alignment penalty."""
    pzy = aligned_target_joint(joint, encoders)
    h_aligned = _entropy(pzy.ravel()) - _entropy(pzy.sum(axis=-1))
    h_full = exact_conditional_entropy(joint, range(joint.n_inputs))
    lhs = h_aligned - h_full
    dp = alignment_penalty(joint)
    return AlignmentResult(lhs, dp, bool(lhs >= dp - tol))


def random_aligned_instance(rng: np.random.Generator, n_inputs: int, kind: str
                            ) -> tuple[DiscreteJoint, list[list[int]]]:
    """Random binary-alphabet joint with encoders whose outputs coincide sample-wise.

    ``constant``: dense joint, every encoder maps to 0.
    ``copy``: each X_i is a copy or complement of one latent bit C; g_i undoes the
    complement so that every Z_i equals C.
    """
    shape = (2,) * n_inputs + (2,)
    if kind == "constant":
        pmf = rng.dirichlet(np.ones(2 ** (n_inputs + 1))).reshape(shape)
        return DiscreteJoint(pmf), [[0, 0] for _ in range(n_inputs)]
    if kind == "copy":
        flips = rng.integers(0, 2, size=n_inputs)
        p_cy = rng.dirichlet(np.ones(4)).reshape(2, 2)
        pmf = np.zeros(shape)
        for c in range(2):
            xs = tuple(int(c ^ f) for f in flips)
            pmf[xs] = p_cy[c]
        return DiscreteJoint(pmf), [[int(f), int(1 - f)] for f in flips]
    raise ValueError(f"unknown instance kind {kind!r}")


SWEEP_COLUMNS = ("instance", "kind", "n_inputs", "lhs_gap", "delta_p", "holds")


def theorem_sweep(n_instances: int, seed: int = 0) -> list[dict]:
    rng = np.random.default_rng(seed)
    rows = []
    for i in range(n_instances):
        kind = "constant" if rng.random() < 0.5 else "copy"
        m = int(rng.integers(2, 5))
        joint, enc = random_aligned_instance(rng, m, kind)
        res = alignment_penalty_demo(joint, enc)
        rows.append({"instance": i, "kind": kind, "n_inputs": m, "lhs_gap": res.lhs_gap,
                     "delta_p": res.delta_p, "holds": res.holds})
    return rows


def write_sweep(path: Path, rows: list[dict]) -> Path:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=SWEEP_COLUMNS)
        w.writeheader()
        for r in rows:
            w.writerow({**r, "lhs_gap": repr(r["lhs_gap"]), "delta_p": repr(r["delta_p"]),
                        "holds": str(r["holds"]).lower()})
    return Path(path)


# -- probe estimator ------------------------------------------------------------

@dataclass(frozen=True)
class ProbeConfig:
    steps: int = 500
    lr: float = 1e-2
    feature_source: str = "decoder_input_z6"
    seed: int = 0

    def __post_init__(self):
        if self.steps < 1:
            raise ConfigError("probe.steps must be >= 1")
        if self.feature_source not in FEATURE_SOURCES:
            raise ConfigError(f"probe.feature_source must be one of {FEATURE_SOURCES}")


@torch.no_grad()
def extract_features(model, inputs: np.ndarray, mask_row: Sequence[int],
                     source: str = "decoder_input_z6", batch_size: int = 16) -> torch.Tensor:
    """Decoder-input volumes ``[N, C, D, H, W]`` for every sample under one fixed scenario."""
    if source not in FEATURE_SOURCES:
        raise ValueError(f"unknown feature source {source!r}")
    model.eval()
    row = torch.as_tensor(mask_row, dtype=torch.int64)
    feats = []
    for s in range(0, len(inputs), batch_size):
        x = torch.as_tensor(np.ascontiguousarray(inputs[s:s + batch_size]), dtype=torch.float32)
        lat = model.forward_all(x, row.unsqueeze(0).expand(len(x), -1)).latents
        feats.append(lat.z6 if source == "decoder_input_z6" else lat.z_sh)
    return torch.cat(feats)


def _planar(features: torch.Tensor) -> torch.Tensor:
    f = torch.as_tensor(features, dtype=torch.float32)
    if f.ndim == 5:  # fold the depth axis into channels
        f = f.flatten(1, 2)
    if f.ndim != 4:
        raise ValueError(f"features must be [N, C, (D,) H, W], got {tuple(f.shape)}")
    return f


def resize_targets(targets, size) -> torch.Tensor:
    t = torch.as_tensor(np.asarray(targets), dtype=torch.float32)
    if t.ndim == 3:
        t = t.unsqueeze(1)
    return F.interpolate(t, size=tuple(size), mode="nearest")


def per_sample_bce(logits: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
    """Pixelwise BCE averaged over each sample's positions, in nats."""
    return F.binary_cross_entropy_with_logits(logits, targets, reduction="none").flatten(1).mean(1)


class LinearProbe(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.conv = nn.Conv2d(channels, 1, kernel_size=1)
        self.register_buffer("mean", torch.zeros(1, channels, 1, 1))
        self.register_buffer("scale", torch.ones(1, channels, 1, 1))

    def forward(self, f):
        return self.conv((f - self.mean) / self.scale)


def fit_probe(features, targets, cfg: ProbeConfig) -> LinearProbe:
    f = _planar(features)
    y = resize_targets(targets, f.shape[-2:])
    gen_state = torch.random.get_rng_state()
    torch.manual_seed(cfg.seed)
    probe = LinearProbe(f.shape[1])
    torch.random.set_rng_state(gen_state)
    # per-channel standardisation is an affine reparametrisation of the same 1x1 conv
    probe.mean.copy_(f.mean(dim=(0, 2, 3), keepdim=True))
    probe.scale.copy_(f.std(dim=(0, 2, 3), keepdim=True).clamp_min(1e-6))
    opt = torch.optim.Adam(probe.parameters(), lr=cfg.lr)
    for _ in range(cfg.steps):
        loss = per_sample_bce(probe(f), y).mean()
        if not torch.isfinite(loss):
            raise FloatingPointError("probe training diverged")
        opt.zero_grad()
        loss.backward()
        opt.step()
    return probe


@torch.no_grad()
def score_probe(probe: LinearProbe, features, targets) -> float:
    f = _planar(features)
    y = resize_targets(targets, f.shape[-2:])
    h = float(per_sample_bce(probe(f), y).mean())
    if not np.isfinite(h):
        raise FloatingPointError("probe produced a non-finite entropy estimate")
    return h


def probe_entropy(train_features, train_targets, test_features, test_targets, cfg: ProbeConfig = ProbeConfig()) -> float:
    """Fit a 1x1 conv probe on train features, report mean per-sample BCE on test features."""
    probe = fit_probe(train_features, train_targets, cfg)
    return score_probe(probe, test_features, test_targets)


@dataclass
class GapReport:
    scenarios: list[tuple[int, ...]]
    h_base: list[float]
    h_slp: list[float]
    gaps: list[float] = field(default_factory=list)

    def to_json(self) -> dict:
        return {"units": "nats", "rows": [
            {"scenario_mask": list(s), "h_baseline": hb, "h_slp": hs, "delta_p": g}
            for s, hb, hs, g in zip(self.scenarios, self.h_base, self.h_slp, self.gaps)]}

    def write(self, path: Path) -> Path:
        Path(path).write_text(json.dumps(self.to_json(), indent=2))
        return Path(path)


def information_gap(h_base: Sequence[tuple[Sequence[int], float]],
                    h_slp: Sequence[tuple[Sequence[int], float]]) -> GapReport:
    """Per-scenario ``H_baseline - H_slp``; positive means the structured representation
    leaves less uncertainty about the target."""
    sb = [tuple(s) for s, _ in h_base]
    ss = [tuple(s) for s, _ in h_slp]
    if sb != ss:
        raise ValueError(f"scenario order differs: {sb} vs {ss}")
    hb = [float(h) for _, h in h_base]
    hs = [float(h) for _, h in h_slp]
    return GapReport(sb, hb, hs, [b - s for b, s in zip(hb, hs)])


def scenario_entropies(model, train_x, train_y, test_x, test_y, scenarios, cfg: ProbeConfig
                       ) -> list[tuple[tuple[int, ...], float]]:
    """One probe per scenario, trained on train-split features and scored on the test split."""
    out = []
    for sc in scenarios:
        ftr = extract_features(model, train_x, sc, cfg.feature_source)
        fte = extract_features(model, test_x, sc, cfg.feature_source)
        out.append((tuple(sc), probe_entropy(ftr, train_y, fte, test_y, cfg)))
    return out
