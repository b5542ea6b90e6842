"""Synthetic multimodal segmentation data, splitting, normalization and persistence."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError

SPLITS = ("train", "val", "test")
ARRAY_MAGIC = b"SLPSARR1"


@dataclass(frozen=True)
class SyntheticConfig:
    n_tiles: int = 240
    tile_size: int = 32
    n_modalities: int = 3
    channels_per_modality: tuple[int, ...] = (3, 1, 2)
    informativeness: tuple[float, ...] = (1.0, 0.8, 0.9)
    noise_sigma: tuple[float, ...] = (0.3, 0.3, 0.3)
    # probability that a shape is visible to every modality; otherwise it is
    # visible to exactly one modality's region family
    shared_fraction: float = 0.3
    background_amplitude: float = 0.3
    min_coverage: float = 0.10
    max_coverage: float = 0.60
    seed: int = 0

    def __post_init__(self):
        for name in ("channels_per_modality", "informativeness", "noise_sigma"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        m = self.n_modalities
        if m < 1:
            raise ConfigError("dataset.n_modalities must be >= 1")
        if self.n_tiles < 1:
            raise ConfigError("dataset.n_tiles must be >= 1")
        if self.tile_size < 16 or self.tile_size % 16:
            raise ConfigError("dataset.tile_size must be a positive multiple of 16")
        for name in ("channels_per_modality", "informativeness", "noise_sigma"):
            if len(getattr(self, name)) != m:
                raise ConfigError(f"dataset.{name} needs one entry per modality ({m})")
        if any(c < 1 for c in self.channels_per_modality):
            raise ConfigError("dataset.channels_per_modality entries must be >= 1")
        if any(not 0.0 <= v <= 1.0 for v in self.informativeness):
            raise ConfigError("dataset.informativeness entries must lie in [0, 1]")
        if any(s < 0 for s in self.noise_sigma):
            raise ConfigError("dataset.noise_sigma entries must be >= 0")
        if not 0.0 <= self.shared_fraction <= 1.0:
            raise ConfigError("dataset.shared_fraction must lie in [0, 1]")
        if not 0.0 <= self.background_amplitude < 0.5:
            raise ConfigError("dataset.background_amplitude must lie in [0, 0.5)")
        if not 0.0 < self.min_coverage < self.max_coverage < 1.0:
            raise ConfigError("dataset coverage bounds must satisfy 0 < min < max < 1")

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in dataclasses.asdict(self).items()}

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class NormalizationStats:
    means: np.ndarray  # [M, C_max], zero for padded channels

    def to_json(self) -> list:
        return self.means.astype(float).tolist()


@dataclass
class DatasetBundle:
    inputs: np.ndarray   # [n, M, C_max, H, W] float32; channels >= C_m are zero padding
    targets: np.ndarray  # [n, 1, H, W] float32 in {0, 1}
    channels: tuple[int, ...]
    split_indices: dict[str, np.ndarray] = field(default_factory=dict)
    norm_stats: NormalizationStats | None = None
    config: SyntheticConfig | None = None

    @property
    def n_modalities(self) -> int:
        return self.inputs.shape[1]

    def subset(self, name: str) -> tuple[np.ndarray, np.ndarray]:
        idx = self.split_indices[name]
        return self.inputs[idx], self.targets[idx]


# -- generation ---------------------------------------------------------------

def _shapes_mask(rng: np.random.Generator, size: int) -> list[np.ndarray]:
    yy, xx = np.mgrid[0:size, 0:size]
    n_shapes = int(rng.integers(2, 6))
    shapes = []
    for _ in range(n_shapes):
        if rng.random() < 0.5:
            h, w = rng.integers(size // 8, size // 2, size=2)
            y0, x0 = rng.integers(0, size - h), rng.integers(0, size - w)
            s = (yy >= y0) & (yy < y0 + h) & (xx >= x0) & (xx < x0 + w)
        else:
            r = rng.uniform(size / 10, size / 4)
            cy, cx = rng.uniform(0, size, size=2)
            s = (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
        shapes.append(s)
    return shapes


def _background(rng: np.random.Generator, size: int, amplitude: float) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size] / size
    bg = np.zeros((size, size))
    for _ in range(3):
        fy, fx = rng.uniform(0.3, 1.5, size=2)
        phase = rng.uniform(0, 2 * np.pi)
        bg += np.sin(2 * np.pi * (fy * yy + fx * xx) + phase)
    bg = (bg - bg.min()) / max(bg.max() - bg.min(), 1e-12)
    return amplitude * bg


def _make_tile(cfg: SyntheticConfig, index: int):
    rng = np.random.default_rng([cfg.seed, index])
    size, m = cfg.tile_size, cfg.n_modalities
    for _ in range(1000):
        shapes = _shapes_mask(rng, size)
        target = np.any(shapes, axis=0)
        if cfg.min_coverage <= target.mean() <= cfg.max_coverage:
            break
    else:  # pragma: no cover - astronomically unlikely with the shape ranges above
        raise RuntimeError(f"could not draw a tile within coverage bounds (tile {index})")

    # family -1 is shared, otherwise the index of the one modality that sees it
    families = np.where(rng.random(len(shapes)) < cfg.shared_fraction, -1,
                        rng.integers(0, m, size=len(shapes)))
    bg = _background(rng, size, cfg.background_amplitude)
    c_max = max(cfg.channels_per_modality)
    x = np.zeros((m, c_max, size, size))
    for mod in range(m):
        seen = [s for s, f in zip(shapes, families) if f in (-1, mod)]
        visible = np.any(seen, axis=0) if seen else np.zeros((size, size), bool)
        for c in range(cfg.channels_per_modality[mod]):
            gain = 1.0 if c == 0 else rng.uniform(0.5, 1.0)
            bg_weight = 1.0 if c == 0 else rng.uniform(0.0, 1.0)
            noise = cfg.noise_sigma[mod] * rng.standard_normal((size, size))
            x[mod, c] = cfg.informativeness[mod] * gain * visible + bg_weight * bg + noise
    return x.astype(np.float32), target.astype(np.float32)[None]


def generate_synthetic(cfg: SyntheticConfig) -> DatasetBundle:
    """Build a deterministic bundle; tile ``i`` depends only on ``(seed, i)``.

    Each target is a union of rectangles and discs. Every shape is visible either
    to all modalities or to a single one, so no single modality sees the whole
    target unless ``shared_fraction`` is 1.
    """
    tiles = [_make_tile(cfg, i) for i in range(cfg.n_tiles)]
    inputs = np.stack([t[0] for t in tiles])
    targets = np.stack([t[1] for t in tiles])
    return DatasetBundle(inputs, targets, tuple(cfg.channels_per_modality), config=cfg)


# -- splitting / normalization ------------------------------------------------

def split_sizes(n: int, fractions: Sequence[float]) -> tuple[int, int, int]:
    if len(fractions) != 3 or any(f < 0 for f in fractions):
        raise ConfigError("split.fractions must be three nonnegative numbers")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigError(f"split.fractions must sum to 1, got {sum(fractions)!r}")
    n_train = int(round(fractions[0] * n))
    n_val = min(int(round(fractions[1] * n)), n - n_train)
    return n_train, n_val, n - n_train - n_val


def split(bundle: DatasetBundle, fractions=(0.72, 0.08, 0.20), seed: int = 0) -> DatasetBundle:
    n = bundle.inputs.shape[0]
    sizes = split_sizes(n, fractions)
    perm = np.random.default_rng(seed).permutation(n)
    bounds = np.cumsum((0,) + sizes)
    indices = {name: np.sort(perm[bounds[i]:bounds[i + 1]]) for i, name in enumerate(SPLITS)}
    return dataclasses.replace(bundle, split_indices=indices)


def compute_stats(bundle: DatasetBundle) -> NormalizationStats:
    train = bundle.split_indices.get("train")
    if train is None or len(train) == 0:
        raise ValueError("normalization needs a nonempty train split")
    means = bundle.inputs[train].astype(np.float64).mean(axis=(0, 3, 4))
    for m, c in enumerate(bundle.channels):
        means[m, c:] = 0.0
    return NormalizationStats(means)


def normalize(bundle: DatasetBundle, stats: NormalizationStats | None = None
              ) -> tuple[DatasetBundle, NormalizationStats]:
    """Subtract per-modality, per-channel means estimated on the train split only."""
    if stats is None:
        stats = compute_stats(bundle)
    means = stats.means.astype(np.float32)[None, :, :, None, None]
    inputs = bundle.inputs - means
    return dataclasses.replace(bundle, inputs=inputs, norm_stats=stats), stats


def patchify(image: np.ndarray, patch_size: int) -> np.ndarray:
    """Cut ``[..., H, W]`` into non-overlapping row-major patches, dropping remainders."""
    h, w = image.shape[-2:]
    if h < patch_size or w < patch_size:
        raise ValueError(f"image {h}x{w} is smaller than patch {patch_size}")
    ny, nx = h // patch_size, w // patch_size
    crop = image[..., :ny * patch_size, :nx * patch_size]
    lead = crop.shape[:-2]
    crop = crop.reshape(lead + (ny, patch_size, nx, patch_size))
    k = len(lead)
    order = (k, k + 2) + tuple(range(k)) + (k + 1, k + 3)
    return crop.transpose(order).reshape((ny * nx,) + lead + (patch_size, patch_size))


def kfold_indices(indices: np.ndarray, folds: int, seed: int) -> list[np.ndarray]:
    if folds < 2:
        raise ConfigError("training.folds must be >= 2")
    if len(indices) < folds:
        raise ValueError(f"{len(indices)} tiles cannot be split into {folds} folds")
    perm = np.random.default_rng(seed).permutation(np.asarray(indices))
    return [np.sort(part) for part in np.array_split(perm, folds)]


# -- persistence --------------------------------------------------------------
#
# Split file layout (all integers little-endian):
#   8 bytes   magic  b"SLPSARR1"
#   uint32    number of arrays
#   per array: uint32 ndim, ndim x uint64 dims, uint8 dtype code (0 = float32),
#              then prod(dims) float32 values in C order
# Each split file holds two arrays: inputs [n, M, C_max, H, W] and targets [n, 1, H, W].

def write_arrays(path: Path, arrays: Sequence[np.ndarray]) -> None:
    with open(path, "wb") as fh:
        fh.write(ARRAY_MAGIC)
        fh.write(struct.pack("<I", len(arrays)))
        for arr in arrays:
            arr = np.ascontiguousarray(arr, dtype="<f4")
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            fh.write(struct.pack("<B", 0))
            fh.write(arr.tobytes())


def read_arrays(path: Path) -> list[np.ndarray]:
    data = Path(path).read_bytes()
    if data[:8] != ARRAY_MAGIC:
        raise ValueError(f"{path}: not an array file")
    (count,), pos = struct.unpack_from("<I", data, 8), 12
    out = []
    for _ in range(count):
        (ndim,) = struct.unpack_from("<I", data, pos)
        dims = struct.unpack_from(f"<{ndim}Q", data, pos + 4)
        pos += 4 + 8 * ndim
        (code,) = struct.unpack_from("<B", data, pos)
        if code != 0:
            raise ValueError(f"{path}: unsupported dtype code {code}")
        pos += 1
        n = int(np.prod(dims)) if ndim else 1
        out.append(np.frombuffer(data, dtype="<f4", count=n, offset=pos).reshape(dims).astype(np.float32))
        pos += 4 * n
    return out


def save_bundle(bundle: DatasetBundle, directory: Path) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for name in SPLITS:
        idx = bundle.split_indices[name]
        write_arrays(directory / f"{name}.bin", [bundle.inputs[idx], bundle.targets[idx]])
    meta = {
        "format": "slpseg-dataset/1",
        "config": bundle.config.to_dict() if bundle.config else None,
        "config_hash": bundle.config.digest() if bundle.config else None,
        "channels": list(bundle.channels),
        "n_tiles": int(bundle.inputs.shape[0]),
        "splits": {k: v.tolist() for k, v in bundle.split_indices.items()},
        "norm_stats": bundle.norm_stats.to_json() if bundle.norm_stats else None,
        "files": {name: f"{name}.bin" for name in SPLITS},
    }
    (directory / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
    return directory


def load_bundle(directory: Path) -> DatasetBundle:
    directory = Path(directory)
    meta = json.loads((directory / "meta.json").read_text())
    n, splits = meta["n_tiles"], {k: np.asarray(v, dtype=np.int64) for k, v in meta["splits"].items()}
    inputs = targets = None
    for name in SPLITS:
        x, y = read_arrays(directory / meta["files"][name])
        if inputs is None:
            inputs = np.zeros((n,) + x.shape[1:], np.float32)
            targets = np.zeros((n,) + y.shape[1:], np.float32)
        inputs[splits[name]] = x
        targets[splits[name]] = y
    cfg = SyntheticConfig(**meta["config"]) if meta.get("config") else None
    stats = NormalizationStats(np.asarray(meta["norm_stats"])) if meta.get("norm_stats") else None
    return DatasetBundle(inputs, targets, tuple(meta["channels"]), splits, stats, cfg)


def dataset_hash(directory: Path) -> str | None:
    return json.loads((Path(directory) / "meta.json").read_text()).get("config_hash")
