import numpy as np
import pytest
import torch

from slpseg.encoder import EncoderConfig
from slpseg.intra_attention import AttentionConfig
from slpseg.model import ModelConfig, build_model


def tiny_model_config(**overrides) -> ModelConfig:
    kw = dict(
        channels_per_modality=(2, 1, 1),
        tile_size=16,
        encoder=EncoderConfig(base_width=4, level_widths=(4, 4, 8, 8, 8, 8), depth_extent=2),
        attention=AttentionConfig(embed_dim=8, heads=2, n_layers=1),
        inter_channels=8,
        latent_channels=4,
        decoder_widths=(8, 8, 4, 4),
    )
    kw.update(overrides)
    return ModelConfig(**kw)


@pytest.fixture
def tiny_cfg():
    return tiny_model_config()


@pytest.fixture
def tiny_model(tiny_cfg):
    model = build_model(tiny_cfg, seed=0)
    model.eval()
    return model


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_inputs(cfg: ModelConfig, batch: int, seed: int = 0, dtype=torch.float32) -> torch.Tensor:
    g = torch.Generator().manual_seed(seed)
    c = max(cfg.channels_per_modality)
    return torch.randn(batch, cfg.n_modalities, c, cfg.tile_size, cfg.tile_size, generator=g, dtype=dtype)


def bitwise_equal(a: torch.Tensor, b: torch.Tensor) -> bool:
    return a.shape == b.shape and a.detach().numpy().tobytes() == b.detach().numpy().tobytes()


def tiny_bundle(n_tiles: int = 12, seed: int = 0):
    from slpseg.dataset import SyntheticConfig, generate_synthetic, normalize, split

    cfg = SyntheticConfig(n_tiles=n_tiles, tile_size=16, channels_per_modality=(2, 1, 1), seed=seed)
    bundle, _ = normalize(split(generate_synthetic(cfg), seed=seed))
    return bundle


ACCEPTANCE_LINES: list[str] = []


def record_criterion(number: int, title: str, ok: bool, detail: str) -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:2d} {title}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2])):
            terminalreporter.write_line(line)
