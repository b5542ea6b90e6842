import pytest
import torch

from conftest import bitwise_equal, random_inputs
from slpseg.encoder import EncoderConfig, ModalityEncoder, encode_all_gated
from slpseg.errors import ConfigError
from slpseg.layers import zero_biases


def test_level_sizes_follow_strides():
    torch.manual_seed(0)
    enc = ModalityEncoder(3, EncoderConfig(level_widths=(4, 4, 8, 8, 8, 8), base_width=4, depth_extent=3))
    levels = enc(torch.randn(2, 1, 3, 64, 64))
    # stride arithmetic: 64 / cumprod(1, 2, 2, 2, 2, 1)
    assert [x.shape[-1] for x in levels] == [64, 32, 16, 8, 4, 4]
    assert [x.shape[1] for x in levels] == [4, 4, 8, 8, 8, 8]
    assert all(x.shape[2] == 3 for x in levels)
    assert all(x.shape[0] == 2 for x in levels)


def test_zero_input_zero_bias_gives_zero_pyramid():
    torch.manual_seed(0)
    enc = ModalityEncoder(2, EncoderConfig())
    zero_biases(enc)
    for x in enc(torch.zeros(2, 1, 2, 32, 32)):
        assert torch.count_nonzero(x) == 0


def test_encoder_deterministic_in_eval():
    torch.manual_seed(0)
    enc = ModalityEncoder(2, EncoderConfig()).eval()
    x = torch.randn(2, 1, 2, 32, 32)
    for a, b in zip(enc(x), enc(x)):
        assert torch.equal(a, b)


def test_indivisible_spatial_size_rejected():
    enc = ModalityEncoder(1, EncoderConfig())
    with pytest.raises(ValueError):
        enc(torch.zeros(1, 1, 1, 40, 40))


@pytest.mark.parametrize("kw", [dict(level_widths=(1, 2, 3)), dict(level_strides=(2, 2, 2, 2, 2, 1)),
                                dict(level_strides=(1, 2, 2, 2, 2, 2)), dict(depth_extent=0)])
def test_encoder_config_invariants(kw):
    with pytest.raises(ConfigError):
        EncoderConfig(**kw)


def test_alternative_deep_stride_placement():
    cfg = EncoderConfig(level_strides=(1, 2, 2, 2, 1, 2))
    assert cfg.level_sizes(32) == [32, 16, 8, 4, 4, 2]


def test_full_mask_gating_is_identity(tiny_model, tiny_cfg):
    x = random_inputs(tiny_cfg, 2)
    gated = encode_all_gated(tiny_model.encoders, x, torch.ones(2, 3, dtype=torch.int64))
    for m, enc in enumerate(tiny_model.encoders):
        for a, b in zip(enc(x[:, m]), gated[m]):
            assert torch.equal(a, b)


def test_all_missing_row_zeroes_sample(tiny_model, tiny_cfg):
    x = random_inputs(tiny_cfg, 2)
    mask = torch.tensor([[0, 0, 0], [1, 1, 1]])
    gated = encode_all_gated(tiny_model.encoders, x, mask)
    for levels in gated:
        for lvl in levels:
            assert torch.count_nonzero(lvl[0]) == 0
            assert torch.count_nonzero(lvl[1]) > 0


def test_masked_input_perturbation_invisible(tiny_model, tiny_cfg):
    x = random_inputs(tiny_cfg, 3)
    mask = torch.tensor([[1, 0, 1], [0, 1, 1], [1, 1, 0]])
    a = encode_all_gated(tiny_model.encoders, x, mask)
    y = x.clone()
    for b in range(3):
        for m in range(3):
            if mask[b, m] == 0:
                y[b, m] += 10 * torch.randn_like(y[b, m])
    b_ = encode_all_gated(tiny_model.encoders, y, mask)
    for la, lb in zip(a, b_):
        for u, v in zip(la, lb):
            assert bitwise_equal(u, v)


def test_gradient_flow_respects_mask(tiny_model, tiny_cfg):
    x = random_inputs(tiny_cfg, 2).requires_grad_(True)
    mask = torch.tensor([[1, 0, 1], [1, 1, 0]])
    gated = encode_all_gated(tiny_model.encoders, x, mask)
    loss = sum((lvl ** 2).sum() for levels in gated for lvl in levels)
    loss.backward()
    g = x.grad
    for b in range(2):
        for m in range(3):
            c = tiny_cfg.channels_per_modality[m]
            if mask[b, m]:
                assert torch.count_nonzero(g[b, m, :c]) > 0
            else:
                assert torch.count_nonzero(g[b, m]) == 0


def test_mask_mismatch_raises(tiny_model, tiny_cfg):
    with pytest.raises(ValueError):
        encode_all_gated(tiny_model.encoders, random_inputs(tiny_cfg, 2), torch.ones(2, 2, dtype=torch.int64))
