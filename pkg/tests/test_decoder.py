import numpy as np
import pytest
import torch

from conftest import bitwise_equal, random_inputs, tiny_model_config
from helpers import central_difference
from slpseg.availability import enumerate_scenarios
from slpseg.decoder import SegmentationDecoder
from slpseg.model import build_model
from slpseg.training import bce_loss


def _skips(widths, size, depth=1, batch=1):
    # f1 .. f4 at full, /2, /4, /8 resolution
    return [torch.randn(batch, w, depth, size // 2 ** i, size // 2 ** i) for i, w in enumerate(widths)]


def test_output_resolution_restored():
    dec = SegmentationDecoder(6, (4, 4, 8, 8))
    pred = dec(_skips((4, 4, 8, 8), 64, depth=2), torch.randn(1, 6, 2, 4, 4))
    assert pred.probs.shape == (1, 1, 64, 64)


def test_zero_logits_give_half():
    dec = SegmentationDecoder(2, (1, 1, 1, 1), stage_widths=(2, 2, 2, 2))
    with torch.no_grad():
        dec.head.weight.zero_()
        dec.head.bias.zero_()
    pred = dec(_skips((1, 1, 1, 1), 16), torch.randn(1, 2, 1, 1, 1))
    assert torch.all(pred.probs == 0.5)


def test_probabilities_open_interval():
    torch.manual_seed(0)
    dec = SegmentationDecoder(2, (1, 1, 1, 1), stage_widths=(2, 2, 2, 2))
    pred = dec(_skips((1, 1, 1, 1), 16), torch.randn(1, 2, 1, 1, 1))
    assert torch.all(pred.probs > 0) and torch.all(pred.probs < 1)


def test_skip_mismatch_raises():
    dec = SegmentationDecoder(2, (1, 1, 1, 1))
    skips = _skips((1, 1, 1, 1), 16)
    skips[2] = torch.randn(1, 1, 1, 5, 5)
    with pytest.raises(ValueError):
        dec(skips, torch.randn(1, 2, 1, 1, 1))


def test_masked_content_does_not_leak(tiny_model, tiny_cfg):
    x = random_inputs(tiny_cfg, 2, seed=1)
    for sc in enumerate_scenarios(3):
        if all(sc):
            continue
        mask = torch.tensor([sc] * 2)
        noisy = x.clone()
        for m, bit in enumerate(sc):
            if not bit:
                noisy[:, m] = 100 * torch.randn_like(noisy[:, m])
        with torch.no_grad():
            assert bitwise_equal(tiny_model(x, mask), tiny_model(noisy, mask))


def test_output_shape_independent_of_mask(tiny_model, tiny_cfg):
    x = random_inputs(tiny_cfg, 2)
    with torch.no_grad():
        shapes = {tuple(tiny_model(x, torch.tensor([sc] * 2)).shape) for sc in enumerate_scenarios(3)}
    assert shapes == {(2, 1, 16, 16)}


def test_end_to_end_finite_difference():
    cfg = tiny_model_config(channels_per_modality=(2, 1))
    model = build_model(cfg, seed=0).double()
    x = random_inputs(cfg, 2, seed=3, dtype=torch.float64)
    y = (torch.rand(2, 1, 16, 16, generator=torch.Generator().manual_seed(4)) > 0.5).double()
    mask = torch.ones(2, 2, dtype=torch.int64)

    def loss():
        return bce_loss(model(x, mask), y)

    model.zero_grad()
    loss().backward()
    rng = np.random.default_rng(0)
    params = [p for p in model.parameters() if p.requires_grad]
    checked = 0
    for k in rng.permutation(len(params)):
        p = params[k]
        idx = tuple(int(rng.integers(s)) for s in p.shape)
        analytic = p.grad[idx].item()
        if abs(analytic) < 1e-6:
            continue
        numeric = central_difference(loss, p, idx, step=1e-6)
        assert abs(numeric - analytic) / max(abs(numeric), abs(analytic)) <= 2e-2
        checked += 1
        if checked == 5:
            break
    assert checked == 5
