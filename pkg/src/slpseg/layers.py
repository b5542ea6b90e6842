import math

import torch
from torch import nn


def group_norm(channels: int, max_groups: int = 4) -> nn.GroupNorm:
    """Per-sample normalization; never mixes statistics across the batch."""
    return nn.GroupNorm(math.gcd(channels, max_groups), channels)


def conv1x1x1(cin: int, cout: int) -> nn.Conv3d:
    return nn.Conv3d(cin, cout, kernel_size=1)


def zero_biases(module: nn.Module) -> None:
    with torch.no_grad():
        for name, p in module.named_parameters():
            if name.endswith("bias"):
                p.zero_()
