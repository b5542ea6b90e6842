"""Independent oracles shared by several test modules."""

import numpy as np
import torch


def pixel_probe_iou(x_train, y_train, x_test, y_test, steps=300, lr=0.1):
    """Per-pixel logistic regression on the given channels; returns pooled test IoU.

    ``x_*`` are ``[n, C, H, W]``; ``y_*`` are ``[n, 1, H, W]``.
    """
    def flat(x):
        return torch.as_tensor(x, dtype=torch.float64).permute(0, 2, 3, 1).reshape(-1, x.shape[1])

    xtr, xte = flat(x_train), flat(x_test)
    ytr = torch.as_tensor(y_train, dtype=torch.float64).reshape(-1)
    mu, sd = xtr.mean(0), xtr.std(0).clamp_min(1e-8)
    xtr, xte = (xtr - mu) / sd, (xte - mu) / sd
    w = torch.zeros(xtr.shape[1], dtype=torch.float64, requires_grad=True)
    b = torch.zeros((), dtype=torch.float64, requires_grad=True)
    opt = torch.optim.Adam([w, b], lr=lr)
    for _ in range(steps):
        loss = torch.nn.functional.binary_cross_entropy_with_logits(xtr @ w + b, ytr)
        opt.zero_grad()
        loss.backward()
        opt.step()
    with torch.no_grad():
        pred = (xte @ w + b > 0).numpy()
    gt = np.asarray(y_test).reshape(-1) > 0.5
    union = np.logical_or(pred, gt).sum()
    return 1.0 if union == 0 else np.logical_and(pred, gt).sum() / union


def central_difference(f, param: torch.Tensor, index, step=1e-3) -> float:
    with torch.no_grad():
        orig = param[index].item()
        param[index] = orig + step
        up = float(f())
        param[index] = orig - step
        down = float(f())
        param[index] = orig
    return (up - down) / (2 * step)
