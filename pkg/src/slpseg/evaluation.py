"""IoU / F1 per sample and the per-scenario sweep."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch

from .availability import enumerate_scenarios

THRESHOLD = 0.5


def _binary(a, name: str) -> np.ndarray:
    a = np.asarray(a)
    if not np.isin(a, (0, 1)).all():
        raise ValueError(f"{name} must be binary")
    return a.astype(bool)


def _counts(pred, gt):
    p, g = _binary(pred, "pred"), _binary(gt, "gt")
    if p.shape != g.shape:
        raise ValueError(f"pred {p.shape} and gt {g.shape} differ in shape")
    return np.logical_and(p, g).sum(), p.sum(), g.sum()


def iou(pred, gt) -> float:
    """|P & G| / |P | G|; 1.0 when both are empty."""
    inter, np_, ng = _counts(pred, gt)
    union = np_ + ng - inter
    return 1.0 if union == 0 else float(inter / union)


def f1(pred, gt) -> float:
    """2|P & G| / (|P| + |G|); 1.0 when both are empty."""
    inter, np_, ng = _counts(pred, gt)
    denom = np_ + ng
    return 1.0 if denom == 0 else float(2 * inter / denom)


def binarize(probs, threshold: float = THRESHOLD) -> np.ndarray:
    """Strict threshold: a probability of exactly ``threshold`` is negative."""
    return (np.asarray(probs) > threshold).astype(np.uint8)


@dataclass
class ScenarioRow:
    mask: tuple[int, ...]
    iou_mean: float
    iou_std: float
    f1_mean: float
    f1_std: float
    n: int
    per_sample_iou: list[float] = field(default_factory=list, repr=False)
    per_sample_f1: list[float] = field(default_factory=list, repr=False)


@dataclass
class ScenarioReport:
    rows: list[ScenarioRow]
    model_id: str = ""
    threshold: float = THRESHOLD

    def worst_iou(self) -> float:
        return min(r.iou_mean for r in self.rows)

    def to_json(self) -> dict:
        return {
            "model_id": self.model_id,
            "threshold": self.threshold,
            "std_kind": "per-sample standard deviation (ddof=0)",
            "rows": [{"scenario_mask": list(r.mask), "iou_mean": r.iou_mean, "iou_std": r.iou_std,
                      "f1_mean": r.f1_mean, "f1_std": r.f1_std, "n": r.n} for r in self.rows],
        }

    def write(self, out_dir: Path, stem: str = "report") -> tuple[Path, Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        jpath, cpath = out_dir / f"{stem}.json", out_dir / f"{stem}.csv"
        jpath.write_text(json.dumps(self.to_json(), indent=2))
        with open(cpath, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["scenario_mask", "iou_mean", "iou_std", "f1_mean", "f1_std", "n"])
            for r in self.rows:
                w.writerow(["".join(map(str, r.mask)), f"{r.iou_mean:.6f}", f"{r.iou_std:.6f}",
                            f"{r.f1_mean:.6f}", f"{r.f1_std:.6f}", r.n])
        return jpath, cpath


Predictor = Callable[[torch.Tensor, torch.Tensor], torch.Tensor]


@torch.no_grad()
def predict(model: Predictor, inputs: np.ndarray, mask_row: Sequence[int], batch_size: int = 16) -> np.ndarray:
    row = torch.as_tensor(mask_row, dtype=torch.int64)
    out = []
    for s in range(0, len(inputs), batch_size):
        x = torch.as_tensor(np.ascontiguousarray(inputs[s:s + batch_size]), dtype=torch.float32)
        out.append(torch.as_tensor(model(x, row.unsqueeze(0).expand(len(x), -1))).float().numpy())
    return np.concatenate(out)


def evaluate_scenarios(model: Predictor, inputs: np.ndarray, targets: np.ndarray, n_modalities: int,
                       threshold: float = THRESHOLD, scenarios=None, model_id: str = "") -> ScenarioReport:
    """Apply each availability pattern to the whole split and summarise per-sample IoU/F1."""
    if len(inputs) == 0:
        raise ValueError("evaluation split is empty")
    if isinstance(model, torch.nn.Module):
        model.eval()
    scenarios = enumerate_scenarios(n_modalities) if scenarios is None else [tuple(s) for s in scenarios]
    rows = []
    for sc in scenarios:
        if len(sc) != n_modalities:
            raise ValueError(f"scenario {sc} does not have {n_modalities} entries")
        pred = binarize(predict(model, inputs, sc), threshold)
        gt = np.asarray(targets).astype(np.uint8)
        ious = [iou(p, g) for p, g in zip(pred, gt)]
        f1s = [f1(p, g) for p, g in zip(pred, gt)]
        rows.append(ScenarioRow(tuple(sc), float(np.mean(ious)), float(np.std(ious)),
                                float(np.mean(f1s)), float(np.std(f1s)), len(ious), ious, f1s))
    return ScenarioReport(rows, model_id, threshold)
