"""BCE training with random modality dropout, step-decayed Adam, checkpoints and k-fold plumbing."""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .availability import DropoutPolicy, sample_mask
from .checkpoint import load_checkpoint, optimizer_from_flat, optimizer_to_flat, save_checkpoint
from .dataset import DatasetBundle, kfold_indices
from .errors import ConfigError, TrainingDivergedError
from .model import ModelConfig, SegmentationModel, build_model

log = logging.getLogger(__name__)

BCE_EPS = 1e-7


@dataclass(frozen=True)
class TrainConfig:
    lr0: float = 1e-4
    batch_size: int = 8
    epochs: int = 70
    decay_factor: float = 0.91
    decay_every: int = 5
    betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    dropout_policy: DropoutPolicy = field(default_factory=DropoutPolicy)
    seed: int = 0
    folds: int = 5

    def __post_init__(self):
        object.__setattr__(self, "betas", tuple(self.betas))
        if isinstance(self.dropout_policy, dict):
            pol = dict(self.dropout_policy)
            if pol.get("fixed") is not None:
                pol["fixed"] = tuple(pol["fixed"])
            object.__setattr__(self, "dropout_policy", DropoutPolicy(**pol))
        if not self.lr0 > 0:
            raise ConfigError("training.lr0 must be > 0")
        if self.epochs < 1:
            raise ConfigError("training.epochs must be >= 1")
        if self.batch_size < 1 or self.decay_every < 1:
            raise ConfigError("training.batch_size and decay_every must be >= 1")
        if not 0 < self.decay_factor <= 1:
            raise ConfigError("training.decay_factor must lie in (0, 1]")

    def to_dict(self) -> dict:
        return json.loads(json.dumps(dataclasses.asdict(self)))


def bce_loss(probs: torch.Tensor, targets: torch.Tensor, eps: float = BCE_EPS) -> torch.Tensor:
    """Mean binary cross-entropy over all pixels and samples, probabilities clamped to [eps, 1-eps]."""
    if probs.shape != targets.shape:
        raise ValueError(f"probs {tuple(probs.shape)} and targets {tuple(targets.shape)} differ in shape")
    p = probs.clamp(eps, 1 - eps)
    return -(targets * torch.log(p) + (1 - targets) * torch.log1p(-p)).mean()


def lr_at(epoch: int, lr0: float = 1e-4, factor: float = 0.91, every: int = 5) -> float:
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    return lr0 * factor ** (epoch // every)


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    train_loss: float
    val_loss: float


@dataclass
class TrainResult:
    model: SegmentationModel
    history: list[EpochRecord]
    best_epoch: int
    best_state: dict
    checkpoint_dir: Path | None = None

    def losses(self) -> list[tuple[float, float]]:
        return [(r.train_loss, r.val_loss) for r in self.history]


def run_hash(model_cfg: ModelConfig, train_cfg: TrainConfig) -> str:
    """Identity of a training trajectory. The epoch budget is left out so a finished
    run can be resumed with a larger budget."""
    train = {k: v for k, v in train_cfg.to_dict().items() if k != "epochs"}
    blob = json.dumps({"model": model_cfg.to_dict(), "train": train}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _as_tensor(x) -> torch.Tensor:
    return torch.as_tensor(np.ascontiguousarray(x), dtype=torch.float32)


@torch.no_grad()
def evaluate_loss(model: SegmentationModel, inputs: np.ndarray, targets: np.ndarray,
                  mask_row=None, batch_size: int = 16) -> float:
    """Mean BCE under a fixed mask row (all modalities by default)."""
    if len(inputs) == 0:
        return float("nan")
    m = model.cfg.n_modalities
    row = torch.ones(m, dtype=torch.int64) if mask_row is None else torch.as_tensor(mask_row)
    total = 0.0
    for start in range(0, len(inputs), batch_size):
        x = _as_tensor(inputs[start:start + batch_size])
        y = _as_tensor(targets[start:start + batch_size])
        mask = row.unsqueeze(0).expand(len(x), -1)
        total += float(bce_loss(model(x, mask), y)) * len(x)
    return total / len(inputs)


def _save_state(path: Path, model, optimizer, epoch: int, rng: np.random.Generator,
                history, best, meta: dict) -> None:
    tensors = {f"model/{k}": v for k, v in model.state_dict().items()}
    opt_tensors, opt_extra = optimizer_to_flat(optimizer.state_dict())
    tensors.update(opt_tensors)
    tensors.update({f"best/{k}": v for k, v in best["state"].items()})
    meta = dict(meta, epoch=epoch, rng_state=rng.bit_generator.state, optimizer=opt_extra,
                history=[dataclasses.asdict(r) for r in history],
                best_epoch=best["epoch"], best_val=best["val"])
    save_checkpoint(path, tensors, meta)


def write_history(path: Path, history: list[EpochRecord]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "lr", "train_loss", "val_loss"])
        for r in history:
            w.writerow([r.epoch, repr(r.lr), repr(r.train_loss), repr(r.val_loss)])


def train(bundle: DatasetBundle, model_cfg: ModelConfig, cfg: TrainConfig, out_dir: Path | None = None,
          resume: Path | None = None, train_idx=None, val_idx=None, dataset_hash: str | None = None
          ) -> TrainResult:
    """Train with a freshly sampled availability mask per sample and batch.

    Writes ``last.ckpt`` (for resuming) every epoch and ``best.ckpt`` at the lowest
    full-mask validation loss when ``out_dir`` is given.
    """
    train_idx = bundle.split_indices["train"] if train_idx is None else np.asarray(train_idx)
    val_idx = bundle.split_indices.get("val", np.array([], int)) if val_idx is None else np.asarray(val_idx)
    if len(train_idx) == 0:
        raise ValueError("train split is empty")
    if bundle.n_modalities != model_cfg.n_modalities:
        raise ConfigError("model and dataset disagree on the number of modalities")

    model = build_model(model_cfg, seed=cfg.seed)
    optimizer = torch.optim.Adam(model.parameters(), lr=cfg.lr0, betas=cfg.betas, eps=cfg.adam_eps)
    rng = np.random.default_rng(cfg.seed)
    history: list[EpochRecord] = []
    best = {"epoch": -1, "val": math.inf, "state": {k: v.clone() for k, v in model.state_dict().items()}}
    start = 0
    meta = {"model_config": model_cfg.to_dict(), "train_config": cfg.to_dict(),
            "config_hash": run_hash(model_cfg, cfg), "dataset_hash": dataset_hash}

    if resume is not None:
        tensors, saved = load_checkpoint(resume)
        if saved["config_hash"] != meta["config_hash"]:
            raise ConfigError("resume checkpoint was produced with a different configuration")
        model.load_state_dict({k[6:]: v for k, v in tensors.items() if k.startswith("model/")})
        optimizer.load_state_dict(optimizer_from_flat(tensors, saved["optimizer"]))
        rng.bit_generator.state = saved["rng_state"]
        history = [EpochRecord(**r) for r in saved["history"]]
        best = {"epoch": saved["best_epoch"], "val": saved["best_val"],
                "state": {k[5:]: v for k, v in tensors.items() if k.startswith("best/")}}
        start = saved["epoch"]

    x_train, y_train = bundle.inputs[train_idx], bundle.targets[train_idx]
    x_val, y_val = bundle.inputs[val_idx], bundle.targets[val_idx]
    m = model_cfg.n_modalities
    for epoch in range(start, cfg.epochs):
        lr = lr_at(epoch, cfg.lr0, cfg.decay_factor, cfg.decay_every)
        for group in optimizer.param_groups:
            group["lr"] = lr
        model.train()
        order = rng.permutation(len(train_idx))
        total = 0.0
        for b, s in enumerate(range(0, len(order), cfg.batch_size)):
            sel = order[s:s + cfg.batch_size]
            x, y = _as_tensor(x_train[sel]), _as_tensor(y_train[sel])
            mask = torch.from_numpy(sample_mask(len(sel), m, cfg.dropout_policy, rng))
            loss = bce_loss(model(x, mask), y)
            if not torch.isfinite(loss):
                raise TrainingDivergedError(epoch, b, lr)
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            total += loss.item() * len(sel)
        model.eval()
        train_loss = total / len(order)
        val_loss = evaluate_loss(model, x_val, y_val)
        history.append(EpochRecord(epoch, lr, train_loss, val_loss))
        score = val_loss if len(val_idx) else train_loss
        if score < best["val"]:
            best = {"epoch": epoch, "val": score,
                    "state": {k: v.detach().clone() for k, v in model.state_dict().items()}}
        log.info("epoch %d lr %.3g train %.4f val %.4f", epoch, lr, train_loss, val_loss)
        if out_dir is not None:
            _save_state(Path(out_dir) / "last.ckpt", model, optimizer, epoch + 1, rng, history, best, meta)

    if out_dir is not None:
        out_dir = Path(out_dir)
        save_model(out_dir / "best.ckpt", model_cfg, best["state"], dict(meta, best_epoch=best["epoch"],
                                                                        best_val=best["val"]))
        write_history(out_dir / "history.csv", history)
    return TrainResult(model, history, best["epoch"], best["state"], Path(out_dir) if out_dir else None)


def save_model(path: Path, model_cfg: ModelConfig, state: dict, meta: dict | None = None) -> Path:
    meta = dict(meta or {}, model_config=model_cfg.to_dict())
    return save_checkpoint(path, {f"model/{k}": v for k, v in state.items()}, meta)


def load_model(path: Path) -> tuple[SegmentationModel, dict]:
    """Load the model weights from either a ``best.ckpt`` or a ``last.ckpt``."""
    tensors, meta = load_checkpoint(path)
    model = SegmentationModel(ModelConfig.from_dict(meta["model_config"]))
    model.load_state_dict({k[6:]: v for k, v in tensors.items() if k.startswith("model/")})
    model.eval()
    return model, meta


def cross_validate(bundle: DatasetBundle, model_cfg: ModelConfig, cfg: TrainConfig,
                   out_dir: Path | None = None) -> list[list[EpochRecord]]:
    """k-fold over train+val; the test split is never touched. Fold ``k`` trains with seed ``seed + k``."""
    pool = np.concatenate([bundle.split_indices["train"], bundle.split_indices.get("val", np.array([], int))])
    folds = kfold_indices(pool, cfg.folds, cfg.seed)
    histories = []
    for k, val_idx in enumerate(folds):
        train_idx = np.sort(np.concatenate([f for j, f in enumerate(folds) if j != k]))
        fold_cfg = dataclasses.replace(cfg, seed=cfg.seed + k)
        fold_dir = Path(out_dir) / f"fold{k}" if out_dir else None
        res = train(bundle, model_cfg, fold_cfg, fold_dir, train_idx=train_idx, val_idx=val_idx)
        histories.append(res.history)
    return histories
