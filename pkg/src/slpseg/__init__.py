"""Multimodal binary segmentation robust to missing modalities via structured latent projection."""

from .availability import DropoutPolicy, enumerate_scenarios, gate, sample_mask
from .dataset import SyntheticConfig, generate_synthetic, normalize, patchify, split
from .model import ModelConfig, SegmentationModel, build_model
from .training import TrainConfig, bce_loss, lr_at, train

__version__ = "0.1.0"
