class ConfigError(ValueError):
    """Invalid configuration; the CLI maps it to exit code 2."""


class TrainingDivergedError(RuntimeError):
    """Loss became NaN/inf during training."""

    def __init__(self, epoch: int, batch: int, lr: float):
        self.epoch, self.batch, self.lr = epoch, batch, lr
        super().__init__(f"non-finite loss at epoch {epoch}, batch {batch} (lr={lr:.3g})")
