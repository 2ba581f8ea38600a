"""Exception types shared across the package.

The CLI maps these onto its documented exit codes, so new failure modes
should subclass the closest existing category.
"""


class ModalfuseError(Exception):
    """Base class for all package-specific failures."""


class ConfigError(ModalfuseError):
    """Invalid configuration file, unknown key, or bad CLI input."""


class DataError(ModalfuseError):
    """Invalid dataset layout, undecodable input, or shape mismatch."""


class TrainingDivergedError(ModalfuseError):
    """Loss or parameters became non-finite during training."""

    def __init__(self, epoch: int, batch: int, detail: str):
        self.epoch = epoch
        self.batch = batch
        super().__init__(f"training diverged at epoch {epoch}, batch {batch}: {detail}")


class ArtifactError(ModalfuseError):
    """Missing, corrupt, or inconsistent persisted model artifact."""
