"""Multi-modal oral lesion classification.

One transfer-learning classifier per imaging modality (clinical
photographs, radiographs, histopathology slides), fused late by
weighting each model's class scores with its validation accuracy.
"""

from .errors import (
    ArtifactError,
    ConfigError,
    DataError,
    ModalfuseError,
    TrainingDivergedError,
)
from .modality import (
    LABEL_CANCER,
    LABEL_NAMES,
    LABEL_NORMAL,
    MODALITIES,
    TARGET_RESOLUTION,
    Modality,
)

__version__ = "0.1.0"

__all__ = [
    "ArtifactError",
    "ConfigError",
    "DataError",
    "LABEL_CANCER",
    "LABEL_NAMES",
    "LABEL_NORMAL",
    "MODALITIES",
    "Modality",
    "ModalfuseError",
    "TARGET_RESOLUTION",
    "TrainingDivergedError",
    "__version__",
]
