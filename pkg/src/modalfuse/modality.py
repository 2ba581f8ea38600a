"""Imaging modalities and their fixed preprocessing targets."""

from enum import Enum


class Modality(str, Enum):
    CLINICAL = "clinical"
    RADIOLOGICAL = "radiological"
    HISTOPATHOLOGICAL = "histopathological"

    def __str__(self) -> str:
        return self.value


MODALITIES = (Modality.CLINICAL, Modality.RADIOLOGICAL, Modality.HISTOPATHOLOGICAL)

# Square input edge length fed to each modality's network.
TARGET_RESOLUTION = {
    Modality.CLINICAL: 200,
    Modality.RADIOLOGICAL: 150,
    Modality.HISTOPATHOLOGICAL: 150,
}

LABEL_NORMAL = 0
LABEL_CANCER = 1
LABEL_NAMES = {LABEL_NORMAL: "normal", LABEL_CANCER: "cancer"}

# Subdirectory names expected under <root>/<modality>/.
CLASS_DIRS = {"cancer": LABEL_CANCER, "normal": LABEL_NORMAL}


def parse_modality(text: str) -> Modality:
    """Parse a modality name, raising ValueError with the known names on failure."""
    try:
        return Modality(text.strip().lower())
    except ValueError:
        names = ", ".join(m.value for m in MODALITIES)
        raise ValueError(f"unknown modality {text!r} (expected one of: {names})") from None
