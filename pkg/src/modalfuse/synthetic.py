"""Synthetic separable datasets for tests and smoke experiments.

Cancer-labeled images are bright (mean intensity around 0.85), normal ones
dark (around 0.15), with mild pixel noise.  Any working pipeline separates
the two classes quickly, which makes saturation a meaningful check.
Source images are written at non-target sizes so the resize step is
genuinely exercised.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .modality import MODALITIES, Modality
from .seeding import rng_for

# deliberate non-target (height, width) per modality
SOURCE_SIZES = {
    Modality.CLINICAL: (230, 240),
    Modality.RADIOLOGICAL: (170, 180),
    Modality.HISTOPATHOLOGICAL: (160, 140),
}

_CLASS_BANDS = {"cancer": (0.75, 0.95), "normal": (0.05, 0.25)}


def make_synthetic_modality(
    root: str | Path, modality: Modality, per_class: int = 35, seed: int = 0
) -> Path:
    """Write `<root>/<modality>/{cancer,normal}/img_*.png`; returns the modality dir."""
    modality_dir = Path(root) / str(modality)
    height, width = SOURCE_SIZES[modality]
    for class_name, (lo, hi) in _CLASS_BANDS.items():
        class_dir = modality_dir / class_name
        class_dir.mkdir(parents=True, exist_ok=True)
        for i in range(per_class):
            rng = rng_for(seed, f"synthetic:{modality}:{class_name}:{i}")
            base = rng.uniform(lo, hi)
            pixels = base + rng.normal(0.0, 0.02, size=(height, width, 3))
            as_bytes = np.clip(np.rint(pixels * 255.0), 0, 255).astype(np.uint8)
            Image.fromarray(as_bytes, mode="RGB").save(
                class_dir / f"img_{i:03d}.png"
            )
    return modality_dir


def make_synthetic_dataset(
    root: str | Path, per_class: int = 35, seed: int = 0
) -> dict[Modality, Path]:
    """All three modalities under one root; layout matches scan_dataset."""
    return {
        modality: make_synthetic_modality(root, modality, per_class, seed)
        for modality in MODALITIES
    }
