"""Training-time image augmentation.

Each modality has a fixed policy: clinical photographs get horizontal and
vertical flips plus small rotations, radiographs get horizontal flips only,
histopathology slides get both flips and no rotation.  Flips fire
independently with probability 0.5; rotation angles are drawn from a
continuous uniform over the symmetric range.  Augmentation is applied on
the fly to training batches only.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .modality import Modality

ROTATION_LIMIT_DEG = 11.0


@dataclass(frozen=True)
class AugmentationPolicy:
    """Flip switches and a symmetric rotation half-range in degrees.

    rotation_deg == 0 disables rotation; otherwise angles come from
    uniform(-rotation_deg, +rotation_deg).
    """

    horizontal_flip: bool
    vertical_flip: bool
    rotation_deg: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.rotation_deg <= ROTATION_LIMIT_DEG:
            raise ValueError(
                f"rotation_deg must lie in [0, {ROTATION_LIMIT_DEG}], "
                f"got {self.rotation_deg}"
            )

    @property
    def enabled(self) -> bool:
        return self.horizontal_flip or self.vertical_flip or self.rotation_deg > 0.0


_POLICIES = {
    Modality.CLINICAL: AugmentationPolicy(
        horizontal_flip=True, vertical_flip=True, rotation_deg=ROTATION_LIMIT_DEG
    ),
    Modality.RADIOLOGICAL: AugmentationPolicy(
        horizontal_flip=True, vertical_flip=False, rotation_deg=0.0
    ),
    Modality.HISTOPATHOLOGICAL: AugmentationPolicy(
        horizontal_flip=True, vertical_flip=True, rotation_deg=0.0
    ),
}


def policy_for(modality: Modality) -> AugmentationPolicy:
    return _POLICIES[modality]


def h_flip(image: np.ndarray) -> np.ndarray:
    """Mirror columns."""
    return np.ascontiguousarray(np.asarray(image)[:, ::-1])


def v_flip(image: np.ndarray) -> np.ndarray:
    """Mirror rows."""
    return np.ascontiguousarray(np.asarray(image)[::-1])


def rotate(image: np.ndarray, deg: float) -> np.ndarray:
    """Rotate in-plane by `deg` with bilinear resampling.

    Output keeps the input shape; out-of-bounds pixels replicate the
    nearest edge; values are clipped back to [0, 1].  rotate(x, 0) is a
    bit-exact copy.
    """
    arr = np.asarray(image, dtype=np.float64)
    if deg == 0.0:
        return arr.copy()
    out = ndimage.rotate(
        arr, angle=deg, axes=(1, 0), reshape=False, order=1, mode="nearest"
    )
    return np.clip(out, 0.0, 1.0)


def draw_angle(policy: AugmentationPolicy, rng: np.random.Generator) -> float | None:
    """Sample a rotation angle, or None when the policy has no rotation."""
    if policy.rotation_deg <= 0.0:
        return None
    return float(rng.uniform(-policy.rotation_deg, policy.rotation_deg))


def apply_augmentation(
    image: np.ndarray, policy: AugmentationPolicy, rng: np.random.Generator
) -> np.ndarray:
    """Randomly transform one training image under the policy.

    Draw order is fixed (horizontal flip, vertical flip, angle), with a
    draw consumed only for enabled features, so a given (image, policy,
    seed) triple always yields the same output.
    """
    out = np.asarray(image)
    if policy.horizontal_flip and rng.random() < 0.5:
        out = h_flip(out)
    if policy.vertical_flip and rng.random() < 0.5:
        out = v_flip(out)
    angle = draw_angle(policy, rng)
    if angle is not None:
        out = rotate(out, angle)
    if out is image:
        out = np.array(image, copy=True)
    return out
