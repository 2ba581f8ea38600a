"""Dataset discovery, decoding, preprocessing, and train/validation splitting.

On disk a modality's dataset is a directory with `cancer/` and `normal/`
subdirectories of image files.  Scanning produces a manifest of record
references ordered lexicographically by path; manifests round-trip through
a headerless TSV so downstream steps never rescan.

Preprocessing is fixed per modality: decode (PNG/JPEG via Pillow, DICOM via
the bundled reader), bilinear resize to the modality's square target
resolution, then scale to [0,1] as v/255.  Splitting is stratified by label
and, when records carry a group id, keeps every group on one side.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .dicom import decode_dicom, to_png8
from .errors import DataError
from .modality import (
    CLASS_DIRS,
    LABEL_CANCER,
    LABEL_NAMES,
    LABEL_NORMAL,
    TARGET_RESOLUTION,
    Modality,
    parse_modality,
)

log = logging.getLogger(__name__)

_DICOM_SUFFIXES = {".dcm", ".dicom"}


@dataclass(frozen=True)
class RecordRef:
    """Manifest entry: one labeled image, not yet decoded."""

    id: str
    modality: Modality
    label: int
    path: str
    group_id: str | None = None


@dataclass(frozen=True)
class ImageRecord:
    """A decoded, preprocessed image ready for the feature extractor."""

    id: str
    modality: Modality
    label: int
    pixels: np.ndarray  # (H, W, 3) float64 in [0, 1]
    source_path: str
    group_id: str | None = None


@dataclass(frozen=True)
class DatasetManifest:
    modality: Modality
    records: tuple[RecordRef, ...] = field(default_factory=tuple)

    def __post_init__(self):
        seen = set()
        for record in self.records:
            if record.id in seen:
                raise DataError(f"duplicate record id in manifest: {record.id}")
            seen.add(record.id)
            if record.modality != self.modality:
                raise DataError(
                    f"record {record.id} is {record.modality}, "
                    f"manifest is {self.modality}"
                )

    def __len__(self) -> int:
        return len(self.records)

    @property
    def class_counts(self) -> dict[int, int]:
        counts = {LABEL_NORMAL: 0, LABEL_CANCER: 0}
        for record in self.records:
            counts[record.label] += 1
        return counts

    def labels(self) -> np.ndarray:
        return np.array([r.label for r in self.records], dtype=np.int64)


@dataclass(frozen=True)
class DatasetSplit:
    train: DatasetManifest
    validation: DatasetManifest
    seed: int
    ratio: float


def _probe_decodable(path: Path) -> None:
    if path.suffix.lower() in _DICOM_SUFFIXES:
        decode_dicom(path.read_bytes())
        return
    with Image.open(path) as img:
        img.load()


def scan_dataset(root_dir: str | Path, modality: Modality) -> DatasetManifest:
    """Build a manifest from `<root_dir>/{cancer,normal}/` image files.

    Ordering is lexicographic by path.  Undecodable files are skipped with
    a logged warning; a missing root or an empty class directory is fatal.
    """
    root = Path(root_dir)
    if not root.is_dir():
        raise DataError(f"dataset root not found: {root}")
    records: list[RecordRef] = []
    skipped = 0
    for class_name in sorted(CLASS_DIRS):
        class_dir = root / class_name
        if not class_dir.is_dir():
            raise DataError(f"missing class directory: {class_dir}")
        files = sorted(
            (p for p in class_dir.rglob("*") if p.is_file()),
            key=lambda p: p.as_posix(),
        )
        if not files:
            raise DataError(f"class directory empty: {class_dir}")
        label = CLASS_DIRS[class_name]
        for path in files:
            try:
                _probe_decodable(path)
            except Exception as exc:
                log.warning("skipping undecodable file %s: %s", path, exc)
                skipped += 1
                continue
            records.append(
                RecordRef(
                    id=path.relative_to(root).as_posix(),
                    modality=modality,
                    label=label,
                    path=str(path),
                )
            )
    if skipped:
        log.warning("scan of %s skipped %d undecodable file(s)", root, skipped)
    return DatasetManifest(modality=modality, records=tuple(records))


def write_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    """Write a headerless TSV: id, modality, label, path[, group_id]."""
    lines = []
    for r in manifest.records:
        fields = [r.id, str(r.modality), str(r.label), r.path]
        if r.group_id is not None:
            fields.append(r.group_id)
        lines.append("\t".join(fields))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


def read_manifest(path: str | Path) -> DatasetManifest:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"manifest not found: {path}")
    records: list[RecordRef] = []
    modality: Modality | None = None
    for lineno, line in enumerate(
        path.read_text(encoding="utf-8").splitlines(), start=1
    ):
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) not in (4, 5):
            raise DataError(
                f"{path}:{lineno}: expected 4 or 5 tab-separated fields, "
                f"got {len(fields)}"
            )
        try:
            mod = parse_modality(fields[1])
        except ValueError as exc:
            raise DataError(f"{path}:{lineno}: {exc}") from exc
        if fields[2] not in ("0", "1"):
            raise DataError(f"{path}:{lineno}: label must be 0 or 1, got {fields[2]!r}")
        if modality is None:
            modality = mod
        elif mod != modality:
            raise DataError(f"{path}:{lineno}: mixed modalities in one manifest")
        records.append(
            RecordRef(
                id=fields[0],
                modality=mod,
                label=int(fields[2]),
                path=fields[3],
                group_id=fields[4] if len(fields) == 5 else None,
            )
        )
    if modality is None:
        raise DataError(f"manifest is empty: {path}")
    return DatasetManifest(modality=modality, records=tuple(records))


def load_image(path: str | Path) -> np.ndarray:
    """Decode one file into an 8-bit (H, W, 3) array."""
    p = Path(path)
    if p.suffix.lower() in _DICOM_SUFFIXES:
        return to_png8(decode_dicom(p.read_bytes()))
    try:
        with Image.open(p) as img:
            return np.asarray(img.convert("RGB"), dtype=np.uint8)
    except (OSError, SyntaxError) as exc:
        raise DataError(f"cannot decode image {p}: {exc}") from exc


def resize_image(image: np.ndarray, modality: Modality) -> np.ndarray:
    """Bilinear rescale to the modality's square target resolution.

    Aspect ratio is not preserved.  Input already at the target size is
    returned as an unmodified copy, so repeated resizing is bit-exact.
    """
    arr = np.asarray(image)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise DataError(f"expected an (H, W, 3) image, got shape {arr.shape}")
    height, width = arr.shape[:2]
    if height == 0 or width == 0:
        raise DataError(f"cannot resize zero-dimension image (shape {arr.shape})")
    target = TARGET_RESOLUTION[modality]
    if (height, width) == (target, target):
        return np.array(arr, dtype=np.uint8, copy=True)
    resized = Image.fromarray(arr.astype(np.uint8), mode="RGB").resize(
        (target, target), Image.Resampling.BILINEAR
    )
    return np.asarray(resized, dtype=np.uint8)


def normalize_pixels(image: np.ndarray) -> np.ndarray:
    """Map 8-bit samples to [0, 1] as exactly v/255."""
    return np.asarray(image, dtype=np.float64) / 255.0


def load_pixels(path: str | Path, modality: Modality) -> np.ndarray:
    return normalize_pixels(resize_image(load_image(path), modality))


def load_record(ref: RecordRef) -> ImageRecord:
    return ImageRecord(
        id=ref.id,
        modality=ref.modality,
        label=ref.label,
        pixels=load_pixels(ref.path, ref.modality),
        source_path=ref.path,
        group_id=ref.group_id,
    )


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def _partition_counts(n: int, ratio: float) -> int:
    # train share, clamped so neither side of a class is empty
    return min(max(_round_half_up(ratio * n), 1), n - 1)


def _split_by_record(
    manifest: DatasetManifest, ratio: float, rng: np.random.Generator
) -> tuple[set[str], set[str]]:
    train_ids: set[str] = set()
    val_ids: set[str] = set()
    for label in (LABEL_NORMAL, LABEL_CANCER):
        members = [r.id for r in manifest.records if r.label == label]
        if len(members) < 2:
            raise DataError(
                f"cannot stratify: class {LABEL_NAMES[label]!r} has "
                f"{len(members)} record(s), need at least 2"
            )
        order = rng.permutation(len(members))
        n_train = _partition_counts(len(members), ratio)
        for position, index in enumerate(order):
            (train_ids if position < n_train else val_ids).add(members[index])
    return train_ids, val_ids


def _split_by_group(
    manifest: DatasetManifest, ratio: float, rng: np.random.Generator
) -> tuple[set[str], set[str]]:
    members: dict[str, list[RecordRef]] = {}
    key_order: list[str] = []
    for record in manifest.records:
        key = record.group_id if record.group_id is not None else f"solo:{record.id}"
        if key not in members:
            members[key] = []
            key_order.append(key)
        members[key].append(record)
    # majority label per group; an even split counts as cancer
    group_label = {}
    for key, group in members.items():
        cancer = sum(1 for r in group if r.label == LABEL_CANCER)
        group_label[key] = LABEL_CANCER if 2 * cancer >= len(group) else LABEL_NORMAL
    train_ids: set[str] = set()
    val_ids: set[str] = set()
    for label in (LABEL_NORMAL, LABEL_CANCER):
        keys = [k for k in key_order if group_label[k] == label]
        if len(keys) < 2:
            raise DataError(
                f"cannot stratify: class {LABEL_NAMES[label]!r} has "
                f"{len(keys)} group(s), need at least 2"
            )
        order = rng.permutation(len(keys))
        n_train = _partition_counts(len(keys), ratio)
        for position, index in enumerate(order):
            side = train_ids if position < n_train else val_ids
            for record in members[keys[index]]:
                side.add(record.id)
    return train_ids, val_ids


def split_dataset(
    manifest: DatasetManifest, ratio: float, seed: int
) -> DatasetSplit:
    """Stratified train/validation split, deterministic for a fixed seed.

    Each class is shuffled independently with the seeded generator
    (classes consumed in label order 0, 1) and the train side takes
    round(ratio * class_count) records, clamped so both sides stay
    non-empty.  When any record carries a group_id the same procedure
    runs over groups instead, so no group straddles the boundary.
    """
    if not manifest.records:
        raise DataError("cannot split an empty manifest")
    if not 0.0 < ratio < 1.0:
        raise ValueError(f"split ratio must lie in (0, 1), got {ratio}")
    rng = np.random.default_rng(seed)
    grouped = any(r.group_id is not None for r in manifest.records)
    if grouped:
        train_ids, val_ids = _split_by_group(manifest, ratio, rng)
    else:
        train_ids, val_ids = _split_by_record(manifest, ratio, rng)
    train = DatasetManifest(
        modality=manifest.modality,
        records=tuple(r for r in manifest.records if r.id in train_ids),
    )
    validation = DatasetManifest(
        modality=manifest.modality,
        records=tuple(r for r in manifest.records if r.id in val_ids),
    )
    return DatasetSplit(train=train, validation=validation, seed=seed, ratio=ratio)
