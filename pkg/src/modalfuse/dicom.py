"""Single-frame DICOM decoding and 8-bit PNG-style windowing.

Only the subset needed for this pipeline is implemented: Part-10 files
(128-byte preamble + "DICM") carrying one uncompressed grayscale or RGB
frame in Implicit or Explicit VR Little Endian.  Anything else — compressed
or big-endian transfer syntaxes, multi-frame objects, undefined-length
elements — is rejected with an error naming the offender rather than
guessed at.

Decoding applies the modality rescale (slope * stored + intercept) when
present and flips MONOCHROME1 data so that larger sample values are always
brighter.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import DataError

IMPLICIT_VR_LE = "1.2.840.10008.1.2"
EXPLICIT_VR_LE = "1.2.840.10008.1.2.1"
_SUPPORTED_SYNTAXES = {IMPLICIT_VR_LE, EXPLICIT_VR_LE}

# VRs that use the 4-byte length form (with 2 reserved bytes) in explicit VR.
_LONG_VRS = {b"OB", b"OW", b"OF", b"SQ", b"UT", b"UN"}

_UNDEFINED_LENGTH = 0xFFFFFFFF

# Tags the decoder interprets.  (group, element) -> name.
_TAG_TRANSFER_SYNTAX = (0x0002, 0x0010)
_TAG_SAMPLES_PER_PIXEL = (0x0028, 0x0002)
_TAG_PHOTOMETRIC = (0x0028, 0x0004)
_TAG_PLANAR_CONFIG = (0x0028, 0x0006)
_TAG_NUMBER_OF_FRAMES = (0x0028, 0x0008)
_TAG_ROWS = (0x0028, 0x0010)
_TAG_COLUMNS = (0x0028, 0x0011)
_TAG_BITS_ALLOCATED = (0x0028, 0x0100)
_TAG_PIXEL_REPRESENTATION = (0x0028, 0x0103)
_TAG_RESCALE_INTERCEPT = (0x0028, 0x1052)
_TAG_RESCALE_SLOPE = (0x0028, 0x1053)
_TAG_PIXEL_DATA = (0x7FE0, 0x0010)


class _Reader:
    """Sequential little-endian element reader over a byte buffer."""

    def __init__(self, data: bytes, offset: int = 0):
        self.data = data
        self.pos = offset

    def remaining(self) -> int:
        return len(self.data) - self.pos

    def take(self, n: int) -> bytes:
        if self.remaining() < n:
            raise DataError("truncated DICOM stream")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def peek_group(self) -> int:
        if self.remaining() < 2:
            return -1
        return struct.unpack_from("<H", self.data, self.pos)[0]

    def read_element(self, explicit: bool) -> tuple[tuple[int, int], bytes]:
        group, element = struct.unpack("<HH", self.take(4))
        if explicit:
            vr = self.take(2)
            if vr in _LONG_VRS:
                self.take(2)  # reserved
                (length,) = struct.unpack("<I", self.take(4))
            else:
                (length,) = struct.unpack("<H", self.take(2))
        else:
            (length,) = struct.unpack("<I", self.take(4))
        if length == _UNDEFINED_LENGTH:
            raise DataError(
                f"unsupported undefined-length element ({group:04X},{element:04X})"
            )
        return (group, element), self.take(length)


def _parse_file_meta(reader: _Reader) -> str:
    """Consume the group-0002 file meta elements and return the transfer syntax UID."""
    syntax = None
    while reader.peek_group() == 0x0002:
        tag, value = reader.read_element(explicit=True)
        if tag == _TAG_TRANSFER_SYNTAX:
            syntax = value.rstrip(b"\x00 ").decode("ascii")
    if syntax is None:
        raise DataError("DICOM file meta lacks a transfer syntax UID")
    return syntax


def _parse_dataset(reader: _Reader, explicit: bool) -> dict[tuple[int, int], bytes]:
    elements: dict[tuple[int, int], bytes] = {}
    while reader.remaining() >= 8:
        tag, value = reader.read_element(explicit)
        elements[tag] = value
    return elements


def _ushort(elements: dict, tag: tuple[int, int], default: int | None = None) -> int | None:
    raw = elements.get(tag)
    if raw is None:
        return default
    if len(raw) < 2:
        raise DataError(f"element ({tag[0]:04X},{tag[1]:04X}) too short for US value")
    return struct.unpack_from("<H", raw, 0)[0]


def _number(elements: dict, tag: tuple[int, int], default: float) -> float:
    raw = elements.get(tag)
    if raw is None:
        return default
    text = raw.rstrip(b"\x00 ").decode("ascii").strip()
    if not text:
        return default
    return float(text)


def decode_dicom(raw: bytes) -> np.ndarray:
    """Decode one single-frame DICOM file into a float64 sample raster.

    Returns (rows, cols) for grayscale input or (rows, cols, 3) for RGB.
    Rescale slope/intercept are applied; MONOCHROME1 rasters are remapped
    with max - v so higher output always means brighter.

    Raises DataError for non-DICOM input, unsupported transfer syntaxes,
    multi-frame objects, or a missing pixel data element.
    """
    if len(raw) < 132 or raw[128:132] != b"DICM":
        raise DataError("not a DICOM part-10 stream (missing DICM magic)")
    reader = _Reader(raw, offset=132)
    syntax = _parse_file_meta(reader)
    if syntax not in _SUPPORTED_SYNTAXES:
        raise DataError(f"unsupported transfer syntax {syntax}")
    elements = _parse_dataset(reader, explicit=(syntax == EXPLICIT_VR_LE))

    frames_raw = elements.get(_TAG_NUMBER_OF_FRAMES)
    if frames_raw is not None:
        frames = int(frames_raw.rstrip(b"\x00 ").decode("ascii").strip() or "1")
        if frames > 1:
            raise DataError(f"multi-frame DICOM not supported ({frames} frames)")

    if _TAG_PIXEL_DATA not in elements:
        raise DataError("DICOM data set has no pixel data element (7FE0,0010)")

    rows = _ushort(elements, _TAG_ROWS)
    cols = _ushort(elements, _TAG_COLUMNS)
    if rows is None or cols is None or rows == 0 or cols == 0:
        raise DataError("DICOM data set lacks valid Rows/Columns")
    samples = _ushort(elements, _TAG_SAMPLES_PER_PIXEL, default=1)
    bits = _ushort(elements, _TAG_BITS_ALLOCATED, default=16)
    signed = _ushort(elements, _TAG_PIXEL_REPRESENTATION, default=0) == 1
    photometric = (
        elements.get(_TAG_PHOTOMETRIC, b"MONOCHROME2").rstrip(b"\x00 ").decode("ascii")
    )

    if bits == 8:
        dtype = np.int8 if signed else np.uint8
    elif bits == 16:
        dtype = np.int16 if signed else np.uint16
    else:
        raise DataError(f"unsupported bits allocated: {bits}")

    expected = rows * cols * samples * (bits // 8)
    pixel_bytes = elements[_TAG_PIXEL_DATA]
    if len(pixel_bytes) < expected:
        raise DataError(
            f"pixel data too short: {len(pixel_bytes)} bytes, expected {expected}"
        )
    flat = np.frombuffer(pixel_bytes[:expected], dtype=np.dtype(dtype).newbyteorder("<"))

    if samples == 1:
        arr = flat.reshape(rows, cols)
    elif samples == 3:
        planar = _ushort(elements, _TAG_PLANAR_CONFIG, default=0)
        if planar == 0:
            arr = flat.reshape(rows, cols, 3)
        else:
            arr = flat.reshape(3, rows, cols).transpose(1, 2, 0)
    else:
        raise DataError(f"unsupported samples per pixel: {samples}")

    out = arr.astype(np.float64)
    slope = _number(elements, _TAG_RESCALE_SLOPE, default=1.0)
    intercept = _number(elements, _TAG_RESCALE_INTERCEPT, default=0.0)
    if slope != 1.0 or intercept != 0.0:
        out = out * slope + intercept

    if photometric == "MONOCHROME1":
        if samples != 1:
            raise DataError("MONOCHROME1 with multiple samples per pixel")
        out = out.max() - out
    return out


def to_png8(raster: np.ndarray) -> np.ndarray:
    """Window a sample raster linearly into an 8-bit, 3-channel image.

    Min-max scaling to [0, 255] with half-away-from-zero rounding; a
    constant raster maps to all zeros; grayscale input is replicated
    across three channels.  The mapping is monotone non-decreasing in
    the input sample value.
    """
    arr = np.asarray(raster, dtype=np.float64)
    if arr.ndim not in (2, 3):
        raise DataError(f"expected a 2-D or 3-D raster, got shape {arr.shape}")
    lo = arr.min()
    hi = arr.max()
    if hi == lo:
        scaled = np.zeros_like(arr)
    else:
        scaled = np.floor(255.0 * (arr - lo) / (hi - lo) + 0.5)
    out = np.clip(scaled, 0, 255).astype(np.uint8)
    if out.ndim == 2:
        out = np.stack([out, out, out], axis=-1)
    return out
