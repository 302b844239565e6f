"""Codecs for headerless 10-bit 3CCD and QxQ ``.RAW`` dumps, plus 8-bit PNG IO.

Both formats store one unsigned 10-bit sample per 2 bytes, row-major, with no
header. A 3CCD file holds three planes (all red samples, then green, then
blue); a QxQ file holds the single CFA-filtered plane. Width and height are
supplied out of band.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING, Optional, Union

import numpy as np
from PIL import Image

from .errors import FormatError, GeometryError, ParameterError, RangeError

if TYPE_CHECKING:
    from .cfa import CfaSpec, MosaicImage

SAMPLE_MAX = 1023
DEFAULT_BLACK_LEVEL = 64
BYTES_PER_SAMPLE = 2


@dataclass
class RgbImage:
    """Three planes of float samples, shape (3, H, W), nominal range [0, 1]."""

    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float32)
        if self.data.ndim != 3 or self.data.shape[0] != 3:
            raise GeometryError(f"RgbImage needs shape (3, H, W), got {self.data.shape}")

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    @classmethod
    def from_hwc(cls, array: np.ndarray) -> "RgbImage":
        return cls(np.transpose(np.asarray(array), (2, 0, 1)))

    def to_hwc(self) -> np.ndarray:
        return np.transpose(self.data, (1, 2, 0))

    def crop(self, x: int, y: int, width: int, height: int) -> "RgbImage":
        return RgbImage(self.data[:, y : y + height, x : x + width].copy())


@dataclass
class Raw3ccdFrame:
    """Decoded 3CCD frame: raw counts, planes in R, G, B order."""

    width: int
    height: int
    planes: np.ndarray  # (3, H, W) uint16
    black_level: int = DEFAULT_BLACK_LEVEL

    def to_rgb(self) -> RgbImage:
        return RgbImage(black_level_compensate(self.planes, self.black_level))


@dataclass
class RawQxqFrame:
    """Decoded single-plane CFA frame: raw counts plus CFA metadata."""

    width: int
    height: int
    plane: np.ndarray  # (H, W) uint16
    cfa: Optional["CfaSpec"] = None
    black_level: int = DEFAULT_BLACK_LEVEL

    def to_mosaic(self) -> "MosaicImage":
        from .cfa import CfaSpec, MosaicImage

        return MosaicImage(black_level_compensate(self.plane, self.black_level), self.cfa or CfaSpec())


def _sample_dtype(little_endian: bool) -> np.dtype:
    return np.dtype("<u2" if little_endian else ">u2")


def _check_geometry(width: int, height: int):
    if width <= 0 or height <= 0:
        raise GeometryError(f"frame dimensions must be positive, got {width}x{height}")


def _check_range(samples: np.ndarray):
    if samples.size and int(samples.max()) > SAMPLE_MAX:
        index = int(np.argmax(samples.reshape(-1) > SAMPLE_MAX))
        value = int(samples.reshape(-1)[index])
        raise RangeError(f"sample {index} has value {value}, above the 10-bit maximum {SAMPLE_MAX}")


def _decode_samples(data: bytes, count: int, little_endian: bool, kind: str) -> np.ndarray:
    expected = count * BYTES_PER_SAMPLE
    if len(data) != expected:
        raise FormatError(f"{kind} RAW: expected {expected} bytes, got {len(data)}")
    samples = np.frombuffer(data, dtype=_sample_dtype(little_endian)).astype(np.uint16)
    _check_range(samples)
    return samples


def _encode_samples(samples: np.ndarray, little_endian: bool) -> bytes:
    samples = np.asarray(samples)
    if samples.size and int(samples.min()) < 0:
        raise RangeError(f"negative sample value {int(samples.min())}")
    _check_range(samples)
    return np.ascontiguousarray(samples, dtype=_sample_dtype(little_endian)).tobytes()


def decode_3ccd(
    data: bytes,
    width: int,
    height: int,
    little_endian: bool = True,
    black_level: int = DEFAULT_BLACK_LEVEL,
) -> Raw3ccdFrame:
    """Decode a ``width * height * 3 * 2`` byte 3CCD dump (no black-level subtraction)."""
    _check_geometry(width, height)
    samples = _decode_samples(data, width * height * 3, little_endian, "3CCD")
    return Raw3ccdFrame(width, height, samples.reshape(3, height, width), black_level)


def decode_qxq(
    data: bytes,
    width: int,
    height: int,
    cfa: "CfaSpec",
    little_endian: bool = True,
    black_level: int = DEFAULT_BLACK_LEVEL,
) -> RawQxqFrame:
    """Decode a ``width * height * 2`` byte single-plane CFA dump."""
    _check_geometry(width, height)
    samples = _decode_samples(data, width * height, little_endian, "QxQ")
    return RawQxqFrame(width, height, samples.reshape(height, width), cfa, black_level)


def encode_3ccd(frame: Raw3ccdFrame, little_endian: bool = True) -> bytes:
    if frame.planes.shape != (3, frame.height, frame.width):
        raise GeometryError(f"planes shape {frame.planes.shape} does not match {frame.width}x{frame.height}")
    return _encode_samples(frame.planes, little_endian)


def encode_qxq(frame: RawQxqFrame, little_endian: bool = True) -> bytes:
    if frame.plane.shape != (frame.height, frame.width):
        raise GeometryError(f"plane shape {frame.plane.shape} does not match {frame.width}x{frame.height}")
    return _encode_samples(frame.plane, little_endian)


def black_level_compensate(samples, offset: int = DEFAULT_BLACK_LEVEL) -> np.ndarray:
    """Map raw counts to [0, 1]: ``max(s - offset, 0) / (1023 - offset)``."""
    if offset < 0 or offset >= SAMPLE_MAX:
        raise ParameterError(f"black level offset must be in [0, {SAMPLE_MAX}), got {offset}")
    counts = np.asarray(samples, dtype=np.float64)
    return (np.maximum(counts - offset, 0.0) / (SAMPLE_MAX - offset)).astype(np.float32)


def read_raw(path: Union[str, Path]) -> bytes:
    return Path(path).read_bytes()


def quantize8(values: np.ndarray) -> np.ndarray:
    """Round [0, 1] samples to 8 bits (half up); out-of-range values are clipped."""
    return np.floor(np.clip(values, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def export_png8(image: RgbImage, path: Union[str, Path]) -> Path:
    """Write an 8-bit RGB PNG using ``round(v * 255)``."""
    path = Path(path)
    Image.fromarray(quantize8(image.to_hwc())).save(path, format="PNG")
    return path


def export_gray_png8(plane: np.ndarray, path: Union[str, Path]) -> Path:
    """Write a single-channel 8-bit PNG (mosaic previews)."""
    path = Path(path)
    Image.fromarray(quantize8(np.asarray(plane))).save(path, format="PNG")
    return path


def load_image8(path: Union[str, Path]) -> RgbImage:
    """Read an 8-bit PNG/JPEG as an RgbImage normalized by 255."""
    with Image.open(path) as img:
        array = np.asarray(img.convert("RGB"), dtype=np.float32) / 255.0
    return RgbImage.from_hwc(array)
