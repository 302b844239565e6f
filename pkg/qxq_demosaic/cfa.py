"""Color filter array geometry, mosaicking, channel packing and the bilinear baseline."""

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .errors import ConfigError, GeometryError, ParameterError
from .ndtensor import Tensor, pixel_shuffle, pixel_unshuffle
from .rawio import RgbImage

COLORS = ("R", "G", "B")
CHANNEL_INDEX = {color: index for index, color in enumerate(COLORS)}

# Named layouts accepted wherever a CFA string is parsed
GROUP_SIZE_ALIASES = {
    "bayer": 1,
    "quad": 2,
    "nona": 3,
    "qxq": 4,
}


@dataclass(frozen=True)
class CfaSpec:
    """A Bayer-style CFA whose cells are ``group_size`` x ``group_size`` same-color blocks.

    ``macro_pattern`` lists the 2x2 macro cell row-major, e.g. ``"RGGB"``.
    """

    group_size: int = 4
    macro_pattern: str = "RGGB"

    def __post_init__(self):
        if not isinstance(self.group_size, int) or self.group_size < 1:
            raise ConfigError(f"CFA group size must be a positive integer, got {self.group_size!r}")
        pattern = str(self.macro_pattern).upper()
        if len(pattern) != 4 or sorted(pattern) != ["B", "G", "G", "R"]:
            raise ConfigError(f"CFA macro pattern needs one R, one B and two G entries, got {self.macro_pattern!r}")
        object.__setattr__(self, "macro_pattern", pattern)

    @property
    def period(self) -> int:
        return 2 * self.group_size

    @classmethod
    def parse(cls, text: str) -> "CfaSpec":
        """Parse ``"4,RGGB"``, ``"4"``, ``"qxq"`` or ``"bayer,GRBG"``."""
        parts = [p.strip() for p in str(text).replace(":", ",").split(",") if p.strip()]
        if not parts or len(parts) > 2:
            raise ConfigError(f"cannot parse CFA '{text}' (expected e.g. '4,RGGB')")
        size_text = parts[0].lower()
        if size_text in GROUP_SIZE_ALIASES:
            group_size = GROUP_SIZE_ALIASES[size_text]
        else:
            try:
                group_size = int(size_text)
            except ValueError:
                raise ConfigError(f"cannot parse CFA group size '{parts[0]}'") from None
        pattern = parts[1] if len(parts) == 2 else "RGGB"
        return cls(group_size, pattern)

    def __str__(self) -> str:
        return f"{self.group_size},{self.macro_pattern}"

    def to_dict(self) -> dict:
        return {"group_size": self.group_size, "macro_pattern": self.macro_pattern}

    def channel_map(self, height: int, width: int) -> np.ndarray:
        """(H, W) array of channel indices (0=R, 1=G, 2=B)."""
        rows = (np.arange(height) // self.group_size) % 2
        cols = (np.arange(width) // self.group_size) % 2
        lookup = np.array([CHANNEL_INDEX[c] for c in self.macro_pattern]).reshape(2, 2)
        return lookup[rows[:, None], cols[None, :]]

    def masks(self, height: int, width: int) -> np.ndarray:
        """(3, H, W) boolean sampling masks, one per channel."""
        channels = self.channel_map(height, width)
        return np.stack([channels == c for c in range(3)])


def color_at(cfa: CfaSpec, x: int, y: int) -> str:
    if x < 0 or y < 0:
        raise ParameterError(f"pixel coordinates must be non-negative, got ({x}, {y})")
    row = (y // cfa.group_size) % 2
    col = (x // cfa.group_size) % 2
    return cfa.macro_pattern[2 * row + col]


def _check_period(height: int, width: int, cfa: CfaSpec):
    if height % cfa.period or width % cfa.period:
        raise GeometryError(
            f"{width}x{height} is not a multiple of the CFA period {cfa.period} (group size {cfa.group_size})"
        )


@dataclass
class MosaicImage:
    """A single CFA-filtered plane with samples in [0, 1]."""

    plane: np.ndarray
    cfa: CfaSpec

    def __post_init__(self):
        self.plane = np.asarray(self.plane, dtype=np.float32)
        if self.plane.ndim != 2:
            raise GeometryError(f"mosaic plane must be 2-D, got shape {self.plane.shape}")
        _check_period(*self.plane.shape, self.cfa)

    @property
    def height(self) -> int:
        return self.plane.shape[0]

    @property
    def width(self) -> int:
        return self.plane.shape[1]

    def crop(self, x: int, y: int, width: int, height: int) -> "MosaicImage":
        """Crop a period-aligned window; the CFA phase is kept by construction."""
        if x % self.cfa.period or y % self.cfa.period:
            raise GeometryError(f"crop origin ({x}, {y}) is not aligned to the CFA period {self.cfa.period}")
        return MosaicImage(self.plane[y : y + height, x : x + width].copy(), self.cfa)


def crop_to_period(array: np.ndarray, cfa: CfaSpec) -> np.ndarray:
    """Trim the trailing (H, W) axes of ``array`` down to multiples of the CFA period."""
    height, width = array.shape[-2:]
    new_h = height - height % cfa.period
    new_w = width - width % cfa.period
    if new_h == 0 or new_w == 0:
        raise GeometryError(f"{width}x{height} is smaller than one CFA period ({cfa.period})")
    return array[..., :new_h, :new_w]


def center_crop(array: np.ndarray, cfa: CfaSpec, height: int, width: Optional[int] = None) -> np.ndarray:
    """Centered ``width`` x ``height`` window of the trailing (H, W) axes.

    The window origin is rounded down to the CFA period so the crop keeps the
    frame's CFA phase.
    """
    width = width or height
    if height <= 0 or width <= 0 or height % cfa.period or width % cfa.period:
        raise GeometryError(f"crop {width}x{height} must be a positive multiple of the CFA period {cfa.period}")
    full_h, full_w = array.shape[-2:]
    if height > full_h or width > full_w:
        raise GeometryError(f"crop {width}x{height} does not fit a {full_w}x{full_h} frame")
    top = (full_h - height) // 2 // cfa.period * cfa.period
    left = (full_w - width) // 2 // cfa.period * cfa.period
    return array[..., top : top + height, left : left + width]


def mosaic(rgb: RgbImage, cfa: CfaSpec) -> MosaicImage:
    """Sample each pixel's CFA-selected channel."""
    _check_period(rgb.height, rgb.width, cfa)
    channels = cfa.channel_map(rgb.height, rgb.width)
    plane = np.take_along_axis(rgb.data, channels[None], axis=0)[0]
    return MosaicImage(plane, cfa)


def gray_image(m: MosaicImage) -> Tensor:
    """The mosaic as a (1, 1, H, W) full-resolution single-channel tensor."""
    return Tensor(m.plane.reshape(1, 1, m.height, m.width))


def _as_batch(m: Union[MosaicImage, Tensor]) -> Tensor:
    if isinstance(m, MosaicImage):
        return gray_image(m)
    return m


def space_to_depth(m: Union[MosaicImage, Tensor], factor: int = 2) -> Tensor:
    """Pack ``factor`` x ``factor`` neighbourhoods into channels.

    Channel ``k`` at (i, j) holds input(factor*i + k // factor, factor*j + k % factor).
    Accepts a MosaicImage or an (N, 1, H, W) batch.
    """
    x = _as_batch(m)
    if x.shape[-2] % factor or x.shape[-1] % factor:
        raise GeometryError(f"space_to_depth needs dimensions divisible by {factor}, got {x.shape[-2:]}")
    return pixel_unshuffle(x, factor)


def depth_to_space(x: Tensor, factor: int = 2) -> Tensor:
    if x.shape[1] % (factor * factor):
        raise GeometryError(f"depth_to_space needs channels divisible by {factor * factor}, got {x.shape[1]}")
    return pixel_shuffle(x, factor)


def _tent_weights(group_size: int) -> np.ndarray:
    reach = 2 * group_size
    offsets = np.arange(-(reach - 1), reach)
    return 1.0 - np.abs(offsets) / reach


def _separable_filter(plane: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Same-size separable filtering of an already padded plane.

    Written as an explicit shift-and-add so each output sample depends only on
    its own neighbourhood and the summation order never changes with image size.
    """
    radius = len(weights) // 2
    height, width = plane.shape
    rows = np.zeros((height, width - 2 * radius))
    for i, wt in enumerate(weights):
        rows += wt * plane[:, i : i + width - 2 * radius]
    out = np.zeros((height - 2 * radius, width - 2 * radius))
    for i, wt in enumerate(weights):
        out += wt * rows[i : i + height - 2 * radius, :]
    return out


def classical_demosaic(m: MosaicImage) -> RgbImage:
    """Per-channel bilinear interpolation by normalized convolution.

    Each channel is the tent-weighted average of that channel's samples within
    ``2 * group_size - 1`` pixels; for a standard Bayer CFA this is the usual
    bilinear demosaic. Borders are mirror padded. Sampled positions keep the
    mosaic value exactly.
    """
    cfa = m.cfa
    weights = _tent_weights(cfa.group_size)
    pad = len(weights) // 2
    plane = m.plane.astype(np.float64)
    masks = cfa.masks(m.height, m.width)

    out = np.empty((3, m.height, m.width), dtype=np.float32)
    for c in range(3):
        mask = masks[c].astype(np.float64)
        num = _separable_filter(np.pad(plane * mask, pad, mode="reflect"), weights)
        den = _separable_filter(np.pad(mask, pad, mode="reflect"), weights)
        channel = num / den
        channel[masks[c]] = plane[masks[c]]
        out[c] = channel
    return RgbImage(out)
