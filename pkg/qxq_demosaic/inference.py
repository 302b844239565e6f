"""Whole-frame demosaicing with optional overlapping tiles."""

import logging
from typing import Callable, Optional, Union

import numpy as np

from .cfa import MosaicImage, classical_demosaic, gray_image
from .errors import ConfigError
from .model import Network
from .ndtensor import no_grad
from .rawio import RgbImage

logger = logging.getLogger(__name__)

Demosaicer = Callable[[MosaicImage], RgbImage]


def network_demosaicer(net: Network) -> Demosaicer:
    """Wrap a network as a MosaicImage -> RgbImage function (outputs clipped to [0, 1])."""

    def run(m: MosaicImage) -> RgbImage:
        with no_grad():
            out = net.forward(gray_image(m))
        return RgbImage(np.clip(out.rgb_full.data[0], 0.0, 1.0))

    return run


def resolve_demosaicer(method: Union[str, Network, Demosaicer]) -> Demosaicer:
    if isinstance(method, Network):
        return network_demosaicer(method)
    if method == "classical":
        return classical_demosaic
    if callable(method):
        return method
    raise ConfigError(f"unknown demosaic method {method!r}")


def tile_origins(size: int, tile: int, overlap: int) -> list[int]:
    """Tile starts along one axis; the last tile is pulled back to end at ``size``."""
    if size <= tile:
        return [0]
    stride = tile - overlap
    origins = list(range(0, size - tile + 1, stride))
    if origins[-1] + tile < size:
        origins.append(size - tile)
    return origins


def _ramp(length: int, shared: int) -> np.ndarray:
    """Weights of a new tile over its first ``shared`` pixels, 1 afterwards.

    A quarter of the shared span at each end is held at 0 (start) and 1 (end)
    so neither tile contributes pixels near its own border.
    """
    w = np.ones(length)
    if shared <= 0:
        return w
    margin = shared // 4
    ramp_len = shared - 2 * margin
    w[:margin] = 0.0
    w[margin : shared - margin] = (np.arange(ramp_len) + 1.0) / (ramp_len + 1.0)
    return w


def demosaic_tiled(m: MosaicImage, method: Union[str, Network, Demosaicer], tile: int, overlap: int = 32) -> RgbImage:
    """Demosaic ``m`` tile by tile and blend the overlaps.

    Tiles are visited row by row; each is blended over what is already on
    the canvas with weights that rise across the strips it shares with its
    left and upper neighbours. Tile size and overlap must be multiples of
    the CFA period so every tile keeps the frame's CFA phase.
    """
    fn = resolve_demosaicer(method)
    period = m.cfa.period
    if tile <= 0 or tile % period or overlap % period:
        raise ConfigError(f"tile ({tile}) and overlap ({overlap}) must be multiples of the CFA period {period}")
    if not 0 <= overlap < tile:
        raise ConfigError(f"overlap must be in [0, tile), got {overlap} for tile {tile}")
    if m.height <= tile and m.width <= tile:
        return fn(m)

    ys = tile_origins(m.height, tile, overlap)
    xs = tile_origins(m.width, tile, overlap)
    canvas = np.zeros((3, m.height, m.width), dtype=np.float32)
    written = np.zeros((m.height, m.width), dtype=bool)
    logger.debug("Demosaicing %dx%d in %d tiles", m.width, m.height, len(xs) * len(ys))

    for row, y0 in enumerate(ys):
        for col, x0 in enumerate(xs):
            th = min(tile, m.height - y0)
            tw = min(tile, m.width - x0)
            values = fn(m.crop(x0, y0, tw, th)).data
            shared_y = ys[row - 1] + tile - y0 if row else 0
            shared_x = xs[col - 1] + tile - x0 if col else 0
            weight = np.outer(_ramp(th, shared_y), _ramp(tw, shared_x))
            region = (slice(y0, y0 + th), slice(x0, x0 + tw))
            weight[~written[region]] = 1.0
            current = canvas[(slice(None),) + region]
            blended = current + weight * (values - current)
            canvas[(slice(None),) + region] = np.where(weight >= 1.0, values, np.where(weight <= 0.0, current, blended))
            written[region] = True
    return RgbImage(canvas)


def demosaic_frame(
    m: MosaicImage,
    method: Union[str, Network, Demosaicer],
    tile: Optional[int] = None,
    overlap: int = 32,
) -> RgbImage:
    """Demosaic a frame, tiling when ``tile`` is set and the frame is larger than it."""
    if tile:
        return demosaic_tiled(m, method, tile, overlap)
    return resolve_demosaicer(method)(m)
