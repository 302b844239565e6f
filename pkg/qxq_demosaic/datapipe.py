"""Hybrid dataset construction and patch loading.

Ground truth comes from two kinds of sources: 10-bit 3CCD ``.RAW`` dumps
(sensor-linear after black-level compensation) and ordinary 8-bit PNG/JPEG
images, which are pushed back towards sensor-linear values with an inverse
gamma. Both are cut into a grid of square patches; flat patches are dropped.
Each surviving patch yields ``(mosaic, gt_half, gt)`` at load time.
"""

import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Iterator, Optional, Union

import numpy as np

from .cfa import CfaSpec, mosaic
from .errors import ConfigError, DataError, GeometryError, QxqError, RangeError
from .rawio import (
    DEFAULT_BLACK_LEVEL,
    SAMPLE_MAX,
    Raw3ccdFrame,
    RgbImage,
    decode_3ccd,
    encode_3ccd,
    export_png8,
    load_image8,
    read_raw,
)

logger = logging.getLogger(__name__)

MANIFEST_FORMAT = "qxq-manifest"
MANIFEST_VERSION = 1

DEFAULT_GAMMA = 2.2
DEFAULT_VARIANCE_THRESHOLD = 1e-3
SOURCE_CACHE_SIZE = 64
RAW_SUFFIXES = (".raw",)
COMMON_SUFFIXES = (".png", ".jpg", ".jpeg")


# Per-image transforms


def inverse_gamma(img: RgbImage, gamma: float = DEFAULT_GAMMA) -> RgbImage:
    """Raise every sample to ``gamma``; samples must lie in [0, 1]."""
    data = img.data
    if data.size and (float(data.min()) < 0.0 or float(data.max()) > 1.0):
        raise RangeError(f"inverse_gamma needs samples in [0, 1], got [{data.min():.4g}, {data.max():.4g}]")
    return RgbImage(np.power(data.astype(np.float64), gamma))


def patch_origins(width: int, height: int, size: int, stride: int) -> list[tuple[int, int]]:
    """Top-left corners of the in-bounds grid, row by row."""
    if size <= 0 or stride <= 0:
        raise ConfigError(f"patch size and stride must be positive, got {size} and {stride}")
    return [(x, y) for y in range(0, height - size + 1, stride) for x in range(0, width - size + 1, stride)]


def crop_patches(img: RgbImage, size: int = 448, stride: int = 448) -> list[RgbImage]:
    """Grid of ``size`` x ``size`` patches from the origin; an undersized image gives []."""
    return [img.crop(x, y, size, size) for x, y in patch_origins(img.width, img.height, size, stride)]


def variance_filter(patch: RgbImage, threshold: float = DEFAULT_VARIANCE_THRESHOLD) -> bool:
    """Keep a patch when the mean of its per-channel variances reaches ``threshold``."""
    variance = float(np.mean(np.var(patch.data.astype(np.float64), axis=(1, 2))))
    return variance >= threshold


def downscale2x(img: Union[RgbImage, np.ndarray]) -> Union[RgbImage, np.ndarray]:
    """2x2 box average over the trailing (H, W) axes."""
    data = img.data if isinstance(img, RgbImage) else np.asarray(img)
    height, width = data.shape[-2:]
    if height % 2 or width % 2:
        raise GeometryError(f"downscale2x needs even dimensions, got {width}x{height}")
    blocks = data.reshape(*data.shape[:-2], height // 2, 2, width // 2, 2)
    out = blocks.mean(axis=(-3, -1), dtype=np.float64).astype(np.float32)
    return RgbImage(out) if isinstance(img, RgbImage) else out


# Source files


@dataclass
class SourceSettings:
    """How to decode source files; recorded in the manifest header."""

    patch_size: int = 448
    stride: int = 448
    raw_width: int = 1600
    raw_height: int = 1200
    black_level: int = DEFAULT_BLACK_LEVEL
    gamma: float = DEFAULT_GAMMA
    variance_threshold: float = DEFAULT_VARIANCE_THRESHOLD


def load_source(path: Union[str, Path], kind: str, settings: SourceSettings) -> RgbImage:
    """Decode one source file to a [0, 1] sensor-linear RGB image."""
    if kind == "3ccd":
        frame = decode_3ccd(read_raw(path), settings.raw_width, settings.raw_height, black_level=settings.black_level)
        return frame.to_rgb()
    if kind == "common":
        return inverse_gamma(load_image8(path), settings.gamma)
    raise ConfigError(f"unknown source kind '{kind}'")


def list_sources(directory: Optional[Union[str, Path]], kind: str) -> list[Path]:
    if directory is None:
        return []
    directory = Path(directory)
    if not directory.is_dir():
        raise DataError(f"source directory not found: {directory}")
    suffixes = RAW_SUFFIXES if kind == "3ccd" else COMMON_SUFFIXES
    return sorted(p for p in directory.iterdir() if p.is_file() and p.suffix.lower() in suffixes)


# Manifest


@dataclass
class PatchRecord:
    """One patch: field order is the serialized order."""

    source_path: str
    source_kind: str
    x: int
    y: int
    split: str


@dataclass
class DatasetManifest:
    """Patch records plus the decoding settings needed to reload them.

    ``source_path`` values are relative to ``root`` (the manifest's directory
    once saved).
    """

    settings: SourceSettings
    cfa: CfaSpec
    records: list[PatchRecord] = field(default_factory=list)
    root: Path = field(default_factory=Path)
    stats: dict = field(default_factory=dict)

    def split(self, name: str) -> list[PatchRecord]:
        return [r for r in self.records if r.split == name]

    def header(self) -> dict:
        return {
            "format": MANIFEST_FORMAT,
            "version": MANIFEST_VERSION,
            "cfa": str(self.cfa),
            **asdict(self.settings),
            "stats": self.stats,
        }

    def to_lines(self) -> list[str]:
        lines = [json.dumps(self.header())]
        lines.extend(json.dumps(asdict(r)) for r in self.records)
        return lines

    def save(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        if path.parent.resolve() != Path(self.root).resolve():
            self._rebase(path.parent)
        path.write_text("\n".join(self.to_lines()) + "\n", encoding="utf-8")
        return path

    def _rebase(self, new_root: Path):
        for r in self.records:
            absolute = (Path(self.root) / r.source_path).resolve()
            r.source_path = Path(os.path.relpath(absolute, new_root.resolve())).as_posix()
        self.root = new_root

    @classmethod
    def load(cls, path: Union[str, Path]) -> "DatasetManifest":
        path = Path(path)
        if not path.exists():
            raise DataError(f"manifest not found: {path}")
        lines = [line for line in path.read_text(encoding="utf-8").splitlines() if line.strip()]
        try:
            header = json.loads(lines[0]) if lines else {}
        except json.JSONDecodeError:
            header = {}
        if header.get("format") != MANIFEST_FORMAT:
            raise DataError(f"{path} is not a dataset manifest")
        if header.get("version") != MANIFEST_VERSION:
            raise DataError(f"unsupported manifest version {header.get('version')} in {path}")
        settings = SourceSettings(**{k: header[k] for k in SourceSettings.__dataclass_fields__ if k in header})
        try:
            records = [PatchRecord(**json.loads(line)) for line in lines[1:]]
        except (json.JSONDecodeError, TypeError) as e:
            raise DataError(f"corrupt manifest record in {path}: {e}") from None
        return cls(settings, CfaSpec.parse(header["cfa"]), records, path.parent, header.get("stats", {}))

    def absolute_path(self, source_path: str) -> Path:
        return Path(self.root) / source_path


def _candidate_patches(path: Path, kind: str, settings: SourceSettings) -> Optional[tuple[int, list[tuple[int, int]]]]:
    """(candidate count, kept origins) for one file, or None if it cannot be read."""
    try:
        img = load_source(path, kind, settings)
    except (QxqError, OSError) as e:
        logger.warning("Skipping unreadable source %s: %s", path, e)
        return None
    origins = patch_origins(img.width, img.height, settings.patch_size, settings.stride)
    kept = [
        (x, y)
        for x, y in origins
        if variance_filter(img.crop(x, y, settings.patch_size, settings.patch_size), settings.variance_threshold)
    ]
    return len(origins), kept


def build_hybrid(
    dir_3ccd: Optional[Union[str, Path]],
    dir_common: Optional[Union[str, Path]],
    cfa: CfaSpec,
    split_ratio: float = 0.97,
    seed: int = 0,
    settings: Optional[SourceSettings] = None,
    root: Optional[Union[str, Path]] = None,
    workers: int = 1,
) -> DatasetManifest:
    """Scan both source directories and assemble a manifest.

    Sources are shuffled with ``seed`` and the first ``round(split_ratio * n)``
    go to ``train``; every patch of a source shares its split. Record paths are
    relative to ``root`` (default: the current directory).
    """
    settings = settings or SourceSettings()
    if not 0.0 <= split_ratio <= 1.0:
        raise ConfigError(f"split_ratio must be in [0, 1], got {split_ratio}")
    if settings.patch_size % cfa.period or settings.stride % cfa.period:
        raise ConfigError(f"patch size and stride must be multiples of the CFA period {cfa.period}")

    sources = [(p, "3ccd") for p in list_sources(dir_3ccd, "3ccd")]
    sources += [(p, "common") for p in list_sources(dir_common, "common")]
    if not sources:
        raise DataError("no source images found")
    logger.info("Scanning %d source files (%d x %d patches)", len(sources), settings.patch_size, settings.patch_size)

    def scan(item):
        return _candidate_patches(item[0], item[1], settings)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(scan, sources))
    else:
        results = [scan(item) for item in sources]

    usable = [(src, res) for src, res in zip(sources, results) if res is not None and res[1]]
    candidates = sum(res[0] for res in results if res is not None)
    skipped = sum(1 for res in results if res is None)
    if not usable:
        raise DataError(f"no patches survived filtering ({candidates} candidates, {skipped} unreadable files)")

    order = np.random.default_rng(seed).permutation(len(usable))
    n_train = int(round(split_ratio * len(usable)))
    split_of = {int(index): ("train" if rank < n_train else "test") for rank, index in enumerate(order)}

    root = Path(root) if root is not None else Path(".")
    records = []
    for index, ((path, kind), (_, kept)) in enumerate(usable):
        rel = Path(os.path.relpath(Path(path).resolve(), root.resolve())).as_posix()
        records.extend(PatchRecord(rel, kind, x, y, split_of[index]) for x, y in kept)

    stats = {
        "sources": len(sources),
        "unreadable": skipped,
        "candidates": candidates,
        "kept": len(records),
        "train": sum(1 for r in records if r.split == "train"),
        "test": sum(1 for r in records if r.split == "test"),
    }
    logger.info(
        "Manifest: %d/%d patches kept (%d train, %d test)", stats["kept"], candidates, stats["train"], stats["test"]
    )
    return DatasetManifest(settings, cfa, records, root, stats)


# Loading


class PatchDataset:
    """Training triples for one manifest split, decoded lazily.

    Items are ``(mosaic (1, P, P), gt_half (3, P/2, P/2), gt (3, P, P))``
    float32 arrays.
    """

    def __init__(
        self,
        manifest: DatasetManifest,
        split: str = "train",
        cfa: Optional[CfaSpec] = None,
        cache_size: int = SOURCE_CACHE_SIZE,
    ):
        self.manifest = manifest
        self.split = split
        self.cfa = cfa or manifest.cfa
        self.records = manifest.split(split)
        # decoded sources, least recently used evicted first
        self._load = lru_cache(maxsize=cache_size)(self._decode)

    def __len__(self) -> int:
        return len(self.records)

    def _decode(self, source_path: str, source_kind: str) -> RgbImage:
        return load_source(self.manifest.absolute_path(source_path), source_kind, self.manifest.settings)

    def _source(self, record: PatchRecord) -> RgbImage:
        return self._load(record.source_path, record.source_kind)

    def cache_info(self):
        return self._load.cache_info()

    def ground_truth(self, index: int) -> RgbImage:
        record = self.records[index]
        size = self.manifest.settings.patch_size
        return self._source(record).crop(record.x, record.y, size, size)

    def __getitem__(self, index: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        gt = self.ground_truth(index)
        plane = mosaic(gt, self.cfa).plane
        return plane[None], downscale2x(gt.data), gt.data

    def __iter__(self) -> Iterator[tuple[np.ndarray, np.ndarray, np.ndarray]]:
        for index in range(len(self)):
            yield self[index]

    def batches(self, batch_size: int, rng: Optional[np.random.Generator] = None):
        """Yield stacked ``(mosaic, gt_half, gt)`` batches; shuffled when ``rng`` is given."""
        if len(self) == 0:
            raise DataError(f"the '{self.split}' split is empty")
        if batch_size < 1:
            raise ConfigError(f"batch size must be positive, got {batch_size}")
        order = rng.permutation(len(self)) if rng is not None else np.arange(len(self))
        for start in range(0, len(order), batch_size):
            items = [self[int(i)] for i in order[start : start + batch_size]]
            yield tuple(np.stack(column) for column in zip(*items))


# Synthetic sources


def _smooth_field(rng: np.random.Generator, height: int, width: int, components: int = 6) -> np.ndarray:
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    out = np.zeros((3, height, width))
    for c in range(3):
        acc = rng.uniform(0.2, 0.8) + rng.uniform(-0.2, 0.2) * (xx / width) + rng.uniform(-0.2, 0.2) * (yy / height)
        for _ in range(components):
            fx, fy = rng.uniform(0.5, 12.0, size=2)
            phase = rng.uniform(0, 2 * np.pi)
            acc += rng.uniform(0.02, 0.12) * np.sin(2 * np.pi * (fx * xx / width + fy * yy / height) + phase)
        out[c] = acc
    return np.clip(out, 0.0, 1.0)


def synthesize_sources(
    directory: Union[str, Path],
    count: int = 2,
    size: int = 128,
    seed: int = 0,
    black_level: int = DEFAULT_BLACK_LEVEL,
    gamma: float = DEFAULT_GAMMA,
) -> dict[str, Path]:
    """Write ``count`` smooth synthetic 3CCD ``.RAW`` files and ``count`` PNGs.

    RAW files are ``size`` x ``size``; PNGs are gamma-encoded so that the
    inverse gamma of the loader brings them back near linear values.
    """
    directory = Path(directory)
    raw_dir = directory / "3ccd"
    png_dir = directory / "common"
    raw_dir.mkdir(parents=True, exist_ok=True)
    png_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    for i in range(count):
        linear = _smooth_field(rng, size, size)
        counts = np.rint(black_level + linear * (SAMPLE_MAX - black_level)).astype(np.uint16)
        (raw_dir / f"synth_{i:03d}.RAW").write_bytes(encode_3ccd(Raw3ccdFrame(size, size, counts, black_level)))
        export_png8(RgbImage(np.power(_smooth_field(rng, size, size), 1.0 / gamma)), png_dir / f"synth_{i:03d}.png")
    logger.info("Wrote %d synthetic 3CCD and %d PNG sources to %s", count, count, directory)
    return {"3ccd": raw_dir, "common": png_dir}
