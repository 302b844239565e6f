"""Metric tables for trained networks and the classical baseline."""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .cfa import MosaicImage
from .datapipe import PatchDataset
from .errors import DataError
from .inference import Demosaicer, resolve_demosaicer
from .losses import ms_ssim_score, psnr
from .model import Network
from .rawio import RgbImage

logger = logging.getLogger(__name__)

SUMMARY_COLUMNS = ("method", "psnr", "ms_ssim", "params", "macs")
PER_IMAGE_COLUMNS = ("method", "index", "psnr", "ms_ssim")


@dataclass
class ImageScore:
    method: str
    index: int
    psnr: float
    ms_ssim: float


@dataclass
class MethodSummary:
    method: str
    psnr: float
    ms_ssim: float
    params: Optional[int] = None
    macs: Optional[int] = None


def format_value(value) -> str:
    """TSV cell text; infinite PSNR is written as ``inf`` and missing values as ``-``."""
    if value is None:
        return "-"
    if isinstance(value, float):
        if math.isinf(value):
            return "inf"
        return f"{value:.4f}"
    return str(value)


def score_pair(prediction: RgbImage, target: RgbImage) -> tuple[float, float]:
    return psnr(prediction, target), ms_ssim_score(prediction, target)


def evaluate_method(
    name: str,
    method: Union[str, Network, Demosaicer],
    dataset: PatchDataset,
    workers: int = 1,
) -> tuple[MethodSummary, list[ImageScore]]:
    """Score one demosaicer over every patch of ``dataset``.

    The summary PSNR averages per-image values and is infinite if any image is
    reproduced exactly.
    """
    if len(dataset) == 0:
        raise DataError(f"the '{dataset.split}' split is empty; nothing to evaluate")
    fn = resolve_demosaicer(method)

    def score(index: int) -> ImageScore:
        gt = dataset.ground_truth(index)
        plane = dataset[index][0][0]
        prediction = fn(MosaicImage(plane, dataset.cfa))
        p, s = score_pair(prediction, gt)
        return ImageScore(name, index, p, s)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            scores = list(pool.map(score, range(len(dataset))))
    else:
        scores = [score(i) for i in range(len(dataset))]

    summary = MethodSummary(
        name,
        float(np.mean([s.psnr for s in scores])),
        float(np.mean([s.ms_ssim for s in scores])),
    )
    if isinstance(method, Network):
        size = dataset.manifest.settings.patch_size
        summary.params = method.param_count()
        summary.macs = method.mac_count(size, size)
    logger.info("%s: PSNR %s dB, MS-SSIM %s", name, format_value(summary.psnr), format_value(summary.ms_ssim))
    return summary, scores


def summary_table(rows: list[MethodSummary]) -> str:
    lines = ["\t".join(SUMMARY_COLUMNS)]
    for r in rows:
        lines.append("\t".join(format_value(v) for v in (r.method, r.psnr, r.ms_ssim, r.params, r.macs)))
    return "\n".join(lines) + "\n"


def per_image_table(scores: list[ImageScore]) -> str:
    lines = ["\t".join(PER_IMAGE_COLUMNS)]
    for s in scores:
        lines.append("\t".join(format_value(v) for v in (s.method, s.index, s.psnr, s.ms_ssim)))
    return "\n".join(lines) + "\n"


def write_report(rows: list[MethodSummary], scores: list[ImageScore], out: Union[str, Path]) -> tuple[Path, Path]:
    """Write ``out`` (summary) and ``<out>.per_image.tsv``."""
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(summary_table(rows), encoding="utf-8")
    per_image = out.with_name(out.name + ".per_image.tsv")
    per_image.write_text(per_image_table(scores), encoding="utf-8")
    return out, per_image
