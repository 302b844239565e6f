"""Training losses and image-quality metrics."""

from dataclasses import dataclass
from functools import lru_cache
from typing import Optional, Union

import numpy as np

from .errors import GeometryError, LoadError, ParameterError, ShapeError
from .model import Conv, kaiming_uniform
from .ndtensor import (
    Tensor,
    add,
    avg_pool2x,
    clamp_min,
    conv2d,
    crop,
    div,
    leaky_relu,
    mean,
    mse,
    mul,
    power,
    reshape,
    sub,
)
from .rawio import RgbImage

MS_SSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
CS_FLOOR = 1e-6

PERCEPTUAL_CHANNELS = (3, 8, 16, 32)
DEFAULT_PERCEPTUAL_SEED = 1234


@dataclass
class LossWeights:
    """lambda1: perceptual weight, lambda2: MS-SSIM weight, alpha: distillation weight."""

    lambda1: float = 1.0
    lambda2: float = 0.4
    alpha: float = 10.0

    def __post_init__(self):
        for name in ("lambda1", "lambda2", "alpha"):
            if getattr(self, name) < 0:
                raise ParameterError(f"loss weight {name} must be >= 0, got {getattr(self, name)}")

    @classmethod
    def level1(cls) -> "LossWeights":
        return cls(lambda1=0.1, lambda2=0.0, alpha=0.0)

    @classmethod
    def level0(cls) -> "LossWeights":
        return cls(lambda1=1.0, lambda2=0.4, alpha=10.0)


def _as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    if isinstance(x, RgbImage):
        return Tensor(x.data[None])
    return Tensor(np.asarray(x))


def _as_array(x) -> np.ndarray:
    if isinstance(x, Tensor):
        return x.data
    if isinstance(x, RgbImage):
        return x.data
    return np.asarray(x)


# Perceptual loss


class FeatureExtractor:
    """Frozen strided conv stack (3 -> 8 -> 16 -> 32, leaky-ReLU) with seeded weights."""

    def __init__(self, seed: int = DEFAULT_PERCEPTUAL_SEED):
        rng = np.random.default_rng(seed)
        self.seed = seed
        self.weights = [
            kaiming_uniform(rng, (cout, cin, 3, 3)) for cin, cout in zip(PERCEPTUAL_CHANNELS, PERCEPTUAL_CHANNELS[1:])
        ]

    def features(self, x: Tensor) -> list[Tensor]:
        stages = []
        for w in self.weights:
            x = leaky_relu(conv2d(x, Tensor(w.astype(x.dtype)), stride=2, padding=1), 0.2)
            stages.append(x)
        return stages


@lru_cache(maxsize=8)
def feature_extractor(seed: int = DEFAULT_PERCEPTUAL_SEED) -> FeatureExtractor:
    return FeatureExtractor(seed)


def perceptual_loss(a, b, seed: int = DEFAULT_PERCEPTUAL_SEED) -> Tensor:
    """Mean over extractor stages of the feature MSE between ``a`` and ``b``."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"perceptual_loss operands differ in shape: {a.shape} vs {b.shape}")
    if a.ndim != 4 or a.shape[1] != 3:
        raise ShapeError(f"perceptual_loss expects (N, 3, H, W) images, got {a.shape}")
    extractor = feature_extractor(seed)
    terms = [mse(fa, fb) for fa, fb in zip(extractor.features(a), extractor.features(b))]
    total = terms[0]
    for term in terms[1:]:
        total = add(total, term)
    return mul(total, 1.0 / len(terms))


# MS-SSIM


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    coords = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(coords**2) / (2 * sigma**2))
    g /= g.sum()
    return np.outer(g, g)


def ms_ssim_scales(height: int, width: int, scales: int = len(MS_SSIM_WEIGHTS)) -> int:
    """Largest scale count <= ``scales`` whose coarsest level still fits one window."""
    if min(height, width) < SSIM_WINDOW:
        raise GeometryError(f"MS-SSIM needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {width}x{height}")
    count = max(1, min(scales, len(MS_SSIM_WEIGHTS)))
    while count > 1 and min(height, width) < 2 ** (count - 1) * SSIM_WINDOW:
        count -= 1
    return count


def ms_ssim_weights(count: int) -> np.ndarray:
    weights = np.asarray(MS_SSIM_WEIGHTS[:count], dtype=np.float64)
    return weights / weights.sum()


def _filter(x: Tensor, window: Tensor) -> Tensor:
    n, c, h, w = x.shape
    flat = reshape(x, (n * c, 1, h, w))
    out = conv2d(flat, window)
    return reshape(out, (n, c, out.shape[2], out.shape[3]))


def _ssim_maps(x: Tensor, y: Tensor, window: Tensor, peak: float) -> tuple[Tensor, Tensor]:
    """Luminance and contrast-structure maps at one scale."""
    c1 = (SSIM_K1 * peak) ** 2
    c2 = (SSIM_K2 * peak) ** 2
    mu_x = _filter(x, window)
    mu_y = _filter(y, window)
    sigma_xx = sub(_filter(mul(x, x), window), mul(mu_x, mu_x))
    sigma_yy = sub(_filter(mul(y, y), window), mul(mu_y, mu_y))
    sigma_xy = sub(_filter(mul(x, y), window), mul(mu_x, mu_y))
    luminance = div(add(mul(mul(mu_x, mu_y), 2.0), c1), add(add(mul(mu_x, mu_x), mul(mu_y, mu_y)), c1))
    cs = div(add(mul(sigma_xy, 2.0), c2), add(add(sigma_xx, sigma_yy), c2))
    return luminance, cs


def ms_ssim(a, b, scales: int = len(MS_SSIM_WEIGHTS), peak: float = 1.0) -> Tensor:
    """Differentiable multi-scale SSIM of (N, C, H, W) images.

    Statistics are averaged over all images and channels at each scale. The
    scale count shrinks for small inputs and the weights are renormalized.
    """
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"ms_ssim operands differ in shape: {a.shape} vs {b.shape}")
    count = ms_ssim_scales(a.shape[2], a.shape[3], scales)
    weights = ms_ssim_weights(count)
    window = Tensor(gaussian_window()[None, None], dtype=a.dtype)

    result: Optional[Tensor] = None
    for s in range(count):
        luminance, cs = _ssim_maps(a, b, window, peak)
        term = mean(cs) if s < count - 1 else mean(mul(luminance, cs))
        factor = power(clamp_min(term, CS_FLOOR), float(weights[s]))
        result = factor if result is None else mul(result, factor)
        if s < count - 1:
            h, w = a.shape[2] - a.shape[2] % 2, a.shape[3] - a.shape[3] % 2
            if (h, w) != a.shape[2:]:
                a, b = crop(a, 0, 0, h, w), crop(b, 0, 0, h, w)
            a, b = avg_pool2x(a), avg_pool2x(b)
    return result


def ms_ssim_loss(a, b, scales: int = len(MS_SSIM_WEIGHTS)) -> Tensor:
    return sub(1.0, ms_ssim(a, b, scales))


def ms_ssim_score(a, b, scales: int = len(MS_SSIM_WEIGHTS), peak: float = 1.0) -> float:
    """MS-SSIM as a float64 metric; identical inputs score exactly 1.0."""
    x = np.asarray(_as_array(a), dtype=np.float64)
    y = np.asarray(_as_array(b), dtype=np.float64)
    if x.shape != y.shape:
        raise ShapeError(f"ms_ssim operands differ in shape: {x.shape} vs {y.shape}")
    if x.ndim == 3:
        x, y = x[None], y[None]
    ms_ssim_scales(x.shape[2], x.shape[3], scales)
    if np.array_equal(x, y):
        return 1.0
    return float(ms_ssim(Tensor(x), Tensor(y), scales, peak).item())


# PSNR


def psnr(a, b, peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; identical inputs give ``float("inf")``."""
    x = np.asarray(_as_array(a), dtype=np.float64)
    y = np.asarray(_as_array(b), dtype=np.float64)
    if x.shape != y.shape:
        raise ShapeError(f"psnr operands differ in shape: {x.shape} vs {y.shape}")
    err = float(np.mean((x - y) ** 2))
    if err == 0.0:
        return float("inf")
    return float(10.0 * np.log10(peak**2 / err))


# Training objectives


def _add_weighted(total, term, weight: float):
    """``total + weight * term`` for floats or tensors; a zero weight leaves ``total`` untouched."""
    if not weight:
        return total
    scaled = mul(term, weight) if isinstance(term, Tensor) else weight * term
    if isinstance(total, Tensor) or isinstance(scaled, Tensor):
        return add(total, scaled)
    return total + scaled


def level1_objective(mse_term, perceptual_term, w: LossWeights):
    """MSE + lambda1 * perceptual."""
    return _add_weighted(mse_term, perceptual_term, w.lambda1)


def level0_objective(mse_term, perceptual_term, ms_ssim_term, w: LossWeights):
    """MSE + lambda1 * perceptual + lambda2 * (1 - MS-SSIM)."""
    structural = sub(1.0, ms_ssim_term) if isinstance(ms_ssim_term, Tensor) else 1.0 - ms_ssim_term
    return _add_weighted(level1_objective(mse_term, perceptual_term, w), structural, w.lambda2)


def level1_loss(rgb_half: Tensor, gt_half, w: LossWeights, seed: int = DEFAULT_PERCEPTUAL_SEED) -> Tensor:
    """Level-1 objective at half resolution."""
    gt_half = _as_tensor(gt_half)
    perceptual = perceptual_loss(rgb_half, gt_half, seed) if w.lambda1 else 0.0
    return level1_objective(mse(rgb_half, gt_half), perceptual, w)


def level0_loss(rgb_full: Tensor, gt, w: LossWeights, seed: int = DEFAULT_PERCEPTUAL_SEED) -> Tensor:
    """Level-0 objective at full resolution."""
    gt = _as_tensor(gt)
    perceptual = perceptual_loss(rgb_full, gt, seed) if w.lambda1 else 0.0
    structural = ms_ssim(rgb_full, gt) if w.lambda2 else 1.0
    return level0_objective(mse(rgb_full, gt), perceptual, structural, w)


class Regressor:
    """1x1 convolution mapping student tap channels onto teacher tap channels."""

    def __init__(self, in_channels: int, out_channels: int, seed: int = 0, bias: bool = True):
        self.conv = Conv("regressor", in_channels, out_channels, 1, 2, np.random.default_rng(seed), bias=bias)

    @property
    def in_channels(self) -> int:
        return self.conv.in_channels

    @property
    def out_channels(self) -> int:
        return self.conv.out_channels

    def __call__(self, x: Tensor) -> Tensor:
        return self.conv(x)

    def parameters(self):
        return self.conv.parameters()

    def state_dict(self, optimizer: bool = False) -> dict[str, np.ndarray]:
        state = {}
        for p in self.parameters():
            state[p.name] = p.data
            if optimizer:
                state[f"{p.name}.adam_m"] = p.adam_m
                state[f"{p.name}.adam_v"] = p.adam_v
                state[f"{p.name}.step"] = np.array([p.step_count], dtype=np.int64)
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]):
        for p in self.parameters():
            if p.name not in state:
                raise LoadError(f"checkpoint has no entry for regressor parameter '{p.name}'")
            if state[p.name].shape != p.shape:
                raise LoadError(f"shape mismatch at '{p.name}': checkpoint {state[p.name].shape}, regressor {p.shape}")
            p.data = np.array(state[p.name], dtype=p.dtype)
            if f"{p.name}.adam_m" in state:
                p.adam_m = np.array(state[f"{p.name}.adam_m"], dtype=p.dtype)
                p.adam_v = np.array(state[f"{p.name}.adam_v"], dtype=p.dtype)
                p.step_count = int(state[f"{p.name}.step"][0])


def distill_loss(f_student: Tensor, f_teacher: Tensor, regressor: Regressor) -> Tensor:
    """Feature MSE between the regressed student tap and the (detached) teacher tap."""
    if f_student.shape[1] != regressor.in_channels:
        raise ShapeError(f"student tap has {f_student.shape[1]} channels, regressor expects {regressor.in_channels}")
    projected = regressor(f_student)
    if projected.shape != f_teacher.shape:
        raise ShapeError(f"regressed student features {projected.shape} do not match teacher features {f_teacher.shape}")
    return mse(projected, f_teacher.detach())


def total_loss(level0: Union[Tensor, float], distill: Union[Tensor, float], alpha: float) -> Union[Tensor, float]:
    """``level0 + alpha * distill``."""
    if alpha < 0:
        raise ParameterError(f"alpha must be >= 0, got {alpha}")
    weighted = mul(distill, alpha) if isinstance(distill, Tensor) else alpha * distill
    if not isinstance(level0, Tensor) and not isinstance(weighted, Tensor):
        return level0 + weighted
    return add(level0, weighted)
