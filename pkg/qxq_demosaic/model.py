"""Student and teacher demosaicing networks built on :mod:`qxq_demosaic.ndtensor`.

Both networks share one layout. A mosaic batch (N, 1, H, W) is packed into
four half-resolution channels; pyramid level ``L`` runs at ``H / 2**L``. The
student keeps only levels 1 and 0; the teacher adds paired-conv levels 5..2
that feed upsampled features into the level above them.
"""

import logging
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence, Union

import numpy as np

from .cfa import CfaSpec, MosaicImage, gray_image, space_to_depth
from .errors import ConfigError, GeometryError, LoadError
from .ndtensor import (
    Parameter,
    Tensor,
    add,
    avg_pool2x,
    bilinear_upsample2x,
    concat,
    conv2d,
    leaky_relu,
    mul,
    pixel_shuffle,
    sigmoid,
    tanh,
)

logger = logging.getLogger(__name__)

LEAKY_SLOPE = 0.2
KERNEL_SET = (3, 5, 7, 9)
TAP_NAME = "level1.block0.out"

HEAD_ACTIVATIONS = ("sigmoid", "tanh", "identity")
UPSAMPLE_KINDS = ("subpixel", "bilinear")

# Channel widths at level 1 for each preset scale: (student, teacher)
SCALE_CHANNELS = {
    "full": (16, 32),
    "desk": (4, 8),
}

PRESETS = ("student", "teacher", "pynet", "baseline", "baseline+rl", "baseline+sp", "baseline+rl+sp")


@dataclass
class ModelConfig:
    """Architecture of one network.

    ``top_level`` is 1 for the student and 5 for the teacher; level 1 always
    has ``base_channels`` filters and teacher level ``L`` has
    ``base_channels * 2**(L-1)``.
    """

    base_channels: int = 4
    top_level: int = 1
    kernel_set: tuple = KERNEL_SET
    level1_blocks: int = 3
    lower_blocks: int = 2
    head_activation: str = "sigmoid"
    use_residual_gray: bool = True
    upsample_kind: str = "subpixel"
    bias: bool = True
    seed: int = 0
    cfa: CfaSpec = field(default_factory=CfaSpec)

    def __post_init__(self):
        if isinstance(self.cfa, str):
            self.cfa = CfaSpec.parse(self.cfa)
        self.kernel_set = tuple(int(k) for k in self.kernel_set)

    @property
    def kind(self) -> str:
        return "student" if self.top_level == 1 else "teacher"

    def validate(self):
        if self.base_channels < 2:
            raise ConfigError(f"base_channels must be at least 2, got {self.base_channels}")
        if self.top_level not in (1, 2, 3, 4, 5):
            raise ConfigError(f"top_level must be between 1 and 5, got {self.top_level}")
        if not self.kernel_set or any(k < 1 or k % 2 == 0 for k in self.kernel_set):
            raise ConfigError(f"kernel_set needs odd positive sizes, got {self.kernel_set}")
        if self.base_channels % len(self.kernel_set):
            raise ConfigError(
                f"base_channels {self.base_channels} is not divisible by the {len(self.kernel_set)} kernel branches"
            )
        if self.level1_blocks < 1 or self.lower_blocks < 1:
            raise ConfigError("every level needs at least one block")
        if self.head_activation not in HEAD_ACTIVATIONS:
            raise ConfigError(f"head_activation must be one of {HEAD_ACTIVATIONS}, got '{self.head_activation}'")
        if self.upsample_kind not in UPSAMPLE_KINDS:
            raise ConfigError(f"upsample_kind must be one of {UPSAMPLE_KINDS}, got '{self.upsample_kind}'")

    def channels(self, level: int) -> int:
        return self.base_channels * 2 ** (max(level, 1) - 1)

    @classmethod
    def preset(cls, name: str, scale: str = "desk", **overrides) -> "ModelConfig":
        """Comparison architectures.

        ``student`` and ``teacher`` carry both enhancements (gray residual and
        sub-pixel upsampling); ``pynet`` is the plain 5-level network; the
        ``baseline*`` family is the student with enhancements toggled.
        """
        if scale not in SCALE_CHANNELS:
            raise ConfigError(f"unknown preset scale '{scale}' (expected one of {sorted(SCALE_CHANNELS)})")
        student_channels, teacher_channels = SCALE_CHANNELS[scale]
        if name == "student":
            cfg = cls(base_channels=student_channels, top_level=1)
        elif name == "teacher":
            cfg = cls(base_channels=teacher_channels, top_level=5)
        elif name == "pynet":
            cfg = cls(base_channels=teacher_channels, top_level=5, use_residual_gray=False, upsample_kind="bilinear")
        elif name.startswith("baseline"):
            flags = set(name.split("+")[1:])
            if name.split("+")[0] != "baseline" or not flags <= {"rl", "sp"}:
                raise ConfigError(f"unknown preset '{name}' (expected one of {PRESETS})")
            cfg = cls(
                base_channels=student_channels,
                top_level=1,
                use_residual_gray="rl" in flags,
                upsample_kind="subpixel" if "sp" in flags else "bilinear",
            )
        else:
            raise ConfigError(f"unknown preset '{name}' (expected one of {PRESETS})")
        return replace(cfg, **overrides)

    def to_dict(self) -> dict:
        return {
            "base_channels": self.base_channels,
            "top_level": self.top_level,
            "kernel_set": list(self.kernel_set),
            "level1_blocks": self.level1_blocks,
            "lower_blocks": self.lower_blocks,
            "head_activation": self.head_activation,
            "use_residual_gray": self.use_residual_gray,
            "upsample_kind": self.upsample_kind,
            "bias": self.bias,
            "seed": self.seed,
            "cfa": str(self.cfa),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {', '.join(sorted(unknown))}")
        return cls(**data)


class Conv:
    """A 2-D convolution layer with same padding.

    ``scale`` is the resolution divisor of the layer's output relative to the
    full-resolution mosaic; MAC counts use it.
    """

    def __init__(
        self,
        path: str,
        in_channels: int,
        out_channels: int,
        kernel: int,
        scale: int,
        rng: np.random.Generator,
        bias: bool = True,
    ):
        self.path = path
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel = kernel
        self.scale = scale
        self.weight = Parameter(kaiming_uniform(rng, (out_channels, in_channels, kernel, kernel)), f"{path}.weight")
        self.bias = Parameter(np.zeros(out_channels, dtype=np.float32), f"{path}.bias") if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d(x, self.weight, self.bias, padding=self.kernel // 2)

    def parameters(self) -> list[Parameter]:
        return [self.weight] if self.bias is None else [self.weight, self.bias]

    def param_count(self) -> int:
        return sum(p.numel() for p in self.parameters())

    def mac_count(self, height: int, width: int) -> int:
        return self.out_channels * self.in_channels * self.kernel**2 * (height // self.scale) * (width // self.scale)


def kaiming_uniform(rng: np.random.Generator, shape: tuple, slope: float = LEAKY_SLOPE) -> np.ndarray:
    fan_in = int(np.prod(shape[1:]))
    gain = np.sqrt(2.0 / (1.0 + slope**2))
    bound = gain * np.sqrt(3.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(np.float32)


@dataclass
class NetworkOutput:
    """Forward results.

    ``rgb_full`` is the level-0 image (None when the pass stopped above level 0),
    ``rgb_half`` the level-1 image head, ``levels`` every computed image head
    keyed by level, and ``tap`` the level-1 early feature map.
    """

    rgb_full: Optional[Tensor]
    rgb_half: Optional[Tensor]
    tap: Optional[Tensor]
    levels: dict = field(default_factory=dict)


StudentOutput = NetworkOutput


class Network:
    """A built student or teacher network.

    Layers are stored by path in registration order; that order is also the
    order in which the builder drew their initial weights.
    """

    def __init__(self, cfg: ModelConfig):
        cfg.validate()
        self.cfg = cfg
        self.layers: dict[str, Conv] = {}
        self.feature_taps: dict[str, Tensor] = {}
        self._rng = np.random.default_rng(cfg.seed)
        self._build()
        del self._rng

    @property
    def kind(self) -> str:
        return self.cfg.kind

    # Construction

    def _conv(self, path: str, cin: int, cout: int, kernel: int, scale: int) -> Conv:
        layer = Conv(path, cin, cout, kernel, scale, self._rng, bias=self.cfg.bias)
        self.layers[path] = layer
        return layer

    def _build(self):
        cfg = self.cfg
        for level in range(cfg.top_level, 1, -1):
            channels = cfg.channels(level)
            cin = 4 if level == cfg.top_level else 4 + cfg.channels(level + 1)
            for b in range(cfg.lower_blocks):
                self._conv(f"level{level}.block{b}.conv0", cin if b == 0 else channels, channels, 3, 2**level)
                self._conv(f"level{level}.block{b}.conv1", channels, channels, 3, 2**level)
            self._conv(f"level{level}.head", channels, 3, 3, 2**level)
            if cfg.upsample_kind == "subpixel":
                self._conv(f"level{level - 1}.up", channels, 4 * channels, 3, 2**level)

        channels = cfg.channels(1)
        cin = 4 if cfg.top_level == 1 else 4 + cfg.channels(2)
        branch = channels // len(cfg.kernel_set)
        for b in range(cfg.level1_blocks):
            for k in cfg.kernel_set:
                self._conv(f"level1.block{b}.k{k}", cin if b == 0 else channels, branch, k, 2)
        self._conv("level1.head", channels, 3, 3, 2)
        if cfg.upsample_kind == "subpixel":
            self._conv("level0.up", channels, 4 * channels, 3, 2)
        self._conv("level0.out", channels + (1 if cfg.use_residual_gray else 0), 3, 1, 1)

    # Forward

    def _head(self, x: Tensor) -> Tensor:
        kind = self.cfg.head_activation
        if kind == "sigmoid":
            return sigmoid(x)
        if kind == "tanh":
            return add(mul(tanh(x), 0.5), 0.5)
        return x

    def _upsample(self, x: Tensor, level: int) -> Tensor:
        """Double the resolution of level-(level+1) features for use at ``level``."""
        if self.cfg.upsample_kind == "bilinear":
            return bilinear_upsample2x(x)
        return leaky_relu(subpixel_upsample(x, self.layers[f"level{level}.up"]), LEAKY_SLOPE)

    def _multiconv(self, x: Tensor, block: int) -> Tensor:
        branches = [self.layers[f"level1.block{block}.k{k}"](x) for k in self.cfg.kernel_set]
        out = branches[0] if len(branches) == 1 else concat(branches, axis=1)
        return leaky_relu(out, LEAKY_SLOPE)

    def _lower_level(self, x: Tensor, level: int) -> Tensor:
        for b in range(self.cfg.lower_blocks):
            x = leaky_relu(self.layers[f"level{level}.block{b}.conv0"](x), LEAKY_SLOPE)
            x = leaky_relu(self.layers[f"level{level}.block{b}.conv1"](x), LEAKY_SLOPE)
        return x

    def _level1(self, x: Tensor, taps: dict[str, Tensor]) -> Tensor:
        outputs = []
        for b in range(self.cfg.level1_blocks):
            if b >= 2:
                x = add(outputs[b - 1], outputs[b - 2])
            x = self._multiconv(x, b)
            outputs.append(x)
            if b == 0:
                taps[TAP_NAME] = x
        return x

    def check_input(self, height: int, width: int):
        multiple = max(self.cfg.cfa.period, 2**self.cfg.top_level)
        if height % multiple or width % multiple:
            raise GeometryError(f"{self.kind} input {width}x{height} must be a multiple of {multiple}")

    def forward(self, mosaic: Union[Tensor, MosaicImage], stop_level: int = 0) -> NetworkOutput:
        """Run the pyramid from the top level down to ``stop_level``.

        ``mosaic`` is a MosaicImage or an (N, 1, H, W) tensor of CFA samples.
        """
        x = gray_image(mosaic) if isinstance(mosaic, MosaicImage) else mosaic
        if x.ndim != 4 or x.shape[1] != 1:
            raise GeometryError(f"network input must be (N, 1, H, W), got {x.shape}")
        self.check_input(x.shape[2], x.shape[3])
        if not 0 <= stop_level <= self.cfg.top_level:
            raise ConfigError(f"stop_level {stop_level} outside 0..{self.cfg.top_level}")

        # local to this pass, published to feature_taps at the end
        taps: dict[str, Tensor] = {}
        packed = space_to_depth(x, 2)
        scaled = {1: packed}
        for level in range(2, self.cfg.top_level + 1):
            scaled[level] = avg_pool2x(scaled[level - 1])

        images: dict[int, Tensor] = {}
        features: Optional[Tensor] = None
        for level in range(self.cfg.top_level, 0, -1):
            inputs = scaled[level] if features is None else concat([scaled[level], self._upsample(features, level)])
            features = self._lower_level(inputs, level) if level >= 2 else self._level1(inputs, taps)
            taps[f"level{level}.out"] = features
            if level == stop_level or level == 1:
                images[level] = self._head(self.layers[f"level{level}.head"](features))
            if level == stop_level:
                self.feature_taps = taps
                return NetworkOutput(None, images.get(1), taps.get(TAP_NAME), images)

        up = self._upsample(features, 0)
        if self.cfg.use_residual_gray:
            up = concat([up, x])
        rgb_full = self._head(self.layers["level0.out"](up))
        images[0] = rgb_full
        self.feature_taps = taps
        return NetworkOutput(rgb_full, images[1], taps[TAP_NAME], images)

    __call__ = forward

    # Parameters

    def parameters(self) -> list[Parameter]:
        return [p for layer in self.layers.values() for p in layer.parameters()]

    def named_parameters(self) -> dict[str, Parameter]:
        return {p.name: p for p in self.parameters()}

    def parameters_for_level(self, level: int) -> list[Parameter]:
        """Parameters that receive gradients from a loss on the level-``level`` image.

        Covers every level at or above ``level`` but drops image heads of the
        levels above it.
        """
        selected = []
        for path, layer in self.layers.items():
            layer_level = int(path.split(".")[0][len("level") :])
            if layer_level < level:
                continue
            if path.endswith(".head") and layer_level != level:
                continue
            selected.extend(layer.parameters())
        return selected

    def param_count(self) -> int:
        return sum(layer.param_count() for layer in self.layers.values())

    def mac_count(self, height: int, width: int) -> int:
        """Multiply-accumulates of one full forward pass (image heads above level 1 excluded)."""
        return sum(row[2] for row in self.summary(height, width) if row[2] is not None)

    def summary(self, height: int = 448, width: int = 448) -> list[tuple]:
        """Rows of (layer path, parameter count, MACs) for an input of ``width`` x ``height``.

        Heads of levels 2..5 only run during level-wise training; their MACs are
        reported as None.
        """
        rows = []
        for path, layer in self.layers.items():
            training_only = path.endswith(".head") and path != "level1.head"
            rows.append((path, layer.param_count(), None if training_only else layer.mac_count(height, width)))
        return rows

    # Checkpoint state

    def state_dict(self, optimizer: bool = False) -> dict[str, np.ndarray]:
        state = {}
        for name, p in self.named_parameters().items():
            state[name] = p.data
            if optimizer:
                state[f"{name}.adam_m"] = p.adam_m
                state[f"{name}.adam_v"] = p.adam_v
                state[f"{name}.step"] = np.array([p.step_count], dtype=np.int64)
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]):
        """Copy arrays into the parameters; optimizer entries are loaded when present."""
        params = self.named_parameters()
        for name, p in params.items():
            if name not in state:
                raise LoadError(f"checkpoint has no entry for layer parameter '{name}'")
            if state[name].shape != p.shape:
                raise LoadError(f"shape mismatch at '{name}': checkpoint {state[name].shape}, model {p.shape}")
        extra = [k for k in state if k.rsplit(".", 1)[0] not in params and k not in params]
        if extra:
            raise LoadError(f"checkpoint entry '{extra[0]}' has no matching layer in this architecture")
        for name, p in params.items():
            p.data = np.array(state[name], dtype=p.dtype)
            if f"{name}.adam_m" in state:
                p.adam_m = np.array(state[f"{name}.adam_m"], dtype=p.dtype)
                p.adam_v = np.array(state[f"{name}.adam_v"], dtype=p.dtype)
                p.step_count = int(state[f"{name}.step"][0])
            else:
                p.reset_optimizer_state()

    def __repr__(self) -> str:
        return f"Network({self.kind}, base={self.cfg.base_channels}, params={self.param_count():,})"


def multiconv_block(
    x: Tensor,
    channels: int,
    kernel_set: Sequence[int] = KERNEL_SET,
    seed: int = 0,
    bias: bool = True,
) -> tuple[Tensor, list[Conv]]:
    """Stand-alone multi-kernel block: parallel same-padding convs, concatenated, leaky-ReLU.

    Returns the output together with the freshly initialized branch layers.
    """
    if channels % len(kernel_set):
        raise ConfigError(f"{channels} channels cannot be split evenly across kernels {tuple(kernel_set)}")
    rng = np.random.default_rng(seed)
    branch = channels // len(kernel_set)
    layers = [Conv(f"multiconv.k{k}", x.shape[1], branch, k, 1, rng, bias=bias) for k in kernel_set]
    outs = [layer(x) for layer in layers]
    out = outs[0] if len(outs) == 1 else concat(outs, axis=1)
    return leaky_relu(out, LEAKY_SLOPE), layers


def subpixel_upsample(x: Tensor, conv: Conv) -> Tensor:
    """3x3 conv C -> 4C followed by a factor-2 pixel shuffle."""
    if conv.out_channels != 4 * x.shape[1] or conv.in_channels != x.shape[1]:
        raise ConfigError(f"sub-pixel conv must map {x.shape[1]} -> {4 * x.shape[1]} channels")
    return pixel_shuffle(conv(x), 2)


def build_student(cfg: ModelConfig) -> Network:
    if cfg.top_level != 1:
        raise ConfigError(f"a student has levels 1 and 0 only, got top_level={cfg.top_level}")
    net = Network(cfg)
    logger.debug("built student: %s", net)
    return net


def build_teacher(cfg: ModelConfig) -> Network:
    if cfg.top_level < 2:
        raise ConfigError(f"a teacher needs levels above 1, got top_level={cfg.top_level}")
    net = Network(cfg)
    logger.debug("built teacher: %s", net)
    return net


def build_network(cfg: ModelConfig) -> Network:
    return build_student(cfg) if cfg.top_level == 1 else build_teacher(cfg)


def param_count(net: Network) -> int:
    return net.param_count()


def mac_count(net: Network, height: int, width: int) -> int:
    return net.mac_count(height, width)


def upsample_param_delta(cfg: ModelConfig) -> int:
    """Parameters the sub-pixel convs add over bilinear upsampling for ``cfg``."""
    total = 0
    for level in range(1, cfg.top_level + 1):
        c = cfg.channels(level)
        total += 36 * c * c + (4 * c if cfg.bias else 0)
    return total


def residual_gray_param_delta(cfg: ModelConfig) -> int:
    """Weights of the gray-image input channel in the final 1x1 conv."""
    return 3
