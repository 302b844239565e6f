"""Configuration management for the QxQ demosaicing toolkit."""

from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Optional, Union, get_args, get_origin

import yaml

from .cfa import CfaSpec
from .datapipe import SourceSettings
from .distill import DEFAULT_SIGMA, DEFAULT_SWITCH_EPOCHS, SATURATION_WINDOW, DistillSettings, TrainSettings
from .errors import ConfigError
from .losses import DEFAULT_PERCEPTUAL_SEED, LossWeights
from .model import ModelConfig


@dataclass
class ModelSection:
    """Student and teacher architectures, as presets plus field overrides."""

    scale: str = "desk"  # "desk" or "full" channel widths
    student: str = "student"
    teacher: str = "teacher"
    cfa: str = "4,RGGB"
    seed: int = 0
    student_overrides: dict = field(default_factory=dict)
    teacher_overrides: dict = field(default_factory=dict)

    def _build(self, preset: str, overrides: dict) -> ModelConfig:
        unknown = set(overrides) - set(ModelConfig.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown model override keys: {', '.join(sorted(unknown))}")
        options = {"cfa": CfaSpec.parse(self.cfa), "seed": self.seed, **overrides}
        cfg = ModelConfig.preset(preset, self.scale, **options)
        cfg.validate()
        return cfg

    def student_config(self) -> ModelConfig:
        return self._build(self.student, self.student_overrides)

    def teacher_config(self) -> ModelConfig:
        return self._build(self.teacher, self.teacher_overrides)


@dataclass
class LossSection:
    """Loss weights; level 1 and level 0 have their own lambda pair."""

    level1_lambda1: float = 0.1
    level1_lambda2: float = 0.0
    lambda1: float = 1.0
    lambda2: float = 0.4
    alpha: float = 10.0
    perceptual_seed: int = DEFAULT_PERCEPTUAL_SEED

    def level1_weights(self) -> LossWeights:
        return LossWeights(self.level1_lambda1, self.level1_lambda2, 0.0)

    def level0_weights(self) -> LossWeights:
        return LossWeights(self.lambda1, self.lambda2, self.alpha)


@dataclass
class TrainSection:
    seed: int = 0
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.99
    eps: float = 1e-8
    batch_size: int = 4
    level1_epochs: int = 5

    def settings(self, perceptual_seed: int = DEFAULT_PERCEPTUAL_SEED) -> TrainSettings:
        return TrainSettings(
            seed=self.seed,
            lr=self.lr,
            beta1=self.beta1,
            beta2=self.beta2,
            eps=self.eps,
            batch_size=self.batch_size,
            perceptual_seed=perceptual_seed,
        )


@dataclass
class DistillSection:
    """Level-0 schedule and the teacher bank it draws from."""

    mode: str = "schedule"  # saturation, schedule, fixed or solo
    sigma: float = DEFAULT_SIGMA
    window: int = SATURATION_WINDOW
    switch_epochs: list = field(default_factory=lambda: list(DEFAULT_SWITCH_EPOCHS))
    epochs: int = 30
    teacher_checkpoint_epochs: list = field(default_factory=lambda: [2, 4])
    teacher_level_epochs: int = 1
    carry_regressor: bool = False
    regressor_seed: int = 0

    def settings(self) -> DistillSettings:
        d = DistillSettings(
            mode=self.mode,
            sigma=self.sigma,
            window=self.window,
            switch_epochs=[int(e) for e in self.switch_epochs],
            epochs=self.epochs,
            carry_regressor=self.carry_regressor,
            regressor_seed=self.regressor_seed,
        )
        d.validate()
        return d


@dataclass
class DatasetSection:
    dir_3ccd: Optional[str] = None
    dir_common: Optional[str] = None
    manifest: str = "./data/manifest.jsonl"
    patch_size: int = 64
    stride: int = 64
    variance_threshold: float = 1e-3
    split_ratio: float = 0.97
    split_seed: int = 0
    gamma: float = 2.2
    raw_width: int = 1600
    raw_height: int = 1200
    black_level: int = 64
    workers: int = 1

    def source_settings(self) -> SourceSettings:
        return SourceSettings(
            patch_size=self.patch_size,
            stride=self.stride,
            raw_width=self.raw_width,
            raw_height=self.raw_height,
            black_level=self.black_level,
            gamma=self.gamma,
            variance_threshold=self.variance_threshold,
        )


@dataclass
class InferenceSection:
    tile: Optional[int] = None  # no tiling when unset
    overlap: int = 32


@dataclass
class StorageSection:
    run_root: str = "./runs"
    database_path: str = "./runs/runs.db"
    compress: bool = True


@dataclass
class LoggingSection:
    level: str = "INFO"
    file: Optional[str] = None


SECTIONS = ("model", "loss", "train", "distill", "dataset", "inference", "storage", "logging")


def _cast(value: Any, annotation: Any, where: str) -> Any:
    """Coerce a YAML value to a dataclass field type."""
    if value is None:
        return None
    if get_origin(annotation) is Union:
        annotation = next(a for a in get_args(annotation) if a is not type(None))
    try:
        if annotation is bool:
            if isinstance(value, str):
                return value.strip().lower() in ("true", "1", "yes", "on")
            return bool(value)
        if annotation is int:
            if isinstance(value, float) and not value.is_integer():
                raise ValueError(f"{value} is not an integer")
            return int(value)
        if annotation is float:
            return float(value)
        if annotation is str:
            return str(value)
        if annotation is list or get_origin(annotation) is list:
            if isinstance(value, str):
                return [int(v) for v in value.split(",") if v.strip()]
            return list(value)
        if annotation is dict:
            if not isinstance(value, dict):
                raise TypeError(f"expected a mapping, got {type(value).__name__}")
            return dict(value)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{where}: {e}") from None
    return value


@dataclass
class Config:
    """Main configuration container."""

    model: ModelSection = field(default_factory=ModelSection)
    loss: LossSection = field(default_factory=LossSection)
    train: TrainSection = field(default_factory=TrainSection)
    distill: DistillSection = field(default_factory=DistillSection)
    dataset: DatasetSection = field(default_factory=DatasetSection)
    inference: InferenceSection = field(default_factory=InferenceSection)
    storage: StorageSection = field(default_factory=StorageSection)
    logging: LoggingSection = field(default_factory=LoggingSection)

    @classmethod
    def load(cls, config_path: Optional[str] = None) -> "Config":
        """
        Load configuration from a YAML file.

        Args:
            config_path: Path to config file. If None, uses default locations.

        Returns:
            Config object with loaded values.

        Raises:
            ConfigError: if an explicitly named file is missing or any key is unknown.
        """
        config = cls()

        if config_path is None:
            search_paths = [
                Path("config.yaml"),
                Path("config.yml"),
                Path.home() / ".config" / "qxq-demosaic" / "config.yaml",
            ]
            for path in search_paths:
                if path.exists():
                    config_path = str(path)
                    break
        elif not Path(config_path).exists():
            raise ConfigError(f"config file not found: {config_path}")

        if config_path and Path(config_path).exists():
            with open(config_path, "r") as f:
                try:
                    data = yaml.safe_load(f) or {}
                except yaml.YAMLError as e:
                    raise ConfigError(f"cannot parse {config_path}: {e}") from None
            if not isinstance(data, dict):
                raise ConfigError(f"{config_path} must hold a mapping of sections")
            config._load_from_dict(data)

        return config

    def _load_from_dict(self, data: dict):
        """Load configuration from a dictionary."""
        unknown = set(data) - set(SECTIONS)
        if unknown:
            raise ConfigError(f"unknown config sections: {', '.join(sorted(unknown))}")
        for name in SECTIONS:
            if name not in data or data[name] is None:
                continue
            section_data = data[name]
            if not isinstance(section_data, dict):
                raise ConfigError(f"config section '{name}' must be a mapping")
            self.update(name, section_data)

    def update(self, section_name: str, values: dict):
        """Set fields of one section, casting each value to the field type."""
        section = getattr(self, section_name)
        known = {f.name: f for f in fields(section)}
        for key, value in values.items():
            if key not in known:
                raise ConfigError(f"unknown key '{section_name}.{key}'")
            setattr(section, key, _cast(value, known[key].type, f"{section_name}.{key}"))

    def validate(self):
        """Resolve every section once so bad values fail before any work starts."""
        self.model.student_config()
        if self.distill.mode != "solo":
            self.model.teacher_config()
        self.loss.level1_weights()
        self.loss.level0_weights()
        self.distill.settings()
        if self.train.batch_size < 1:
            raise ConfigError(f"train.batch_size must be positive, got {self.train.batch_size}")
        if self.train.level1_epochs < 0:
            raise ConfigError(f"train.level1_epochs must be >= 0, got {self.train.level1_epochs}")

    def save(self, config_path: Union[str, Path]):
        """Save configuration to a YAML file."""
        path = Path(config_path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as f:
            yaml.dump(self.to_dict(), f, default_flow_style=False, sort_keys=False)

    def to_dict(self) -> dict:
        """Convert configuration to a dictionary."""
        return {name: asdict(getattr(self, name)) for name in SECTIONS}


def get_default_config_path() -> Path:
    """Get the default configuration file path."""
    return Path("config.yaml")


def ensure_config_exists(config_path: Optional[str] = None) -> str:
    """Ensure a config file exists, creating default if necessary."""
    if config_path is None:
        config_path = str(get_default_config_path())

    path = Path(config_path)
    if not path.exists():
        Config().save(config_path)

    return config_path
