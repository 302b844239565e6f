"""Training orchestration: level-1 pretraining, teacher banking and progressive distillation."""

import logging
import signal
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np

from .datapipe import PatchDataset, downscale2x
from .errors import ConfigError, DataError, ShapeError
from .losses import (
    DEFAULT_PERCEPTUAL_SEED,
    LossWeights,
    Regressor,
    distill_loss,
    level0_loss,
    level1_loss,
    total_loss,
)
from .model import ModelConfig, Network, build_teacher
from .ndtensor import Tensor, adam_step, backward, mse, no_grad

logger = logging.getLogger(__name__)

MODES = ("saturation", "schedule", "fixed", "solo")
SATURATION_WINDOW = 5
DEFAULT_SIGMA = 1e-6
DEFAULT_SWITCH_EPOCHS = (7, 20)

# Stage codes mixed into per-epoch seeds
STAGE_SEEDS = {"level1": 1, "teacher": 2, "level0": 3}


@dataclass
class TrainSettings:
    """Optimizer and batching shared by every stage."""

    seed: int = 0
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.99
    eps: float = 1e-8
    batch_size: int = 4
    perceptual_seed: int = DEFAULT_PERCEPTUAL_SEED


@dataclass
class DistillSettings:
    """Level-0 schedule.

    ``epochs`` caps the level-0 stage so a run ends even if saturation never fires.
    """

    mode: str = "schedule"
    sigma: float = DEFAULT_SIGMA
    window: int = SATURATION_WINDOW
    switch_epochs: list = field(default_factory=lambda: list(DEFAULT_SWITCH_EPOCHS))
    epochs: int = 30
    carry_regressor: bool = False
    regressor_seed: int = 0

    def validate(self):
        if self.mode not in MODES:
            raise ConfigError(f"distillation mode must be one of {MODES}, got '{self.mode}'")
        if self.sigma < 0:
            raise ConfigError(f"sigma must be >= 0, got {self.sigma}")
        if self.window < 1:
            raise ConfigError(f"saturation window must be positive, got {self.window}")
        if self.epochs < 0:
            raise ConfigError(f"epoch budget must be >= 0, got {self.epochs}")
        if any(b <= a for a, b in zip(self.switch_epochs, self.switch_epochs[1:])) or any(
            e < 1 for e in self.switch_epochs
        ):
            raise ConfigError(f"switch epochs must be positive and strictly increasing, got {self.switch_epochs}")


# Saturation


@dataclass
class SaturationDetector:
    """Per-epoch history of the monitored loss for the current phase."""

    window: int = SATURATION_WINDOW
    sigma: float = DEFAULT_SIGMA
    history: list = field(default_factory=list)

    def record(self, value: float):
        self.history.append(float(value))

    def reset(self):
        self.history = []


def detect_saturation(d: SaturationDetector) -> bool:
    """True once the population variance of the last ``window`` entries drops below sigma."""
    if len(d.history) < d.window:
        return False
    return float(np.var(np.asarray(d.history[-d.window :], dtype=np.float64))) < d.sigma


# Teacher bank


@dataclass
class TeacherBank:
    """Teacher snapshots T1..Tk taken at increasing training epochs."""

    cfg: ModelConfig
    epochs: list
    snapshots: list

    def __post_init__(self):
        if not self.snapshots:
            raise ConfigError("a teacher bank needs at least one checkpoint")
        if len(self.epochs) != len(self.snapshots):
            raise ConfigError(f"{len(self.epochs)} epochs for {len(self.snapshots)} teacher snapshots")
        if any(b <= a for a, b in zip(self.epochs, self.epochs[1:])):
            raise ConfigError(f"teacher checkpoint epochs must be strictly increasing, got {self.epochs}")

    def __len__(self) -> int:
        return len(self.snapshots)

    def teacher(self, index: int) -> Network:
        """Build T_index (1-based)."""
        if not 1 <= index <= len(self):
            raise ConfigError(f"teacher index {index} outside 1..{len(self)}")
        net = build_teacher(self.cfg)
        net.load_state_dict(self.snapshots[index - 1])
        return net


# Run state


@dataclass
class EpochRecord:
    """One trained epoch.

    ``transition`` names the phase entered after this epoch, or None.
    """

    stage: str
    epoch: int
    phase: str
    loss: float
    monitored_loss: float
    transition: Optional[str] = None

    def event(self) -> dict:
        return {
            "epoch": self.epoch,
            "phase": self.phase,
            "monitored_loss": self.monitored_loss,
            "transition": self.transition,
        }


@dataclass
class TrainState:
    """Where a stage stands; serialized into checkpoint metadata for resume."""

    stage: str = "level1"
    epoch: int = 0
    phase_index: int = 0
    history: list = field(default_factory=list)
    completed: bool = False

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainState":
        return cls(**{k: data[k] for k in cls.__dataclass_fields__ if k in data})


def level0_phases(mode: str, k: int) -> list[str]:
    if mode == "solo":
        return ["solo"]
    if mode == "fixed":
        return [f"distill({k})"]
    return ["solo"] + [f"distill({i})" for i in range(1, k + 1)]


def phase_teacher(phase: str) -> int:
    """Teacher index of a ``distill(i)`` phase, 0 for solo."""
    if phase.startswith("distill("):
        return int(phase[len("distill(") : -1])
    return 0


def replay_transitions(
    events: list[dict], sigma: float, teachers: int, window: int = SATURATION_WINDOW
) -> list[int]:
    """Epochs at which saturation-mode switching fires when replaying logged losses.

    Follows the trainer: the detector resets on every switch and stops firing
    once the last of the ``teachers`` distillation phases is reached.
    """
    detector = SaturationDetector(window, sigma)
    remaining = len(level0_phases("saturation", teachers)) - 1
    fired = []
    for e in events:
        detector.record(e["monitored_loss"])
        if len(fired) < remaining and detect_saturation(detector):
            fired.append(e["epoch"])
            detector.reset()
    return fired


def _batch_tensors(batch) -> tuple[Tensor, Tensor, Tensor]:
    mosaic, gt_half, gt = batch
    return Tensor(mosaic), Tensor(gt_half), Tensor(gt)


def _level_target(gt: np.ndarray, level: int) -> np.ndarray:
    for _ in range(level):
        gt = downscale2x(gt)
    return gt


class Trainer:
    """Runs the training stages and reports every finished epoch.

    ``running`` is cleared by SIGINT/SIGTERM once handlers are installed; the
    current epoch finishes and the stage returns an incomplete state.
    """

    def __init__(
        self,
        settings: Optional[TrainSettings] = None,
        distill: Optional[DistillSettings] = None,
        level1_weights: Optional[LossWeights] = None,
        level0_weights: Optional[LossWeights] = None,
    ):
        self.settings = settings or TrainSettings()
        self.distill = distill or DistillSettings()
        self.distill.validate()
        self.level1_weights = level1_weights or LossWeights.level1()
        self.level0_weights = level0_weights or LossWeights.level0()
        self.running = True
        self.records: list[EpochRecord] = []
        self._progress_callback: Optional[Callable[[str], None]] = None
        self._epoch_callback: Optional[Callable[..., None]] = None

    def install_signal_handlers(self):
        signal.signal(signal.SIGINT, self._handle_shutdown)
        signal.signal(signal.SIGTERM, self._handle_shutdown)

    def _handle_shutdown(self, signum, frame):
        self.running = False
        self._log_progress("Received shutdown signal, pausing after the current epoch...")

    def set_progress_callback(self, callback: Callable[[str], None]):
        self._progress_callback = callback

    def set_epoch_callback(self, callback: Callable[..., None]):
        """``callback(record, state, student, regressor)`` after every epoch."""
        self._epoch_callback = callback

    def _log_progress(self, message: str):
        if self._progress_callback:
            self._progress_callback(message)
        else:
            logger.info(message)

    def _finish_epoch(self, record: EpochRecord, state: TrainState, student, regressor=None):
        self.records.append(record)
        message = f"[{record.stage}] epoch {record.epoch} {record.phase}: loss {record.loss:.6f}"
        if record.transition:
            message += f" -> {record.transition}"
        self._log_progress(message)
        if self._epoch_callback:
            self._epoch_callback(record, state, student, regressor)

    def _rng(self, stage: str, epoch: int) -> np.random.Generator:
        return np.random.default_rng([self.settings.seed, STAGE_SEEDS[stage], epoch])

    def _step(self, loss: Tensor, params):
        s = self.settings
        backward(loss)
        adam_step(params, lr=s.lr, beta1=s.beta1, beta2=s.beta2, eps=s.eps)

    # Level 1

    def train_level1(
        self, student: Network, dataset: PatchDataset, epochs: int, state: Optional[TrainState] = None
    ) -> TrainState:
        """Fit the level-1 image head to half-resolution targets; no distillation."""
        if len(dataset) == 0:
            raise DataError("level-1 training needs a non-empty dataset")
        state = state or TrainState(stage="level1")
        params = student.parameters_for_level(1)
        w = self.level1_weights
        while state.epoch < epochs and self.running:
            epoch = state.epoch + 1
            losses = []
            for batch in dataset.batches(self.settings.batch_size, self._rng("level1", epoch)):
                mosaic, gt_half, _ = _batch_tensors(batch)
                out = student.forward(mosaic, stop_level=1)
                loss = level1_loss(out.rgb_half, gt_half, w, self.settings.perceptual_seed)
                losses.append(loss.item())
                self._step(loss, params)
            state.epoch = epoch
            mean_loss = float(np.mean(losses))
            self._finish_epoch(EpochRecord("level1", epoch, "level1", mean_loss, mean_loss), state, student)
        state.completed = state.epoch >= epochs
        return state

    # Teacher

    def train_teacher(
        self,
        teacher_cfg: ModelConfig,
        dataset: PatchDataset,
        checkpoint_epochs: list,
        level_epochs: int = 1,
    ) -> Optional[TeacherBank]:
        """Train the teacher level by level, top level first.

        Levels ``top..1`` get ``level_epochs`` each; level 0 then runs until the
        last entry of ``checkpoint_epochs``, snapshotting at every listed epoch.
        Returns None when interrupted.
        """
        checkpoint_epochs = [int(e) for e in checkpoint_epochs]
        if not checkpoint_epochs:
            raise ConfigError("train_teacher needs at least one checkpoint epoch")
        if any(b <= a for a, b in zip(checkpoint_epochs, checkpoint_epochs[1:])) or checkpoint_epochs[0] < 1:
            raise ConfigError(f"checkpoint epochs must be positive and strictly increasing, got {checkpoint_epochs}")
        if len(dataset) == 0:
            raise DataError("teacher training needs a non-empty dataset")

        teacher = build_teacher(teacher_cfg)
        state = TrainState(stage="teacher")
        epoch = 0
        for level in range(teacher_cfg.top_level, 0, -1):
            params = teacher.parameters_for_level(level)
            for _ in range(level_epochs):
                if not self.running:
                    return None
                epoch += 1
                losses = []
                for batch in dataset.batches(self.settings.batch_size, self._rng("teacher", epoch)):
                    mosaic, _, gt = batch
                    out = teacher.forward(Tensor(mosaic), stop_level=level)
                    target = Tensor(_level_target(gt, level))
                    if level == 1:
                        loss = level1_loss(out.levels[1], target, self.level1_weights, self.settings.perceptual_seed)
                    else:
                        loss = mse(out.levels[level], target)
                    losses.append(loss.item())
                    self._step(loss, params)
                state.epoch = epoch
                mean_loss = float(np.mean(losses))
                self._finish_epoch(EpochRecord("teacher", epoch, f"level{level}", mean_loss, mean_loss), state, teacher)

        params = teacher.parameters_for_level(0)
        snapshots = []
        for level0_epoch in range(1, checkpoint_epochs[-1] + 1):
            if not self.running:
                return None
            epoch += 1
            losses = []
            for batch in dataset.batches(self.settings.batch_size, self._rng("teacher", epoch)):
                mosaic, _, gt = _batch_tensors(batch)
                out = teacher.forward(mosaic)
                loss = level0_loss(out.rgb_full, gt, self.level0_weights, self.settings.perceptual_seed)
                losses.append(loss.item())
                self._step(loss, params)
            state.epoch = epoch
            mean_loss = float(np.mean(losses))
            banked = None
            if level0_epoch in checkpoint_epochs:
                snapshots.append({name: data.copy() for name, data in teacher.state_dict().items()})
                banked = f"T{len(snapshots)}"
            self._finish_epoch(EpochRecord("teacher", epoch, "level0", mean_loss, mean_loss, banked), state, teacher)
        return TeacherBank(teacher_cfg, checkpoint_epochs, snapshots)

    # Level 0

    def new_regressor(self, student: Network, teacher_cfg: ModelConfig) -> Regressor:
        return Regressor(
            student.cfg.channels(1), teacher_cfg.channels(1), seed=self.distill.regressor_seed, bias=student.cfg.bias
        )

    def train_level0(
        self,
        student: Network,
        bank: Optional[TeacherBank],
        dataset: PatchDataset,
        state: Optional[TrainState] = None,
        regressor: Optional[Regressor] = None,
    ) -> tuple[TrainState, Optional[Regressor]]:
        """Train the whole student against the level-0 loss, switching teachers per mode.

        A fresh ``state`` resets the optimizer moments carried over from level 1.
        """
        d = self.distill
        if len(dataset) == 0:
            raise DataError("level-0 training needs a non-empty dataset")
        if d.mode != "solo" and bank is None:
            raise ConfigError(f"mode '{d.mode}' needs a teacher bank")
        k = len(bank) if bank is not None else 0
        phases = level0_phases(d.mode, k)

        if state is None:
            state = TrainState(stage="level0")
            for p in student.parameters():
                p.reset_optimizer_state()
        detector = SaturationDetector(d.window, d.sigma, list(state.history))
        w = self.level0_weights

        teacher: Optional[Network] = None
        if phase_teacher(phases[state.phase_index]):
            teacher = bank.teacher(phase_teacher(phases[state.phase_index]))
            if regressor is None:
                regressor = self.new_regressor(student, bank.cfg)

        student_params = student.parameters_for_level(0)
        while state.epoch < d.epochs and self.running:
            epoch = state.epoch + 1
            phase = phases[state.phase_index]
            losses, monitored = [], []
            for batch in dataset.batches(self.settings.batch_size, self._rng("level0", epoch)):
                mosaic, _, gt = _batch_tensors(batch)
                out = student.forward(mosaic)
                image_loss = level0_loss(out.rgb_full, gt, w, self.settings.perceptual_seed)
                if teacher is None:
                    loss = image_loss
                    params = student_params
                    monitored.append(mse(out.rgb_full, gt).item())
                else:
                    with no_grad():
                        teacher_tap = teacher.forward(mosaic, stop_level=1).tap
                    if teacher_tap.shape[2:] != out.tap.shape[2:]:
                        raise ShapeError(f"student tap {out.tap.shape} and teacher tap {teacher_tap.shape} differ in size")
                    feature_loss = distill_loss(out.tap, teacher_tap, regressor)
                    loss = total_loss(image_loss, feature_loss, w.alpha)
                    params = student_params + regressor.parameters()
                    monitored.append(feature_loss.item())
                losses.append(loss.item())
                self._step(loss, params)

            state.epoch = epoch
            detector.record(float(np.mean(monitored)))
            transition = self._next_phase(phases, state.phase_index, epoch, detector)
            if transition is not None:
                state.phase_index += 1
                detector.reset()
                teacher = bank.teacher(phase_teacher(transition))
                if regressor is None or not d.carry_regressor:
                    regressor = self.new_regressor(student, bank.cfg)
            state.history = list(detector.history)
            record = EpochRecord("level0", epoch, phase, float(np.mean(losses)), float(np.mean(monitored)), transition)
            self._finish_epoch(record, state, student, regressor)

        state.completed = state.epoch >= d.epochs
        return state, regressor

    def _next_phase(
        self, phases: list[str], phase_index: int, epoch: int, detector: SaturationDetector
    ) -> Optional[str]:
        if phase_index >= len(phases) - 1:
            return None
        if self.distill.mode == "schedule":
            switches = self.distill.switch_epochs
            if phase_index < len(switches) and epoch == switches[phase_index]:
                return phases[phase_index + 1]
            return None
        if self.distill.mode == "saturation" and detect_saturation(detector):
            return phases[phase_index + 1]
        return None


@dataclass
class ProgressiveResult:
    checkpoint: dict
    events: list
    regressor: Optional[Regressor]
    state: TrainState


def train_level1(
    student: Network,
    dataset: PatchDataset,
    epochs: int,
    w: Optional[LossWeights] = None,
    settings: Optional[TrainSettings] = None,
) -> dict:
    """Level-1 pretraining; returns the student's parameter checkpoint."""
    Trainer(settings, level1_weights=w).train_level1(student, dataset, epochs)
    return {name: data.copy() for name, data in student.state_dict().items()}


def train_teacher(
    teacher_cfg: ModelConfig,
    dataset: PatchDataset,
    checkpoint_epochs: list,
    level_epochs: int = 1,
    settings: Optional[TrainSettings] = None,
) -> TeacherBank:
    return Trainer(settings).train_teacher(teacher_cfg, dataset, checkpoint_epochs, level_epochs)


def train_level0_progressive(
    student: Network,
    bank: Optional[TeacherBank],
    dataset: PatchDataset,
    distill: Optional[DistillSettings] = None,
    w: Optional[LossWeights] = None,
    settings: Optional[TrainSettings] = None,
) -> ProgressiveResult:
    trainer = Trainer(settings, distill, level0_weights=w)
    state, regressor = trainer.train_level0(student, bank, dataset)
    events = [r.event() for r in trainer.records if r.stage == "level0"]
    checkpoint = {name: data.copy() for name, data in student.state_dict().items()}
    return ProgressiveResult(checkpoint, events, regressor, state)
