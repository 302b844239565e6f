"""Run orchestration: drives the training stages of one registered run."""

import json
import logging
from pathlib import Path
from typing import Callable, Optional

from .config import Config
from .datapipe import DatasetManifest, PatchDataset
from .db import Database, LogEntry, TrainingRun
from .distill import EpochRecord, TeacherBank, Trainer, TrainState
from .errors import ConfigError, QxqError, StateError
from .losses import Regressor
from .model import Network, build_student
from .storage import (
    CheckpointStore,
    load_teacher_bank,
    save_teacher_bank,
    split_regressor,
)

logger = logging.getLogger(__name__)

RUN_CONFIG = "config.yaml"
EVENTS_FILE = "events.jsonl"
LOSSES_FILE = "losses.tsv"
LOSS_COLUMNS = ("stage", "epoch", "phase", "loss", "monitored_loss", "transition")
STUDENT_CHECKPOINT = "student"
FINAL_CHECKPOINT = "final"


class TrainingRunner:
    """Runs level-1 pretraining, teacher banking and level-0 distillation for one run.

    Every finished level-1 or level-0 epoch is checkpointed with optimizer
    state, so a paused or crashed run resumes at its last completed epoch. An
    interrupted teacher stage restarts from scratch on resume.
    """

    def __init__(self, config: Config, db: Database, run_root: str, handle_signals: bool = True):
        """
        Initialize the runner.

        Args:
            config: Resolved configuration of the run.
            db: Run registry.
            run_root: Directory holding one sub-directory per run.
            handle_signals: Pause on SIGINT/SIGTERM after the current epoch.
        """
        self.config = config
        self.db = db
        self.run_root = Path(run_root)
        self.handle_signals = handle_signals
        self.trainer: Optional[Trainer] = None
        self._run: Optional[TrainingRun] = None
        self._store: Optional[CheckpointStore] = None
        self._progress_callback: Optional[Callable[[str], None]] = None

    def set_progress_callback(self, callback: Callable[[str], None]):
        """Set a callback for progress updates."""
        self._progress_callback = callback

    def _log_progress(self, message: str):
        if self._progress_callback:
            self._progress_callback(message)
        else:
            logger.info(message)

    def run_dir(self, name: str) -> Path:
        return self.run_root / name

    def store(self, name: str) -> CheckpointStore:
        return CheckpointStore(str(self.run_dir(name) / "checkpoints"), compress=self.config.storage.compress)

    def create_run(self, name: str) -> TrainingRun:
        """Register a run and write its resolved config.

        Raises:
            StateError: if a run with this name already exists.
        """
        if self.db.get_run(name) is not None:
            raise StateError(f"run '{name}' already exists; use --resume to continue it")
        self.config.validate()
        run_dir = self.run_dir(name)
        run_dir.mkdir(parents=True, exist_ok=True)
        self.config.save(run_dir / RUN_CONFIG)
        run = TrainingRun(
            name=name,
            run_dir=str(run_dir),
            status="idle",
            stage="level1",
            config_json=json.dumps(self.config.to_dict(), sort_keys=True),
        )
        return self.db.create_run(run)

    def load_run_config(self, name: str) -> Config:
        """The config a run was created with; resumed runs always use it."""
        path = self.run_dir(name) / RUN_CONFIG
        if not path.exists():
            raise StateError(f"run '{name}' has no {RUN_CONFIG} in {self.run_dir(name)}")
        return Config.load(str(path))

    # Per-epoch bookkeeping

    def _append_losses(self, record: EpochRecord):
        path = self.run_dir(self._run.name) / LOSSES_FILE
        new_file = not path.exists()
        with open(path, "a", encoding="utf-8") as f:
            if new_file:
                f.write("\t".join(LOSS_COLUMNS) + "\n")
            row = (record.stage, record.epoch, record.phase, f"{record.loss:.8g}", f"{record.monitored_loss:.8g}")
            f.write("\t".join(str(v) for v in row) + "\t" + (record.transition or "-") + "\n")

    def _append_event(self, record: EpochRecord):
        path = self.run_dir(self._run.name) / EVENTS_FILE
        with open(path, "a", encoding="utf-8") as f:
            f.write(json.dumps(record.event()) + "\n")

    def _save_student(self, student: Network, state: TrainState, regressor: Optional[Regressor] = None):
        entries = dict(student.state_dict(optimizer=True))
        if regressor is not None:
            entries.update(regressor.state_dict(optimizer=True))
        metadata = {"model": student.cfg.to_dict(), "state": state.to_dict()}
        self._store.save(STUDENT_CHECKPOINT, entries, metadata)

    def _on_epoch(self, record: EpochRecord, state: TrainState, net: Network, regressor: Optional[Regressor]):
        if record.stage in ("level1", "level0"):
            self._save_student(net, state, regressor)
        self._append_losses(record)
        if record.stage == "level0":
            self._append_event(record)
        self._run.stage = record.stage
        self._run.phase = record.transition or record.phase
        self._run.epoch = record.epoch
        self.db.update_run(self._run)
        if record.transition and record.stage == "level0":
            self.db.add_log(LogEntry.info(self._run.name, f"Epoch {record.epoch}: entering {record.transition}"))

    # Stages

    def _restore_student(self, student: Network) -> tuple[Optional[TrainState], Optional[dict]]:
        """Load the last student checkpoint, returning its state and regressor entries."""
        if not self._store.exists(STUDENT_CHECKPOINT):
            return None, None
        entries, metadata = self._store.load(STUDENT_CHECKPOINT)
        network_entries, regressor_entries = split_regressor(entries)
        student.load_state_dict(network_entries)
        state = TrainState.from_dict(metadata["state"])
        self._log_progress(f"Restored {state.stage} checkpoint at epoch {state.epoch}")
        return state, regressor_entries or None

    def _teacher_bank(self, teacher_bank: Optional[str], dataset: PatchDataset) -> Optional[TeacherBank]:
        bank = load_teacher_bank(self._store)
        if bank is not None:
            self._log_progress(f"Using the {len(bank)} teacher snapshots stored with this run")
            return bank
        if teacher_bank:
            source = CheckpointStore(str(Path(teacher_bank) / "checkpoints"))
            bank = load_teacher_bank(source)
            if bank is None:
                raise StateError(f"no teacher bank found under {teacher_bank}")
            self._log_progress(f"Reusing {len(bank)} teacher snapshots from {teacher_bank}")
        else:
            d = self.config.distill
            self._log_progress(f"Training teacher, snapshots at level-0 epochs {list(d.teacher_checkpoint_epochs)}")
            bank = self.trainer.train_teacher(
                self.config.model.teacher_config(), dataset, d.teacher_checkpoint_epochs, d.teacher_level_epochs
            )
            if bank is None:
                return None
        save_teacher_bank(self._store, bank)
        return bank

    def run(self, name: str, teacher_bank: Optional[str] = None) -> bool:
        """
        Run (or resume) a registered training run.

        Args:
            name: Name of the run.
            teacher_bank: Optional run directory whose teacher bank is reused.

        Returns:
            True if the run completed, False if it was paused.
        """
        run = self.db.get_run(name)
        if run is None:
            raise StateError(f"run '{name}' not found")
        if run.status == "completed":
            raise StateError(f"run '{name}' is already completed")

        cfg = self.config
        cfg.validate()
        manifest = DatasetManifest.load(cfg.dataset.manifest)
        student_cfg = cfg.model.student_config()
        if manifest.cfa != student_cfg.cfa:
            raise ConfigError(f"manifest CFA {manifest.cfa} differs from the model CFA {student_cfg.cfa}")
        dataset = PatchDataset(manifest, "train", student_cfg.cfa)

        self._run = run
        self._store = self.store(name)
        self.trainer = Trainer(
            cfg.train.settings(cfg.loss.perceptual_seed),
            cfg.distill.settings(),
            cfg.loss.level1_weights(),
            cfg.loss.level0_weights(),
        )
        self.trainer.set_progress_callback(self._log_progress)
        self.trainer.set_epoch_callback(self._on_epoch)
        if self.handle_signals:
            self.trainer.install_signal_handlers()

        run.status = "running"
        self.db.update_run(run)
        self.db.add_log(LogEntry.info(name, f"Started run: {name}"))
        self._log_progress(f"Starting run: {name} ({len(dataset)} training patches, mode {cfg.distill.mode})")

        try:
            completed = self._run_stages(dataset, teacher_bank)
        except (QxqError, OSError) as e:
            run.status = "failed"
            self.db.set_run_status(name, "failed")
            self.db.add_log(LogEntry.error(name, f"{type(e).__name__}: {e}"))
            raise

        if completed:
            run.status = "completed"
            run.stage = "done"
        else:
            run.status = "paused"
        self.db.update_run(run)
        self.db.add_log(LogEntry.info(name, f"Run {run.status} at {run.stage} epoch {run.epoch}"))
        self._log_progress(f"Run {run.status}")
        return completed

    def _run_stages(self, dataset: PatchDataset, teacher_bank: Optional[str]) -> bool:
        cfg = self.config
        student = build_student(cfg.model.student_config())
        state, regressor_entries = self._restore_student(student)

        if state is None or (state.stage == "level1" and not state.completed):
            self._run.stage = "level1"
            state = self.trainer.train_level1(student, dataset, cfg.train.level1_epochs, state)
            if not state.completed:
                return False
            self._save_student(student, state)

        bank = None
        if cfg.distill.mode != "solo":
            self._run.stage = "teacher"
            self.db.update_run(self._run)
            bank = self._teacher_bank(teacher_bank, dataset)
            if bank is None:
                return False

        self._run.stage = "level0"
        level0_state = state if state.stage == "level0" else None
        regressor = None
        if level0_state is not None and regressor_entries:
            regressor = self.trainer.new_regressor(student, bank.cfg)
            regressor.load_state_dict(regressor_entries)
        level0_state, _ = self.trainer.train_level0(student, bank, dataset, level0_state, regressor)
        if not level0_state.completed:
            return False

        self._store.save(FINAL_CHECKPOINT, student.state_dict(), {"model": student.cfg.to_dict()})
        self._log_progress(f"Saved final checkpoint to {self._store.base_path}")
        return True
