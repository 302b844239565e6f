"""File-based checkpoint storage with gzip compression."""

import gzip
from pathlib import Path
from typing import Any, Iterator, Optional

import numpy as np

from .distill import TeacherBank
from .errors import LoadError
from .model import ModelConfig, Network, build_network
from .ndtensor import checkpoint

SUFFIX = ".ckpt.gz"


class CheckpointStore:
    """Named checkpoints under one directory, one gzip file each."""

    def __init__(self, base_path: str = "./runs/default/checkpoints", compress: bool = True):
        """
        Initialize checkpoint storage.

        Args:
            base_path: Directory holding the checkpoint files.
            compress: Write gzip-compressed files (reading accepts both).
        """
        self.base_path = Path(base_path)
        self.compress = compress

    def _get_path(self, name: str) -> Path:
        return self.base_path / f"{name}{SUFFIX}"

    def save(self, name: str, entries: dict[str, np.ndarray], metadata: Optional[dict] = None) -> tuple[Path, int]:
        """
        Save named arrays and metadata.

        Returns:
            Tuple of (path to the saved file, file size in bytes).
        """
        path = self._get_path(name)
        path.parent.mkdir(parents=True, exist_ok=True)
        blob = checkpoint.dumps(entries, metadata)
        tmp = path.with_name(path.name + ".tmp")
        if self.compress:
            with gzip.GzipFile(tmp, "wb", mtime=0) as f:
                f.write(blob)
        else:
            tmp.write_bytes(blob)
        tmp.replace(path)
        return path, path.stat().st_size

    def load(self, name: str) -> tuple[dict[str, np.ndarray], dict[str, Any]]:
        """
        Load a checkpoint.

        Raises:
            LoadError: if the checkpoint is missing or unreadable.
        """
        return load_file(self._get_path(name))

    def exists(self, name: str) -> bool:
        return self._get_path(name).exists()

    def delete(self, name: str) -> bool:
        path = self._get_path(name)
        if path.exists():
            path.unlink()
            return True
        return False

    def names(self) -> list[str]:
        if not self.base_path.exists():
            return []
        return sorted(p.name[: -len(SUFFIX)] for p in self.base_path.glob(f"*{SUFFIX}"))

    def get_stats(self) -> dict:
        files = [self._get_path(n) for n in self.names()]
        total_size = sum(f.stat().st_size for f in files)
        return {
            "total_files": len(files),
            "total_size_bytes": total_size,
            "total_size_mb": total_size / (1024 * 1024),
        }

    def iter_checkpoints(self, prefix: str = "") -> Iterator[tuple[str, dict[str, np.ndarray], dict[str, Any]]]:
        """Yield (name, entries, metadata) for every readable checkpoint whose name starts with ``prefix``."""
        for name in self.names():
            if not name.startswith(prefix):
                continue
            try:
                entries, metadata = self.load(name)
            except LoadError:
                continue
            yield name, entries, metadata


def load_file(path) -> tuple[dict[str, np.ndarray], dict[str, Any]]:
    """Read a checkpoint file, compressed or not."""
    path = Path(path)
    if not path.exists():
        raise LoadError(f"checkpoint not found: {path}")
    try:
        raw = path.read_bytes()
        blob = gzip.decompress(raw) if raw[:2] == b"\x1f\x8b" else raw
    except (gzip.BadGzipFile, OSError, EOFError) as e:
        raise LoadError(f"cannot read checkpoint {path}: {e}") from None
    return checkpoint.loads(blob)


# Networks and teacher banks

REGRESSOR_PREFIX = "regressor."
TEACHER_PREFIX = "teacher_T"


def split_regressor(entries: dict[str, np.ndarray]) -> tuple[dict[str, np.ndarray], dict[str, np.ndarray]]:
    """Separate network entries from regressor entries stored in the same checkpoint."""
    network = {k: v for k, v in entries.items() if not k.startswith(REGRESSOR_PREFIX)}
    regressor = {k: v for k, v in entries.items() if k.startswith(REGRESSOR_PREFIX)}
    return network, regressor


def load_network(path) -> Network:
    """Rebuild a network from a checkpoint whose metadata carries its model config."""
    entries, metadata = load_file(path)
    if "model" not in metadata:
        raise LoadError(f"checkpoint {path} has no model config")
    net = build_network(ModelConfig.from_dict(metadata["model"]))
    net.load_state_dict(split_regressor(entries)[0])
    return net


def save_teacher_bank(store: CheckpointStore, bank: TeacherBank) -> list[Path]:
    paths = []
    for index, (epoch, snapshot) in enumerate(zip(bank.epochs, bank.snapshots), start=1):
        metadata = {"index": index, "count": len(bank), "epoch": epoch, "model": bank.cfg.to_dict()}
        path, _ = store.save(f"{TEACHER_PREFIX}{index}", snapshot, metadata)
        paths.append(path)
    return paths


def load_teacher_bank(store: CheckpointStore) -> Optional[TeacherBank]:
    """The bank saved in ``store``, or None if it holds no teacher snapshots.

    Raises:
        LoadError: if some snapshots of the bank are missing.
    """
    items = sorted(
        ((metadata, entries) for _, entries, metadata in store.iter_checkpoints(TEACHER_PREFIX)),
        key=lambda item: item[0].get("index", 0),
    )
    if not items:
        return None
    count = items[0][0].get("count")
    if [m.get("index") for m, _ in items] != list(range(1, len(items) + 1)) or count != len(items):
        raise LoadError(f"incomplete teacher bank in {store.base_path}: found {len(items)} of {count} snapshots")
    cfg = ModelConfig.from_dict(items[0][0]["model"])
    return TeacherBank(cfg, [m["epoch"] for m, _ in items], [entries for _, entries in items])
