"""Shared fixtures: a tiny synthetic hybrid dataset and cheap network configs."""

from dataclasses import replace

import numpy as np
import pytest

from qxq_demosaic.cfa import CfaSpec
from qxq_demosaic.datapipe import (
    DatasetManifest,
    PatchDataset,
    SourceSettings,
    build_hybrid,
    synthesize_sources,
)
from qxq_demosaic.distill import TeacherBank, TrainSettings
from qxq_demosaic.model import ModelConfig, build_teacher

SOURCE_SIZE = 32
PATCH_SIZE = 16


def tiny_settings() -> SourceSettings:
    return SourceSettings(
        patch_size=PATCH_SIZE,
        stride=PATCH_SIZE,
        raw_width=SOURCE_SIZE,
        raw_height=SOURCE_SIZE,
        variance_threshold=0.0,
    )


@pytest.fixture(scope="session")
def source_dirs(tmp_path_factory):
    """One 3CCD RAW and one PNG source, 32x32 each."""
    return synthesize_sources(tmp_path_factory.mktemp("sources"), count=1, size=SOURCE_SIZE, seed=7)


@pytest.fixture(scope="session")
def tiny_manifest_path(source_dirs, tmp_path_factory):
    """Saved manifest: 4 train patches from one source, 4 test patches from the other."""
    root = tmp_path_factory.mktemp("manifest")
    manifest = build_hybrid(
        source_dirs["3ccd"],
        source_dirs["common"],
        CfaSpec(),
        split_ratio=0.5,
        seed=0,
        settings=tiny_settings(),
        root=root,
    )
    return manifest.save(root / "manifest.jsonl")


@pytest.fixture
def tiny_manifest(tiny_manifest_path):
    return DatasetManifest.load(tiny_manifest_path)


@pytest.fixture
def train_set(tiny_manifest):
    return PatchDataset(tiny_manifest, "train")


@pytest.fixture
def eval_set(tiny_manifest):
    return PatchDataset(tiny_manifest, "test")


@pytest.fixture
def student_cfg():
    return ModelConfig.preset("student", "desk")


@pytest.fixture
def teacher_cfg():
    """A two-level teacher; cheap enough to run on 16x16 patches."""
    return ModelConfig.preset("teacher", "desk", top_level=2)


@pytest.fixture
def bank(teacher_cfg):
    snapshots = []
    for seed in (1, 2):
        net = build_teacher(replace(teacher_cfg, seed=seed))
        snapshots.append({name: data.copy() for name, data in net.state_dict().items()})
    return TeacherBank(teacher_cfg, [1, 2], snapshots)


@pytest.fixture
def fast_settings():
    return TrainSettings(seed=0, lr=1e-3, batch_size=4)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def source_settings():
    return tiny_settings()


def build_saved_manifest(root, size: int, patch: int, count: int, split_ratio: float):
    dirs = synthesize_sources(root / "sources", count=count, size=size, seed=11)
    settings = replace(tiny_settings(), patch_size=patch, stride=patch, raw_width=size, raw_height=size)
    manifest = build_hybrid(
        dirs["3ccd"], dirs["common"], CfaSpec(), split_ratio=split_ratio, seed=0, settings=settings, root=root
    )
    return manifest.save(root / "manifest.jsonl")


@pytest.fixture(scope="session")
def overfit_manifest_path(tmp_path_factory):
    """8 train patches of 64x64 (two 128x128 sources); the test split is empty."""
    return build_saved_manifest(tmp_path_factory.mktemp("overfit"), 128, 64, 1, 1.0)


@pytest.fixture(scope="session")
def toy_manifest_path(tmp_path_factory):
    """8 train and 8 test patches of 32x32 from four 64x64 sources."""
    return build_saved_manifest(tmp_path_factory.mktemp("toy"), 64, 32, 2, 0.5)
