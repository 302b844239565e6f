from dataclasses import replace

import numpy as np
import pytest

from qxq_demosaic.datapipe import DatasetManifest, PatchDataset
from qxq_demosaic.distill import (
    DistillSettings,
    SaturationDetector,
    TeacherBank,
    Trainer,
    TrainSettings,
    TrainState,
    detect_saturation,
    level0_phases,
    phase_teacher,
    replay_transitions,
    train_level0_progressive,
    train_level1,
    train_teacher,
)
from qxq_demosaic.errors import ConfigError, DataError
from qxq_demosaic.evaluate import evaluate_method
from qxq_demosaic.losses import LossWeights, level0_loss
from qxq_demosaic.model import build_student
from qxq_demosaic.ndtensor import Tensor, no_grad


def transitions(result):
    return [(e["epoch"], e["transition"]) for e in result.events if e["transition"]]


def states_equal(a: dict, b: dict) -> bool:
    return a.keys() == b.keys() and all(np.array_equal(a[k], b[k]) for k in a)


@pytest.mark.parametrize(
    "history, sigma, expected",
    [
        ([0.5] * 5, 1e-6, True),
        ([0.5] * 4, 1e-6, False),
        ([1.0, 2.0, 3.0, 4.0, 5.0], 1e-6, False),
        ([1.0, 2.0, 3.0, 4.0, 5.0], 3.0, True),
        ([9.0, 1.0, 1.0, 1.0, 1.0, 1.0], 1e-6, True),
    ],
)
def test_detect_saturation(history, sigma, expected):
    assert detect_saturation(SaturationDetector(sigma=sigma, history=list(history))) is expected


def test_detector_reset():
    d = SaturationDetector(window=2, sigma=1.0)
    d.record(1.0)
    d.record(1.0)
    assert detect_saturation(d)
    d.reset()
    assert not detect_saturation(d)


def test_level0_phases():
    assert level0_phases("saturation", 3) == ["solo", "distill(1)", "distill(2)", "distill(3)"]
    assert level0_phases("schedule", 1) == ["solo", "distill(1)"]
    assert level0_phases("fixed", 3) == ["distill(3)"]
    assert level0_phases("solo", 3) == ["solo"]
    assert [phase_teacher(p) for p in ("solo", "distill(2)")] == [0, 2]


@pytest.mark.parametrize(
    "overrides",
    [{"mode": "greedy"}, {"sigma": -1.0}, {"window": 0}, {"switch_epochs": [5, 3]}, {"switch_epochs": [0, 3]}],
)
def test_distill_settings_validation(overrides):
    with pytest.raises(ConfigError):
        replace(DistillSettings(), **overrides).validate()


def test_teacher_bank_validation(bank):
    with pytest.raises(ConfigError):
        TeacherBank(bank.cfg, [], [])
    with pytest.raises(ConfigError):
        TeacherBank(bank.cfg, [2, 2], bank.snapshots)
    with pytest.raises(ConfigError):
        bank.teacher(3)


def test_teacher_bank_restores_snapshots(bank):
    state = bank.teacher(2).state_dict()
    assert states_equal(state, bank.snapshots[1])


def test_train_state_round_trip():
    state = TrainState(stage="level0", epoch=4, phase_index=1, history=[0.1, 0.2])
    assert TrainState.from_dict(state.to_dict()) == state
    assert TrainState.from_dict({"epoch": 2, "extra": 1}).epoch == 2


def test_zero_epoch_level1_keeps_initialization(student_cfg, train_set, fast_settings):
    student = build_student(student_cfg)
    initial = {k: v.copy() for k, v in student.state_dict().items()}
    assert states_equal(train_level1(student, train_set, 0, settings=fast_settings), initial)


def test_level1_training_is_deterministic(student_cfg, train_set, fast_settings):
    a = train_level1(build_student(student_cfg), train_set, 2, settings=fast_settings)
    b = train_level1(build_student(student_cfg), train_set, 2, settings=fast_settings)
    c = train_level1(build_student(student_cfg), train_set, 2, settings=replace(fast_settings, seed=9))
    assert states_equal(a, b)
    assert not states_equal(a, c)


def test_level1_training_leaves_level0_untouched(student_cfg, train_set, fast_settings):
    student = build_student(student_cfg)
    before = student.layers["level0.out"].weight.data.copy()
    train_level1(student, train_set, 1, settings=fast_settings)
    np.testing.assert_array_equal(student.layers["level0.out"].weight.data, before)


def test_epoch_callback_sees_every_epoch(student_cfg, train_set, fast_settings):
    seen = []
    trainer = Trainer(fast_settings)
    trainer.set_epoch_callback(lambda record, state, net, regressor: seen.append((record.epoch, state.epoch)))
    state = trainer.train_level1(build_student(student_cfg), train_set, 3)
    assert seen == [(1, 1), (2, 2), (3, 3)]
    assert state.completed


def test_stopped_trainer_returns_incomplete_state(student_cfg, train_set, fast_settings):
    trainer = Trainer(fast_settings)
    trainer.running = False
    state = trainer.train_level1(build_student(student_cfg), train_set, 3)
    assert state.epoch == 0
    assert not state.completed


def test_empty_dataset_is_rejected(student_cfg, tiny_manifest, fast_settings, bank):
    empty = PatchDataset(tiny_manifest, "validation")
    trainer = Trainer(fast_settings)
    with pytest.raises(DataError):
        trainer.train_level1(build_student(student_cfg), empty, 1)
    with pytest.raises(DataError):
        trainer.train_level0(build_student(student_cfg), bank, empty)
    with pytest.raises(DataError):
        trainer.train_teacher(bank.cfg, empty, [1])


def test_train_teacher_banks_snapshots(teacher_cfg, train_set, fast_settings):
    bank = train_teacher(teacher_cfg, train_set, [1, 2], settings=fast_settings)
    assert len(bank) == 2
    assert bank.epochs == [1, 2]
    assert not states_equal(bank.snapshots[0], bank.snapshots[1])


@pytest.mark.parametrize("epochs", [[], [2, 1], [0, 1]])
def test_train_teacher_rejects_bad_epochs(teacher_cfg, train_set, fast_settings, epochs):
    with pytest.raises(ConfigError):
        train_teacher(teacher_cfg, train_set, epochs, settings=fast_settings)


def test_distillation_needs_bank(student_cfg, train_set, fast_settings):
    with pytest.raises(ConfigError):
        Trainer(fast_settings, DistillSettings(mode="fixed")).train_level0(build_student(student_cfg), None, train_set)


def test_schedule_switches_on_listed_epochs(student_cfg, train_set, fast_settings, bank):
    distill = DistillSettings(mode="schedule", switch_epochs=[7, 20], epochs=21)
    result = train_level0_progressive(build_student(student_cfg), bank, train_set, distill, settings=fast_settings)
    assert transitions(result) == [(7, "distill(1)"), (20, "distill(2)")]
    assert result.events[6]["phase"] == "solo"
    assert result.events[7]["phase"] == "distill(1)"
    assert result.events[20]["phase"] == "distill(2)"
    assert result.state.completed


@pytest.mark.parametrize("epochs", [10, 12])
def test_saturation_switches_every_window(student_cfg, train_set, fast_settings, bank, epochs):
    distill = DistillSettings(mode="saturation", sigma=float("inf"), epochs=epochs)
    result = train_level0_progressive(build_student(student_cfg), bank, train_set, distill, settings=fast_settings)
    assert transitions(result) == [(5, "distill(1)"), (10, "distill(2)")]
    assert replay_transitions(result.events, float("inf"), teachers=len(bank)) == [5, 10]


def test_replay_stops_after_last_teacher():
    events = [{"epoch": e, "phase": "solo", "monitored_loss": 0.1} for e in range(1, 21)]
    assert replay_transitions(events, float("inf"), teachers=2) == [5, 10]
    assert replay_transitions(events, float("inf"), teachers=3) == [5, 10, 15]
    assert replay_transitions(events, 0.0, teachers=2) == []


def test_saturation_never_fires_with_zero_sigma(student_cfg, train_set, fast_settings, bank):
    distill = DistillSettings(mode="saturation", sigma=0.0, epochs=6)
    result = train_level0_progressive(build_student(student_cfg), bank, train_set, distill, settings=fast_settings)
    assert transitions(result) == []
    assert {e["phase"] for e in result.events} == {"solo"}


def test_fixed_mode_uses_last_teacher(student_cfg, train_set, fast_settings, bank):
    distill = DistillSettings(mode="fixed", epochs=2)
    result = train_level0_progressive(build_student(student_cfg), bank, train_set, distill, settings=fast_settings)
    assert [e["phase"] for e in result.events] == ["distill(2)", "distill(2)"]
    assert result.regressor is not None


def test_zero_alpha_matches_solo_training(student_cfg, train_set, fast_settings, bank):
    weights = LossWeights(lambda1=1.0, lambda2=0.4, alpha=0.0)
    distilled = train_level0_progressive(
        build_student(student_cfg),
        bank,
        train_set,
        DistillSettings(mode="schedule", switch_epochs=[1, 2], epochs=3),
        weights,
        fast_settings,
    )
    solo = train_level0_progressive(
        build_student(student_cfg), None, train_set, DistillSettings(mode="solo", epochs=3), weights, fast_settings
    )
    assert transitions(distilled) == [(1, "distill(1)"), (2, "distill(2)")]
    assert states_equal(distilled.checkpoint, solo.checkpoint)


def test_distillation_leaves_teachers_frozen(student_cfg, train_set, fast_settings, bank):
    before = [{k: v.copy() for k, v in s.items()} for s in bank.snapshots]
    train_level0_progressive(
        build_student(student_cfg), bank, train_set, DistillSettings(mode="fixed", epochs=2), settings=fast_settings
    )
    assert all(states_equal(a, b) for a, b in zip(before, bank.snapshots))


def test_regressor_is_replaced_on_transition(student_cfg, train_set, fast_settings, bank):
    seen = []
    trainer = Trainer(fast_settings, DistillSettings(mode="schedule", switch_epochs=[1, 2], epochs=3))
    trainer.set_epoch_callback(lambda record, state, net, regressor: seen.append(regressor))
    trainer.train_level0(build_student(student_cfg), bank, train_set)
    assert seen[0] is not seen[1]

    seen.clear()
    trainer = Trainer(
        fast_settings, DistillSettings(mode="schedule", switch_epochs=[1, 2], epochs=3, carry_regressor=True)
    )
    trainer.set_epoch_callback(lambda record, state, net, regressor: seen.append(regressor))
    trainer.train_level0(build_student(student_cfg), bank, train_set)
    assert seen[0] is seen[1]


def test_level0_resumes_from_state(student_cfg, train_set, fast_settings, bank):
    distill = DistillSettings(mode="saturation", sigma=float("inf"), epochs=8)
    straight = Trainer(fast_settings, distill)
    full_student = build_student(student_cfg)
    straight.train_level0(full_student, bank, train_set)

    first = Trainer(fast_settings, distill)
    first.set_progress_callback(lambda message: setattr(first, "running", "epoch 3 " not in message))
    student = build_student(student_cfg)
    state, regressor = first.train_level0(student, bank, train_set)
    assert (state.epoch, state.completed) == (3, False)

    state, _ = Trainer(fast_settings, distill).train_level0(student, bank, train_set, state, regressor)
    assert state.completed
    assert states_equal(student.state_dict(), full_student.state_dict())
    assert [r.transition for r in straight.records if r.transition] == ["distill(1)", "distill(2)"]


@pytest.mark.slow
def test_level1_overfits_four_patches(student_cfg, overfit_manifest_path):
    dataset = PatchDataset(DatasetManifest.load(overfit_manifest_path), "train")
    dataset.records = dataset.records[:4]
    trainer = Trainer(TrainSettings(seed=0, lr=5e-3, batch_size=4))
    trainer.train_level1(build_student(student_cfg), dataset, 300)
    losses = [r.loss for r in trainer.records]
    assert len(losses) == 300
    assert losses[-1] < 0.1 * losses[0]


@pytest.mark.slow
def test_student_overfits_training_patches(student_cfg, overfit_manifest_path):
    dataset = PatchDataset(DatasetManifest.load(overfit_manifest_path), "train")
    assert len(dataset) == 8
    student = build_student(student_cfg)
    trainer = Trainer(TrainSettings(seed=0, lr=5e-3, batch_size=4), DistillSettings(mode="solo", epochs=400))
    trainer.train_level1(student, dataset, 100)
    trainer.train_level0(student, None, dataset)
    summary, _ = evaluate_method("student", student, dataset)
    assert summary.psnr > 30.0


def validation_loss(student, dataset: PatchDataset, w: LossWeights) -> float:
    losses = []
    with no_grad():
        for mosaic, _, gt in dataset.batches(len(dataset)):
            out = student.forward(Tensor(mosaic))
            losses.append(level0_loss(out.rgb_full, Tensor(gt), w).item())
    return float(np.mean(losses))


@pytest.mark.slow
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_distillation_does_not_hurt_validation_loss(student_cfg, teacher_cfg, toy_manifest_path, seed):
    manifest = DatasetManifest.load(toy_manifest_path)
    train, val = PatchDataset(manifest, "train"), PatchDataset(manifest, "test")
    settings = TrainSettings(seed=seed, lr=1e-3, batch_size=4)
    w = LossWeights.level0()
    initial = build_student(replace(student_cfg, seed=seed))
    checkpoint = train_level1(initial, train, 20, settings=settings)
    bank = train_teacher(teacher_cfg, train, [10, 20], level_epochs=5, settings=settings)

    scores = {}
    for mode, bank_arg in (("solo", None), ("schedule", bank)):
        student = build_student(replace(student_cfg, seed=seed))
        student.load_state_dict(checkpoint)
        distill = DistillSettings(mode=mode, switch_epochs=[10, 20], epochs=30)
        train_level0_progressive(student, bank_arg, train, distill, w, settings)
        scores[mode] = validation_loss(student, val, w)
    assert 0.0 <= scores["schedule"] <= 1.2 * scores["solo"]
