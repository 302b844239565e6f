import logging

import numpy as np
import pytest
import yaml
from click.testing import CliRunner
from PIL import Image

from qxq_demosaic.cfa import CfaSpec
from qxq_demosaic.cli import cli
from qxq_demosaic.rawio import Raw3ccdFrame, RawQxqFrame, encode_3ccd, encode_qxq


@pytest.fixture(autouse=True)
def reset_package_logger():
    yield
    logger = logging.getLogger("qxq_demosaic")
    for handler in list(logger.handlers):
        logger.removeHandler(handler)
    logger.propagate = True


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "config.yaml"
    path.write_text(
        yaml.safe_dump(
            {
                "logging": {"level": "WARNING"},
                "train": {"lr": 1e-3, "batch_size": 4},
                "dataset": {"raw_width": 16, "raw_height": 16},
                "storage": {"run_root": str(tmp_path / "runs"), "database_path": str(tmp_path / "runs.db")},
            }
        )
    )
    return str(path)


@pytest.fixture
def invoke(config_file):
    runner = CliRunner()

    def run(*args):
        return runner.invoke(cli, ["-c", config_file, *map(str, args)])

    return run


@pytest.fixture
def raw_3ccd(tmp_path, rng):
    planes = rng.integers(64, 1024, size=(3, 16, 16)).astype(np.uint16)
    path = tmp_path / "frame.RAW"
    path.write_bytes(encode_3ccd(Raw3ccdFrame(16, 16, planes)))
    return path


@pytest.fixture
def raw_qxq(tmp_path, rng):
    plane = rng.integers(64, 1024, size=(64, 64)).astype(np.uint16)
    path = tmp_path / "qxq.RAW"
    path.write_bytes(encode_qxq(RawQxqFrame(64, 64, plane, CfaSpec())))
    return path


def test_convert_3ccd_with_mosaic(invoke, raw_3ccd):
    result = invoke("convert", raw_3ccd, "--kind", "3ccd", "--mosaic", "qxq")
    assert result.exit_code == 0, result.output
    with Image.open(raw_3ccd.with_suffix(".png")) as img:
        assert img.size == (16, 16)
    assert raw_3ccd.with_name("frame.mosaic.png").exists()


def test_convert_reports_format_error(invoke, tmp_path):
    short = tmp_path / "short.RAW"
    short.write_bytes(bytes(23))
    result = invoke("convert", short, "--kind", "3ccd", "--width", 2, "--height", 2)
    assert result.exit_code == 1
    assert "FormatError: " in result.output
    assert "expected 24 bytes, got 23" in result.output


def test_missing_config_file(tmp_path):
    result = CliRunner().invoke(cli, ["-c", str(tmp_path / "absent.yaml"), "status"])
    assert result.exit_code == 1
    assert "ConfigError" in result.output


def test_dataset_eval_and_train(invoke, tmp_path):
    result = invoke("synthesize", tmp_path / "src", "--count", 1, "--size", 32)
    assert result.exit_code == 0, result.output

    manifest = tmp_path / "data" / "manifest.jsonl"
    result = invoke(
        "build-dataset",
        "--3ccd", tmp_path / "src" / "3ccd",
        "--common", tmp_path / "src" / "common",
        "--out", manifest,
        "--patch-size", 16,
        "--stride", 16,
        "--threshold", 0,
        "--raw-width", 32,
        "--raw-height", 32,
        "--split-ratio", 0.5,
    )
    assert result.exit_code == 0, result.output
    assert "4 train / 4 test" in result.output

    result = invoke("eval", "classical", "--manifest", manifest)
    assert result.exit_code == 0, result.output
    assert result.output.splitlines()[0] == "method\tpsnr\tms_ssim\tparams\tmacs"
    assert result.output.splitlines()[1].startswith("classical\t")

    result = invoke(
        "train", "--name", "smoke", "--mode", "solo", "--epochs", 1, "--level1-epochs", 1, "--manifest", manifest
    )
    assert result.exit_code == 0, result.output
    assert "Run 'smoke' completed" in result.output

    report = tmp_path / "eval.tsv"
    result = invoke("eval", tmp_path / "runs" / "smoke", "--manifest", manifest, "--baseline", "classical", "-o", report)
    assert result.exit_code == 0, result.output
    rows = report.read_text().splitlines()
    assert [row.split("\t")[0] for row in rows] == ["method", "student", "classical"]
    assert report.with_name("eval.tsv.per_image.tsv").exists()

    result = invoke("status")
    assert "Run: smoke" in result.output
    assert "Status: completed" in result.output

    result = invoke("status", "--name", "smoke")
    assert result.exit_code == 0, result.output
    assert "[info]" in result.output

    result = invoke("train", "--name", "smoke", "--resume", "--manifest", manifest)
    assert result.exit_code == 1
    assert "StateError" in result.output

    result = invoke("remove", "--name", "smoke")
    assert result.exit_code == 0, result.output
    assert "No training runs found." in invoke("status").output
    assert (tmp_path / "runs" / "smoke" / "config.yaml").exists()


def test_status_of_unknown_run(invoke):
    result = invoke("status", "--name", "ghost")
    assert result.exit_code == 1
    assert "StateError: run 'ghost' not found" in result.output


def test_status_without_runs(invoke):
    assert "No training runs found." in invoke("status").output


def test_remove_unknown_run(invoke):
    result = invoke("remove", "--name", "ghost")
    assert result.exit_code == 1
    assert "StateError: run 'ghost' not found" in result.output


def test_remove_all_without_runs(invoke):
    assert "No runs to remove." in invoke("remove", "--all").output


def test_demosaic_center_crop(invoke, raw_qxq, tmp_path):
    out = tmp_path / "crop.png"
    result = invoke("demosaic", "classical", raw_qxq, "--width", 64, "--height", 64, "--center-crop", 32, "-o", out)
    assert result.exit_code == 0, result.output
    assert "(32x32)" in result.output
    with Image.open(out) as img:
        assert img.size == (32, 32)


def test_demosaic_tiled(invoke, raw_qxq, tmp_path):
    out = tmp_path / "tiled.png"
    result = invoke("demosaic", "classical", raw_qxq, "--width", 64, "--height", 64, "--tile", 32, "--overlap", 8, "-o", out)
    assert result.exit_code == 0, result.output
    with Image.open(out) as img:
        assert img.size == (64, 64)


def test_demosaic_rejects_bad_crop(invoke, raw_qxq):
    result = invoke("demosaic", "classical", raw_qxq, "--width", 64, "--height", 64, "--center-crop", 12)
    assert result.exit_code == 1
    assert "GeometryError" in result.output


def test_config_show(invoke):
    result = invoke("config", "show")
    assert result.exit_code == 0
    shown = yaml.safe_load(result.output)
    assert shown["logging"]["level"] == "WARNING"
    assert shown["distill"]["switch_epochs"] == [7, 20]


def test_config_init(tmp_path):
    path = tmp_path / "new" / "config.yaml"
    result = CliRunner().invoke(cli, ["-c", str(path), "config", "init"])
    assert result.exit_code == 0, result.output
    assert path.exists()
