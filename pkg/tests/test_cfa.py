import numpy as np
import pytest

from qxq_demosaic.cfa import (
    CfaSpec,
    MosaicImage,
    center_crop,
    classical_demosaic,
    color_at,
    crop_to_period,
    depth_to_space,
    gray_image,
    mosaic,
    space_to_depth,
)
from qxq_demosaic.errors import ConfigError, GeometryError, ParameterError
from qxq_demosaic.ndtensor import Tensor
from qxq_demosaic.rawio import RgbImage

QXQ = CfaSpec()
BAYER = CfaSpec(group_size=1)


def test_qxq_top_left_group_is_red():
    assert all(color_at(QXQ, x, y) == "R" for x in range(4) for y in range(4))


def test_qxq_neighbouring_groups():
    assert color_at(QXQ, 4, 0) == "G"
    assert color_at(QXQ, 0, 4) == "G"
    assert color_at(QXQ, 4, 4) == "B"
    assert color_at(QXQ, 8, 8) == "R"


def test_bayer_blue_site():
    assert color_at(BAYER, 1, 1) == "B"


def test_color_at_rejects_negative_coordinates():
    with pytest.raises(ParameterError):
        color_at(QXQ, -1, 0)


def test_macro_pattern_is_respected():
    cfa = CfaSpec(group_size=2, macro_pattern="grbg")
    assert cfa.macro_pattern == "GRBG"
    assert [color_at(cfa, x, 0) for x in (0, 2)] == ["G", "R"]
    assert [color_at(cfa, x, 2) for x in (0, 2)] == ["B", "G"]


@pytest.mark.parametrize(
    "text, expected",
    [
        ("4,RGGB", CfaSpec(4, "RGGB")),
        ("qxq", CfaSpec(4, "RGGB")),
        ("bayer,GRBG", CfaSpec(1, "GRBG")),
        ("2", CfaSpec(2, "RGGB")),
    ],
)
def test_parse(text, expected):
    assert CfaSpec.parse(text) == expected


def test_parse_round_trips_through_str():
    cfa = CfaSpec(3, "BGGR")
    assert str(cfa) == "3,BGGR"
    assert CfaSpec.parse(str(cfa)) == cfa


@pytest.mark.parametrize("text", ["", "x,RGGB", "4,RRGB", "4,RGGB,extra"])
def test_parse_rejects_bad_text(text):
    with pytest.raises(ConfigError):
        CfaSpec.parse(text)


def test_mosaic_of_gray_is_constant():
    m = mosaic(RgbImage(np.full((3, 16, 16), 0.3)), QXQ)
    np.testing.assert_allclose(m.plane, 0.3)


def test_mosaic_of_red_only_hits_red_groups():
    data = np.zeros((3, 16, 16))
    data[0] = 1.0
    m = mosaic(RgbImage(data), QXQ)
    for y in range(16):
        for x in range(16):
            assert (m.plane[y, x] != 0) == (color_at(QXQ, x, y) == "R")


@pytest.mark.parametrize("cfa", [QXQ, BAYER, CfaSpec(2, "GBRG")])
def test_mosaic_matches_brute_force(rng, cfa):
    data = rng.random((3, 8, 8)).astype(np.float32)
    m = mosaic(RgbImage(data), cfa)
    for y in range(8):
        for x in range(8):
            channel = "RGB".index(color_at(cfa, x, y))
            assert m.plane[y, x] == data[channel, y, x]


def test_mosaic_rejects_partial_period():
    with pytest.raises(GeometryError):
        mosaic(RgbImage(np.zeros((3, 12, 16))), QXQ)


def test_mosaic_crop_keeps_phase(rng):
    m = mosaic(RgbImage(rng.random((3, 32, 32))), QXQ)
    np.testing.assert_array_equal(m.crop(8, 16, 8, 8).plane, m.plane[16:24, 8:16])
    with pytest.raises(GeometryError):
        m.crop(4, 0, 8, 8)


def test_crop_to_period():
    assert crop_to_period(np.zeros((3, 21, 30)), QXQ).shape == (3, 16, 24)
    with pytest.raises(GeometryError):
        crop_to_period(np.zeros((4, 4)), QXQ)


def test_center_crop_is_period_aligned():
    frame = np.arange(60 * 100).reshape(60, 100)
    cropped = center_crop(frame, QXQ, 16)
    assert cropped.shape == (16, 16)
    # (60 - 16) // 2 = 22 rounds down to 16; (100 - 16) // 2 = 42 rounds down to 40
    assert cropped[0, 0] == frame[16, 40]


def test_center_crop_keeps_cfa_phase(rng):
    m = mosaic(RgbImage(rng.random((3, 48, 64))), QXQ)
    cropped = MosaicImage(center_crop(m.plane, QXQ, 24, 32), QXQ)
    assert cropped.plane.shape == (24, 32)
    np.testing.assert_array_equal(cropped.plane, m.plane[8:32, 16:48])


@pytest.mark.parametrize("size", [12, 0, 72])
def test_center_crop_rejects_bad_sizes(size):
    with pytest.raises(GeometryError):
        center_crop(np.zeros((64, 64)), QXQ, size)


def test_gray_image_shape_and_values(rng):
    plane = rng.random((4, 4)).astype(np.float32)
    t = gray_image(MosaicImage(plane, CfaSpec(2)))
    assert t.shape == (1, 1, 4, 4)
    np.testing.assert_array_equal(t.data[0, 0], plane)


def test_gray_image_of_constant_mosaic():
    t = gray_image(mosaic(RgbImage(np.full((3, 8, 8), 0.25)), QXQ))
    np.testing.assert_allclose(t.data, 0.25)


def test_space_to_depth_index_convention():
    t = space_to_depth(Tensor(np.array([[[[1.0, 2.0], [3.0, 4.0]]]])))
    assert t.shape == (1, 4, 1, 1)
    assert t.data.reshape(-1).tolist() == [1.0, 2.0, 3.0, 4.0]


def test_space_to_depth_inverts(rng):
    x = Tensor(rng.random((1, 1, 8, 8)))
    np.testing.assert_array_equal(depth_to_space(space_to_depth(x)).data, x.data)


def test_space_to_depth_accepts_mosaic(rng):
    m = MosaicImage(rng.random((8, 8)), QXQ)
    packed = space_to_depth(m)
    assert packed.shape == (1, 4, 4, 4)
    assert packed.data[0, 3, 1, 2] == m.plane[3, 5]


def test_space_to_depth_rejects_odd_size():
    with pytest.raises(GeometryError):
        space_to_depth(Tensor(np.zeros((1, 1, 3, 3))))


@pytest.mark.parametrize("cfa", [QXQ, BAYER])
def test_classical_demosaic_reconstructs_constant(cfa):
    data = np.empty((3, 32, 32))
    data[0], data[1], data[2] = 0.5, 0.25, 0.75
    out = classical_demosaic(mosaic(RgbImage(data), cfa))
    np.testing.assert_array_equal(out.data, data.astype(np.float32))


def test_classical_demosaic_keeps_sampled_values(rng):
    m = mosaic(RgbImage(rng.random((3, 16, 16))), QXQ)
    out = classical_demosaic(m)
    channels = QXQ.channel_map(16, 16)
    np.testing.assert_array_equal(np.take_along_axis(out.data, channels[None], axis=0)[0], m.plane)


def test_classical_demosaic_recovers_bayer_ramp():
    ramp = np.tile(np.linspace(0.1, 0.9, 16), (16, 1))
    data = np.stack([ramp, 0.5 * ramp, 1.0 - ramp])
    out = classical_demosaic(mosaic(RgbImage(data), BAYER))
    np.testing.assert_allclose(out.data[:, 2:-2, 2:-2], data[:, 2:-2, 2:-2], atol=1e-6)
