import numpy as np
import pytest
from PIL import Image

from qxq_demosaic.cfa import CfaSpec
from qxq_demosaic.errors import FormatError, GeometryError, ParameterError, RangeError
from qxq_demosaic.rawio import (
    Raw3ccdFrame,
    RawQxqFrame,
    RgbImage,
    black_level_compensate,
    decode_3ccd,
    decode_qxq,
    encode_3ccd,
    encode_qxq,
    export_png8,
    load_image8,
    quantize8,
)


def _samples(values, big_endian=False) -> bytes:
    return np.asarray(values, dtype=">u2" if big_endian else "<u2").tobytes()


def test_decode_3ccd_full_frame():
    frame = decode_3ccd(bytes(11_520_000), 1600, 1200)
    assert frame.planes.shape == (3, 1200, 1600)
    assert frame.planes[0].size == 1_920_000


def test_decode_3ccd_black_pixel():
    frame = decode_3ccd(_samples([64, 64, 64]), 1, 1)
    np.testing.assert_array_equal(frame.to_rgb().data, np.zeros((3, 1, 1)))


def test_decode_3ccd_plane_order():
    frame = decode_3ccd(_samples([100, 200, 300]), 1, 1, black_level=0)
    assert frame.planes[:, 0, 0].tolist() == [100, 200, 300]


def test_decode_3ccd_length_mismatch():
    with pytest.raises(FormatError, match="expected 24 bytes, got 23"):
        decode_3ccd(bytes(23), 2, 2)


def test_decode_3ccd_rejects_out_of_range_sample():
    with pytest.raises(RangeError):
        decode_3ccd(_samples([0, 1024, 0]), 1, 1)


def test_decode_rejects_non_positive_geometry():
    with pytest.raises(GeometryError):
        decode_qxq(b"", 0, 4, CfaSpec())


@pytest.mark.slow
def test_decode_qxq_large_frame():
    frame = decode_qxq(bytes(96_000_000), 8000, 6000, CfaSpec())
    assert frame.plane.shape == (6000, 8000)


def test_decode_qxq_black_frame():
    frame = decode_qxq(_samples(np.full(16, 64)), 4, 4, CfaSpec(group_size=2))
    assert frame.cfa == CfaSpec(group_size=2)
    np.testing.assert_array_equal(black_level_compensate(frame.plane), np.zeros((4, 4)))


def test_decode_qxq_empty_input():
    with pytest.raises(FormatError):
        decode_qxq(b"", 1, 1, CfaSpec())


def test_decode_qxq_big_endian():
    values = np.arange(16).reshape(4, 4) * 60
    frame = decode_qxq(_samples(values, big_endian=True), 4, 4, CfaSpec(), little_endian=False)
    np.testing.assert_array_equal(frame.plane, values)


def test_3ccd_bytes_survive_encoding(rng):
    planes = rng.integers(0, 1024, size=(3, 16, 16)).astype(np.uint16)
    data = encode_3ccd(Raw3ccdFrame(16, 16, planes))
    assert encode_3ccd(decode_3ccd(data, 16, 16)) == data


def test_qxq_bytes_survive_encoding(rng):
    plane = rng.integers(0, 1024, size=(16, 16)).astype(np.uint16)
    data = encode_qxq(RawQxqFrame(16, 16, plane), little_endian=False)
    assert encode_qxq(decode_qxq(data, 16, 16, CfaSpec(), little_endian=False), little_endian=False) == data


def test_encode_rejects_out_of_range_sample():
    with pytest.raises(RangeError):
        encode_qxq(RawQxqFrame(1, 1, np.array([[1024]])))


def test_encode_rejects_mismatched_planes():
    with pytest.raises(GeometryError):
        encode_3ccd(Raw3ccdFrame(4, 4, np.zeros((3, 2, 2), dtype=np.uint16)))


@pytest.mark.parametrize("count, expected", [(64, 0.0), (1023, 1.0), (30, 0.0)])
def test_black_level_compensate(count, expected):
    assert black_level_compensate(np.array([count]))[0] == pytest.approx(expected)


def test_black_level_compensate_midpoint():
    assert black_level_compensate(np.array([543.5]), 64)[0] == pytest.approx(0.5)


def test_black_level_compensate_rejects_offset():
    with pytest.raises(ParameterError):
        black_level_compensate(np.array([100]), 1023)


def test_quantize8_rounds_half_up():
    np.testing.assert_array_equal(quantize8(np.array([0.0, 0.5, 1.0, -0.2, 1.7])), [0, 128, 255, 0, 255])


@pytest.mark.parametrize("value, expected", [(0.5, 128), (0.0, 0), (1.0, 255)])
def test_export_png8_constant(tmp_path, value, expected):
    path = export_png8(RgbImage(np.full((3, 4, 6), value)), tmp_path / "out.png")
    with Image.open(path) as img:
        assert img.size == (6, 4)
        pixels = np.asarray(img)
    assert pixels.shape == (4, 6, 3)
    assert (pixels == expected).all()


def test_load_image8_normalizes(tmp_path):
    export_png8(RgbImage(np.full((3, 2, 2), 1.0)), tmp_path / "white.png")
    img = load_image8(tmp_path / "white.png")
    assert img.data.shape == (3, 2, 2)
    np.testing.assert_allclose(img.data, 1.0)


def test_rgb_image_rejects_bad_shape():
    with pytest.raises(GeometryError):
        RgbImage(np.zeros((4, 2, 2)))


def test_rgb_image_crop_and_layout(rng):
    data = rng.random((3, 6, 8)).astype(np.float32)
    img = RgbImage(data)
    assert (img.width, img.height) == (8, 6)
    np.testing.assert_array_equal(img.crop(2, 1, 3, 4).data, data[:, 1:5, 2:5])
    np.testing.assert_array_equal(RgbImage.from_hwc(img.to_hwc()).data, data)
