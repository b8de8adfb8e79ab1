import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from coupledcd.exceptions import DataError, DegenerateError, FormatError, GeometryError
from coupledcd.raster import (BinaryChangeMask, Modality, Raster, as_float32_exact, normalize,
                              read_mask, read_raster, write_mask, write_raster)


def _rimg_bytes(header, payload):
    return b"RIMGv001" + header.encode() + b"\n" + np.asarray(payload, "<f4").tobytes()


def test_read_handmade_file(tmp_path):
    p = tmp_path / "a.rimg"
    p.write_bytes(_rimg_bytes('{"width":2,"height":2,"bands":1,"modality":"optical","resolution":10.0}',
                              [0, 1, 2, 3]))
    r = read_raster(p)
    assert (r.width, r.height, r.bands) == (2, 2, 1)
    assert r.modality is Modality.OPTICAL and r.resolution == 10.0
    np.testing.assert_array_equal(r.data.ravel(), [0, 1, 2, 3])


def test_short_payload_rejected(tmp_path):
    p = tmp_path / "a.rimg"
    p.write_bytes(_rimg_bytes('{"width":2,"height":2,"bands":1,"modality":"sar","resolution":1}', [0, 1, 2]))
    with pytest.raises(FormatError):
        read_raster(p)


@pytest.mark.parametrize("blob", [b"NOTRIMG!{}\n", b"RIMGv001{\"width\":1", b"RIMGv001{\"width\":1}\n"])
def test_malformed_files(tmp_path, blob):
    p = tmp_path / "bad.rimg"
    p.write_bytes(blob)
    with pytest.raises(FormatError):
        read_raster(p)


def test_nan_payload_is_data_error(tmp_path):
    p = tmp_path / "nan.rimg"
    p.write_bytes(_rimg_bytes('{"width":1,"height":1,"bands":1,"modality":"optical","resolution":1}', [np.nan]))
    with pytest.raises(DataError):
        read_raster(p)


def test_layout_of_three_band_pixel(tmp_path):
    r = Raster(np.array([1.0, 2.0, 3.0]).reshape(3, 1, 1))
    write_raster(r, tmp_path / "x.rimg")
    blob = (tmp_path / "x.rimg").read_bytes()
    header, payload = blob[8:].split(b"\n", 1)
    assert b'"bands": 3' in header
    np.testing.assert_array_equal(np.frombuffer(payload, "<f4"), [1, 2, 3])


@given(arrays(np.float32, st.tuples(st.integers(1, 3), st.integers(1, 5), st.integers(1, 5)),
              elements=st.floats(0, 1e6, width=32)),
       st.sampled_from(["optical", "sar"]))
def test_round_trip_is_bitwise(tmp_path_factory, data, modality):
    r = Raster(data.astype(np.float64), modality, 2.5)
    path = tmp_path_factory.mktemp("rt") / "r.rimg"
    write_raster(r, path)
    back = read_raster(path)
    assert back == r
    assert back.data.tobytes() == r.data.tobytes()


def test_float32_rounding_helper(tmp_path):
    r = as_float32_exact(Raster(np.array([[[0.1, 1 / 3]]])))
    write_raster(r, tmp_path / "f.rimg")
    assert read_raster(tmp_path / "f.rimg") == r


def test_construction_rules():
    with pytest.raises(GeometryError):
        Raster(np.zeros((0, 2, 2)))
    with pytest.raises(DataError):
        Raster(np.full((1, 1, 1), np.inf))
    with pytest.raises(DataError):
        Raster(np.array([[[-1.0]]]), Modality.SAR)
    assert Raster(np.ones((2, 3))).dims == (2, 3, 1)
    with pytest.raises(ValueError):
        Raster(np.ones((1, 1)), "lidar")


# the scale is the input maximum, so [0, 2, 4] maps to [0, 0.5, 1] with scale 4
@pytest.mark.parametrize("data, expected, scale", [
    ([0.0, 2.0, 4.0], [0.0, 0.5, 1.0], 4.0),
    ([0.0, 0.25, 1.0], [0.0, 0.25, 1.0], 1.0),
    ([5.0], [1.0], 5.0),
])
def test_normalize(data, expected, scale):
    r, s = normalize(Raster(np.array(data)[None, None]))
    np.testing.assert_array_equal(r.data.ravel(), expected)
    assert s == scale


def test_normalize_degenerate():
    with pytest.raises(DegenerateError):
        normalize(Raster(np.zeros((1, 2, 2))))


def test_mask_round_trip(tmp_path, rng):
    m = BinaryChangeMask((rng.random((7, 5)) > 0.5).astype(np.uint8))
    write_mask(m, tmp_path / "m.pgm")
    assert read_mask(tmp_path / "m.pgm") == m
    z = BinaryChangeMask(np.zeros((3, 4), np.uint8))
    write_mask(z, tmp_path / "z.pgm")
    assert not read_mask(tmp_path / "z.pgm").values.any()


def test_mask_bad_value(tmp_path):
    (tmp_path / "m.pgm").write_bytes(b"P5\n2 1\n255\n" + bytes([0, 128]))
    with pytest.raises(FormatError):
        read_mask(tmp_path / "m.pgm")


def test_mask_with_comment(tmp_path):
    (tmp_path / "m.pgm").write_bytes(b"P5\n# made by hand\n2 1\n255\n" + bytes([255, 0]))
    np.testing.assert_array_equal(read_mask(tmp_path / "m.pgm").values, [[1, 0]])
