"""Image containers, RIMG/PGM file I/O and normalization.

Pixel data is held as a float64 array of shape ``(bands, height, width)``,
which flattened in C order is exactly the planar band-major, row-major
layout used on disk.
"""

from __future__ import annotations

import enum
import json
import os
from dataclasses import dataclass, field

import numpy as np

from .exceptions import DataError, DegenerateError, FormatError, GeometryError

RIMG_MAGIC = b"RIMGv001"


class Modality(str, enum.Enum):
    OPTICAL = "optical"
    SAR = "sar"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ValueError(f"unknown modality {value!r}") from None


def _frozen(a):
    a = np.array(a, dtype=np.float64, copy=True, order="C")
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Raster:
    """Multiband image with its acquisition modality.

    Parameters
    ----------
    data : array_like, shape (bands, height, width) or (height, width)
        Pixel values. A 2-D array is promoted to a single band.
    modality : Modality or str
    resolution : float
        Ground sampling distance in meters per pixel (informational only).
    """

    data: np.ndarray
    modality: Modality = Modality.OPTICAL
    resolution: float = 1.0
    _checked: bool = field(default=False, repr=False, compare=False)

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim == 2:
            data = data[None]
        if data.ndim != 3:
            raise GeometryError(f"raster data must be 2-D or 3-D, got shape {data.shape}")
        if min(data.shape) < 1:
            raise GeometryError(f"raster has an empty dimension: {data.shape}")
        data = _frozen(data)
        if not np.all(np.isfinite(data)):
            raise DataError("raster contains NaN or Inf values")
        modality = Modality.parse(self.modality)
        if modality is Modality.SAR and np.any(data < 0):
            raise DataError("SAR intensity raster has negative values")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "modality", modality)
        object.__setattr__(self, "resolution", float(self.resolution))

    @property
    def bands(self):
        return self.data.shape[0]

    @property
    def height(self):
        return self.data.shape[1]

    @property
    def width(self):
        return self.data.shape[2]

    @property
    def dims(self):
        """``(height, width, bands)``"""
        return (self.height, self.width, self.bands)

    def with_data(self, data):
        return Raster(data, self.modality, self.resolution)

    def __eq__(self, other):
        if not isinstance(other, Raster):
            return NotImplemented
        return (
            self.modality is other.modality
            and self.resolution == other.resolution
            and self.data.shape == other.data.shape
            and np.array_equal(self.data, other.data)
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class BinaryChangeMask:
    """Per-pixel change decision, 1 for change and 0 for no change."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim != 2:
            raise GeometryError(f"mask must be 2-D, got shape {v.shape}")
        if not np.all((v == 0) | (v == 1)):
            raise DataError("mask values must be 0 or 1")
        v = np.array(v, dtype=np.uint8, copy=True)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def height(self):
        return self.values.shape[0]

    @property
    def width(self):
        return self.values.shape[1]

    def __eq__(self, other):
        if not isinstance(other, BinaryChangeMask):
            return NotImplemented
        return np.array_equal(self.values, other.values)

    __hash__ = None


def read_raster(path):
    """Read a RIMG file.

    Raises
    ------
    FormatError
        Bad magic, malformed header or payload size mismatch.
    DataError
        NaN or Inf in the payload.
    """
    with open(path, "rb") as fh:
        blob = fh.read()
    if not blob.startswith(RIMG_MAGIC):
        raise FormatError(f"{path}: missing RIMG magic")
    nl = blob.find(b"\n", len(RIMG_MAGIC))
    if nl < 0:
        raise FormatError(f"{path}: unterminated header")
    try:
        header = json.loads(blob[len(RIMG_MAGIC):nl].decode("utf-8"))
        width, height, bands = (int(header[k]) for k in ("width", "height", "bands"))
        modality = Modality.parse(header["modality"])
        resolution = float(header.get("resolution", 1.0))
    except (ValueError, KeyError, TypeError, UnicodeDecodeError) as exc:
        raise FormatError(f"{path}: malformed header ({exc})") from None
    if min(width, height, bands) < 1:
        raise FormatError(f"{path}: non-positive dimension in header")
    payload = blob[nl + 1:]
    expected = width * height * bands * 4
    if len(payload) != expected:
        raise FormatError(f"{path}: payload has {len(payload)} bytes, header implies {expected}")
    data = np.frombuffer(payload, dtype="<f4").astype(np.float64)
    if not np.all(np.isfinite(data)):
        raise DataError(f"{path}: payload contains NaN or Inf")
    return Raster(data.reshape(bands, height, width), modality, resolution)


def write_raster(r, path):
    """Write ``r`` as RIMG (float32 little-endian payload)."""
    header = {
        "width": r.width,
        "height": r.height,
        "bands": r.bands,
        "modality": r.modality.value,
        "resolution": r.resolution,
    }
    with open(path, "wb") as fh:
        fh.write(RIMG_MAGIC)
        fh.write(json.dumps(header).encode("utf-8"))
        fh.write(b"\n")
        fh.write(r.data.astype("<f4").tobytes(order="C"))


def as_float32_exact(r):
    """Round ``r`` to float32 precision so a write/read cycle is lossless."""
    return r.with_data(r.data.astype(np.float32).astype(np.float64))


def normalize(r):
    """Scale ``r`` by its maximum so values lie in [0, 1].

    Returns
    -------
    normalized : Raster
    scale : float
        The input maximum; ``normalized.data * scale`` reproduces the input.
    """
    scale = float(r.data.max())
    if scale <= 0:
        raise DegenerateError("cannot normalize an image without positive values")
    if scale == 1.0:
        return r, 1.0
    return r.with_data(r.data / scale), scale


def read_mask(path):
    """Read a binary PGM (P5, maxval 255) mask."""
    with open(path, "rb") as fh:
        blob = fh.read()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(blob) and blob[pos:pos + 1].isspace():
            pos += 1
        if pos < len(blob) and blob[pos:pos + 1] == b"#":
            pos = blob.find(b"\n", pos)
            if pos < 0:
                break
            continue
        start = pos
        while pos < len(blob) and not blob[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            break
        tokens.append(blob[start:pos])
    if len(tokens) < 4 or tokens[0] != b"P5":
        raise FormatError(f"{path}: not a binary PGM (P5) file")
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise FormatError(f"{path}: malformed PGM header") from None
    if maxval != 255:
        raise FormatError(f"{path}: expected maxval 255, got {maxval}")
    pixels = blob[pos + 1:]
    if len(pixels) != width * height:
        raise FormatError(f"{path}: expected {width * height} pixels, got {len(pixels)}")
    v = np.frombuffer(pixels, dtype=np.uint8).reshape(height, width)
    if not np.all((v == 0) | (v == 255)):
        raise FormatError(f"{path}: mask holds values other than 0 and 255")
    return BinaryChangeMask((v == 255).astype(np.uint8))


def write_mask(mask, path):
    v = np.where(mask.values == 1, 255, 0).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n255\n" % (mask.width, mask.height))
        fh.write(v.tobytes())


def ensure_parent(path):
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)
