"""Georeferenced grids with explicit nodata handling.

Every gridded quantity in the pipeline (imagery bands, SWE fields, basin
masks) is a `Raster`: band-major float32 values over a `GridSpec`, plus a
single boolean nodata mask shared by all bands. The origin is the map
coordinate of the top-left corner; row indices increase southward, column
indices eastward, cells are square. Arrays are frozen after construction
so rasters can be shared freely across threads.

File format RSTR1 (little-endian):

    magic     8 bytes  b"RSTR1\\x00\\x00\\x00"
    header    rows u64 | cols u64 | bands u64 | cell_size f64
              | origin_x f64 | origin_y f64 | crs_tag_len u64
    crs_tag   UTF-8, crs_tag_len bytes
    nodata    rows*cols bits, row-major, LSB-first, zero-padded to a byte
              boundary; a set bit marks a nodata pixel
    values    bands * rows * cols float32, band-major then row-major
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, GridCompatibilityError, RasterParseError

INCHES_PER_METER = 39.3701

RASTER_MAGIC = b"RSTR1\x00\x00\x00"
_HEADER = struct.Struct("<QQQdddQ")


@dataclass(frozen=True)
class GridSpec:
    """Grid geometry: top-left origin in projected map meters, square cells."""

    origin_x: float
    origin_y: float
    cell_size: float
    rows: int
    cols: int
    crs_tag: str = "local"

    def __post_init__(self):
        if not (math.isfinite(self.cell_size) and self.cell_size > 0):
            raise DimensionError(f"cell_size must be positive and finite, got {self.cell_size}")
        if self.rows < 1 or self.cols < 1:
            raise DimensionError(f"grid must be at least 1x1, got {self.rows}x{self.cols}")
        if not (math.isfinite(self.origin_x) and math.isfinite(self.origin_y)):
            raise DimensionError("grid origin must be finite")

    def cell_centers(self) -> tuple[np.ndarray, np.ndarray]:
        """Map coordinates of cell centers: (xs over cols, ys over rows)."""
        xs = self.origin_x + (np.arange(self.cols) + 0.5) * self.cell_size
        ys = self.origin_y - (np.arange(self.rows) + 0.5) * self.cell_size
        return xs, ys


class Raster:
    """Band-major float32 grid with one shared boolean nodata mask."""

    __slots__ = ("spec", "values", "nodata")

    def __init__(self, spec: GridSpec, values, nodata=None):
        values = np.asarray(values, dtype=np.float32)
        if values.ndim == 2:
            values = values[None, :, :]
        if values.ndim != 3 or values.shape[1:] != (spec.rows, spec.cols):
            raise DimensionError(
                f"values shape {values.shape} does not match grid "
                f"{spec.rows}x{spec.cols}")
        if nodata is None:
            nodata = np.zeros((spec.rows, spec.cols), dtype=bool)
        else:
            nodata = np.asarray(nodata, dtype=bool)
            if nodata.shape != (spec.rows, spec.cols):
                raise DimensionError(
                    f"nodata shape {nodata.shape} does not match grid "
                    f"{spec.rows}x{spec.cols}")
        if bool(np.isnan(values[:, ~nodata]).any()):
            raise DimensionError("NaN in unmasked pixels")
        values = np.ascontiguousarray(values)
        nodata = np.ascontiguousarray(nodata)
        values.setflags(write=False)
        nodata.setflags(write=False)
        object.__setattr__(self, "spec", spec)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "nodata", nodata)

    def __setattr__(self, name, value):
        raise AttributeError("Raster is immutable")

    @property
    def bands(self) -> int:
        return self.values.shape[0]

    @property
    def valid(self) -> np.ndarray:
        return ~self.nodata

    def band(self, i: int) -> np.ndarray:
        return self.values[i]

    def band_f64(self, i: int) -> np.ndarray:
        return self.values[i].astype(np.float64)


@dataclass(frozen=True, eq=False)
class BasinMask:
    """Subset of a 1 km grid belonging to one basin."""

    spec: GridSpec
    inside: np.ndarray
    basin_name: str

    def __post_init__(self):
        inside = np.asarray(self.inside, dtype=bool)
        if inside.shape != (self.spec.rows, self.spec.cols):
            raise DimensionError(
                f"mask shape {inside.shape} does not match grid "
                f"{self.spec.rows}x{self.spec.cols}")
        if not inside.any():
            raise DimensionError(f"basin {self.basin_name!r} has no inside cells")
        inside = np.ascontiguousarray(inside)
        inside.setflags(write=False)
        object.__setattr__(self, "inside", inside)

    @property
    def area_km2(self) -> float:
        """Cell count times the cell area in square kilometers."""
        km = self.spec.cell_size / 1000.0
        return float(self.inside.sum()) * km * km


def meters_to_inches(x):
    """Scale lengths in meters to inches (39.3701 in/m).

    Accepts a plain number or a Raster; raster nodata is preserved and
    masked cells are written as 0.
    """
    if isinstance(x, Raster):
        v = x.values.astype(np.float64) * INCHES_PER_METER
        v = np.where(x.nodata[None, :, :], 0.0, v)
        return Raster(x.spec, v.astype(np.float32), x.nodata)
    return float(x) * INCHES_PER_METER


def _block_sums(arr: np.ndarray, factor: int) -> np.ndarray:
    rows, cols = arr.shape
    ri = np.arange(0, rows, factor)
    ci = np.arange(0, cols, factor)
    return np.add.reduceat(np.add.reduceat(arr, ri, axis=0), ci, axis=1)


def aggregate_mean(src: Raster, factor: int = 20, pad_edge: bool = False) -> Raster:
    """Block-average a single-band raster over factor x factor windows.

    Each output cell is the mean of the valid input pixels in its block,
    accumulated in float64; a block with no valid pixel is nodata. The
    grid must divide evenly by `factor` unless pad_edge is set, in which
    case partial edge blocks average whatever valid pixels they cover.
    """
    if src.bands != 1:
        raise DimensionError(f"aggregate_mean expects a single band, got {src.bands}")
    if not isinstance(factor, (int, np.integer)) or factor < 1:
        raise DimensionError(f"aggregation factor must be a positive integer, got {factor!r}")
    rows, cols = src.spec.rows, src.spec.cols
    if not pad_edge and (rows % factor or cols % factor):
        raise DimensionError(
            f"grid {rows}x{cols} not divisible by factor {factor}; pass pad_edge=True "
            f"to average partial edge blocks")
    valid = src.valid
    v64 = np.where(valid, src.band_f64(0), 0.0)
    sums = _block_sums(v64, factor)
    counts = _block_sums(valid.astype(np.float64), factor)
    nodata = counts == 0
    means = np.divide(sums, counts, out=np.zeros_like(sums), where=~nodata)
    out_spec = GridSpec(
        origin_x=src.spec.origin_x,
        origin_y=src.spec.origin_y,
        cell_size=src.spec.cell_size * factor,
        rows=-(-rows // factor),
        cols=-(-cols // factor),
        crs_tag=src.spec.crs_tag,
    )
    return Raster(out_spec, means.astype(np.float32), nodata)


def crop(r: Raster, mask: BasinMask) -> Raster:
    """Keep only cells inside the basin; everything else becomes nodata."""
    if r.spec != mask.spec:
        raise GridCompatibilityError(
            f"raster grid {r.spec} does not match mask grid {mask.spec}")
    nodata = r.nodata | ~mask.inside
    values = np.where(nodata[None, :, :], 0.0, r.values.astype(np.float64))
    return Raster(r.spec, values.astype(np.float32), nodata)


def write_raster(r: Raster, path) -> None:
    """Serialize to the RSTR1 container (bit-exact round trip)."""
    tag = r.spec.crs_tag.encode("utf-8")
    bits = np.packbits(r.nodata.reshape(-1), bitorder="little")
    with open(path, "wb") as f:
        f.write(RASTER_MAGIC)
        f.write(_HEADER.pack(r.spec.rows, r.spec.cols, r.bands, r.spec.cell_size,
                             r.spec.origin_x, r.spec.origin_y, len(tag)))
        f.write(tag)
        f.write(bits.tobytes())
        f.write(np.ascontiguousarray(r.values, dtype="<f4").tobytes())


def read_raster(path) -> Raster:
    """Parse an RSTR1 file, failing loudly with the offending field named."""
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < len(RASTER_MAGIC):
        raise RasterParseError(f"{path}: truncated magic ({len(blob)} bytes)")
    magic = blob[:len(RASTER_MAGIC)]
    if magic != RASTER_MAGIC:
        raise RasterParseError(f"{path}: bad magic {magic!r}, expected {RASTER_MAGIC!r}")
    pos = len(RASTER_MAGIC)
    if len(blob) < pos + _HEADER.size:
        raise RasterParseError(f"{path}: truncated header "
                               f"(need {_HEADER.size} bytes, have {len(blob) - pos})")
    rows, cols, bands, cell_size, origin_x, origin_y, tag_len = _HEADER.unpack_from(blob, pos)
    pos += _HEADER.size
    if rows < 1 or cols < 1:
        raise RasterParseError(f"{path}: invalid rows/cols {rows}x{cols}")
    if bands < 1:
        raise RasterParseError(f"{path}: invalid bands {bands}")
    if not (math.isfinite(cell_size) and cell_size > 0):
        raise RasterParseError(f"{path}: invalid cell_size {cell_size}")
    if not (math.isfinite(origin_x) and math.isfinite(origin_y)):
        raise RasterParseError(f"{path}: non-finite origin ({origin_x}, {origin_y})")
    remaining = len(blob) - pos
    mask_bytes = (rows * cols + 7) // 8
    payload_bytes = bands * rows * cols * 4
    expected = tag_len + mask_bytes + payload_bytes
    if remaining < tag_len:
        raise RasterParseError(f"{path}: crs_tag_len {tag_len} exceeds remaining {remaining} bytes")
    if remaining != expected:
        raise RasterParseError(
            f"{path}: payload size mismatch for {bands}x{rows}x{cols}: "
            f"expected {expected} bytes after header, found {remaining}")
    try:
        crs_tag = blob[pos:pos + tag_len].decode("utf-8")
    except UnicodeDecodeError as e:
        raise RasterParseError(f"{path}: crs_tag is not valid UTF-8: {e}") from None
    pos += tag_len
    bits = np.frombuffer(blob, dtype=np.uint8, count=mask_bytes, offset=pos)
    nodata = np.unpackbits(bits, count=rows * cols, bitorder="little").astype(bool)
    nodata = nodata.reshape(rows, cols)
    pos += mask_bytes
    values = np.frombuffer(blob, dtype="<f4", count=bands * rows * cols, offset=pos)
    values = values.reshape(bands, rows, cols)
    spec = GridSpec(origin_x, origin_y, cell_size, rows, cols, crs_tag)
    try:
        return Raster(spec, values, nodata)
    except DimensionError as e:
        raise RasterParseError(f"{path}: {e}") from None
