"""Grid container, block aggregation, unit conversion, and the RSTR1 codec."""

import hashlib
import math
import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from snowfuse import raster as ra
from snowfuse.errors import DimensionError, GridCompatibilityError, RasterParseError


def spec_of(rows, cols, cell=100.0, ox=500000.0, oy=4300000.0, tag="local"):
    return ra.GridSpec(origin_x=ox, origin_y=oy, cell_size=cell,
                       rows=rows, cols=cols, crs_tag=tag)


def random_raster(rng, rows, cols, bands=1, mask_frac=0.3, tag="local"):
    vals = rng.normal(size=(bands, rows, cols)).astype(np.float32)
    nodata = rng.uniform(size=(rows, cols)) < mask_frac
    return ra.Raster(spec_of(rows, cols, tag=tag), vals, nodata)


# ---------------------------------------------------------------------------
# GridSpec


@pytest.mark.parametrize("kwargs", [
    dict(cell=0.0), dict(cell=-5.0), dict(cell=float("nan")), dict(cell=float("inf")),
])
def test_grid_spec_rejects_bad_cell_size(kwargs):
    with pytest.raises(DimensionError):
        spec_of(4, 4, **kwargs)


@pytest.mark.parametrize("rows,cols", [(0, 4), (4, 0), (-1, 4)])
def test_grid_spec_rejects_bad_dims(rows, cols):
    with pytest.raises(DimensionError):
        spec_of(rows, cols)


def test_grid_spec_rejects_nonfinite_origin():
    with pytest.raises(DimensionError):
        spec_of(4, 4, ox=float("nan"))
    with pytest.raises(DimensionError):
        spec_of(4, 4, oy=float("-inf"))


def test_cell_centers_oracle():
    s = spec_of(3, 4, cell=50.0, ox=1000.0, oy=2000.0)
    xs, ys = s.cell_centers()
    np.testing.assert_allclose(xs, [1025.0, 1075.0, 1125.0, 1175.0], rtol=0)
    # rows advance southward, so center y decreases
    np.testing.assert_allclose(ys, [1975.0, 1925.0, 1875.0], rtol=0)


# ---------------------------------------------------------------------------
# Raster container


def test_raster_promotes_2d_to_single_band():
    r = ra.Raster(spec_of(2, 3), np.ones((2, 3)))
    assert r.bands == 1
    assert r.values.shape == (1, 2, 3)


def test_raster_shape_checks():
    with pytest.raises(DimensionError):
        ra.Raster(spec_of(2, 3), np.ones((3, 2)))
    with pytest.raises(DimensionError):
        ra.Raster(spec_of(2, 3), np.ones((1, 2, 4)))
    with pytest.raises(DimensionError):
        ra.Raster(spec_of(2, 3), np.ones((2, 3)), nodata=np.zeros((3, 2), bool))


def test_raster_rejects_nan_in_valid_cells():
    vals = np.ones((2, 2), np.float32)
    vals[0, 0] = np.nan
    with pytest.raises(DimensionError):
        ra.Raster(spec_of(2, 2), vals)


def test_raster_allows_nan_under_mask():
    vals = np.ones((2, 2), np.float32)
    vals[0, 0] = np.nan
    mask = np.zeros((2, 2), bool)
    mask[0, 0] = True
    r = ra.Raster(spec_of(2, 2), vals, mask)
    assert r.nodata[0, 0]
    assert np.isnan(r.values[0, 0, 0])


def test_raster_is_immutable():
    r = ra.Raster(spec_of(2, 2), np.ones((2, 2)))
    with pytest.raises(AttributeError):
        r.values = np.zeros((1, 2, 2))
    with pytest.raises(ValueError):
        r.values[0, 0, 0] = 5.0
    with pytest.raises(ValueError):
        r.nodata[0, 0] = True


def test_raster_band_accessors():
    vals = np.arange(12, dtype=np.float32).reshape(2, 2, 3)
    r = ra.Raster(spec_of(2, 3), vals)
    np.testing.assert_array_equal(r.band(1), vals[1])
    assert r.band_f64(0).dtype == np.float64
    np.testing.assert_array_equal(r.valid, np.ones((2, 3), bool))


# ---------------------------------------------------------------------------
# BasinMask


def test_basin_mask_area():
    inside = np.zeros((4, 4), bool)
    inside[1:3, 1:4] = True            # 6 cells
    m = ra.BasinMask(spec_of(4, 4, cell=1000.0), inside, "demo")
    assert m.area_km2 == pytest.approx(6.0)
    m500 = ra.BasinMask(spec_of(4, 4, cell=500.0), inside, "demo")
    assert m500.area_km2 == pytest.approx(6 * 0.25)


def test_basin_mask_guards():
    with pytest.raises(DimensionError):
        ra.BasinMask(spec_of(4, 4), np.zeros((4, 4), bool), "empty")
    with pytest.raises(DimensionError):
        ra.BasinMask(spec_of(4, 4), np.ones((3, 4), bool), "shape")
    m = ra.BasinMask(spec_of(2, 2), np.ones((2, 2), bool), "frozen")
    with pytest.raises(ValueError):
        m.inside[0, 0] = False


# ---------------------------------------------------------------------------
# unit conversion


def test_meters_to_inches_scalar():
    assert ra.meters_to_inches(1.0) == pytest.approx(39.3701, abs=0)
    assert ra.meters_to_inches(0.0) == 0.0
    assert ra.meters_to_inches(2.5) == pytest.approx(2.5 * 39.3701, rel=1e-15)


def test_meters_to_inches_raster():
    vals = np.array([[1.0, 0.5], [2.0, 3.0]], np.float32)
    mask = np.array([[False, False], [True, False]])
    out = ra.meters_to_inches(ra.Raster(spec_of(2, 2), vals, mask))
    expect = (vals.astype(np.float64) * 39.3701).astype(np.float32)
    assert out.values[0, 0, 0] == expect[0, 0]
    assert out.values[0, 0, 1] == expect[0, 1]
    assert out.values[0, 1, 1] == expect[1, 1]
    assert out.values[0, 1, 0] == 0.0          # masked cell cleared
    np.testing.assert_array_equal(out.nodata, mask)
    assert out.spec == spec_of(2, 2)


# ---------------------------------------------------------------------------
# block aggregation


def blockmean_oracle(values, valid, factor, rows_out, cols_out):
    """Per-block reimplementation: sum valid pixels column-wise then across
    the block row, in the same order as grouped in-place reduction."""
    means = np.zeros((rows_out, cols_out))
    nodata = np.zeros((rows_out, cols_out), bool)
    filled = np.where(valid, values.astype(np.float64), 0.0)
    for bi in range(rows_out):
        for bj in range(cols_out):
            r0, c0 = bi * factor, bj * factor
            block = filled[r0:r0 + factor, c0:c0 + factor]
            count = valid[r0:r0 + factor, c0:c0 + factor].sum()
            if count == 0:
                nodata[bi, bj] = True
            else:
                means[bi, bj] = block.sum(axis=0).sum() / float(count)
    return means.astype(np.float32), nodata


def test_aggregate_mean_hand_case():
    vals = np.array([[1.0, 2.0], [3.0, 100.0]], np.float32)
    mask = np.array([[False, False], [False, True]])
    out = ra.aggregate_mean(ra.Raster(spec_of(2, 2), vals, mask), factor=2)
    assert out.spec.rows == 1 and out.spec.cols == 1
    assert out.spec.cell_size == 200.0
    assert out.values[0, 0, 0] == np.float32((1.0 + 2.0 + 3.0) / 3.0)
    assert not out.nodata[0, 0]


def test_aggregate_mean_all_masked_block_is_nodata():
    vals = np.ones((4, 2), np.float32)
    mask = np.zeros((4, 2), bool)
    mask[2:4, :] = True
    out = ra.aggregate_mean(ra.Raster(spec_of(4, 2), vals, mask), factor=2)
    assert not out.nodata[0, 0]
    assert out.nodata[1, 0]
    assert out.values[0, 1, 0] == 0.0


def test_aggregate_mean_guards():
    r2 = ra.Raster(spec_of(4, 4), np.ones((2, 4, 4)))
    with pytest.raises(DimensionError):
        ra.aggregate_mean(r2, factor=2)
    r = ra.Raster(spec_of(4, 4), np.ones((4, 4)))
    with pytest.raises(DimensionError):
        ra.aggregate_mean(r, factor=0)
    with pytest.raises(DimensionError):
        ra.aggregate_mean(r, factor=2.0)
    with pytest.raises(DimensionError):
        ra.aggregate_mean(ra.Raster(spec_of(5, 4), np.ones((5, 4))), factor=2)


def test_aggregate_mean_pad_edge_partial_blocks():
    rng = np.random.default_rng(11)
    vals = rng.normal(size=(5, 7)).astype(np.float32)
    valid = rng.uniform(size=(5, 7)) > 0.2
    r = ra.Raster(spec_of(5, 7), vals, ~valid)
    out = ra.aggregate_mean(r, factor=2, pad_edge=True)
    assert (out.spec.rows, out.spec.cols) == (3, 4)
    exp_vals, exp_nodata = blockmean_oracle(vals, valid, 2, 3, 4)
    np.testing.assert_array_equal(out.values[0], exp_vals)
    np.testing.assert_array_equal(out.nodata, exp_nodata)


@given(st.integers(1, 4), st.integers(1, 4), st.integers(1, 5),
       st.integers(0, 2**32 - 1))
def test_aggregate_mean_matches_blockwise_oracle(nr, nc, factor, seed):
    rng = np.random.default_rng(seed)
    rows, cols = nr * factor, nc * factor
    vals = (rng.normal(size=(rows, cols)) * 10).astype(np.float32)
    valid = rng.uniform(size=(rows, cols)) > 0.35
    r = ra.Raster(spec_of(rows, cols), vals, ~valid)
    out = ra.aggregate_mean(r, factor=factor)
    exp_vals, exp_nodata = blockmean_oracle(vals, valid, factor, nr, nc)
    # two independent routes to the same float64 arithmetic: bit equality
    np.testing.assert_array_equal(out.values[0], exp_vals)
    np.testing.assert_array_equal(out.nodata, exp_nodata)
    assert out.spec.cell_size == r.spec.cell_size * factor


def test_aggregate_mean_factor20_close_to_oracle():
    rng = np.random.default_rng(7)
    vals = rng.normal(size=(40, 60)).astype(np.float32)
    valid = rng.uniform(size=(40, 60)) > 0.3
    out = ra.aggregate_mean(ra.Raster(spec_of(40, 60), vals, ~valid), factor=20)
    exp_vals, exp_nodata = blockmean_oracle(vals, valid, 20, 2, 3)
    np.testing.assert_allclose(out.values[0], exp_vals, rtol=1e-6, atol=1e-7)
    np.testing.assert_array_equal(out.nodata, exp_nodata)


def test_aggregate_mean_preserves_constant_fields():
    vals = np.full((40, 40), 17.25, np.float32)
    out = ra.aggregate_mean(ra.Raster(spec_of(40, 40), vals), factor=20)
    assert (out.values == np.float32(17.25)).all()


# ---------------------------------------------------------------------------
# crop


def test_crop_masks_outside_cells():
    vals = np.arange(16, dtype=np.float32).reshape(4, 4) + 1
    inside = np.zeros((4, 4), bool)
    inside[0:2, 0:2] = True
    r = ra.Raster(spec_of(4, 4), vals)
    out = ra.crop(r, ra.BasinMask(spec_of(4, 4), inside, "ul"))
    np.testing.assert_array_equal(out.values[0][inside], vals[inside])
    assert (out.values[0][~inside] == 0.0).all()
    np.testing.assert_array_equal(out.nodata, ~inside)


def test_crop_keeps_existing_nodata():
    vals = np.ones((2, 2), np.float32)
    nod = np.array([[True, False], [False, False]])
    inside = np.array([[True, True], [False, True]])
    out = ra.crop(ra.Raster(spec_of(2, 2), vals, nod),
                  ra.BasinMask(spec_of(2, 2), inside, "b"))
    np.testing.assert_array_equal(out.nodata, nod | ~inside)


def test_crop_grid_mismatch():
    r = ra.Raster(spec_of(2, 2), np.ones((2, 2)))
    m = ra.BasinMask(spec_of(2, 2, cell=50.0), np.ones((2, 2), bool), "x")
    with pytest.raises(GridCompatibilityError):
        ra.crop(r, m)


# ---------------------------------------------------------------------------
# RSTR1 serialization


def test_roundtrip_is_bit_exact(tmp_path):
    rng = np.random.default_rng(42)
    r = random_raster(rng, 7, 9, bands=3, tag="epsg:32611")
    path = tmp_path / "trip.rst"
    ra.write_raster(r, path)
    back = ra.read_raster(path)
    assert back.spec == r.spec
    assert back.values.tobytes() == r.values.tobytes()
    np.testing.assert_array_equal(back.nodata, r.nodata)


def test_roundtrip_preserves_negative_zero_and_extremes(tmp_path):
    vals = np.array([[-0.0, np.float32(3.4e38)], [np.float32(1e-44), -1.0]], np.float32)
    r = ra.Raster(spec_of(2, 2), vals)
    path = tmp_path / "edge.rst"
    ra.write_raster(r, path)
    back = ra.read_raster(path)
    assert back.values.tobytes() == r.values.tobytes()


def test_rewrite_produces_identical_bytes(tmp_path):
    rng = np.random.default_rng(5)
    r = random_raster(rng, 6, 5, bands=2)
    p1, p2 = tmp_path / "a.rst", tmp_path / "b.rst"
    ra.write_raster(r, p1)
    ra.write_raster(ra.read_raster(p1), p2)
    h1 = hashlib.sha256(p1.read_bytes()).hexdigest()
    h2 = hashlib.sha256(p2.read_bytes()).hexdigest()
    assert h1 == h2


def header_bytes(rows=1, cols=1, bands=1, cell=100.0, ox=0.0, oy=0.0, tag=b"local"):
    head = struct.pack("<QQQdddQ", rows, cols, bands, cell, ox, oy, len(tag))
    return ra.RASTER_MAGIC + head + tag


def test_read_raster_rejects_truncated_magic(tmp_path):
    p = tmp_path / "x.rst"
    p.write_bytes(b"RST")
    with pytest.raises(RasterParseError, match="truncated magic"):
        ra.read_raster(p)


def test_read_raster_rejects_bad_magic(tmp_path):
    p = tmp_path / "x.rst"
    p.write_bytes(b"NOTRAST\x00" + b"\x00" * 64)
    with pytest.raises(RasterParseError, match="bad magic"):
        ra.read_raster(p)


def test_read_raster_rejects_truncated_header(tmp_path):
    p = tmp_path / "x.rst"
    p.write_bytes(ra.RASTER_MAGIC + b"\x00" * 10)
    with pytest.raises(RasterParseError, match="truncated header"):
        ra.read_raster(p)


@pytest.mark.parametrize("field,value,message", [
    ("rows", 0, "invalid rows/cols"),
    ("bands", 0, "invalid bands"),
    ("cell", 0.0, "invalid cell_size"),
    ("cell", float("nan"), "invalid cell_size"),
    ("ox", float("inf"), "non-finite origin"),
])
def test_read_raster_rejects_bad_header_fields(tmp_path, field, value, message):
    p = tmp_path / "x.rst"
    p.write_bytes(header_bytes(**{field: value}))
    with pytest.raises(RasterParseError, match=message):
        ra.read_raster(p)


def test_read_raster_rejects_tag_overrun(tmp_path):
    p = tmp_path / "x.rst"
    head = struct.pack("<QQQdddQ", 1, 1, 1, 100.0, 0.0, 0.0, 500)
    p.write_bytes(ra.RASTER_MAGIC + head + b"ab")
    with pytest.raises(RasterParseError, match="crs_tag_len"):
        ra.read_raster(p)


def test_read_raster_rejects_size_mismatch(tmp_path):
    p = tmp_path / "x.rst"
    ra.write_raster(ra.Raster(spec_of(2, 2), np.ones((2, 2))), p)
    blob = p.read_bytes()
    (tmp_path / "short.rst").write_bytes(blob[:-4])
    with pytest.raises(RasterParseError, match="size mismatch"):
        ra.read_raster(tmp_path / "short.rst")
    (tmp_path / "long.rst").write_bytes(blob + b"\x00" * 4)
    with pytest.raises(RasterParseError, match="size mismatch"):
        ra.read_raster(tmp_path / "long.rst")


def test_read_raster_rejects_bad_utf8_tag(tmp_path):
    p = tmp_path / "x.rst"
    body = b"\x00" + struct.pack("<f", 1.0)      # 1x1 mask byte + one value
    p.write_bytes(header_bytes(tag=b"\xff\xfe") + body)
    with pytest.raises(RasterParseError, match="not valid UTF-8"):
        ra.read_raster(p)


def test_read_raster_rejects_nan_in_valid_pixel(tmp_path):
    p = tmp_path / "x.rst"
    body = b"\x00" + struct.pack("<f", math.nan)
    p.write_bytes(header_bytes() + body)
    with pytest.raises(RasterParseError, match="NaN"):
        ra.read_raster(p)


def test_nodata_bit_packing_layout(tmp_path):
    # 9 pixels forces a two-byte mask; confirm LSB-first row-major order
    nod = np.zeros((3, 3), bool)
    nod[0, 1] = True      # flat index 1
    nod[2, 2] = True      # flat index 8 -> second byte, bit 0
    r = ra.Raster(spec_of(3, 3), np.ones((3, 3)), nod)
    p = tmp_path / "bits.rst"
    ra.write_raster(r, p)
    blob = p.read_bytes()
    mask_off = len(ra.RASTER_MAGIC) + struct.calcsize("<QQQdddQ") + len(b"local")
    assert blob[mask_off] == 0b00000010
    assert blob[mask_off + 1] == 0b00000001
    np.testing.assert_array_equal(ra.read_raster(p).nodata, nod)
