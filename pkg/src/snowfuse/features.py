"""Per-source feature derivation from raw rasters and weather tables.

Channel conventions used across the pipeline (fixed orders, documented
once here):

    terrain patch   elevation, slope_deg, aspect_deg
    sar patch       vv, vh, vv + vh
    spectral patch  b8a, b12, (b8a-b12)/(b8a+b12), b2, b4, (b8-b2)/(b8+b2)
    weather columns snow_cover, albedo, precip_total, temp_max, temp_min,
                    wind_dir, wind_vel     (7 columns, oldest day first)

snow_cover and albedo are the imageless satellite scalars and may be
missing on cloud-masked days; the remaining five columns are required on
every day of a window. Derived raster bands are min-max scaled to [0, 1]
per scene before patch extraction, replacing any pretrained channel
statistics; masked pixels are written as 0 after scaling.
"""

from __future__ import annotations

import csv
import datetime as dt
import math
from dataclasses import dataclass, fields

import numpy as np

from .errors import DataError, DimensionError, GridCompatibilityError, WeatherGapError
from .raster import GridSpec, Raster

WEATHER_COLUMNS = ("snow_cover", "albedo", "precip_total", "temp_max", "temp_min",
                   "wind_dir", "wind_vel")
MODIS_COLUMNS = (0, 1)
GRIDMET_COLUMNS = (2, 3, 4, 5, 6)
WINDOW_DAYS = 11
RATIO_EPS = 1e-9


def slope_aspect(dem: Raster, cell_size: float | None = None) -> tuple[Raster, Raster]:
    """Slope and aspect in degrees from a single-band DEM via the Horn
    3x3 weighted-difference stencil.

    Slope is atan of the gradient magnitude. Aspect is the compass
    direction of steepest descent, clockwise from north in [0, 360).
    Border pixels and pixels whose 3x3 window touches nodata are nodata
    in both outputs; aspect is additionally nodata where the surface is
    exactly flat.
    """
    if dem.bands != 1:
        raise DimensionError(f"slope_aspect expects a single band, got {dem.bands}")
    if dem.spec.rows < 3 or dem.spec.cols < 3:
        raise DimensionError(
            f"slope_aspect needs at least a 3x3 grid, got {dem.spec.rows}x{dem.spec.cols}")
    cs = dem.spec.cell_size if cell_size is None else float(cell_size)
    if not (math.isfinite(cs) and cs > 0):
        raise DimensionError(f"cell size must be positive and finite, got {cs}")

    z = dem.band_f64(0)
    valid = dem.valid
    rows, cols = z.shape

    # Weighted differences toward east and south over the 3x3 window.
    g_east = ((z[:-2, 2:] + 2.0 * z[1:-1, 2:] + z[2:, 2:])
              - (z[:-2, :-2] + 2.0 * z[1:-1, :-2] + z[2:, :-2])) / (8.0 * cs)
    g_south = ((z[2:, :-2] + 2.0 * z[2:, 1:-1] + z[2:, 2:])
               - (z[:-2, :-2] + 2.0 * z[:-2, 1:-1] + z[:-2, 2:])) / (8.0 * cs)
    g_north = -g_south

    win_valid = np.ones_like(g_east, dtype=bool)
    for dr in (0, 1, 2):
        for dc in (0, 1, 2):
            win_valid &= valid[dr:rows - 2 + dr, dc:cols - 2 + dc]

    slope_deg = np.degrees(np.arctan(np.hypot(g_east, g_north)))
    flat = (g_east == 0.0) & (g_north == 0.0)
    aspect_deg = np.degrees(np.arctan2(-g_east, -g_north)) % 360.0

    slope_out = np.zeros((rows, cols))
    aspect_out = np.zeros((rows, cols))
    slope_nodata = np.ones((rows, cols), dtype=bool)
    aspect_nodata = np.ones((rows, cols), dtype=bool)
    slope_out[1:-1, 1:-1] = np.where(win_valid, slope_deg, 0.0)
    slope_nodata[1:-1, 1:-1] = ~win_valid
    aspect_ok = win_valid & ~flat
    aspect_out[1:-1, 1:-1] = np.where(aspect_ok, aspect_deg, 0.0)
    aspect_nodata[1:-1, 1:-1] = ~aspect_ok
    return (Raster(dem.spec, slope_out.astype(np.float32), slope_nodata),
            Raster(dem.spec, aspect_out.astype(np.float32), aspect_nodata))


def normalized_ratio(a: Raster, b: Raster) -> Raster:
    """(a - b) / (a + b) per pixel, nodata where |a + b| is below 1e-9.

    For non-negative inputs the result is clipped to [-1, 1] to absorb
    float round-off.
    """
    if a.spec != b.spec:
        raise GridCompatibilityError(f"ratio inputs on different grids: {a.spec} vs {b.spec}")
    if a.bands != 1 or b.bands != 1:
        raise DimensionError(f"normalized_ratio expects single bands, got {a.bands} and {b.bands}")
    av, bv = a.band_f64(0), b.band_f64(0)
    den = av + bv
    nodata = a.nodata | b.nodata | (np.abs(den) < RATIO_EPS)
    ratio = np.divide(av - bv, den, out=np.zeros_like(den), where=~nodata)
    nonneg = (av >= 0.0) & (bv >= 0.0)
    ratio = np.where(nonneg, np.clip(ratio, -1.0, 1.0), ratio)
    ratio = np.where(nodata, 0.0, ratio)
    return Raster(a.spec, ratio.astype(np.float32), nodata)


def sar_composite(vv: Raster, vh: Raster) -> Raster:
    """Stack vv, vh, and vv + vh into a 3-band raster (nodata is the union)."""
    if vv.spec != vh.spec:
        raise GridCompatibilityError(f"sar bands on different grids: {vv.spec} vs {vh.spec}")
    if vv.bands != 1 or vh.bands != 1:
        raise DimensionError(f"sar_composite expects single bands, got {vv.bands} and {vh.bands}")
    nodata = vv.nodata | vh.nodata
    a = np.where(nodata, 0.0, vv.band_f64(0))
    b = np.where(nodata, 0.0, vh.band_f64(0))
    stack = np.stack([a, b, a + b]).astype(np.float32)
    return Raster(vv.spec, stack, nodata)


def modis_tabular(pixels, theoretical_max: float) -> float | None:
    """Collapse the (up to four) 500 m pixels covering one grid cell into a
    single fraction: mean of the unmasked values divided by the sensor's
    theoretical maximum, clamped to [0, 1]. Masked pixels are None; if all
    four are masked the cell has no observation and None is returned.
    """
    pixels = list(pixels)
    if len(pixels) != 4:
        raise DataError(f"modis_tabular expects exactly 4 pixels, got {len(pixels)}")
    if not (math.isfinite(theoretical_max) and theoretical_max > 0):
        raise DataError(f"theoretical_max must be positive, got {theoretical_max}")
    present = [float(p) for p in pixels if p is not None]
    if not present:
        return None
    value = (sum(present) / len(present)) / theoretical_max
    return min(1.0, max(0.0, value))


_SPECTRAL_BANDS = ("b2", "b4", "b8", "b8a", "b12", "vv", "vh")


@dataclass(frozen=True, eq=False)
class SpectralScene:
    """Named single-band rasters of one acquisition, all co-registered.

    b2/b4/b8/b8a/b12 are reflectances, vv/vh are backscatter in dB. Any
    subset of bands may be present; whichever are present must share one
    grid.
    """

    b2: Raster | None = None
    b4: Raster | None = None
    b8: Raster | None = None
    b8a: Raster | None = None
    b12: Raster | None = None
    vv: Raster | None = None
    vh: Raster | None = None

    def __post_init__(self):
        specs = {name: getattr(self, name).spec for name in _SPECTRAL_BANDS
                 if getattr(self, name) is not None}
        if not specs:
            raise DataError("SpectralScene needs at least one band")
        first_name, first = next(iter(specs.items()))
        for name, spec in specs.items():
            if spec != first:
                raise GridCompatibilityError(
                    f"band {name} grid differs from band {first_name}")

    def band(self, name: str) -> Raster:
        if name not in _SPECTRAL_BANDS:
            raise DataError(f"unknown band {name!r}, expected one of {_SPECTRAL_BANDS}")
        r = getattr(self, name)
        if r is None:
            raise DataError(f"band {name!r} absent from scene")
        return r


@dataclass(frozen=True, eq=False)
class TerrainPatch:
    """Co-registered elevation (m), slope (deg), aspect (deg CW from north)."""

    elevation: Raster
    slope: Raster
    aspect: Raster

    def __post_init__(self):
        if not (self.elevation.spec == self.slope.spec == self.aspect.spec):
            raise GridCompatibilityError("terrain bands are not co-registered")
        s = self.slope.values[0][self.slope.valid]
        if s.size and (s.min() < 0.0 or s.max() > 90.0):
            raise DataError("slope out of [0, 90] degrees")
        a = self.aspect.values[0][self.aspect.valid]
        if a.size and (a.min() < 0.0 or a.max() >= 360.0):
            raise DataError("aspect out of [0, 360) degrees")

    @classmethod
    def from_dem(cls, dem: Raster) -> "TerrainPatch":
        slope, aspect = slope_aspect(dem)
        return cls(dem, slope, aspect)


@dataclass(frozen=True)
class DailyWeather:
    """One day of drivers; the two satellite scalars may be absent."""

    snow_cover: float | None
    albedo: float | None
    precip_total: float
    temp_max: float
    temp_min: float
    wind_dir: float
    wind_vel: float

    def __post_init__(self):
        for name in ("snow_cover", "albedo"):
            v = getattr(self, name)
            if v is not None and not (0.0 <= v <= 1.0):
                raise DataError(f"{name} must lie in [0, 1], got {v}")
        for name in ("precip_total", "temp_max", "temp_min", "wind_dir", "wind_vel"):
            v = getattr(self, name)
            if v is None or not math.isfinite(v):
                raise DataError(f"{name} must be a finite number, got {v!r}")
        if not (0.0 <= self.wind_dir < 360.0):
            raise DataError(f"wind_dir must lie in [0, 360), got {self.wind_dir}")
        if self.precip_total < 0.0:
            raise DataError(f"precip_total must be non-negative, got {self.precip_total}")
        if self.wind_vel < 0.0:
            raise DataError(f"wind_vel must be non-negative, got {self.wind_vel}")

    def column(self, idx: int) -> float | None:
        return getattr(self, WEATHER_COLUMNS[idx])


class WeatherSeries:
    """Per-day records keyed by date, kept in increasing order.

    The container itself may span gaps (a station can go dark); windowing
    is where contiguity gets enforced, with an error naming the holes.
    """

    def __init__(self, records: dict[dt.date, DailyWeather]):
        if not records:
            raise DataError("weather series has no records")
        self._records = {d: records[d] for d in sorted(records)}

    def __contains__(self, date: dt.date) -> bool:
        return date in self._records

    def __len__(self) -> int:
        return len(self._records)

    def __getitem__(self, date: dt.date) -> DailyWeather:
        return self._records[date]

    def dates(self) -> list[dt.date]:
        return list(self._records)

    def items(self):
        return self._records.items()


def weather_window(series: WeatherSeries, target_date: dt.date) -> np.ndarray:
    """11 x 7 matrix for the target date and the 10 preceding days.

    Rows run oldest to newest, so row 10 is the target date itself.
    Any missing day raises a gap error listing the dates; a missing
    required (non-satellite) field raises a data error. Missing satellite
    scalars come through as NaN for the caller to impute.
    """
    dates = [target_date - dt.timedelta(days=WINDOW_DAYS - 1 - i) for i in range(WINDOW_DAYS)]
    missing = [d for d in dates if d not in series]
    if missing:
        raise WeatherGapError(missing)
    out = np.empty((WINDOW_DAYS, len(WEATHER_COLUMNS)), dtype=np.float64)
    for i, d in enumerate(dates):
        rec = series[d]
        for j in range(len(WEATHER_COLUMNS)):
            v = rec.column(j)
            if v is None:
                if j in GRIDMET_COLUMNS:
                    raise DataError(f"required field {WEATHER_COLUMNS[j]} missing on {d}")
                out[i, j] = np.nan
            else:
                out[i, j] = v
    return out


def fill_modis_columns(window: np.ndarray, fallbacks: tuple[float, float],
                       max_lookback: int = 7) -> tuple[np.ndarray, np.ndarray]:
    """Impute NaN satellite scalars within a window.

    Each gap takes the most recent valid value at most `max_lookback` rows
    back, else the supplied training-set mean. Returns (filled copy,
    validity flags [rows, 2]) where a flag is 1.0 for a genuine value.
    """
    filled = window.copy()
    validity = np.ones((window.shape[0], len(MODIS_COLUMNS)))
    for k, col in enumerate(MODIS_COLUMNS):
        for i in range(window.shape[0]):
            if np.isnan(filled[i, col]):
                validity[i, k] = 0.0
                value = fallbacks[k]
                for back in range(1, max_lookback + 1):
                    if i - back >= 0 and not np.isnan(window[i - back, col]):
                        value = window[i - back, col]
                        break
                filled[i, col] = value
    return filled, validity


def minmax_scale(values: np.ndarray, valid: np.ndarray) -> np.ndarray:
    """Scale one band to [0, 1] over its valid pixels; masked cells -> 0.

    A constant band maps to 0 everywhere (zero dynamic range carries no
    information for the encoders).
    """
    if not valid.any():
        return np.zeros_like(values, dtype=np.float64)
    v = values.astype(np.float64)
    lo = v[valid].min()
    hi = v[valid].max()
    if hi == lo:
        return np.zeros_like(v)
    out = (v - lo) / (hi - lo)
    return np.where(valid, out, 0.0)


def patch_window(img_spec: GridSpec, coarse_spec: GridSpec, cell: tuple[int, int],
                 patch: int) -> tuple[int, int]:
    """Top-left imagery pixel of the patch x patch window centered on a
    coarse cell (the cell plus its context ring). Raises if the window
    leaves the imagery extent.
    """
    r, c = cell
    cx = coarse_spec.origin_x + (c + 0.5) * coarse_spec.cell_size
    cy = coarse_spec.origin_y - (r + 0.5) * coarse_spec.cell_size
    center_col = (cx - img_spec.origin_x) / img_spec.cell_size
    center_row = (img_spec.origin_y - cy) / img_spec.cell_size
    r0 = int(round(center_row - patch / 2.0))
    c0 = int(round(center_col - patch / 2.0))
    if r0 < 0 or c0 < 0 or r0 + patch > img_spec.rows or c0 + patch > img_spec.cols:
        raise DataError(
            f"patch window for cell {cell} leaves the imagery extent "
            f"({img_spec.rows}x{img_spec.cols}, window at ({r0}, {c0}) size {patch})")
    return r0, c0


def extract_patch(bands: np.ndarray, r0: int, c0: int, patch: int) -> np.ndarray:
    """Slice a [C, patch, patch] block out of stacked [C, H, W] bands."""
    return np.ascontiguousarray(bands[:, r0:r0 + patch, c0:c0 + patch])


def read_weather_csv(path) -> WeatherSeries:
    """Parse the per-basin weather table.

    Header: date,snow_cover,albedo,precip_total,temp_max,temp_min,
    wind_dir,wind_vel. Dates are ISO, one row per day; an empty field is
    a missing observation.
    """
    expected = ["date", *WEATHER_COLUMNS]
    records: dict[dt.date, DailyWeather] = {}
    with open(path, newline="") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty weather file") from None
        if header != expected:
            raise DataError(f"{path}: bad header {header}, expected {expected}")
        for line_no, row in enumerate(reader, start=2):
            if len(row) != len(expected):
                raise DataError(f"{path}:{line_no}: expected {len(expected)} fields, got {len(row)}")
            try:
                date = dt.date.fromisoformat(row[0])
            except ValueError:
                raise DataError(f"{path}:{line_no}: bad date {row[0]!r}") from None
            if date in records:
                raise DataError(f"{path}:{line_no}: duplicate date {date.isoformat()}")
            vals: list[float | None] = []
            for name, field in zip(WEATHER_COLUMNS, row[1:]):
                if field == "":
                    vals.append(None)
                else:
                    try:
                        vals.append(float(field))
                    except ValueError:
                        raise DataError(
                            f"{path}:{line_no}: bad {name} value {field!r}") from None
            try:
                records[date] = DailyWeather(*vals)
            except DataError as e:
                raise DataError(f"{path}:{line_no}: {e}") from None
    return WeatherSeries(records)


def write_weather_csv(series: WeatherSeries, path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["date", *WEATHER_COLUMNS])
        for date, rec in series.items():
            row = [date.isoformat()]
            for idx in range(len(WEATHER_COLUMNS)):
                v = rec.column(idx)
                row.append("" if v is None else repr(float(v)))
            writer.writerow(row)


def _weather_field_names() -> tuple[str, ...]:
    return tuple(f.name for f in fields(DailyWeather))


assert _weather_field_names() == WEATHER_COLUMNS
