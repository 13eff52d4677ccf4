"""Scoring: Gaussian post-smoothing, per-basin and area-weighted RMSE,
reference baselines, and the error-vs-truth Loess diagnostic.

Conventions fixed here: model predictions are clamped at zero before any
RMSE (the network output is unbounded); per-basin RMSEs are combined into
an overall number as the area-weighted mean of basin RMSEs, not a pooled
RMSE over all cells.
"""

from __future__ import annotations

import csv
import datetime as dt
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (ConfigError, DataError, EmptyEvaluationError, GridCompatibilityError,
                     StationDataError)
from .raster import BasinMask, GridSpec, Raster


# ---------------------------------------------------------------------------
# rmse and aggregation


def _joint_cells(pred: Raster, truth: Raster, mask: BasinMask) -> np.ndarray:
    if pred.spec != truth.spec or pred.spec != mask.spec:
        raise GridCompatibilityError("pred, truth, and mask must share one grid")
    if pred.values.shape[0] != 1 or truth.values.shape[0] != 1:
        raise DataError("rmse expects single-band rasters")
    joint = pred.valid & truth.valid & mask.inside
    if not joint.any():
        raise EmptyEvaluationError("no cell is valid in pred, truth, and mask at once")
    return joint


def rmse(pred: Raster, truth: Raster, mask: BasinMask) -> float:
    """RMSE in inches over jointly valid masked cells; pred clamped at 0."""
    joint = _joint_cells(pred, truth, mask)
    p = np.maximum(pred.band_f64(0)[joint], 0.0)
    t = np.maximum(truth.band_f64(0)[joint], 0.0)
    return float(np.sqrt(np.mean((p - t) ** 2)))


def area_weighted_overall(rows: list[tuple[float, float]]) -> float:
    """Weighted mean of per-basin RMSEs, weights = basin areas."""
    if not rows:
        raise EmptyEvaluationError("area_weighted_overall needs at least one row")
    areas = np.array([a for a, _ in rows], dtype=np.float64)
    rmses = np.array([r for _, r in rows], dtype=np.float64)
    if (areas <= 0).any():
        raise DataError(f"areas must be positive, got {areas.min()}")
    return float((areas * rmses).sum() / areas.sum())


def _constant_raster(spec: GridSpec, value: float) -> Raster:
    vals = np.full((1, spec.rows, spec.cols), value, dtype=np.float32)
    return Raster(spec, vals, np.zeros((spec.rows, spec.cols), dtype=bool))


def baseline_zero(truth: Raster, mask: BasinMask) -> float:
    """RMSE of the all-zero prediction (equals sqrt(mean(truth^2)))."""
    return rmse(_constant_raster(truth.spec, 0.0), truth, mask)


def baseline_mean(train_mean: float, truth: Raster, mask: BasinMask) -> float:
    """RMSE of predicting the train-split mean SWE everywhere."""
    return rmse(_constant_raster(truth.spec, train_mean), truth, mask)


# ---------------------------------------------------------------------------
# stations and the nearest-station baseline


@dataclass
class Station:
    station_id: str
    x: float
    y: float
    elevation: float
    swe_by_date: dict[dt.date, float] = field(default_factory=dict)


@dataclass
class StationSet:
    stations: list[Station]

    def __post_init__(self):
        seen: set[str] = set()
        for s in self.stations:
            if s.station_id in seen:
                raise StationDataError(f"duplicate station id {s.station_id!r}")
            seen.add(s.station_id)

    def reporting(self, date: dt.date) -> list[Station]:
        """Stations with a reading on ``date``, ordered by id (the tie-break)."""
        have = [s for s in self.stations if date in s.swe_by_date]
        return sorted(have, key=lambda s: s.station_id)


def nearest_station_field(stations: StationSet, date: dt.date, spec: GridSpec) -> np.ndarray:
    """Per-cell prediction: the reading of the Euclidean-nearest reporting
    station in map coordinates; ties go to the lowest station id."""
    reporting = stations.reporting(date)
    if not reporting:
        raise StationDataError(f"no station has a reading on {date.isoformat()}")
    xs, ys = spec.cell_centers()
    cx = np.broadcast_to(xs[None, :], (spec.rows, spec.cols))
    cy = np.broadcast_to(ys[:, None], (spec.rows, spec.cols))
    best_d2 = np.full((spec.rows, spec.cols), np.inf)
    out = np.zeros((spec.rows, spec.cols))
    for s in reporting:  # id order; strict < keeps the earliest id on ties
        d2 = (cx - s.x) ** 2 + (cy - s.y) ** 2
        closer = d2 < best_d2
        best_d2[closer] = d2[closer]
        out[closer] = s.swe_by_date[date]
    return out


def baseline_nearest_station(stations: StationSet, date: dt.date, truth: Raster,
                             mask: BasinMask) -> float:
    vals = nearest_station_field(stations, date, truth.spec).astype(np.float32)
    pred = Raster(truth.spec, vals[None], np.zeros((truth.spec.rows, truth.spec.cols), bool))
    return rmse(pred, truth, mask)


STATION_CSV_HEADER = ("station_id", "x", "y", "elevation", "date", "swe_in")


def read_stations_csv(path) -> StationSet:
    """Long-format station readings: one row per station per date."""
    by_id: dict[str, Station] = {}
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise StationDataError(f"{path}: empty station file") from None
        if tuple(header) != STATION_CSV_HEADER:
            raise StationDataError(
                f"{path}: header {header} != expected {list(STATION_CSV_HEADER)}")
        for lineno, rec in enumerate(reader, start=2):
            if len(rec) != len(STATION_CSV_HEADER):
                raise StationDataError(f"{path} line {lineno}: expected "
                                       f"{len(STATION_CSV_HEADER)} fields, got {len(rec)}")
            sid, x, y, elev, date_text, swe = rec
            try:
                x, y, elev, swe = float(x), float(y), float(elev), float(swe)
                date = dt.date.fromisoformat(date_text)
            except ValueError as exc:
                raise StationDataError(f"{path} line {lineno}: {exc}") from None
            st = by_id.get(sid)
            if st is None:
                st = by_id[sid] = Station(sid, x, y, elev)
            elif (st.x, st.y, st.elevation) != (x, y, elev):
                raise StationDataError(
                    f"{path} line {lineno}: station {sid!r} changes coordinates")
            if date in st.swe_by_date:
                raise StationDataError(
                    f"{path} line {lineno}: duplicate reading for {sid!r} on {date_text}")
            st.swe_by_date[date] = swe
    if not by_id:
        raise StationDataError(f"{path}: no station rows")
    return StationSet(sorted(by_id.values(), key=lambda s: s.station_id))


def write_stations_csv(stations: StationSet, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(STATION_CSV_HEADER)
        for s in sorted(stations.stations, key=lambda s: s.station_id):
            for date in sorted(s.swe_by_date):
                w.writerow([s.station_id, repr(s.x), repr(s.y), repr(s.elevation),
                            date.isoformat(), repr(s.swe_by_date[date])])


# ---------------------------------------------------------------------------
# Gaussian smoothing


def gaussian_kernel_1d(sigma: float) -> np.ndarray:
    """Discrete Gaussian taps truncated at radius ceil(3*sigma), sum 1."""
    if sigma <= 0 or not np.isfinite(sigma):
        raise ConfigError(f"sigma must be positive, got {sigma}")
    radius = math.ceil(3.0 * sigma)
    offsets = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(offsets ** 2) / (2.0 * sigma * sigma))
    return k / k.sum()


def _shift_zero(arr: np.ndarray, d: int, axis: int) -> np.ndarray:
    """arr shifted by d cells along axis, vacated cells zero-filled."""
    out = np.zeros_like(arr)
    src = [slice(None)] * arr.ndim
    dst = [slice(None)] * arr.ndim
    n = arr.shape[axis]
    if abs(d) >= n:
        return out
    if d >= 0:
        dst[axis] = slice(d, n)
        src[axis] = slice(0, n - d)
    else:
        dst[axis] = slice(0, n + d)
        src[axis] = slice(-d, n)
    out[tuple(dst)] = arr[tuple(src)]
    return out


def _conv1d(arr: np.ndarray, kernel: np.ndarray, axis: int, boundary: str) -> np.ndarray:
    radius = len(kernel) // 2
    out = np.zeros_like(arr)
    for i, k in enumerate(kernel):
        d = i - radius
        if boundary == "wrap":
            out += k * np.roll(arr, d, axis=axis)
        else:
            out += k * _shift_zero(arr, d, axis=axis)
    return out


def smooth_field(values: np.ndarray, valid: np.ndarray, sigma: float,
                 boundary: str = "renorm") -> np.ndarray:
    """Masked separable Gaussian blur in float64.

    Weights are renormalized per output cell over its valid in-bounds
    support, which equals a dense 2-D convolution with per-cell kernel
    renormalization.  ``boundary="wrap"`` uses periodic padding instead
    (no edge truncation; useful where exact mean preservation matters).
    Cells invalid on input are returned as 0 and should stay masked.
    """
    if boundary not in ("renorm", "wrap"):
        raise ConfigError(f"boundary must be 'renorm' or 'wrap', got {boundary!r}")
    kernel = gaussian_kernel_1d(sigma)
    v = np.where(valid, np.asarray(values, dtype=np.float64), 0.0)
    m = valid.astype(np.float64)
    num = _conv1d(_conv1d(v, kernel, 0, boundary), kernel, 1, boundary)
    den = _conv1d(_conv1d(m, kernel, 0, boundary), kernel, 1, boundary)
    out = np.zeros_like(v)
    np.divide(num, den, out=out, where=valid & (den > 0))
    return out


def gaussian_smooth(pred: Raster, sigma: float = 1.0) -> Raster:
    """Blur a single-band raster; nodata cells stay nodata and do not leak."""
    if pred.values.shape[0] != 1:
        raise DataError(f"gaussian_smooth expects a single band, got {pred.values.shape[0]}")
    smoothed = smooth_field(pred.band_f64(0), pred.valid, sigma)
    return Raster(pred.spec, smoothed.astype(np.float32)[None], pred.nodata)


# ---------------------------------------------------------------------------
# Loess diagnostic (error vs true SWE)


def loess_error_curve(truth_values, errors, span: float = 0.3,
                      points: int = 100) -> tuple[np.ndarray, np.ndarray]:
    """Degree-1 locally weighted fit of error against truth.

    Tricube weights over the span-nearest neighbors of each evaluation
    point; evaluated at ``points`` evenly spaced positions across the
    truth range.  Returns (x, fitted).
    """
    x = np.asarray(truth_values, dtype=np.float64)
    y = np.asarray(errors, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise DataError(f"truth and errors must be equal-length 1-D, got {x.shape} vs {y.shape}")
    n = x.size
    if n < 10:
        raise DataError(f"loess needs at least 10 points, got {n}")
    if not (0.0 < span <= 1.0):
        raise ConfigError(f"span must be in (0, 1], got {span}")
    if x.max() == x.min():
        raise DataError("degenerate truth values: all equal")
    q = max(2, math.ceil(span * n))
    xs = np.linspace(x.min(), x.max(), points)
    fitted = np.empty(points)
    order = np.argsort(x, kind="stable")
    x_sorted = x[order]
    y_sorted = y[order]
    for i, x0 in enumerate(xs):
        d = np.abs(x_sorted - x0)
        cut = np.partition(d, q - 1)[q - 1]
        window = d <= cut
        dw = d[window]
        dmax = dw.max()
        if dmax == 0.0:
            w = np.ones_like(dw)
        else:
            w = (1.0 - (dw / dmax) ** 3) ** 3
            w = np.maximum(w, 0.0)
        xw = x_sorted[window] - x0  # centered basis: intercept = fit at x0
        yw = y_sorted[window]
        s_w = w.sum()
        s_x = (w * xw).sum()
        s_xx = (w * xw * xw).sum()
        s_y = (w * yw).sum()
        s_xy = (w * xw * yw).sum()
        det = s_w * s_xx - s_x * s_x
        if abs(det) < 1e-12 * max(s_w * s_xx, 1.0):
            fitted[i] = s_y / s_w if s_w > 0 else 0.0
        else:
            fitted[i] = (s_xx * s_y - s_x * s_xy) / det
    return xs, fitted


def write_curve_csv(xs: np.ndarray, fitted: np.ndarray, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("x,fitted_error\n")
        for a, b in zip(xs, fitted):
            f.write(f"{float(a)!r},{float(b)!r}\n")


# ---------------------------------------------------------------------------
# reports


@dataclass
class BasinRow:
    basin: str
    area_km2: float
    swe_mean: float   # nan when the basin's truth is absent
    swe_std: float
    rmse: float

    def has_truth(self) -> bool:
        return math.isfinite(self.rmse)


@dataclass
class EvalReport:
    rows: list[BasinRow]
    overall: float
    overall_area: float
    overall_mean: float
    overall_std: float
    baselines: dict[str, float] = field(default_factory=dict)


def build_report(predictions: dict[str, Raster], truths: dict[str, Raster],
                 masks: dict[str, BasinMask], train_mean: float | None = None,
                 stations: StationSet | None = None,
                 station_date: dt.date | None = None) -> EvalReport:
    """Per-basin rows + area-weighted overall + whichever baselines the
    inputs allow.  Basins present in ``predictions`` but missing from
    ``truths`` appear as rows with nan statistics rather than vanishing.
    """
    rows: list[BasinRow] = []
    scored: list[tuple[float, float]] = []
    truth_cells: list[np.ndarray] = []
    base_accumulate: dict[str, list[tuple[float, float]]] = {"zero": [], "mean": [], "nearest_station": []}
    for basin in sorted(predictions):
        mask = masks.get(basin)
        if mask is None:
            raise DataError(f"basin {basin!r} has no mask")
        truth = truths.get(basin)
        if truth is None:
            rows.append(BasinRow(basin, mask.area_km2, float("nan"), float("nan"), float("nan")))
            continue
        r = rmse(predictions[basin], truth, mask)
        joint = truth.valid & mask.inside
        tv = np.maximum(truth.band_f64(0)[joint], 0.0)
        rows.append(BasinRow(basin, mask.area_km2, float(tv.mean()), float(tv.std()), r))
        scored.append((mask.area_km2, r))
        truth_cells.append(tv)
        base_accumulate["zero"].append((mask.area_km2, baseline_zero(truth, mask)))
        if train_mean is not None:
            base_accumulate["mean"].append((mask.area_km2, baseline_mean(train_mean, truth, mask)))
        if stations is not None and station_date is not None:
            base_accumulate["nearest_station"].append(
                (mask.area_km2, baseline_nearest_station(stations, station_date, truth, mask)))
    if not scored:
        raise EmptyEvaluationError("no basin had both predictions and truth")
    overall = area_weighted_overall(scored)
    pooled = np.concatenate(truth_cells)
    baselines = {name: area_weighted_overall(acc)
                 for name, acc in base_accumulate.items() if acc}
    return EvalReport(rows, overall, sum(a for a, _ in scored),
                      float(pooled.mean()), float(pooled.std()), baselines)


REPORT_CSV_HEADER = ("basin", "area_km2", "swe_mean", "swe_std", "rmse")


def _fmt(v: float) -> str:
    return "" if not math.isfinite(v) else repr(float(v))


def write_report_csv(report: EvalReport, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(",".join(REPORT_CSV_HEADER) + "\n")
        for row in report.rows:
            f.write(f"{row.basin},{_fmt(row.area_km2)},{_fmt(row.swe_mean)},"
                    f"{_fmt(row.swe_std)},{_fmt(row.rmse)}\n")
        f.write(f"overall,{_fmt(report.overall_area)},{_fmt(report.overall_mean)},"
                f"{_fmt(report.overall_std)},{_fmt(report.overall)}\n")
        for name in sorted(report.baselines):
            f.write(f"baseline:{name},,,,{_fmt(report.baselines[name])}\n")


def read_report_csv(path) -> EvalReport:
    def parse(v: str) -> float:
        return float("nan") if v == "" else float(v)

    rows: list[BasinRow] = []
    overall = overall_area = overall_mean = overall_std = float("nan")
    baselines: dict[str, float] = {}
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        header = tuple(next(reader, ()))
        if header != REPORT_CSV_HEADER:
            raise DataError(f"{path}: bad report header {list(header)}")
        saw_overall = False
        for lineno, rec in enumerate(reader, start=2):
            if len(rec) != 5:
                raise DataError(f"{path} line {lineno}: expected 5 fields")
            name = rec[0]
            if name == "overall":
                overall_area, overall_mean, overall_std, overall = map(parse, rec[1:])
                saw_overall = True
            elif name.startswith("baseline:"):
                baselines[name[len("baseline:"):]] = parse(rec[4])
            else:
                rows.append(BasinRow(name, *map(parse, rec[1:])))
    if not saw_overall:
        raise DataError(f"{path}: report has no overall row")
    return EvalReport(rows, overall, overall_area, overall_mean, overall_std, baselines)


def render_report(report: EvalReport) -> str:
    """Human-readable fixed-width table of the same report content."""
    lines = [f"{'basin':<18}{'area_km2':>10}{'swe_mean':>10}{'swe_std':>9}{'rmse':>8}"]
    def num(v, w):
        return f"{'-':>{w}}" if not math.isfinite(v) else f"{v:>{w}.2f}"
    for row in report.rows:
        lines.append(f"{row.basin:<18}{num(row.area_km2, 10)}{num(row.swe_mean, 10)}"
                     f"{num(row.swe_std, 9)}{num(row.rmse, 8)}")
    lines.append(f"{'overall':<18}{num(report.overall_area, 10)}{num(report.overall_mean, 10)}"
                 f"{num(report.overall_std, 9)}{num(report.overall, 8)}")
    for name in sorted(report.baselines):
        lines.append(f"{'baseline:' + name:<18}{'-':>10}{'-':>10}{'-':>9}"
                     f"{num(report.baselines[name], 8)}")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# assembling rasters from per-cell values


def field_raster(spec: GridSpec, cells: list[tuple[int, int]], values) -> Raster:
    """Single-band raster holding ``values`` at ``cells``; others nodata."""
    values = np.asarray(values, dtype=np.float64)
    if len(cells) != values.size:
        raise DataError(f"{len(cells)} cells but {values.size} values")
    grid = np.zeros((spec.rows, spec.cols), dtype=np.float32)
    nodata = np.ones((spec.rows, spec.cols), dtype=bool)
    for (r, c), v in zip(cells, values.tolist()):
        if not (0 <= r < spec.rows and 0 <= c < spec.cols):
            raise DataError(f"cell ({r},{c}) outside {spec.rows}x{spec.cols} grid")
        grid[r, c] = v
        nodata[r, c] = False
    return Raster(spec, grid[None], nodata)
