"""Dataset assembly, year-based splitting, and the training loop.

A dataset is a flat list of cell samples plus a split tag per sample.
Assembly reads a manifest CSV (one row per basin+date) whose referenced
files use the package's own raster/CSV formats, pushes every input through
the feature pipeline, and cuts one sample per valid 1 km truth cell.

Training is plain minibatch MSE with Adam.  Everything random flows from
``SeededRng``: parameter init by labeled substream, epoch shuffles by
``shuffle.epoch.<e>`` substreams.  Because the shuffle for epoch ``e`` is a
pure function of the seed, the batch for any global step is recomputable
from the step index alone, which is what makes checkpoint resume bit-exact.
"""

from __future__ import annotations

import csv
import datetime as dt
import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .errors import (ConfigError, DataError, DivergenceError, GridCompatibilityError,
                     UnassignedYearError)
from .features import (SpectralScene, TerrainPatch, WeatherSeries, extract_patch,
                       fill_modis_columns, minmax_scale, normalized_ratio, patch_window,
                       read_weather_csv, sar_composite, weather_window, MODIS_COLUMNS)
from .model import (CellSample, FeatureScaler, FusionConfig, FusionModel, load_model,
                    save_model)
from .raster import BasinMask, Raster, aggregate_mean, meters_to_inches, read_raster

MANIFEST_COLUMNS = ("basin", "date", "terrain_path", "sar_path", "spectral_path",
                    "weather_csv", "aso_path")
SAR_BAND_ORDER = ("vv", "vh")
SPECTRAL_BAND_ORDER = ("b2", "b4", "b8", "b8a", "b12")
AGGREGATE_FACTOR = 20  # 50 m truth blocks to 1 km cells


@dataclass(frozen=True)
class SplitRule:
    """Calendar years assigned to each split; years must not overlap."""

    train_years: tuple[int, ...] = (2016, 2017, 2018, 2019)
    val_years: tuple[int, ...] = (2020, 2021)
    test_years: tuple[int, ...] = (2022,)

    def __post_init__(self):
        groups = (self.train_years, self.val_years, self.test_years)
        seen: set[int] = set()
        for years in groups:
            for y in years:
                if y in seen:
                    raise ConfigError(f"year {y} appears in more than one split")
                seen.add(y)
        if not self.train_years:
            raise ConfigError("train split needs at least one year")

    def tag_for_year(self, year: int) -> str:
        if year in self.train_years:
            return "train"
        if year in self.val_years:
            return "val"
        if year in self.test_years:
            return "test"
        raise UnassignedYearError(
            f"year {year} is assigned to no split "
            f"(train={self.train_years}, val={self.val_years}, test={self.test_years})")


@dataclass
class Dataset:
    """Samples with one split tag each, plus the basin mask registry."""

    samples: list[CellSample]
    tags: list[str]
    masks: dict[str, BasinMask] = field(default_factory=dict)

    def __post_init__(self):
        if len(self.samples) != len(self.tags):
            raise DataError(f"{len(self.samples)} samples but {len(self.tags)} split tags")
        for t in self.tags:
            if t not in ("train", "val", "test"):
                raise DataError(f"unknown split tag {t!r}")
        if self.masks:
            for s in self.samples:
                if s.basin_name not in self.masks:
                    raise DataError(f"sample basin {s.basin_name!r} missing from mask registry")

    def indices(self, tag: str) -> list[int]:
        return [i for i, t in enumerate(self.tags) if t == tag]

    def subset(self, tag: str) -> list[CellSample]:
        return [self.samples[i] for i in self.indices(tag)]

    def counts(self) -> dict[str, int]:
        out = {"train": 0, "val": 0, "test": 0}
        for t in self.tags:
            out[t] += 1
        return out


def split_by_year(samples: list[CellSample], rule: SplitRule,
                  masks: dict[str, BasinMask] | None = None) -> Dataset:
    """Tag every sample by its date's calendar year; no silent drops."""
    tags = [rule.tag_for_year(s.date.year) for s in samples]
    return Dataset(list(samples), tags, dict(masks) if masks else {})


# ---------------------------------------------------------------------------
# manifests


@dataclass(frozen=True)
class ManifestRow:
    basin: str
    date: dt.date
    terrain_path: str
    sar_path: str
    spectral_path: str
    weather_csv: str
    aso_path: str


def read_manifest(path) -> list[ManifestRow]:
    """Parse the dataset manifest; relative paths are kept as written."""
    rows: list[ManifestRow] = []
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty manifest") from None
        if tuple(header) != MANIFEST_COLUMNS:
            raise DataError(
                f"{path}: manifest header {header} != expected {list(MANIFEST_COLUMNS)}")
        for lineno, rec in enumerate(reader, start=2):
            if len(rec) != len(MANIFEST_COLUMNS):
                raise DataError(f"{path} line {lineno}: expected "
                                f"{len(MANIFEST_COLUMNS)} fields, got {len(rec)}")
            basin, date_text, *paths = rec
            if not basin:
                raise DataError(f"{path} line {lineno}: empty basin name")
            try:
                date = dt.date.fromisoformat(date_text)
            except ValueError:
                raise DataError(f"{path} line {lineno}: bad date {date_text!r}") from None
            for col, p in zip(MANIFEST_COLUMNS[2:], paths):
                if not p:
                    raise DataError(f"{path} line {lineno}: empty {col}")
            rows.append(ManifestRow(basin, date, *paths))
    if not rows:
        raise DataError(f"{path}: manifest has a header but no rows")
    return rows


def write_manifest(rows: list[ManifestRow], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(MANIFEST_COLUMNS)
        for r in rows:
            w.writerow([r.basin, r.date.isoformat(), r.terrain_path, r.sar_path,
                        r.spectral_path, r.weather_csv, r.aso_path])


# ---------------------------------------------------------------------------
# assembly


def _resolve(base_dir, p):
    return p if os.path.isabs(p) else os.path.join(base_dir, p)


def _image_channels(terrain: Raster, sar: Raster, spectral: Raster
                    ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Build the fixed per-scene channel stacks, min-max scaled to [0,1]."""
    if terrain.values.shape[0] != 1:
        raise DataError(f"terrain raster must have 1 band, got {terrain.values.shape[0]}")
    if sar.values.shape[0] != len(SAR_BAND_ORDER):
        raise DataError(f"sar raster must have {len(SAR_BAND_ORDER)} bands "
                        f"(vv, vh), got {sar.values.shape[0]}")
    if spectral.values.shape[0] != len(SPECTRAL_BAND_ORDER):
        raise DataError(f"spectral raster must have {len(SPECTRAL_BAND_ORDER)} bands "
                        f"{SPECTRAL_BAND_ORDER}, got {spectral.values.shape[0]}")
    if not (terrain.spec == sar.spec == spectral.spec):
        raise GridCompatibilityError("terrain, sar, and spectral grids differ")

    tp = TerrainPatch.from_dem(terrain)
    terrain_bands = [tp.elevation, tp.slope, tp.aspect]

    vv = Raster(sar.spec, sar.values[0:1], sar.nodata)
    vh = Raster(sar.spec, sar.values[1:2], sar.nodata)
    composite = sar_composite(vv, vh)
    sar_bands = [Raster(composite.spec, composite.values[i:i + 1], composite.nodata)
                 for i in range(composite.bands)]

    by_name = {name: Raster(spectral.spec, spectral.values[i:i + 1], spectral.nodata)
               for i, name in enumerate(SPECTRAL_BAND_ORDER)}
    scene = SpectralScene(**by_name)
    spectral_bands = [
        scene.band("b8a"), scene.band("b12"),
        normalized_ratio(scene.band("b8a"), scene.band("b12")),
        scene.band("b2"), scene.band("b4"),
        normalized_ratio(scene.band("b8"), scene.band("b2")),
    ]

    def stack(bands):
        out = np.empty((len(bands), terrain.spec.rows, terrain.spec.cols), dtype=np.float32)
        for i, band in enumerate(bands):
            out[i] = minmax_scale(band.band_f64(0), band.valid)
        return out

    return stack(terrain_bands), stack(sar_bands), stack(spectral_bands)


def truth_1km(aso: Raster) -> Raster:
    if aso.values.shape[0] != 1:
        raise DataError(f"truth raster must have 1 band, got {aso.values.shape[0]}")
    return aggregate_mean(meters_to_inches(aso), AGGREGATE_FACTOR)


@dataclass(frozen=True, eq=False)
class SceneEntry:
    """In-memory counterpart of one manifest row: the loaded inputs for one
    basin on one acquisition date.  The synthetic generator produces these
    directly; the manifest loader produces them from files.  Either way the
    same assembly code cuts the samples."""

    basin: str
    date: dt.date
    terrain: Raster
    sar: Raster
    spectral: Raster
    weather: WeatherSeries
    aso: Raster


def assemble_entries(entries: list[SceneEntry], rule: SplitRule,
                     patch: int = 16) -> Dataset:
    """Cut per-cell samples from loaded scene inputs.

    Two passes: the first computes the MODIS gap-fill fallbacks (per-column
    means over train-split windows only); the second builds samples through
    the feature pipeline.  Channel stacks are cached per distinct raster
    triple, so entries sharing imagery objects pay for scaling once.
    """
    tags = [rule.tag_for_year(e.date.year) for e in entries]
    windows = [weather_window(e.weather, e.date) for e in entries]

    train_modis = [w[:, list(MODIS_COLUMNS)] for w, t in zip(windows, tags) if t == "train"]
    if train_modis:
        stacked = np.concatenate(train_modis, axis=0)
        with np.errstate(invalid="ignore"):
            col_means = np.nanmean(stacked, axis=0)
        fallbacks = tuple(0.0 if not np.isfinite(m) else float(m) for m in col_means)
    else:
        fallbacks = (0.0, 0.0)

    stack_cache: dict[tuple[int, int, int], tuple] = {}
    basin_spec: dict[str, object] = {}
    basin_valid: dict[str, np.ndarray] = {}
    samples: list[CellSample] = []
    sample_tags: list[str] = []

    prepared = []
    for entry, tag, window in zip(entries, tags, windows):
        key = (id(entry.terrain), id(entry.sar), id(entry.spectral))
        if key not in stack_cache:
            stack_cache[key] = (_image_channels(entry.terrain, entry.sar, entry.spectral),
                                entry.terrain.spec)
        (stacks, img_spec) = stack_cache[key]
        truth = truth_1km(entry.aso)
        if entry.basin not in basin_spec:
            basin_spec[entry.basin] = truth.spec
            basin_valid[entry.basin] = truth.valid.copy()
        elif basin_spec[entry.basin] != truth.spec:
            raise GridCompatibilityError(
                f"basin {entry.basin!r}: truth grid changed between dates")
        else:
            basin_valid[entry.basin] |= truth.valid
        prepared.append((entry, tag, window, stacks, img_spec, truth))

    masks = {name: BasinMask(basin_spec[name], basin_valid[name], name)
             for name in basin_spec}

    for entry, tag, window, stacks, img_spec, truth in prepared:
        filled, validity = fill_modis_columns(window, fallbacks)
        static = np.array([
            filled[-1, 0], filled[-1, 1],
            float(validity.mean()), float(validity[-1].all()),
        ])
        t_stack, s_stack, sp_stack = stacks
        swe = truth.band_f64(0)
        rows_v, cols_v = np.nonzero(truth.valid)
        for r, c in zip(rows_v.tolist(), cols_v.tolist()):
            r0, c0 = patch_window(img_spec, truth.spec, (r, c), patch)
            samples.append(CellSample(
                terrain_patch=extract_patch(t_stack, r0, c0, patch),
                sar_patch=extract_patch(s_stack, r0, c0, patch),
                spectral_patch=extract_patch(sp_stack, r0, c0, patch),
                weather_window=filled,
                static_scalars=static,
                target_swe=float(swe[r, c]),
                basin_name=entry.basin,
                cell_index=(r, c),
                date=entry.date,
            ))
            sample_tags.append(tag)

    return Dataset(samples, sample_tags, masks)


def assemble_dataset(manifest_rows: list[ManifestRow], rule: SplitRule,
                     patch: int = 16, base_dir: str = ".") -> Dataset:
    """Load everything a manifest references, then cut samples.

    Relative manifest paths resolve against ``base_dir``.  Rasters and
    weather tables are read once per distinct path, so repeated references
    (static imagery reused across dates) share one loaded object.
    """
    weather_cache: dict[str, WeatherSeries] = {}
    raster_cache: dict[str, Raster] = {}

    def weather_at(p: str) -> WeatherSeries:
        p = _resolve(base_dir, p)
        if p not in weather_cache:
            weather_cache[p] = read_weather_csv(p)
        return weather_cache[p]

    def raster_at(p: str) -> Raster:
        p = _resolve(base_dir, p)
        if p not in raster_cache:
            raster_cache[p] = read_raster(p)
        return raster_cache[p]

    entries = [SceneEntry(row.basin, row.date, raster_at(row.terrain_path),
                          raster_at(row.sar_path), raster_at(row.spectral_path),
                          weather_at(row.weather_csv), raster_at(row.aso_path))
               for row in manifest_rows]
    return assemble_entries(entries, rule, patch=patch)


def load_dataset(manifest_path, rule: SplitRule, patch: int = 16) -> Dataset:
    rows = read_manifest(manifest_path)
    return assemble_dataset(rows, rule, patch=patch,
                            base_dir=os.path.dirname(os.path.abspath(manifest_path)))


# ---------------------------------------------------------------------------
# training


@dataclass(frozen=True)
class TrainConfig:
    """Loop hyperparameters.  lr may be 0 (useful as a no-op fixed point)."""

    lr: float = 1e-3
    batch_size: int = 16
    max_steps: int = 2000
    eval_every: int = 50
    seed: int = 0
    patience: int = 10     # early-stop patience, counted in eval rounds
    eval_cap: int = 512    # eval RMSE uses at most this many samples, strided across the split
    rule: SplitRule = SplitRule()

    def __post_init__(self):
        if self.lr < 0 or not np.isfinite(self.lr):
            raise ConfigError(f"lr must be finite and >= 0, got {self.lr}")
        for name in ("batch_size", "max_steps", "eval_every", "patience", "eval_cap"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")


_TRAIN_FIELDS = ("lr", "batch_size", "max_steps", "eval_every", "seed", "patience", "eval_cap")


def train_config_from_mapping(mapping: dict[str, str],
                              base: TrainConfig | None = None) -> TrainConfig:
    """Merge string key=value overrides onto a base config; unknown keys rejected."""
    import dataclasses as _dc
    base = base if base is not None else TrainConfig()
    kwargs: dict = {}
    for key, raw in mapping.items():
        if key == "lr":
            kwargs[key] = float(raw)
        elif key in _TRAIN_FIELDS:
            try:
                kwargs[key] = int(raw)
            except ValueError:
                raise ConfigError(f"train config key {key!r} expects an int, got {raw!r}")
        elif key in ("train_years", "val_years", "test_years"):
            try:
                years = tuple(int(p) for p in raw.split(",") if p.strip())
            except ValueError:
                raise ConfigError(f"{key!r} expects a comma list of years, got {raw!r}")
            kwargs.setdefault("rule", {})
            kwargs["rule"][key] = years
        else:
            raise ConfigError(f"unknown train config key {key!r}")
    if "rule" in kwargs:
        kwargs["rule"] = _dc.replace(base.rule, **kwargs["rule"])
    return _dc.replace(base, **kwargs)


def train_config_to_text(cfg: TrainConfig) -> str:
    """Flat key=value rendering, the inverse of train_config_from_mapping."""
    lines = [f"lr={cfg.lr!r}"]
    for name in _TRAIN_FIELDS:
        if name != "lr":
            lines.append(f"{name}={getattr(cfg, name)}")
    for name in ("train_years", "val_years", "test_years"):
        lines.append(f"{name}={','.join(str(y) for y in getattr(cfg.rule, name))}")
    return "\n".join(lines) + "\n"


@dataclass
class HistoryRow:
    step: int
    train_rmse: float
    val_rmse: float  # nan when the dataset has no validation split


@dataclass
class TrainResult:
    model: FusionModel            # parameters restored to the best eval point
    history: list[HistoryRow]
    best_step: int
    best_rmse: float              # on val, or on train when no val split exists
    final_step: int
    stopped_early: bool


def write_history(history: list[HistoryRow], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("step,train_rmse,val_rmse\n")
        for row in history:
            f.write(f"{row.step},{row.train_rmse!r},{row.val_rmse!r}\n")


def read_history(path) -> list[HistoryRow]:
    out: list[HistoryRow] = []
    with open(path, "r", encoding="utf-8") as f:
        header = f.readline().strip()
        if header != "step,train_rmse,val_rmse":
            raise DataError(f"{path}: bad history header {header!r}")
        for lineno, line in enumerate(f, start=2):
            parts = line.strip().split(",")
            if len(parts) != 3:
                raise DataError(f"{path} line {lineno}: expected 3 fields")
            out.append(HistoryRow(int(parts[0]), float(parts[1]), float(parts[2])))
    return out


def build_model(dataset: Dataset, model_config: FusionConfig,
                train_config: TrainConfig) -> FusionModel:
    """Fresh model with train-split feature statistics and output rescale."""
    train = dataset.subset("train")
    if not train:
        raise DataError("dataset has an empty train split")
    windows = np.stack([s.weather_window for s in train])
    statics = np.stack([s.static_scalars for s in train])
    targets = np.array([s.target_swe for s in train])
    model = FusionModel(model_config, seed=train_config.seed,
                        scaler=FeatureScaler.fit(windows, statics))
    std = float(targets.std())
    model.out_scale = std if std > 1e-8 else 1.0
    model.out_offset = float(targets.mean())
    return model


def _split_rmse(model: FusionModel, samples: list[CellSample], cap: int) -> float:
    """Unclamped RMSE in inches over at most ``cap`` samples.

    Capping strides across the whole split rather than taking its head:
    samples arrive grouped by basin and date, so a head slice would watch
    a single flight and misjudge the model."""
    if not samples:
        return float("nan")
    if len(samples) > cap:
        stride = math.ceil(len(samples) / cap)
        take = samples[::stride]
    else:
        take = samples
    preds = model.predict_batch(take)
    targets = np.array([s.target_swe for s in take])
    return math.sqrt(float(np.mean((preds - targets) ** 2)))


def _batch_indices(n: int, step: int, batch: int, seed: int) -> np.ndarray:
    """Minibatch for a global step, derived statelessly from the seed."""
    per_epoch = max(1, math.ceil(n / batch))
    epoch, k = divmod(step, per_epoch)
    perm = nn.SeededRng(seed).substream(f"shuffle.epoch.{epoch}").permutation(n)
    return perm[k * batch:(k + 1) * batch]


def _train_extras(step, history, best_step, best_rmse, evals_since_best):
    hist = np.array([[r.step, r.train_rmse, r.val_rmse] for r in history], dtype=np.float64)
    return {
        "step": np.array([float(step)]),
        "history": hist if hist.size else np.zeros((0, 3)),
        "best_step": np.array([float(best_step)]),
        "best_rmse": np.array([float(best_rmse)]),
        "evals_since_best": np.array([float(evals_since_best)]),
    }


BEST_CHECKPOINT = "best.ckpt"
LAST_CHECKPOINT = "last.ckpt"
HISTORY_FILE = "history.csv"


def train_model(dataset: Dataset, model_config: FusionConfig, train_config: TrainConfig,
                out_dir: str | None = None, model: FusionModel | None = None,
                start_step: int = 0, history: list[HistoryRow] | None = None,
                best: tuple[int, float, int] | None = None) -> TrainResult:
    """Run (or continue) the training loop.

    The optional ``model``/``start_step``/``history``/``best`` arguments are
    the resume surface used by ``resume_training``; fresh calls leave them
    at their defaults.  With ``out_dir`` set, ``best.ckpt``, ``last.ckpt``
    and ``history.csv`` are maintained at every evaluation point.
    """
    cfg = train_config
    train_idx = dataset.indices("train")
    if not train_idx:
        raise DataError("dataset has an empty train split")
    if model is None:
        model = build_model(dataset, model_config, cfg)
    train_samples = [dataset.samples[i] for i in train_idx]
    val_samples = dataset.subset("val")
    targets = np.array([s.target_swe for s in train_samples])
    n = len(train_samples)

    history = list(history) if history else []
    best_step, best_rmse, evals_since_best = best if best else (-1, float("inf"), 0)
    best_values = model.params.copy_values() if best_step >= 0 else None

    def monitored(row: HistoryRow) -> float:
        return row.val_rmse if val_samples else row.train_rmse

    def run_eval(step: int) -> HistoryRow:
        row = HistoryRow(step, _split_rmse(model, train_samples, cfg.eval_cap),
                         _split_rmse(model, val_samples, cfg.eval_cap))
        history.append(row)
        return row

    def persist(step: int, improved: bool) -> None:
        if out_dir is None:
            return
        os.makedirs(out_dir, exist_ok=True)
        extras = _train_extras(step, history, best_step, best_rmse, evals_since_best)
        if improved:
            save_model(model, os.path.join(out_dir, BEST_CHECKPOINT), extras)
        save_model(model, os.path.join(out_dir, LAST_CHECKPOINT), extras)
        write_history(history, os.path.join(out_dir, HISTORY_FILE))

    stopped_early = False
    if start_step == 0:
        row = run_eval(0)
        best_step, best_rmse, evals_since_best = 0, monitored(row), 0
        best_values = model.params.copy_values()
        persist(0, improved=True)

    step = start_step
    while step < cfg.max_steps:
        idx = _batch_indices(n, step, cfg.batch_size, cfg.seed)
        preds = model.forward_batch([train_samples[i] for i in idx])
        loss = nn.mse_loss(preds, targets[idx])
        if not np.isfinite(loss.data):
            raise DivergenceError(step, f"loss became {loss.data} at step {step}")
        model.params.zero_grad()
        loss.backward()
        nn.adam_step(model.params, cfg.lr)
        step += 1

        if step % cfg.eval_every == 0 or step == cfg.max_steps:
            row = run_eval(step)
            if not np.isfinite(row.train_rmse):
                raise DivergenceError(step, f"train RMSE became {row.train_rmse} at step {step}")
            score = monitored(row)
            improved = score < best_rmse
            if improved:
                best_step, best_rmse, evals_since_best = step, score, 0
                best_values = model.params.copy_values()
            else:
                evals_since_best += 1
            persist(step, improved)
            if evals_since_best > cfg.patience:
                stopped_early = True
                break

    if best_values is not None:
        model.params.load_values(best_values)
    return TrainResult(model, history, best_step, best_rmse, step, stopped_early)


def resume_training(out_dir: str, dataset: Dataset, train_config: TrainConfig) -> TrainResult:
    """Continue from ``out_dir/last.ckpt``; bit-exact vs an uninterrupted run
    when the dataset and train config are unchanged."""
    model, extras = load_model(os.path.join(out_dir, LAST_CHECKPOINT))
    step = int(extras["step"][0])
    history = [HistoryRow(int(r[0]), float(r[1]), float(r[2])) for r in extras["history"]]
    best = (int(extras["best_step"][0]), float(extras["best_rmse"][0]),
            int(extras["evals_since_best"][0]))
    return train_model(dataset, model.config, train_config, out_dir=out_dir,
                       model=model, start_step=step, history=history, best=best)
