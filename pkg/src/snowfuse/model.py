"""Late-fusion SWE regressor for 1 km cells.

Architecture, per cell sample:

* terrain patch  [3,P,P] -> two depthwise-separable conv blocks -> GAP -> linear
* sar patch      [3,P,P] -> three conv blocks -> GAP -> linear
* spectral patch [6,P,P] -> three conv blocks -> GAP -> linear
* weather window [11,7]  -> LSTM over the configured column subset -> final hidden
* leftover scalars (snow-cover/albedo point values and validity flags) unencoded

The per-source vectors are concatenated in the fixed order

    terrain, sar, spectral, weather, static scalars

and fed through a 3-layer MLP (relu, relu, linear).  The raw output is an
affine rescale of the last layer (``out_scale * y + out_offset``) so a
freshly initialised network predicts near the training-set mean; the
output is never clamped here (clamping happens at evaluation time only).

All convolutions are 3x3 (pointwise 1x1), stride 1, padding 1, so spatial
extent is preserved until the global average pool.
"""

from __future__ import annotations

import dataclasses
import datetime as dt
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .errors import ConfigError, ShapeError
from .features import GRIDMET_COLUMNS, MODIS_COLUMNS, WEATHER_COLUMNS, WINDOW_DAYS

SOURCES = ("terrain", "sar", "spectral", "modis", "weather")

# Canonical static-scalar layout, filled in by dataset assembly regardless of
# which subset a particular model config consumes:
#   0: snow cover on the target day (gap-filled)
#   1: albedo on the target day (gap-filled)
#   2: fraction of window rows whose MODIS columns were observed (not imputed)
#   3: 1.0 if both target-day MODIS values were observed, else 0.0
STATIC_LABELS = ("snow_cover_day", "albedo_day", "modis_valid_frac", "modis_target_valid")

TERRAIN_IN_CHANNELS = 3
SAR_IN_CHANNELS = 3
SPECTRAL_IN_CHANNELS = 6


@dataclass(frozen=True)
class FusionConfig:
    """Which sources are enabled and how wide every piece of the network is."""

    terrain: bool = True
    sar: bool = True
    spectral: bool = True
    modis: bool = True
    weather: bool = True
    patch: int = 16
    terrain_channels: tuple[int, ...] = (8, 16)
    image_channels: tuple[int, ...] = (8, 16, 24)
    terrain_embed: int = 8
    sar_embed: int = 12
    spectral_embed: int = 12
    lstm_hidden: int = 16
    mlp_hidden: tuple[int, ...] = (48, 24)
    window: int = WINDOW_DAYS
    modis_placement: str = "lstm"  # "lstm" | "post_fusion"

    def __post_init__(self):
        if not any((self.terrain, self.sar, self.spectral, self.modis, self.weather)):
            raise ConfigError("at least one source must be enabled")
        if self.modis_placement not in ("lstm", "post_fusion"):
            raise ConfigError(
                f"modis_placement must be 'lstm' or 'post_fusion', got {self.modis_placement!r}")
        if self.patch < 3:
            raise ConfigError(f"patch must be >= 3, got {self.patch}")
        if self.window < 1:
            raise ConfigError(f"window must be >= 1, got {self.window}")
        if self.window > WINDOW_DAYS:
            raise ConfigError(
                f"window must be <= {WINDOW_DAYS} (the assembled history length), got {self.window}")
        if len(self.terrain_channels) != 2:
            raise ConfigError("terrain_channels must list exactly 2 stages")
        if len(self.image_channels) != 3:
            raise ConfigError("image_channels must list exactly 3 stages")
        if len(self.mlp_hidden) != 2:
            raise ConfigError("mlp_hidden must list exactly 2 widths (the MLP has 3 affine layers)")
        for name in ("terrain_embed", "sar_embed", "spectral_embed", "lstm_hidden"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if any(c <= 0 for c in self.terrain_channels + self.image_channels + self.mlp_hidden):
            raise ConfigError("channel and hidden widths must be positive")

    # -- derived layout -------------------------------------------------

    def enabled_sources(self) -> tuple[str, ...]:
        return tuple(s for s in SOURCES if getattr(self, s))

    def lstm_columns(self) -> tuple[int, ...]:
        """Weather-window columns routed through the LSTM, in column order."""
        cols: list[int] = []
        if self.modis and self.modis_placement == "lstm":
            cols.extend(MODIS_COLUMNS)
        if self.weather:
            cols.extend(GRIDMET_COLUMNS)
        return tuple(cols)

    def static_indices(self) -> tuple[int, ...]:
        """Entries of the canonical static vector consumed unencoded."""
        if not self.modis:
            return ()
        if self.modis_placement == "post_fusion":
            return (0, 1, 2, 3)
        return (2, 3)  # day values ride the LSTM; keep the validity flags

    def uses_lstm(self) -> bool:
        return bool(self.lstm_columns())

    def embed_dim(self) -> int:
        """Length of the fused vector entering the MLP."""
        total = 0
        if self.terrain:
            total += self.terrain_embed
        if self.sar:
            total += self.sar_embed
        if self.spectral:
            total += self.spectral_embed
        if self.uses_lstm():
            total += self.lstm_hidden
        total += len(self.static_indices())
        return total

    def block_slices(self) -> dict[str, slice]:
        """Column ranges of each concatenated block inside the fused vector."""
        out: dict[str, slice] = {}
        at = 0
        for name, width, on in (
            ("terrain", self.terrain_embed, self.terrain),
            ("sar", self.sar_embed, self.sar),
            ("spectral", self.spectral_embed, self.spectral),
            ("weather", self.lstm_hidden, self.uses_lstm()),
            ("static", len(self.static_indices()), bool(self.static_indices())),
        ):
            if on:
                out[name] = slice(at, at + width)
                at += width
        return out

    def single_source(self, name: str) -> "FusionConfig":
        """The same widths with only ``name`` enabled (ablation training)."""
        if name not in SOURCES:
            raise ConfigError(f"unknown source {name!r}; expected one of {SOURCES}")
        flags = {s: (s == name) for s in SOURCES}
        return dataclasses.replace(self, **flags)


# ---------------------------------------------------------------------------
# flat key=value config files


_TUPLE_FIELDS = ("terrain_channels", "image_channels", "mlp_hidden")
_BOOL_FIELDS = ("terrain", "sar", "spectral", "modis", "weather")
_INT_FIELDS = ("patch", "terrain_embed", "sar_embed", "spectral_embed", "lstm_hidden", "window")


def config_to_text(config: FusionConfig) -> str:
    """Serialize to the flat key=value form (one key per line, field order)."""
    lines = []
    for f in dataclasses.fields(config):
        v = getattr(config, f.name)
        if isinstance(v, bool):
            text = "true" if v else "false"
        elif isinstance(v, tuple):
            text = ",".join(str(x) for x in v)
        else:
            text = str(v)
        lines.append(f"{f.name}={text}")
    return "\n".join(lines) + "\n"


def config_from_mapping(mapping: dict[str, str]) -> FusionConfig:
    """Build a config from string key=value pairs; unknown keys are rejected."""
    known = {f.name for f in dataclasses.fields(FusionConfig)}
    kwargs: dict = {}
    for key, raw in mapping.items():
        if key not in known:
            raise ConfigError(f"unknown model config key {key!r}")
        if key in _BOOL_FIELDS:
            low = raw.strip().lower()
            if low not in ("true", "false"):
                raise ConfigError(f"config key {key!r} expects true/false, got {raw!r}")
            kwargs[key] = low == "true"
        elif key in _TUPLE_FIELDS:
            try:
                kwargs[key] = tuple(int(p) for p in raw.split(",") if p.strip())
            except ValueError:
                raise ConfigError(f"config key {key!r} expects a comma list of ints, got {raw!r}")
        elif key in _INT_FIELDS:
            try:
                kwargs[key] = int(raw)
            except ValueError:
                raise ConfigError(f"config key {key!r} expects an int, got {raw!r}")
        else:
            kwargs[key] = raw.strip()
    return FusionConfig(**kwargs)


def parse_kv_text(text: str, what: str = "config") -> dict[str, str]:
    """Parse flat ``key=value`` lines; '#' comments and blank lines ignored."""
    out: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"{what} line {lineno}: expected key=value, got {line!r}")
        key, _, value = stripped.partition("=")
        key = key.strip()
        if not key:
            raise ConfigError(f"{what} line {lineno}: empty key")
        if key in out:
            raise ConfigError(f"{what} line {lineno}: duplicate key {key!r}")
        out[key] = value.strip()
    return out


def read_config(path) -> FusionConfig:
    with open(path, "r", encoding="utf-8") as f:
        return config_from_mapping(parse_kv_text(f.read(), what=str(path)))


def write_config(config: FusionConfig, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(config_to_text(config))


# ---------------------------------------------------------------------------
# samples


@dataclass
class CellSample:
    """One 1 km cell on one date, with every source patch co-centered on it.

    Patches are stored as float32 arrays already normalized to [0, 1] per
    scene; the weather window is the raw 11x7 history (gap-filled MODIS
    columns) and is standardized inside the model.
    """

    terrain_patch: np.ndarray      # [3,P,P] elevation, slope, aspect
    sar_patch: np.ndarray          # [3,P,P] vv, vh, vv+vh
    spectral_patch: np.ndarray     # [6,P,P] two band trios
    weather_window: np.ndarray     # [11,7] rows oldest -> target day
    static_scalars: np.ndarray     # [4] see STATIC_LABELS
    target_swe: float              # inches
    basin_name: str
    cell_index: tuple[int, int]
    date: dt.date
    latents: dict[str, float] | None = field(default=None, repr=False)

    def __post_init__(self):
        self.terrain_patch = _checked_patch(self.terrain_patch, TERRAIN_IN_CHANNELS, "terrain_patch")
        self.sar_patch = _checked_patch(self.sar_patch, SAR_IN_CHANNELS, "sar_patch")
        self.spectral_patch = _checked_patch(self.spectral_patch, SPECTRAL_IN_CHANNELS, "spectral_patch")
        p = self.terrain_patch.shape[1]
        for name in ("sar_patch", "spectral_patch"):
            if getattr(self, name).shape[1] != p:
                raise ShapeError(f"{name} patch size {getattr(self, name).shape[1]} != terrain's {p}")
        self.weather_window = np.asarray(self.weather_window, dtype=np.float64)
        if self.weather_window.shape != (WINDOW_DAYS, len(WEATHER_COLUMNS)):
            raise ShapeError(
                f"weather_window must be [{WINDOW_DAYS},{len(WEATHER_COLUMNS)}], "
                f"got {self.weather_window.shape}")
        if not np.isfinite(self.weather_window).all():
            raise ShapeError("weather_window contains non-finite values (gap-fill it first)")
        self.static_scalars = np.asarray(self.static_scalars, dtype=np.float64)
        if self.static_scalars.shape != (len(STATIC_LABELS),):
            raise ShapeError(f"static_scalars must be [{len(STATIC_LABELS)}], got {self.static_scalars.shape}")
        if not np.isfinite(self.static_scalars).all():
            raise ShapeError("static_scalars contain non-finite values")
        self.target_swe = float(self.target_swe)
        if not np.isfinite(self.target_swe) or self.target_swe < 0:
            raise ShapeError(f"target_swe must be finite and >= 0, got {self.target_swe}")

    @property
    def patch_size(self) -> int:
        return self.terrain_patch.shape[1]


def _checked_patch(arr, channels: int, name: str) -> np.ndarray:
    arr = np.asarray(arr, dtype=np.float32)
    if arr.ndim != 3 or arr.shape[0] != channels or arr.shape[1] != arr.shape[2]:
        raise ShapeError(f"{name} must be [{channels},P,P], got {arr.shape}")
    if not np.isfinite(arr).all():
        raise ShapeError(f"{name} contains non-finite values")
    return arr


# ---------------------------------------------------------------------------
# feature standardization (train split statistics, stored in the checkpoint)


@dataclass
class FeatureScaler:
    """Per-column mean/std for the weather window and the static scalars."""

    weather_mean: np.ndarray
    weather_std: np.ndarray
    static_mean: np.ndarray
    static_std: np.ndarray

    @classmethod
    def identity(cls) -> "FeatureScaler":
        n, s = len(WEATHER_COLUMNS), len(STATIC_LABELS)
        return cls(np.zeros(n), np.ones(n), np.zeros(s), np.ones(s))

    @classmethod
    def fit(cls, windows: np.ndarray, statics: np.ndarray) -> "FeatureScaler":
        """windows: [N,11,7]; statics: [N,4]. Constant columns get std 1."""
        windows = np.asarray(windows, dtype=np.float64)
        statics = np.asarray(statics, dtype=np.float64)
        wm = windows.mean(axis=(0, 1))
        ws = windows.std(axis=(0, 1))
        sm = statics.mean(axis=0)
        ss = statics.std(axis=0)
        ws = np.where(ws < 1e-8, 1.0, ws)
        ss = np.where(ss < 1e-8, 1.0, ss)
        return cls(wm, ws, sm, ss)

    def transform_window(self, window: np.ndarray) -> np.ndarray:
        return (np.asarray(window, dtype=np.float64) - self.weather_mean) / self.weather_std

    def transform_static(self, static: np.ndarray) -> np.ndarray:
        return (np.asarray(static, dtype=np.float64) - self.static_mean) / self.static_std

    def as_extras(self) -> dict[str, np.ndarray]:
        return {
            "scaler.weather_mean": self.weather_mean,
            "scaler.weather_std": self.weather_std,
            "scaler.static_mean": self.static_mean,
            "scaler.static_std": self.static_std,
        }

    @classmethod
    def from_extras(cls, extras: dict[str, np.ndarray]) -> "FeatureScaler":
        try:
            return cls(
                np.asarray(extras["scaler.weather_mean"], dtype=np.float64),
                np.asarray(extras["scaler.weather_std"], dtype=np.float64),
                np.asarray(extras["scaler.static_mean"], dtype=np.float64),
                np.asarray(extras["scaler.static_std"], dtype=np.float64),
            )
        except KeyError as exc:
            raise ConfigError(f"checkpoint extras missing scaler entry {exc}") from exc


# ---------------------------------------------------------------------------
# the model


class FusionModel:
    """Parameters plus the forward wiring for one ``FusionConfig``.

    Inference on a built model is read-only; training mutates ``params``
    through the optimizer and needs exclusive access.
    """

    def __init__(self, config: FusionConfig, seed: int = 0,
                 scaler: FeatureScaler | None = None):
        self.config = config
        self.params = nn.ParamStore()
        self.scaler = scaler if scaler is not None else FeatureScaler.identity()
        self.out_scale = 1.0   # fixed (non-trained) output rescale
        self.out_offset = 0.0
        self._rng_seed = int(seed)
        self._build()

    # -- construction ---------------------------------------------------

    def _add_param(self, name: str, shape: tuple[int, ...], fan_in: int) -> None:
        rng = nn.SeededRng(self._rng_seed, 0).substream(f"init.{name}")
        bound = 1.0 / np.sqrt(fan_in)
        self.params.add(name, rng.uniform(-bound, bound, size=shape))

    def _add_bias(self, name: str, width: int) -> None:
        self.params.add(name, np.zeros(width))

    def _build(self) -> None:
        cfg = self.config
        if cfg.terrain:
            c_in = TERRAIN_IN_CHANNELS
            for i, c_out in enumerate(cfg.terrain_channels):
                self._add_param(f"terrain.block{i}.dw", (c_in, 3, 3), fan_in=9)
                self._add_param(f"terrain.block{i}.pw", (c_out, c_in, 1, 1), fan_in=c_in)
                self._add_bias(f"terrain.block{i}.b", c_out)
                c_in = c_out
            self._add_param("terrain.proj.w", (cfg.terrain_embed, c_in), fan_in=c_in)
            self._add_bias("terrain.proj.b", cfg.terrain_embed)
        for src, on, c0, embed in (
            ("sar", cfg.sar, SAR_IN_CHANNELS, cfg.sar_embed),
            ("spectral", cfg.spectral, SPECTRAL_IN_CHANNELS, cfg.spectral_embed),
        ):
            if not on:
                continue
            c_in = c0
            for i, c_out in enumerate(cfg.image_channels):
                self._add_param(f"{src}.conv{i}.w", (c_out, c_in, 3, 3), fan_in=c_in * 9)
                self._add_bias(f"{src}.conv{i}.b", c_out)
                c_in = c_out
            self._add_param(f"{src}.proj.w", (embed, c_in), fan_in=c_in)
            self._add_bias(f"{src}.proj.b", embed)
        if cfg.uses_lstm():
            f_in = len(cfg.lstm_columns())
            h = cfg.lstm_hidden
            self._add_param("lstm.wx", (4 * h, f_in), fan_in=f_in)
            self._add_param("lstm.wh", (4 * h, h), fan_in=h)
            self._add_bias("lstm.b", 4 * h)
        d = cfg.embed_dim()
        widths = (*cfg.mlp_hidden, 1)
        f_in = d
        for i, width in enumerate(widths):
            self._add_param(f"mlp.l{i}.w", (width, f_in), fan_in=f_in)
            self._add_bias(f"mlp.l{i}.b", width)
            f_in = width

    # -- forward pieces ---------------------------------------------------

    def _check_sample(self, sample: CellSample) -> None:
        if sample.patch_size != self.config.patch:
            raise ShapeError(
                f"sample patch size {sample.patch_size} != config patch {self.config.patch}")

    def _encode_terrain(self, patch: np.ndarray) -> nn.Tensor:
        h = nn.Tensor(patch.astype(np.float64))
        for i in range(len(self.config.terrain_channels)):
            h = nn.depthwise_conv2d(h, self.params[f"terrain.block{i}.dw"], padding=1)
            h = nn.conv2d(h, self.params[f"terrain.block{i}.pw"])
            h = nn.add_channel_bias(h, self.params[f"terrain.block{i}.b"])
            h = nn.relu(h)
        pooled = nn.global_avg_pool(h)
        return nn.linear(pooled, self.params["terrain.proj.w"], self.params["terrain.proj.b"])

    def _encode_image(self, src: str, patch: np.ndarray) -> nn.Tensor:
        h = nn.Tensor(patch.astype(np.float64))
        for i in range(len(self.config.image_channels)):
            h = nn.conv2d(h, self.params[f"{src}.conv{i}.w"], padding=1)
            h = nn.add_channel_bias(h, self.params[f"{src}.conv{i}.b"])
            h = nn.relu(h)
        pooled = nn.global_avg_pool(h)
        return nn.linear(pooled, self.params[f"{src}.proj.w"], self.params[f"{src}.proj.b"])

    def _lstm_input(self, sample: CellSample) -> np.ndarray:
        window = self.scaler.transform_window(sample.weather_window)
        cols = list(self.config.lstm_columns())
        return window[WINDOW_DAYS - self.config.window:, cols]

    def _encode_weather(self, sample: CellSample) -> nn.Tensor:
        seq = nn.Tensor(self._lstm_input(sample))
        return nn.lstm_sequence(seq, self.params["lstm.wx"], self.params["lstm.wh"],
                                self.params["lstm.b"])

    def _static_vector(self, sample: CellSample) -> nn.Tensor:
        idx = list(self.config.static_indices())
        scaled = self.scaler.transform_static(sample.static_scalars)
        return nn.Tensor(scaled[idx])

    def embedding_parts(self, sample: CellSample) -> list[tuple[str, nn.Tensor]]:
        """(block name, vector) pairs in the fixed concatenation order."""
        self._check_sample(sample)
        cfg = self.config
        parts: list[tuple[str, nn.Tensor]] = []
        if cfg.terrain:
            parts.append(("terrain", self._encode_terrain(sample.terrain_patch)))
        if cfg.sar:
            parts.append(("sar", self._encode_image("sar", sample.sar_patch)))
        if cfg.spectral:
            parts.append(("spectral", self._encode_image("spectral", sample.spectral_patch)))
        if cfg.uses_lstm():
            parts.append(("weather", self._encode_weather(sample)))
        if cfg.static_indices():
            parts.append(("static", self._static_vector(sample)))
        return parts

    def embeddings(self, sample: CellSample) -> nn.Tensor:
        return nn.concat([t for _, t in self.embedding_parts(sample)])

    def head(self, fused: nn.Tensor) -> nn.Tensor:
        """3-layer MLP plus the fixed output rescale; returns a [1] tensor."""
        h = nn.relu(nn.linear(fused, self.params["mlp.l0.w"], self.params["mlp.l0.b"]))
        h = nn.relu(nn.linear(h, self.params["mlp.l1.w"], self.params["mlp.l1.b"]))
        y = nn.linear(h, self.params["mlp.l2.w"], self.params["mlp.l2.b"])
        return nn.scale_shift(y, self.out_scale, self.out_offset)

    def forward(self, sample: CellSample) -> nn.Tensor:
        """Predicted SWE in inches as a [1] tensor (differentiable, unclamped)."""
        return self.head(self.embeddings(sample))

    def predict(self, sample: CellSample) -> float:
        with nn.no_grad():
            return float(self.forward(sample).data[0])

    # -- batched path (same math, one matrix product per layer per batch) --

    def _encode_terrain_batch(self, patches: np.ndarray) -> nn.Tensor:
        h = nn.Tensor(patches)
        for i in range(len(self.config.terrain_channels)):
            h = nn.depthwise_conv2d_batch(h, self.params[f"terrain.block{i}.dw"], padding=1)
            h = nn.conv2d_batch(h, self.params[f"terrain.block{i}.pw"])
            h = nn.add_channel_bias_batch(h, self.params[f"terrain.block{i}.b"])
            h = nn.relu(h)
        pooled = nn.global_avg_pool_batch(h)
        return nn.linear_batch(pooled, self.params["terrain.proj.w"], self.params["terrain.proj.b"])

    def _encode_image_batch(self, src: str, patches: np.ndarray) -> nn.Tensor:
        h = nn.Tensor(patches)
        for i in range(len(self.config.image_channels)):
            h = nn.conv2d_batch(h, self.params[f"{src}.conv{i}.w"], padding=1)
            h = nn.add_channel_bias_batch(h, self.params[f"{src}.conv{i}.b"])
            h = nn.relu(h)
        pooled = nn.global_avg_pool_batch(h)
        return nn.linear_batch(pooled, self.params[f"{src}.proj.w"], self.params[f"{src}.proj.b"])

    def forward_batch(self, samples: list[CellSample]) -> nn.Tensor:
        """Predictions for a whole minibatch as an [N] tensor.

        Numerically this can differ from per-sample ``forward`` in the last
        couple of float64 bits (different reduction order inside the matrix
        products); both paths are individually deterministic.
        """
        if not samples:
            raise ShapeError("forward_batch needs at least one sample")
        for s in samples:
            self._check_sample(s)
        cfg = self.config
        parts: list[nn.Tensor] = []
        if cfg.terrain:
            stack = np.stack([s.terrain_patch for s in samples]).astype(np.float64)
            parts.append(self._encode_terrain_batch(stack))
        if cfg.sar:
            stack = np.stack([s.sar_patch for s in samples]).astype(np.float64)
            parts.append(self._encode_image_batch("sar", stack))
        if cfg.spectral:
            stack = np.stack([s.spectral_patch for s in samples]).astype(np.float64)
            parts.append(self._encode_image_batch("spectral", stack))
        if cfg.uses_lstm():
            seqs = np.stack([self._lstm_input(s) for s in samples])
            parts.append(nn.lstm_sequence_batch(nn.Tensor(seqs), self.params["lstm.wx"],
                                                self.params["lstm.wh"], self.params["lstm.b"]))
        if cfg.static_indices():
            idx = list(cfg.static_indices())
            stat = np.stack([self.scaler.transform_static(s.static_scalars)[idx]
                             for s in samples])
            parts.append(nn.Tensor(stat))
        fused = nn.concat_columns(parts)
        h = nn.relu(nn.linear_batch(fused, self.params["mlp.l0.w"], self.params["mlp.l0.b"]))
        h = nn.relu(nn.linear_batch(h, self.params["mlp.l1.w"], self.params["mlp.l1.b"]))
        y = nn.squeeze_column(nn.linear_batch(h, self.params["mlp.l2.w"], self.params["mlp.l2.b"]))
        return nn.scale_shift(y, self.out_scale, self.out_offset)

    def predict_batch(self, samples: list[CellSample], chunk: int = 64) -> np.ndarray:
        """Unclamped predictions, batched in fixed-size chunks."""
        out = np.empty(len(samples))
        with nn.no_grad():
            for a in range(0, len(samples), chunk):
                part = samples[a:a + chunk]
                out[a:a + len(part)] = self.forward_batch(part).data
        return out


def forward_single_source(model: FusionModel, sample: CellSample, source: str) -> float:
    """Prediction using only ``source``'s pathway of ``model``.

    Equivalent to running a model whose config enables only that source,
    with the corresponding parameter sub-blocks copied over: the source's
    encoder, its column block of the first MLP layer, and the rest of the
    MLP.  Inference-only (no gradients).
    """
    if source not in SOURCES:
        raise ConfigError(f"unknown source {source!r}; expected one of {SOURCES}")
    cfg = model.config
    if not getattr(cfg, source):
        raise ConfigError(f"source {source!r} is disabled in this model's config")
    model._check_sample(sample)

    with nn.no_grad():
        blocks = cfg.block_slices()
        pieces: list[tuple[slice, np.ndarray]] = []
        if source == "terrain":
            pieces.append((blocks["terrain"], model._encode_terrain(sample.terrain_patch).data))
        elif source in ("sar", "spectral"):
            patch = sample.sar_patch if source == "sar" else sample.spectral_patch
            pieces.append((blocks[source], model._encode_image(source, patch).data))
        elif source == "weather":
            cols = cfg.lstm_columns()
            keep = [i for i, c in enumerate(cols) if c in GRIDMET_COLUMNS]
            pieces.append((blocks["weather"], _restricted_lstm(model, sample, keep)))
        else:  # modis
            if cfg.modis_placement == "post_fusion":
                pieces.append((blocks["static"], model._static_vector(sample).data))
            else:
                cols = cfg.lstm_columns()
                keep = [i for i, c in enumerate(cols) if c in MODIS_COLUMNS]
                pieces.append((blocks["weather"], _restricted_lstm(model, sample, keep)))
                pieces.append((blocks["static"], model._static_vector(sample).data))

        w0 = model.params["mlp.l0.w"].data
        b0 = model.params["mlp.l0.b"].data
        h = b0.copy()
        for col_slice, vec in pieces:
            h = h + w0[:, col_slice] @ vec
        h = np.maximum(h, 0.0)
        h = np.maximum(model.params["mlp.l1.w"].data @ h + model.params["mlp.l1.b"].data, 0.0)
        y = model.params["mlp.l2.w"].data @ h + model.params["mlp.l2.b"].data
        return float(y[0] * model.out_scale + model.out_offset)


def _restricted_lstm(model: FusionModel, sample: CellSample, keep: list[int]) -> np.ndarray:
    """Final LSTM hidden state with input columns outside ``keep`` dropped."""
    seq = model._lstm_input(sample)[:, keep]
    wx = nn.Tensor(model.params["lstm.wx"].data[:, keep])
    h = nn.lstm_sequence(nn.Tensor(seq), wx, model.params["lstm.wh"], model.params["lstm.b"])
    return h.data


# ---------------------------------------------------------------------------
# persistence


def save_model(model: FusionModel, path, extras: dict[str, np.ndarray] | None = None) -> None:
    """Write parameters + optimizer state + config + scaler to one file."""
    all_extras: dict[str, np.ndarray] = {
        "config_text": np.frombuffer(config_to_text(model.config).encode("utf-8"), dtype=np.uint8).copy(),
        "out_scale": np.asarray([model.out_scale], dtype=np.float64),
        "out_offset": np.asarray([model.out_offset], dtype=np.float64),
    }
    all_extras.update(model.scaler.as_extras())
    if extras:
        all_extras.update(extras)
    nn.save_checkpoint(model.params, path, all_extras)


def load_model(path) -> tuple[FusionModel, dict[str, np.ndarray]]:
    """Rebuild a model from ``save_model`` output; returns (model, extras)."""
    store, extras = nn.load_checkpoint(path)
    try:
        text = bytes(extras["config_text"].astype(np.uint8)).decode("utf-8")
    except KeyError:
        raise ConfigError(f"checkpoint {path} has no embedded config") from None
    config = config_from_mapping(parse_kv_text(text, what="embedded config"))
    model = FusionModel(config, seed=0, scaler=FeatureScaler.from_extras(extras))
    model.out_scale = float(extras["out_scale"][0])
    model.out_offset = float(extras["out_offset"][0])
    expected = set(model.params.names())
    got = set(store.names())
    if expected != got:
        missing = sorted(expected - got)
        surplus = sorted(got - expected)
        raise ConfigError(
            f"checkpoint {path} does not match its embedded config "
            f"(missing {missing[:3]}, surplus {surplus[:3]})")
    model.params = store
    return model, extras
