"""Batch pipeline driver.

One executable, eight subcommands covering the whole workflow: generate a
dataset, train, predict, post-smooth, evaluate against baselines, run the
source ablation, and render the report figures.  Every run prints its
fully resolved configuration to the diagnostic stream (silence with -q),
and identical inputs plus identical seeds give byte-identical outputs.

Exit codes: 0 success, 2 usage or configuration error, 3 data or parse
error, 4 numerical failure during training.
"""

from __future__ import annotations

import argparse
import dataclasses
import datetime as dt
import os
import sys

import numpy as np

from . import __version__
from . import evaluation as ev
from . import model as mo
from . import synth as sy
from . import train as tr
from .errors import ConfigError, DivergenceError, SnowfuseError
from .raster import Raster, read_raster, write_raster

PREDICTION_PREFIX = "pred"
SPLIT_CHOICES = ("train", "val", "test", "all")


# ---------------------------------------------------------------------------
# shared plumbing


def _parse_overrides(pairs: list[str], allowed: tuple[str, ...]) -> dict[str, dict[str, str]]:
    """Split repeated ``--set ns.key=value`` flags into per-namespace maps."""
    out: dict[str, dict[str, str]] = {ns: {} for ns in allowed}
    for item in pairs:
        if "=" not in item:
            raise ConfigError(f"--set expects NS.KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        ns, dot, name = key.partition(".")
        if not dot or not name:
            raise ConfigError(
                f"--set key {key!r} is missing its namespace prefix "
                f"(one of: {', '.join(allowed)})")
        if ns not in allowed:
            raise ConfigError(
                f"--set namespace {ns!r} is not used by this subcommand "
                f"(expected one of: {', '.join(allowed)})")
        out[ns][name] = value
    return out


def _read_kv_file(path) -> dict[str, str]:
    with open(path, "r", encoding="utf-8") as f:
        return mo.parse_kv_text(f.read(), what=str(path))


def _resolved_model_config(path, overrides: dict[str, str]) -> mo.FusionConfig:
    mapping = _read_kv_file(path) if path else {}
    mapping.update(overrides)
    return mo.config_from_mapping(mapping)


def _resolved_train_config(path, overrides: dict[str, str]) -> tr.TrainConfig:
    mapping = _read_kv_file(path) if path else {}
    mapping.update(overrides)
    return tr.train_config_from_mapping(mapping)


def _log_block(name: str, text: str, quiet: bool) -> None:
    if quiet:
        return
    for line in text.strip().splitlines():
        print(f"[{name}] {line}", file=sys.stderr)


def _note(message: str, quiet: bool) -> None:
    if not quiet:
        print(message, file=sys.stderr)


def _prediction_filename(basin: str, date: dt.date) -> str:
    return f"{PREDICTION_PREFIX}_{basin}_{date.isoformat()}.rst"


def _selected_rows(manifest_path, rule: tr.SplitRule, split: str) -> list[tr.ManifestRow]:
    rows = tr.read_manifest(manifest_path)
    if split == "all":
        return rows
    picked = [r for r in rows if rule.tag_for_year(r.date.year) == split]
    if not picked:
        raise ev.EmptyEvaluationError(
            f"{manifest_path}: no rows in the {split!r} split")
    return picked


def _manifest_truths(manifest_path, rows: list[tr.ManifestRow]
                     ) -> tuple[dict, dict]:
    """1 km truth rasters keyed (basin, date) plus per-basin union masks."""
    base = os.path.dirname(os.path.abspath(manifest_path))
    truths: dict[tuple[str, dt.date], Raster] = {}
    spec_by_basin: dict[str, object] = {}
    valid_by_basin: dict[str, np.ndarray] = {}
    for row in rows:
        truth = tr.truth_1km(read_raster(tr._resolve(base, row.aso_path)))
        truths[(row.basin, row.date)] = truth
        if row.basin not in spec_by_basin:
            spec_by_basin[row.basin] = truth.spec
            valid_by_basin[row.basin] = truth.valid.copy()
        elif spec_by_basin[row.basin] != truth.spec:
            raise ConfigError(
                f"basin {row.basin!r}: truth grid changed between dates")
        else:
            valid_by_basin[row.basin] |= truth.valid
    from .raster import BasinMask
    masks = {b: BasinMask(spec_by_basin[b], valid_by_basin[b], b)
             for b in spec_by_basin}
    return truths, masks


def _train_mean(manifest_path, rule: tr.SplitRule) -> float | None:
    """Mean truth value over the manifest's training split, if it has one."""
    rows = tr.read_manifest(manifest_path)
    train_rows = [r for r in rows if rule.tag_for_year(r.date.year) == "train"]
    if not train_rows:
        return None
    truths, masks = _manifest_truths(manifest_path, train_rows)
    cells = []
    for (basin, _), truth in truths.items():
        joint = truth.valid & masks[basin].inside
        cells.append(truth.band_f64(0)[joint])
    pooled = np.concatenate(cells)
    if pooled.size == 0:
        return None
    return float(pooled.mean())


# ---------------------------------------------------------------------------
# subcommand handlers


def _cmd_synth(ns) -> int:
    overrides = _parse_overrides(ns.overrides, ("synth",))["synth"]
    cfg = sy.preset(ns.preset)
    if ns.seed is not None:
        cfg = dataclasses.replace(cfg, seed=ns.seed)
    cfg = sy.synth_config_from_mapping(overrides, base=cfg)
    _log_block("synth", sy.synth_config_to_text(cfg), ns.quiet)
    scene = sy.generate_scene(cfg, patch=8)
    manifest = sy.write_scene(scene, ns.out)
    _note(f"wrote {len(scene.entries)} scene entries under {ns.out}", ns.quiet)
    print(manifest)
    return 0


def _cmd_train(ns) -> int:
    over = _parse_overrides(ns.overrides, ("model", "train"))
    mcfg = _resolved_model_config(ns.model_config, over["model"])
    tcfg = _resolved_train_config(ns.train_config, over["train"])
    _log_block("model", mo.config_to_text(mcfg), ns.quiet)
    _log_block("train", tr.train_config_to_text(tcfg), ns.quiet)
    dataset = tr.load_dataset(ns.manifest, tcfg.rule, patch=mcfg.patch)
    _note(f"dataset: {dataset.counts()}", ns.quiet)
    os.makedirs(ns.out, exist_ok=True)
    mo.write_config(mcfg, os.path.join(ns.out, "model.cfg"))
    with open(os.path.join(ns.out, "train.cfg"), "w", encoding="utf-8") as f:
        f.write(tr.train_config_to_text(tcfg))
    if ns.resume:
        result = tr.resume_training(ns.out, dataset, tcfg)
    else:
        result = tr.train_model(dataset, mcfg, tcfg, out_dir=ns.out)
    print(f"best rmse {result.best_rmse:.4f} at step {result.best_step}; "
          f"stopped at step {result.final_step}"
          f"{' (early)' if result.stopped_early else ''}; "
          f"checkpoints and history in {ns.out}")
    return 0


def _cmd_predict(ns) -> int:
    over = _parse_overrides(ns.overrides, ("train",))
    tcfg = _resolved_train_config(ns.train_config, over["train"])
    model, _extras = mo.load_model(ns.checkpoint)
    _log_block("model", mo.config_to_text(model.config), ns.quiet)
    dataset = tr.load_dataset(ns.manifest, tcfg.rule, patch=model.config.patch)
    os.makedirs(ns.out, exist_ok=True)

    groups: dict[tuple[str, dt.date], list] = {}
    for sample, tag in zip(dataset.samples, dataset.tags):
        if ns.split != "all" and tag != ns.split:
            continue
        groups.setdefault((sample.basin_name, sample.date), []).append(sample)
    if not groups:
        raise ev.EmptyEvaluationError(
            f"{ns.manifest}: no rows in the {ns.split!r} split")
    for (basin, date), samples in sorted(groups.items()):
        spec = dataset.masks[basin].spec
        values = model.predict_batch(samples)
        pred = ev.field_raster(spec, [s.cell_index for s in samples], values)
        if ns.smooth_sigma is not None:
            pred = ev.gaussian_smooth(pred, ns.smooth_sigma)
        write_raster(pred, os.path.join(ns.out, _prediction_filename(basin, date)))
    print(f"wrote {len(groups)} prediction rasters to {ns.out}")
    return 0


def _cmd_smooth(ns) -> int:
    raster = read_raster(ns.input)
    smoothed = ev.gaussian_smooth(raster, ns.sigma)
    write_raster(smoothed, ns.out)
    print(ns.out)
    return 0


def _cmd_evaluate(ns) -> int:
    if ns.inject_table2:
        report = sy.inject_table2()
    else:
        if not ns.manifest or not ns.predictions:
            raise ConfigError(
                "evaluate needs --manifest and --predictions "
                "(or --inject-table2 for the reference rows)")
        over = _parse_overrides(ns.overrides, ("train",))
        tcfg = _resolved_train_config(ns.train_config, over["train"])
        rows = _selected_rows(ns.manifest, tcfg.rule, ns.split)
        truths_bd, masks = _manifest_truths(ns.manifest, rows)

        dates_per_basin: dict[str, set] = {}
        for basin, date in truths_bd:
            dates_per_basin.setdefault(basin, set()).add(date)

        def key_for(basin: str, date: dt.date) -> str:
            if len(dates_per_basin[basin]) == 1:
                return basin
            return f"{basin}@{date.isoformat()}"

        predictions, truths, keyed_masks = {}, {}, {}
        for (basin, date), truth in truths_bd.items():
            path = os.path.join(ns.predictions, _prediction_filename(basin, date))
            if not os.path.exists(path):
                raise ev.DataError(f"missing prediction raster {path}")
            key = key_for(basin, date)
            predictions[key] = read_raster(path)
            truths[key] = truth
            keyed_masks[key] = masks[basin]

        train_mean = _train_mean(ns.manifest, tcfg.rule)
        stations = ev.read_stations_csv(ns.stations) if ns.stations else None
        distinct_dates = {d for _, d in truths_bd}
        station_date = next(iter(distinct_dates)) if len(distinct_dates) == 1 else None
        if stations is not None and station_date is None:
            _note("note: rows span several dates; skipping the "
                  "nearest-station baseline", ns.quiet)
            stations = None
        report = ev.build_report(predictions, truths, keyed_masks,
                                 train_mean=train_mean, stations=stations,
                                 station_date=station_date)
    if ns.out:
        ev.write_report_csv(report, ns.out)
        _note(f"report written to {ns.out}", ns.quiet)
    print(ev.render_report(report))
    print(f"overall area-weighted rmse: {report.overall:.2f}")
    return 0


def _cmd_baselines(ns) -> int:
    over = _parse_overrides(ns.overrides, ("train",))
    tcfg = _resolved_train_config(ns.train_config, over["train"])
    rows = _selected_rows(ns.manifest, tcfg.rule, ns.split)
    truths_bd, masks = _manifest_truths(ns.manifest, rows)
    train_mean = _train_mean(ns.manifest, tcfg.rule)
    stations = ev.read_stations_csv(ns.stations) if ns.stations else None

    accum: dict[str, list[tuple[float, float]]] = {}
    for (basin, date), truth in sorted(truths_bd.items()):
        mask = masks[basin]
        accum.setdefault("zero", []).append(
            (mask.area_km2, ev.baseline_zero(truth, mask)))
        if train_mean is not None:
            accum.setdefault("mean", []).append(
                (mask.area_km2, ev.baseline_mean(train_mean, truth, mask)))
        if stations is not None:
            accum.setdefault("nearest_station", []).append(
                (mask.area_km2, ev.baseline_nearest_station(stations, date, truth, mask)))
    if train_mean is None:
        _note("note: manifest has no training rows; skipping the "
              "train-mean baseline", ns.quiet)
    if stations is None:
        _note("note: no --stations file; skipping the nearest-station "
              "baseline", ns.quiet)
    lines = ["baseline,rmse"]
    for name in sorted(accum):
        value = ev.area_weighted_overall(accum[name])
        lines.append(f"{name},{value!r}")
        print(f"{name:16s} {value:8.3f}")
    if ns.out:
        with open(ns.out, "w", encoding="utf-8", newline="\n") as f:
            f.write("\n".join(lines) + "\n")
        _note(f"baseline table written to {ns.out}", ns.quiet)
    return 0


def _cmd_ablate(ns) -> int:
    over = _parse_overrides(ns.overrides, ("model", "train"))
    mcfg = _resolved_model_config(ns.model_config, over["model"])
    tcfg = _resolved_train_config(ns.train_config, over["train"])
    _log_block("model", mo.config_to_text(mcfg), ns.quiet)
    _log_block("train", tr.train_config_to_text(tcfg), ns.quiet)
    dataset = tr.load_dataset(ns.manifest, tcfg.rule, patch=mcfg.patch)
    test = dataset.subset("test")
    if not test:
        raise ev.EmptyEvaluationError(f"{ns.manifest}: no test split to score")
    os.makedirs(ns.out, exist_ok=True)

    variants = [(name, mcfg.single_source(name))
                for name in mo.SOURCES if getattr(mcfg, name)]
    variants.append(("fused", mcfg))
    lines = ["configuration,test_rmse,best_val_rmse,best_step"]
    scores: dict[str, float] = {}
    for name, cfg in variants:
        result = tr.train_model(dataset, cfg, tcfg,
                                out_dir=os.path.join(ns.out, name))
        preds = np.maximum(np.asarray(result.model.predict_batch(test)), 0.0)
        targets = np.array([s.target_swe for s in test])
        score = float(np.sqrt(np.mean((preds - targets) ** 2)))
        scores[name] = score
        lines.append(f"{name},{score!r},{result.best_rmse!r},{result.best_step}")
        print(f"{name:10s} test rmse {score:8.3f}")
    table_path = os.path.join(ns.out, "ablation.csv")
    with open(table_path, "w", encoding="utf-8", newline="\n") as f:
        f.write("\n".join(lines) + "\n")
    singles = [v for k, v in scores.items() if k != "fused"]
    if singles and "fused" in scores:
        print(f"fused {scores['fused']:.3f} vs best single {min(singles):.3f}")
    print(table_path)
    return 0


def _cmd_plot(ns) -> int:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    # fixed hash salt and no date metadata keep the SVG bytes reproducible
    plt.rcParams["svg.hashsalt"] = "snowfuse"

    os.makedirs(ns.out, exist_ok=True)
    written = []

    report = ev.read_report_csv(ns.report)
    scored = [r for r in report.rows if r.has_truth()]
    if scored:
        fig, ax = plt.subplots(figsize=(7, 4))
        names = [r.basin for r in scored]
        ax.bar(range(len(scored)), [r.rmse for r in scored], color="#4878a8")
        ax.axhline(report.overall, color="#333333", linestyle="--", linewidth=1,
                   label=f"area-weighted overall {report.overall:.2f}")
        ax.set_xticks(range(len(scored)))
        ax.set_xticklabels(names, rotation=30, ha="right")
        ax.set_ylabel("test rmse (in)")
        ax.set_title("per-basin error")
        ax.legend(frameon=False)
        fig.tight_layout()
        path = os.path.join(ns.out, "basin_rmse.svg")
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
        written.append(path)

    if ns.manifest and ns.predictions:
        over = _parse_overrides(ns.overrides, ("train",))
        tcfg = _resolved_train_config(ns.train_config, over["train"])
        rows = _selected_rows(ns.manifest, tcfg.rule, ns.split)
        truths_bd, masks = _manifest_truths(ns.manifest, rows)
        truth_cells, err_cells = [], []
        for (basin, date), truth in sorted(truths_bd.items()):
            path = os.path.join(ns.predictions, _prediction_filename(basin, date))
            if not os.path.exists(path):
                raise ev.DataError(f"missing prediction raster {path}")
            pred = read_raster(path)
            joint = pred.valid & truth.valid & masks[basin].inside
            tv = np.maximum(truth.band_f64(0)[joint], 0.0)
            pv = np.maximum(pred.band_f64(0)[joint], 0.0)
            truth_cells.append(tv)
            err_cells.append(pv - tv)
        truths_all = np.concatenate(truth_cells)
        errors_all = np.concatenate(err_cells)
        xs, fitted = ev.loess_error_curve(truths_all, errors_all)
        fig, ax = plt.subplots(figsize=(7, 4))
        ax.scatter(truths_all, errors_all, s=6, alpha=0.35, color="#4878a8",
                   edgecolors="none")
        ax.plot(xs, fitted, color="#b3402a", linewidth=2, label="local trend")
        ax.axhline(0.0, color="#333333", linewidth=0.8)
        ax.set_xlabel("true snow water equivalent (in)")
        ax.set_ylabel("prediction error (in)")
        ax.set_title("error against snow amount")
        ax.legend(frameon=False)
        fig.tight_layout()
        path = os.path.join(ns.out, "error_vs_swe.svg")
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
        written.append(path)
        curve_path = os.path.join(ns.out, "error_curve.csv")
        ev.write_curve_csv(xs, fitted, curve_path)
        written.append(curve_path)

    if not written:
        raise ConfigError("nothing to plot: the report had no scored rows and "
                          "no --manifest/--predictions pair was given")
    for path in written:
        print(path)
    return 0


# ---------------------------------------------------------------------------
# parser


def _add_set_flag(p: argparse.ArgumentParser, namespaces: tuple[str, ...]) -> None:
    p.add_argument("--set", dest="overrides", action="append", default=[],
                   metavar=f"{{{'|'.join(namespaces)}}}.KEY=VALUE",
                   help="override one config key; repeatable, wins over files")


def _add_quiet(p: argparse.ArgumentParser) -> None:
    p.add_argument("-q", "--quiet", action="store_true",
                   help="suppress diagnostics (errors still print)")


def _model_keys_epilog() -> str:
    return ("model config keys and defaults:\n  "
            + "\n  ".join(mo.config_to_text(mo.FusionConfig()).strip().splitlines()))


def _train_keys_epilog() -> str:
    return ("train config keys and defaults:\n  "
            + "\n  ".join(tr.train_config_to_text(tr.TrainConfig()).strip().splitlines()))


def _synth_keys_epilog() -> str:
    return ("synth config keys and defaults:\n  "
            + "\n  ".join(sy.synth_config_to_text(sy.SynthConfig()).strip().splitlines()))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="snowfuse",
        description="multi-source snow-water-equivalent pipeline",
        epilog="SNOWFUSE_THREADS caps the linear-algebra thread pools "
               "(default 1); set it before launch.")
    parser.add_argument("--version", action="version",
                        version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")
    raw = argparse.RawDescriptionHelpFormatter

    p = sub.add_parser(
        "synth", help="generate a synthetic dataset",
        description="Generate a synthetic dataset (manifest, imagery, truth, "
                    "weather, stations) with known ground truth.",
        epilog=_synth_keys_epilog(), formatter_class=raw)
    p.add_argument("--preset", default="sierra-like", choices=sy.PRESETS,
                   help="named starting configuration (default: %(default)s)")
    p.add_argument("--seed", type=int, default=None, help="override the preset seed")
    p.add_argument("-o", "--out", required=True, help="output dataset directory")
    _add_set_flag(p, ("synth",))
    _add_quiet(p)
    p.set_defaults(handler=_cmd_synth)

    p = sub.add_parser(
        "train", help="train the fusion model",
        description="Assemble samples from a manifest and train; writes "
                    "best.ckpt, last.ckpt, and history.csv into the run "
                    "directory.  Interrupted runs continue with --resume.",
        epilog=_model_keys_epilog() + "\n\n" + _train_keys_epilog(),
        formatter_class=raw)
    p.add_argument("--manifest", required=True, help="dataset manifest csv")
    p.add_argument("-o", "--out", required=True, help="run directory")
    p.add_argument("--model-config", help="model key=value file")
    p.add_argument("--train-config", help="training key=value file")
    p.add_argument("--resume", action="store_true",
                   help="continue from the run directory's last.ckpt")
    _add_set_flag(p, ("model", "train"))
    _add_quiet(p)
    p.set_defaults(handler=_cmd_train)

    p = sub.add_parser(
        "predict", help="write per-basin/date prediction rasters",
        description="Run a checkpoint over a manifest and write one "
                    "prediction raster per basin and date (inches, 1 km "
                    "cells).  train.* keys set the year split when "
                    "--split filters rows.",
        epilog=_train_keys_epilog(), formatter_class=raw)
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint", required=True, help="model checkpoint path")
    p.add_argument("-o", "--out", required=True, help="output directory")
    p.add_argument("--split", default="all", choices=SPLIT_CHOICES,
                   help="which rows to predict (default: %(default)s)")
    p.add_argument("--smooth-sigma", type=float, default=None,
                   help="apply Gaussian smoothing with this radius (cells)")
    p.add_argument("--train-config", help="training key=value file (for the split years)")
    _add_set_flag(p, ("train",))
    _add_quiet(p)
    p.set_defaults(handler=_cmd_predict)

    p = sub.add_parser(
        "smooth", help="smooth one raster",
        description="Apply masked Gaussian smoothing to a raster file; "
                    "nodata cells stay nodata and do not bleed.")
    p.add_argument("--input", required=True, help="raster to smooth")
    p.add_argument("-o", "--out", required=True, help="output raster path")
    p.add_argument("--sigma", type=float, default=1.0,
                   help="kernel radius in cells (default: %(default)s)")
    _add_quiet(p)
    p.set_defaults(handler=_cmd_smooth)

    p = sub.add_parser(
        "evaluate", help="score predictions against truth",
        description="Build the per-basin report (area-weighted overall plus "
                    "zero/mean/nearest-station baselines) from prediction "
                    "rasters, or print the fixed reference rows with "
                    "--inject-table2.",
        epilog=_train_keys_epilog(), formatter_class=raw)
    p.add_argument("--manifest", help="dataset manifest csv")
    p.add_argument("--predictions", help="directory of prediction rasters")
    p.add_argument("--split", default="test", choices=SPLIT_CHOICES,
                   help="rows to evaluate (default: %(default)s)")
    p.add_argument("--stations", help="station readings csv for the "
                                      "nearest-station baseline")
    p.add_argument("-o", "--out", help="write the report csv here")
    p.add_argument("--inject-table2", action="store_true",
                   help="print the fixed reference report instead of scoring")
    p.add_argument("--train-config", help="training key=value file (for the split years)")
    _add_set_flag(p, ("train",))
    _add_quiet(p)
    p.set_defaults(handler=_cmd_evaluate)

    p = sub.add_parser(
        "baselines", help="score the reference baselines",
        description="Score the zero, train-mean, and nearest-station "
                    "baselines on a split, without any model.",
        epilog=_train_keys_epilog(), formatter_class=raw)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", default="test", choices=SPLIT_CHOICES)
    p.add_argument("--stations", help="station readings csv")
    p.add_argument("-o", "--out", help="write baseline,rmse csv here")
    p.add_argument("--train-config", help="training key=value file (for the split years)")
    _add_set_flag(p, ("train",))
    _add_quiet(p)
    p.set_defaults(handler=_cmd_baselines)

    p = sub.add_parser(
        "ablate", help="train single-source models and the fused model",
        description="Train one model per enabled source plus the fused "
                    "model under identical settings and tabulate pooled "
                    "test RMSE per configuration.",
        epilog=_model_keys_epilog() + "\n\n" + _train_keys_epilog(),
        formatter_class=raw)
    p.add_argument("--manifest", required=True)
    p.add_argument("-o", "--out", required=True, help="output directory")
    p.add_argument("--model-config", help="model key=value file")
    p.add_argument("--train-config", help="training key=value file")
    _add_set_flag(p, ("model", "train"))
    _add_quiet(p)
    p.set_defaults(handler=_cmd_ablate)

    p = sub.add_parser(
        "plot", help="render report figures as SVG",
        description="Render the per-basin RMSE bars from a report csv and, "
                    "given predictions plus a manifest, the error-against-"
                    "snow-amount scatter with its local trend line.  "
                    "Outputs are byte-stable for identical inputs.",
        epilog=_train_keys_epilog(), formatter_class=raw)
    p.add_argument("--report", required=True, help="report csv from evaluate")
    p.add_argument("--manifest", help="dataset manifest csv (for the scatter)")
    p.add_argument("--predictions", help="prediction raster directory (for the scatter)")
    p.add_argument("--split", default="test", choices=SPLIT_CHOICES)
    p.add_argument("-o", "--out", required=True, help="output directory")
    p.add_argument("--train-config", help="training key=value file (for the split years)")
    _add_set_flag(p, ("train",))
    _add_quiet(p)
    p.set_defaults(handler=_cmd_plot)

    return parser


def run(argv=None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as e:
        return 0 if e.code in (0, None) else 2
    try:
        return int(ns.handler(ns) or 0)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except DivergenceError as e:
        print(f"error: {e}", file=sys.stderr)
        return 4
    except (SnowfuseError, OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 3


def entrypoint() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    entrypoint()
