"""Acceptance gate: ten end-to-end criteria, one verdict line each.

Each test prints ``criterion NN PASS|FAIL: detail`` to the real stdout so
the gate is readable even under pytest's capture, then asserts.  The
slowest criterion is the five-seed fusion sweep (a few minutes); the rest
are seconds.
"""

import hashlib
import math
import sys
import time

import numpy as np

from snowfuse import cli
from snowfuse import evaluation as ev
from snowfuse import model as mo
from snowfuse import nn
from snowfuse import raster as ra
from snowfuse import synth as sy
from snowfuse import train as tr
from _gradcheck import chw_reducer, fd_run, param


def _verdict(num: int, ok: bool, detail: str) -> None:
    line = f"criterion {num:02d} {'PASS' if ok else 'FAIL'}: {detail}"
    print(line, file=sys.__stdout__, flush=True)
    assert ok, line


# ---------------------------------------------------------------------------
# 1. reference aggregation


def test_criterion_01_reference_aggregation():
    report = sy.inject_table2()
    direct = ev.area_weighted_overall([(row.area_km2, row.rmse) for row in report.rows])
    ok = (abs(direct - 7.45) <= 0.01
          and f"{direct:.2f}" == "7.45"
          and direct == report.overall)
    _verdict(1, ok, f"nine-basin area-weighted overall {direct:.6f} "
                    f"(required 7.45 +/- 0.01, rendering as 7.45)")


# ---------------------------------------------------------------------------
# 2. gradient integrity sweep


def _conv_geometry(rng, hw):
    pad = int(rng.integers(0, 2))
    ks = [k for k in (1, 3, 5) if k <= hw + 2 * pad]
    k = int(ks[rng.integers(0, len(ks))])
    stride = int(rng.integers(1, 3))
    span = hw + 2 * pad - k
    if span < 0 or span % stride != 0:
        stride = 1
    return k, stride, pad, (hw + 2 * pad - k) // stride + 1


def test_criterion_02_gradient_sweep():
    t0 = time.time()
    rng = np.random.default_rng(20260818)
    runs_per_op = 100
    worst: dict[str, float] = {}

    def note(op, w):
        worst[op] = max(worst.get(op, 0.0), w)

    for _ in range(runs_per_op):
        n = int(rng.integers(1, 9))
        x, t = param(rng, n), rng.uniform(-1, 1, size=n)
        note("mse_loss", fd_run(lambda: nn.mse_loss(x, t), [x]))

    for _ in range(runs_per_op):
        n, m = int(rng.integers(1, 7)), int(rng.integers(1, 7))
        x, w, b = param(rng, n), param(rng, m, n), param(rng, m)
        t = rng.uniform(-1, 1, size=m)
        note("linear", fd_run(lambda: nn.mse_loss(nn.linear(x, w, b), t), [x, w, b]))

    for _ in range(runs_per_op):
        n = int(rng.integers(1, 13))
        x = param(rng, n, away_from_zero=0.2)
        t = rng.uniform(-1, 1, size=n)
        note("relu", fd_run(lambda: nn.mse_loss(nn.relu(x), t), [x]))

    for _ in range(runs_per_op):
        c, h, w_ = (int(rng.integers(1, 4)), int(rng.integers(1, 6)),
                    int(rng.integers(1, 6)))
        x = param(rng, c, h, w_)
        t = rng.uniform(-1, 1, size=c)
        note("global_avg_pool",
             fd_run(lambda: nn.mse_loss(nn.global_avg_pool(x), t), [x]))

    for _ in range(runs_per_op):
        parts = [param(rng, int(rng.integers(1, 5)))
                 for _ in range(int(rng.integers(2, 5)))]
        t = rng.uniform(-1, 1, size=sum(p.data.size for p in parts))
        note("concat", fd_run(lambda: nn.mse_loss(nn.concat(parts), t), parts))

    for _ in range(runs_per_op):
        cin, cout = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        hw = int(rng.integers(3, 8))
        k, stride, pad, out = _conv_geometry(rng, hw)
        x = param(rng, cin, hw, hw)
        w = param(rng, cout, cin, k, k)
        b = param(rng, cout)
        red = chw_reducer(rng, cout, out)
        note("conv2d", fd_run(
            lambda: red(nn.add_channel_bias(
                nn.conv2d(x, w, stride=stride, padding=pad), b)),
            [x, w, b]))

    for _ in range(runs_per_op):
        c = int(rng.integers(1, 4))
        hw = int(rng.integers(3, 8))
        k, stride, pad, out = _conv_geometry(rng, hw)
        x = param(rng, c, hw, hw)
        w = param(rng, c, k, k)
        red = chw_reducer(rng, c, out)
        note("depthwise_conv2d", fd_run(
            lambda: red(nn.depthwise_conv2d(x, w, stride=stride, padding=pad)),
            [x, w]))

    for _ in range(runs_per_op):
        T, F, H = (int(rng.integers(1, 5)), int(rng.integers(1, 4)),
                   int(rng.integers(1, 4)))
        x = param(rng, T, F)
        wx, wh, b = param(rng, 4 * H, F), param(rng, 4 * H, H), param(rng, 4 * H)
        t = rng.uniform(-1, 1, size=H)
        note("lstm_sequence", fd_run(
            lambda: nn.mse_loss(nn.lstm_sequence(x, wx, wh, b), t), [x, wx, wh, b]))

    elapsed = time.time() - t0
    peak = max(worst.values())
    ok = peak < 1e-5 and len(worst) == 8 and elapsed < 60.0
    _verdict(2, ok, f"{8 * runs_per_op} finite-difference checks over "
                    f"{len(worst)} ops, worst relative error {peak:.2e} "
                    f"(required < 1e-5) in {elapsed:.1f}s (< 60s)")


# ---------------------------------------------------------------------------
# 3. overfit capability


def test_criterion_03_overfit_small_noiseless_set():
    t0 = time.time()
    scene = sy.generate_scene(sy.preset("overfit", seed=0), patch=8)
    cfg = tr.TrainConfig(lr=3e-3, batch_size=16, max_steps=1500, eval_every=100,
                         seed=0, patience=10 ** 6, eval_cap=256)
    runs = [tr.train_model(scene.dataset, mo.FusionConfig(patch=8), cfg)
            for _ in range(2)]
    best = min(row.train_rmse for row in runs[0].history)

    def trace(result):  # repr keeps full precision and treats nan as equal
        rows = [(h.step, repr(h.train_rmse), repr(h.val_rmse))
                for h in result.history]
        params = [result.model.params[n].data.tobytes()
                  for n in result.model.params.names()]
        return rows, params

    identical = trace(runs[0]) == trace(runs[1])
    elapsed = time.time() - t0
    ok = best < 0.1 and identical and elapsed < 120.0
    _verdict(3, ok, f"32-sample zero-noise set memorized to train rmse "
                    f"{best:.4f} (required < 0.1) within {cfg.max_steps} steps, "
                    f"two runs bit-identical={identical}, {elapsed:.0f}s (< 120s)")


# ---------------------------------------------------------------------------
# 4. fusion beats every single source (seed-averaged)


def _pooled_test_rmse(model, test_samples):
    preds = np.maximum(np.asarray(model.predict_batch(test_samples)), 0.0)
    targets = np.array([s.target_swe for s in test_samples])
    return float(np.sqrt(np.mean((preds - targets) ** 2)))


def test_criterion_04_fusion_direction():
    t0 = time.time()
    seeds = range(5)
    fused_scores, best_single_scores = [], []
    for seed in seeds:
        scene = sy.generate_scene(sy.preset("sierra-like", seed=seed), patch=8)
        test = scene.dataset.subset("test")
        cfg = tr.TrainConfig(batch_size=16, max_steps=1500, eval_every=150,
                             seed=seed, patience=5, eval_cap=256)
        base = mo.FusionConfig(patch=8)
        singles = []
        for source in mo.SOURCES:
            result = tr.train_model(scene.dataset, base.single_source(source), cfg)
            singles.append(_pooled_test_rmse(result.model, test))
        result = tr.train_model(scene.dataset, base, cfg)
        fused_scores.append(_pooled_test_rmse(result.model, test))
        best_single_scores.append(min(singles))
    fused_mean = float(np.mean(fused_scores))
    single_mean = float(np.mean(best_single_scores))
    ratio = fused_mean / single_mean
    elapsed = time.time() - t0
    ok = fused_mean <= 0.8 * single_mean and elapsed < 900.0
    _verdict(4, ok, f"5-seed mean test rmse: fused {fused_mean:.3f} vs best "
                    f"single-source {single_mean:.3f} (ratio {ratio:.3f}, "
                    f"required <= 0.8) in {elapsed:.0f}s (< 900s)")


# ---------------------------------------------------------------------------
# 5. block aggregation equals the brute-force oracle


def _blockmean_oracle(values, valid, factor, rows_out, cols_out):
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


def test_criterion_05_aggregation_oracle():
    t0 = time.time()
    rng = np.random.default_rng(55)
    exact = 0
    total = 1000
    for i in range(total):
        factor = int(rng.integers(1, 6))
        nr, nc = int(rng.integers(1, 5)), int(rng.integers(1, 5))
        pad_edge = bool(rng.integers(0, 2)) and factor > 1
        rows, cols = nr * factor, nc * factor
        if pad_edge:
            rows -= int(rng.integers(1, factor))
            cols -= int(rng.integers(1, factor))
        vals = (rng.normal(size=(rows, cols)) * 10).astype(np.float32)
        valid = rng.uniform(size=(rows, cols)) > 0.35
        r = ra.Raster(ra.GridSpec(0.0, rows * 100.0, 100.0, rows, cols),
                      vals, ~valid)
        out = ra.aggregate_mean(r, factor=factor, pad_edge=pad_edge)
        exp_vals, exp_nodata = _blockmean_oracle(vals, valid, factor, nr, nc)
        if (np.array_equal(out.values[0], exp_vals)
                and np.array_equal(out.nodata, exp_nodata)):
            exact += 1
    elapsed = time.time() - t0
    ok = exact == total and elapsed < 10.0
    _verdict(5, ok, f"{exact}/{total} random masked rasters aggregated "
                    f"bit-identically to the block oracle in {elapsed:.1f}s (< 10s)")


# ---------------------------------------------------------------------------
# 6. smoothing invariances


def _dense_renorm_oracle(values, valid, sigma):
    k = ev.gaussian_kernel_1d(sigma)
    radius = len(k) // 2
    rows, cols = values.shape
    out = np.zeros((rows, cols))
    for r in range(rows):
        for c in range(cols):
            if not valid[r, c]:
                continue
            num = den = 0.0
            for dr in range(-radius, radius + 1):
                for dc in range(-radius, radius + 1):
                    rr, cc = r + dr, c + dc
                    if 0 <= rr < rows and 0 <= cc < cols and valid[rr, cc]:
                        w = k[dr + radius] * k[dc + radius]
                        num += w * values[rr, cc]
                        den += w
            out[r, c] = num / den
    return out


def test_criterion_06_smoothing():
    t0 = time.time()
    rng = np.random.default_rng(66)
    spec = ra.GridSpec(0.0, 700.0, 100.0, 7, 9)
    worst_impulse = worst_dense = 0.0
    constant_ok = True
    for i in range(100):
        sigma = float(rng.uniform(0.6, 1.0))
        k = ev.gaussian_kernel_1d(sigma)
        radius = len(k) // 2

        c = float(rng.uniform(-20, 20))
        smoothed = ev.gaussian_smooth(
            ra.Raster(spec, np.full((7, 9), c, np.float32)), sigma)
        constant_ok = constant_ok and (smoothed.band(0) == np.float32(c)).all()

        field = np.zeros((15, 15))
        field[7, 7] = 1.0
        out = ev.smooth_field(field, np.ones((15, 15), bool), sigma)
        lo, hi = 7 - radius, 7 + radius + 1
        worst_impulse = max(worst_impulse,
                            float(np.abs(out[lo:hi, lo:hi] - np.outer(k, k)).max()))

        values = rng.uniform(0, 30, size=(7, 9))
        valid = rng.uniform(size=(7, 9)) > 0.25
        got = ev.smooth_field(values, valid, sigma)
        expect = _dense_renorm_oracle(values, valid, sigma)
        worst_dense = max(worst_dense, float(np.abs(got - expect).max()))
    elapsed = time.time() - t0
    ok = (constant_ok and worst_impulse < 1e-6 and worst_dense < 1e-9
          and elapsed < 10.0)
    _verdict(6, ok, f"100 fields: constant invariance exact={constant_ok}, "
                    f"impulse error {worst_impulse:.1e} (< 1e-6), dense-oracle "
                    f"error {worst_dense:.1e} (< 1e-9), {elapsed:.1f}s (< 10s)")


# ---------------------------------------------------------------------------
# 7. baselines


def test_criterion_07_baselines():
    t0 = time.time()
    rng = np.random.default_rng(77)
    import datetime as dt
    date = dt.date(2022, 4, 1)
    layouts_exact = 0
    worst_zero = 0.0
    for i in range(100):
        rows, cols = int(rng.integers(1, 7)), int(rng.integers(1, 8))
        spec = ra.GridSpec(float(rng.uniform(-5000, 5000)),
                           float(rng.uniform(-5000, 5000)),
                           float(rng.uniform(50, 2000)), rows, cols)
        xs, ys = spec.cell_centers()
        n_stations = int(rng.integers(1, 7))
        stations = ev.StationSet([
            ev.Station(f"st{j:02d}", float(rng.uniform(xs.min() - 3000, xs.max() + 3000)),
                       float(rng.uniform(ys.min() - 3000, ys.max() + 3000)), 2000.0,
                       {date: float(rng.uniform(0, 30))})
            for j in range(n_stations)
        ])
        field = ev.nearest_station_field(stations, date, spec)
        ordered = stations.reporting(date)
        good = True
        for r in range(rows):
            for c in range(cols):
                d2 = [(s.x - xs[c]) ** 2 + (s.y - ys[r]) ** 2 for s in ordered]
                if field[r, c] != ordered[int(np.argmin(d2))].swe_by_date[date]:
                    good = False
        layouts_exact += good

        truth = ra.Raster(spec, rng.uniform(0, 30, size=(rows, cols)).astype(np.float32))
        mask = ra.BasinMask(spec, np.ones((rows, cols), bool), "b")
        t = truth.band_f64(0)
        worst_zero = max(worst_zero, abs(ev.baseline_zero(truth, mask)
                                         - math.sqrt(float((t ** 2).mean()))))

    scene = sy.generate_scene(sy.preset("sierra-like", seed=0), patch=8)
    cfg = tr.TrainConfig(batch_size=16, max_steps=1500, eval_every=150,
                         seed=0, patience=5, eval_cap=256)
    result = tr.train_model(scene.dataset, mo.FusionConfig(patch=8), cfg)
    test = scene.dataset.subset("test")
    fused = _pooled_test_rmse(result.model, test)
    fields = {}
    station_preds = []
    for s in test:
        key = (s.basin_name, s.date)
        if key not in fields:
            fields[key] = ev.nearest_station_field(
                scene.stations, s.date, scene.masks[s.basin_name].spec)
        station_preds.append(fields[key][s.cell_index])
    targets = np.array([s.target_swe for s in test])
    station_rmse = float(np.sqrt(np.mean(
        (np.maximum(np.asarray(station_preds), 0.0) - targets) ** 2)))
    elapsed = time.time() - t0
    ok = (layouts_exact == 100 and worst_zero <= 1e-9
          and station_rmse > fused and elapsed < 60.0)
    _verdict(7, ok, f"{layouts_exact}/100 station layouts match the all-pairs "
                    f"oracle; zero-baseline error {worst_zero:.1e} (<= 1e-9); "
                    f"nearest-station rmse {station_rmse:.3f} > fused "
                    f"{fused:.3f}; {elapsed:.0f}s (< 60s)")


# ---------------------------------------------------------------------------
# 8. local regression exactness


def _wls_oracle(x, y, span, points):
    n = x.size
    q = max(2, math.ceil(span * n))
    xs = np.linspace(x.min(), x.max(), points)
    fitted = np.empty(points)
    for i, x0 in enumerate(xs):
        d = np.abs(x - x0)
        cut = np.partition(d, q - 1)[q - 1]
        sel = d <= cut
        dmax = d[sel].max()
        w = np.ones(sel.sum()) if dmax == 0 else (1 - (d[sel] / dmax) ** 3) ** 3
        sw = np.sqrt(np.maximum(w, 0.0))
        design = np.stack([np.ones(sel.sum()), x[sel] - x0], axis=1)
        beta, *_ = np.linalg.lstsq(design * sw[:, None], y[sel] * sw, rcond=None)
        fitted[i] = beta[0]
    return fitted


def test_criterion_08_loess():
    rng = np.random.default_rng(88)
    worst_linear = worst_quad = 0.0
    for _ in range(20):
        x = np.sort(rng.uniform(0, 10, size=int(rng.integers(30, 120))))
        a, b = float(rng.uniform(-4, 4)), float(rng.uniform(-10, 10))
        span = float(rng.uniform(0.2, 0.6))
        xs, fitted = ev.loess_error_curve(x, a * x + b, span=span, points=50)
        worst_linear = max(worst_linear,
                           float(np.abs(fitted - (a * xs + b)).max()))

        y = x ** 2 + rng.normal(scale=0.5, size=x.size)
        xs, fitted = ev.loess_error_curve(x, y, span=span, points=50)
        oracle = _wls_oracle(x, y, span, 50)
        worst_quad = max(worst_quad, float(np.abs(fitted - oracle).max()))
    ok = worst_linear <= 1e-9 and worst_quad <= 1e-8
    _verdict(8, ok, f"linear data reproduced to {worst_linear:.1e} (<= 1e-9), "
                    f"curved data matches the weighted-least-squares oracle "
                    f"to {worst_quad:.1e} (<= 1e-8)")


# ---------------------------------------------------------------------------
# 9. serialization roundtrips


def test_criterion_09_io_roundtrips(tmp_path):
    rng = np.random.default_rng(99)
    raster_ok = checkpoint_ok = 0
    for i in range(50):
        bands = int(rng.integers(1, 4))
        rows, cols = int(rng.integers(1, 9)), int(rng.integers(1, 9))
        vals = rng.normal(size=(bands, rows, cols)).astype(np.float32)
        nod = rng.uniform(size=(rows, cols)) < 0.3
        vals[:, nod] = 0.0
        tag = ["local", "epsg:32611", ""][int(rng.integers(0, 3))]
        r = ra.Raster(ra.GridSpec(float(rng.uniform(-1e6, 1e6)),
                                  float(rng.uniform(-1e6, 1e6)),
                                  float(rng.uniform(1, 1000)), rows, cols, tag),
                      vals, nod)
        p1, p2 = tmp_path / f"r{i}a.rst", tmp_path / f"r{i}b.rst"
        ra.write_raster(r, p1)
        back = ra.read_raster(p1)
        ra.write_raster(back, p2)
        if (hashlib.sha256(p1.read_bytes()).digest()
                == hashlib.sha256(p2.read_bytes()).digest()
                and back.values.tobytes() == r.values.tobytes()
                and np.array_equal(back.nodata, r.nodata)
                and back.spec == r.spec):
            raster_ok += 1

    for i in range(50):
        store = nn.ParamStore()
        for j in range(int(rng.integers(1, 5))):
            shape = rng.integers(1, 5, size=int(rng.integers(1, 3))).tolist()
            t = store.add(f"p{j}.w", rng.normal(size=shape))
            t.grad = rng.normal(size=shape)
        nn.adam_step(store, lr=1e-3)
        extras = {"stamp": rng.normal(size=(2,))}
        p1, p2 = tmp_path / f"c{i}a.ckpt", tmp_path / f"c{i}b.ckpt"
        nn.save_checkpoint(store, p1, extras)
        loaded, extras_back = nn.load_checkpoint(p1)
        nn.save_checkpoint(loaded, p2, extras_back)
        if (hashlib.sha256(p1.read_bytes()).digest()
                == hashlib.sha256(p2.read_bytes()).digest()):
            checkpoint_ok += 1

    ok = raster_ok == 50 and checkpoint_ok == 50
    _verdict(9, ok, f"{raster_ok}/50 raster and {checkpoint_ok}/50 checkpoint "
                    f"roundtrips hash-identical after write-read-write")


# ---------------------------------------------------------------------------
# 10. end-to-end determinism


_SMALL = ["--set", "model.patch=8",
          "--set", "model.terrain_channels=2,3",
          "--set", "model.image_channels=2,3,4",
          "--set", "model.terrain_embed=3",
          "--set", "model.sar_embed=3",
          "--set", "model.spectral_embed=3",
          "--set", "model.lstm_hidden=4",
          "--set", "model.mlp_hidden=8,5",
          "--set", "train.max_steps=30",
          "--set", "train.eval_every=10",
          "--set", "train.batch_size=8"]


def test_criterion_10_pipeline_determinism(tmp_path):
    reports = []
    predictions = []
    for run in ("one", "two"):
        root = tmp_path / run
        data, run_dir, preds = root / "data", root / "run", root / "preds"
        report = root / "report.csv"
        assert cli.run(["synth", "--preset", "tiny", "--seed", "7",
                        "-o", str(data), "-q"]) == 0
        manifest = str(data / "manifest.csv")
        assert cli.run(["train", "--manifest", manifest, "-o", str(run_dir),
                        "-q", *_SMALL]) == 0
        assert cli.run(["predict", "--manifest", manifest,
                        "--checkpoint", str(run_dir / "best.ckpt"),
                        "-o", str(preds), "--split", "test", "-q"]) == 0
        assert cli.run(["evaluate", "--manifest", manifest,
                        "--predictions", str(preds), "--split", "test",
                        "--stations", str(data / "stations.csv"),
                        "-o", str(report), "-q"]) == 0
        reports.append(report.read_bytes())
        predictions.append((preds / "pred_basin00_2022-03-01.rst").read_bytes())
    ok = reports[0] == reports[1] and predictions[0] == predictions[1]
    _verdict(10, ok, f"two same-seed pipeline runs: report bytes "
                     f"identical={reports[0] == reports[1]}, prediction "
                     f"raster bytes identical={predictions[0] == predictions[1]}")
