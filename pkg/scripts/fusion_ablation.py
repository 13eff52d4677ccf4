#!/usr/bin/env python3
"""Source-ablation experiment on a synthetic scene.

Trains the fused model plus one restricted model per input source on the
same scene and prints their test RMSE side by side.  With default settings
this reproduces the headline effect: no single source comes close to the
fusion of all five.

Example:

    python3 scripts/fusion_ablation.py --seed 3 --steps 1500
"""

import argparse
import sys
import time

import numpy as np

from snowfuse import model as mo
from snowfuse import synth as sy
from snowfuse import train as tr


def pooled_test_rmse(model, samples):
    preds = np.maximum(np.asarray(model.predict_batch(samples)), 0.0)
    targets = np.array([s.target_swe for s in samples])
    return float(np.sqrt(np.mean((preds - targets) ** 2)))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--preset", default="sierra-like", choices=sy.PRESETS)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--patch", type=int, default=8)
    ap.add_argument("--steps", type=int, default=1500)
    ap.add_argument("--batch-size", type=int, default=16)
    args = ap.parse_args(argv)

    print(f"generating {args.preset} scene (seed {args.seed}) ...")
    scene = sy.generate_scene(sy.preset(args.preset, seed=args.seed),
                              patch=args.patch)
    test = scene.dataset.subset("test")
    print(f"dataset: {len(scene.dataset.samples)} samples, "
          f"{len(test)} in the test split")

    cfg = tr.TrainConfig(batch_size=args.batch_size, max_steps=args.steps,
                         eval_every=150, seed=args.seed, patience=5,
                         eval_cap=256)
    base = mo.FusionConfig(patch=args.patch)

    scores = {}
    for name in mo.SOURCES + ("fused",):
        mcfg = base if name == "fused" else base.single_source(name)
        t0 = time.time()
        result = tr.train_model(scene.dataset, mcfg, cfg)
        scores[name] = pooled_test_rmse(result.model, test)
        print(f"  {name:<10s} test rmse {scores[name]:7.3f}   "
              f"(best step {result.best_step}, {time.time() - t0:.0f}s)")

    best_single = min(v for k, v in scores.items() if k != "fused")
    ratio = scores["fused"] / best_single
    print(f"\nfused {scores['fused']:.3f} vs best single {best_single:.3f} "
          f"-> ratio {ratio:.3f}")
    return 0 if ratio < 1.0 else 1


if __name__ == "__main__":
    sys.exit(main())
