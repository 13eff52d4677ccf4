#!/usr/bin/env python3
"""End-to-end smoke run of the command-line pipeline.

Generates a small synthetic dataset, trains a reduced model on it,
predicts the test flights, evaluates against truth and stations, smooths
one prediction, and renders the diagnostic figures, all through the same
entry point the installed ``snowfuse`` command uses.  Everything lands
under --out.

    python3 scripts/smoke_pipeline.py --out /tmp/swe-smoke
"""

import argparse
import pathlib
import sys

from snowfuse import cli

SMALL_MODEL = ["--set", "model.patch=8",
               "--set", "model.terrain_channels=2,3",
               "--set", "model.image_channels=2,3,4",
               "--set", "model.terrain_embed=3",
               "--set", "model.sar_embed=3",
               "--set", "model.spectral_embed=3",
               "--set", "model.lstm_hidden=4",
               "--set", "model.mlp_hidden=8,5"]

FAST_TRAIN = ["--set", "train.max_steps=200",
              "--set", "train.eval_every=25",
              "--set", "train.batch_size=8",
              "--set", "train.patience=50"]


def step(argv):
    print(f"$ snowfuse {' '.join(argv)}")
    code = cli.run(argv)
    if code != 0:
        print(f"step failed with exit code {code}", file=sys.stderr)
        raise SystemExit(code)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", required=True, help="working directory")
    ap.add_argument("--seed", type=int, default=1)
    args = ap.parse_args(argv)

    root = pathlib.Path(args.out)
    data, run, preds, figs = (root / "data", root / "run",
                              root / "predictions", root / "figures")
    manifest = str(data / "manifest.csv")

    step(["synth", "--preset", "tiny", "--seed", str(args.seed), "-o", str(data)])
    step(["train", "--manifest", manifest, "-o", str(run),
          *SMALL_MODEL, *FAST_TRAIN])
    step(["predict", "--manifest", manifest,
          "--checkpoint", str(run / "best.ckpt"),
          "--split", "test", "-o", str(preds)])
    step(["evaluate", "--manifest", manifest, "--predictions", str(preds),
          "--split", "test", "--stations", str(data / "stations.csv"),
          "-o", str(root / "report.csv")])
    pred_files = sorted(preds.glob("pred_*.rst"))
    step(["smooth", "--input", str(pred_files[0]), "--sigma", "1.0",
          "-o", str(root / "smoothed.rst")])
    step(["plot", "--report", str(root / "report.csv"), "--manifest", manifest,
          "--predictions", str(preds), "--split", "test", "-o", str(figs)])

    print(f"\nall steps finished; outputs under {root}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
