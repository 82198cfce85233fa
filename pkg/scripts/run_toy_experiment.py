#!/usr/bin/env python3
"""End-to-end toy experiment: generate data, train the full model, score
the test split, and export one heatmap per class.

Example:
    python scripts/run_toy_experiment.py --work /tmp/stma-toy
"""

import argparse
import json
import sys
from pathlib import Path

from stma.cli import main as stma_main
from stma.data import generate_toy_dataset, load_manifest


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--work", required=True)
    ap.add_argument("--n", type=int, default=400)
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--epochs", type=int, default=20)
    args = ap.parse_args()

    work = Path(args.work)
    manifest = generate_toy_dataset(args.n, seed=1234, out_dir=work / "data")
    print(f"data: {manifest}")

    code = stma_main(["train", "--manifest", str(manifest),
                      "--out-dir", str(work / "run"), "--profile", "toy",
                      "--seed", str(args.seed),
                      "--epochs", str(args.epochs)])
    if code:
        sys.exit(code)

    final = json.loads((work / "run" / "metrics.final").read_text())
    print(f"test accuracy: {final['accuracy']:.4f}")

    ckpt = work / "run" / "model.ckpt"
    entries = load_manifest(manifest)
    positive = next(e for e in entries if e.label == 1)
    negative = next(e for e in entries if e.label == 0)
    for name, entry in (("positive", positive), ("negative", negative)):
        code = stma_main(["gradcam", "--checkpoint", str(ckpt),
                          "--image", entry.image_path,
                          "--caption", entry.caption,
                          "--out", str(work / f"heat_{name}.pgm")])
        if code:
            sys.exit(code)
    print(f"heatmaps under {work}")


if __name__ == "__main__":
    main()
