#!/usr/bin/env python3
"""Generate the synthetic confounder dataset.

Example:
    python scripts/make_toy_data.py --n 400 --seed 1234 --out data/toy
"""

import argparse

from stma.data import generate_toy_dataset


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, default=400)
    ap.add_argument("--seed", type=int, default=1234)
    ap.add_argument("--out", required=True)
    args = ap.parse_args()
    manifest = generate_toy_dataset(args.n, seed=args.seed, out_dir=args.out)
    print(f"wrote {args.n} samples; manifest: {manifest}")


if __name__ == "__main__":
    main()
