"""Rank-1 of MB-only, MB+IEB and the full model over several seeds on the toy corpus."""

import argparse
import csv
import logging
from pathlib import Path

import numpy as np

from idf.experiments import ablation, desk_config, load_dataset, toy_corpus


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--data", default="runs/toy40", help="corpus directory, rendered if missing (default: runs/toy40)")
    ap.add_argument("--seeds", type=int, default=3, help="number of training seeds (default: 3)")
    ap.add_argument("--epochs", type=int, default=30, help="epochs per run (default: 30)")
    ap.add_argument("--variants", default="mb,mb+ieb,full", help="comma-separated variants (default: mb,mb+ieb,full)")
    ap.add_argument("--out", default="runs/ablation.csv", help="result table (default: runs/ablation.csv)")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    cfg = desk_config(epochs=args.epochs)
    records = load_dataset(toy_corpus(args.data), cfg)
    scores = ablation(records, cfg, tuple(args.variants.split(",")), tuple(range(args.seeds)))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["variant", *[f"seed{s}" for s in range(args.seeds)], "mean"])
        for variant, vals in scores.items():
            w.writerow([variant, *vals, float(np.mean(vals))])
            print(f"{variant:>7}  mean rank-1 {np.mean(vals):.4f}  ({', '.join(f'{v:.4f}' for v in vals)})")


if __name__ == "__main__":
    main()
