"""Train the curve estimator alone on the enhancement loss over a dark corpus and report the output level."""

import argparse
import logging

import numpy as np
import torch

from idf.curve_enhancer import enhance, estimate_curves
from idf.data import load_records, stack_images, synthesize
from idf.experiments import desk_config
from idf.image_core import mean_lightness
from idf.trainer import train_enhancer


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--data", default="runs/dark", help="output directory for the dark corpus (default: runs/dark)")
    ap.add_argument("--steps", type=int, default=200, help="SGD steps (default: 200)")
    ap.add_argument("--gamma-min", type=float, default=4.5, help="lower gamma bound (default: 4.5)")
    ap.add_argument("--gamma-max", type=float, default=7.0, help="upper gamma bound (default: 7.0)")
    ap.add_argument("--seed", type=int, default=0, help="seed (default: 0)")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    synthesize(args.data, 8, 4, 2, seed=args.seed, gamma_range=(args.gamma_min, args.gamma_max))
    cfg = desk_config(batch_size=8, seed=args.seed)
    recs = load_records(args.data, size=cfg.model.input_size)
    images = stack_images(recs)
    print(f"input mean lightness {np.mean([mean_lightness(r.image) for r in recs]):.1f}, "
          f"mean intensity {images.mean().item():.3f}")
    enhancer, losses = train_enhancer(images, cfg, args.steps)
    with torch.no_grad():
        out = enhance(images, estimate_curves(enhancer, images), check=False)
    print(f"loss {losses[0]:.4f} -> {losses[-1]:.4f}; enhanced mean intensity {out.mean().item():.3f}")


if __name__ == "__main__":
    main()
