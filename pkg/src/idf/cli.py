"""Command line entry point: ``idf {synth,train,eval,enhance,stats}``.

Settings come from dataclass defaults, then ``--config FILE`` (flat
``section.key=value`` lines), then command flags and ``--set key=value``.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from collections import Counter
from pathlib import Path

import numpy as np
import torch
from PIL import Image as PILImage

from . import data as data_mod
from .config import RunConfig, dump_config, load_config
from .curve_enhancer import enhance, estimate_curves
from .errors import IDFError, IngestionError
from .experiments import evaluate_model, prepare
from .image_core import channel_histogram, classify_illumination, classify_scale, from_uint8, read_rgb, to_uint8
from .retrieval import assemble_features, distance_matrix, dump_ranked_lists, random_baseline, write_metrics_csv
from .trainer import IDFModel, class_index, load_checkpoint, seed_everything, train

log = logging.getLogger("idf")
DEFAULTS = RunConfig()
IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".ppm"}


def _kv(text: str) -> tuple[str, str]:
    if "=" not in text:
        raise argparse.ArgumentTypeError(f"expected KEY=VALUE, got {text!r}")
    k, v = text.split("=", 1)
    return k.strip(), v.strip()


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("global options")
    g.add_argument("--config", metavar="PATH", help="key=value config file (default: none)")
    g.add_argument("--seed", type=int, metavar="N", help=f"random seed (default: {DEFAULTS.train.seed})")
    g.add_argument("--out", metavar="DIR", help="output directory (default: runs/default)")
    g.add_argument("--set", dest="overrides", action="append", type=_kv, default=[], metavar="KEY=VALUE",
                   help="override any config key, e.g. train.lr=0.01 (repeatable; default: none)")
    g.add_argument("-v", "--verbose", action="store_true", help="log progress (default: off)")

    parser = argparse.ArgumentParser(prog="idf", description="Illumination distillation for night-time person re-id.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="render the toy night-time corpus")
    p.add_argument("--identities", type=int, default=20, help="number of identities (default: 20)")
    p.add_argument("--images", type=int, default=10, help="images per identity per camera (default: 10)")
    p.add_argument("--cameras", type=int, default=4, help="number of cameras, >= 2 (default: 4)")
    p.add_argument("--gamma-min", type=float, default=2.0, help="lower gamma bound (default: 2.0)")
    p.add_argument("--gamma-max", type=float, default=5.0, help="upper gamma bound (default: 5.0)")

    t = DEFAULTS.train
    p = sub.add_parser("train", parents=[common], help="jointly train all branches")
    p.add_argument("--data", metavar="DIR", help="dataset directory with manifest.txt (default: data.dataset)")
    p.add_argument("--epochs", type=int, help=f"training epochs (default: {t.epochs})")
    p.add_argument("--lr", type=float, help=f"learning rate (default: {t.learning_rate})")
    p.add_argument("--batch-size", type=int, help=f"batch size (default: {t.batch_size})")
    p.add_argument("--variant", choices=("full", "mb", "mb+ieb"), help=f"model variant (default: {t.variant})")
    p.add_argument("--input-size", metavar="HxW", help="network input size (default: 256x128)")
    p.add_argument("--init", choices=("random", "zero"), default="random",
                   help="zero sets every parameter to 0, for baseline checks (default: random)")

    p = sub.add_parser("eval", parents=[common], help="rank the test split and report CMC/mAP")
    p.add_argument("--checkpoint", required=True, metavar="PATH", help="checkpoint file (required)")
    p.add_argument("--data", metavar="DIR", help="dataset directory (default: the one used in training)")
    p.add_argument("--metric", choices=("cosine", "euclidean"), help=f"distance (default: {t.metric})")
    p.add_argument("--dump-ranked", action="store_true", help="write top-10 gallery paths per query (default: off)")

    p = sub.add_parser("enhance", parents=[common], help="apply the trained curve estimator to images")
    p.add_argument("--checkpoint", required=True, metavar="PATH", help="checkpoint file (required)")
    p.add_argument("--input", required=True, metavar="DIR", help="directory of RGB images (required)")

    p = sub.add_parser("stats", parents=[common], help="illumination, scale and histogram statistics")
    p.add_argument("--data", metavar="DIR", help="dataset directory (default: data.dataset)")
    p.add_argument("--bins", type=int, default=16, help="histogram bins per channel (default: 16)")
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    overrides = dict(args.overrides)
    if args.seed is not None:
        overrides["train.seed"] = str(args.seed)
    if args.out is not None:
        overrides["out"] = args.out
    flag_keys = {"epochs": "train.epochs", "lr": "train.learning_rate", "batch_size": "train.batch_size",
                 "variant": "train.variant", "input_size": "model.input_size", "metric": "train.metric",
                 "data": "data.dataset"}
    for attr, key in flag_keys.items():
        value = getattr(args, attr, None)
        if value is not None:
            overrides[key] = str(value)
    return load_config(args.config, overrides)


def _require_dataset(cfg: RunConfig) -> str:
    if not cfg.data.dataset:
        raise IngestionError("no dataset given (use --data or data.dataset=...)")
    return cfg.data.dataset


def cmd_synth(args, cfg: RunConfig) -> int:
    recs = data_mod.synthesize(cfg.out, args.identities, args.images, args.cameras, seed=cfg.train.seed,
                               gamma_range=(args.gamma_min, args.gamma_max))
    print(f"wrote {len(recs)} images and {data_mod.MANIFEST_NAME} to {cfg.out}")
    return 0


def zero_parameters(model: torch.nn.Module) -> None:
    with torch.no_grad():
        for p in model.parameters():
            p.zero_()


def cmd_train(args, cfg: RunConfig) -> int:
    records = data_mod.load_records(_require_dataset(cfg), size=cfg.model.input_size)
    train_recs, split = prepare(records, cfg)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(dump_config(cfg))
    seed_everything(cfg.train.seed)
    model = IDFModel(cfg, len(class_index(train_recs)))
    if args.init == "zero":
        zero_parameters(model)
    result = train(train_recs, cfg, out, model=model)
    print(f"trained {cfg.train.epochs} epochs on {len(train_recs)} images; "
          f"checkpoints {result.final_checkpoint}, {result.best_checkpoint}; metrics {result.metrics_path}")
    return 0


def cmd_eval(args, cfg: RunConfig) -> int:
    model, ckpt_cfg, _ = load_checkpoint(args.checkpoint)
    # split, sizes and data come from training unless overridden on this command line
    ckpt_cfg.out = cfg.out
    if cfg.data.dataset:
        ckpt_cfg.data.dataset = cfg.data.dataset
    metric = args.metric or ckpt_cfg.train.metric
    records = data_mod.load_records(_require_dataset(ckpt_cfg), size=ckpt_cfg.model.input_size)
    _, split = prepare(records, ckpt_cfg)
    result = evaluate_model(model, split, metric)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    row = {**result.as_dict(), "metric": metric, "random_rank1": random_baseline(split)}
    write_metrics_csv(out / "eval_metrics.csv", [row])
    if args.dump_ranked:
        qf = assemble_features(model, data_mod.stack_images(split.query)).numpy()
        gf = assemble_features(model, data_mod.stack_images(split.gallery)).numpy()
        dump_ranked_lists(out / "ranked_lists.txt", split, distance_matrix(qf, gf, metric))
    print(result.table())
    return 0


def cmd_enhance(args, cfg: RunConfig) -> int:
    model, _, _ = load_checkpoint(args.checkpoint)
    src = Path(args.input)
    if not src.is_dir():
        raise IngestionError(f"input directory not found: {src}")
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    files = sorted(p for p in src.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    with torch.no_grad():
        for path in files:
            img = from_uint8(read_rgb(path))
            enhanced = enhance(img, estimate_curves(model.enhancer, img), check=False)
            PILImage.fromarray(to_uint8(enhanced.clamp(0, 1))).save(out / (path.stem + ".png"), format="PNG")
    print(f"enhanced {len(files)} images into {out}")
    return 0


def cmd_stats(args, cfg: RunConfig) -> int:
    root = _require_dataset(cfg)
    records = data_mod.load_records(root)
    partitions = {"all": records}
    try:
        train_recs, split = prepare(records, cfg)
        partitions.update(train=train_recs, query=split.query, gallery=split.gallery)
    except IDFError as exc:
        log.warning("no train/test partition statistics: %s", exc)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    illum_rows, scale_rows, hist_rows = [], [], []
    for name, recs in partitions.items():
        illum = Counter(classify_illumination(r.image).label for r in recs)
        scale = Counter(classify_scale(r).label for r in recs)
        for level in ("Low", "Medium", "High"):
            illum_rows.append((name, level, illum.get(level, 0)))
        for level in ("Small", "Medium", "Big"):
            scale_rows.append((name, level, scale.get(level, 0)))
        hist = sum((channel_histogram(r.image, args.bins) for r in recs), np.zeros((3, args.bins), dtype=np.int64))
        for c, ch in enumerate("RGB"):
            hist_rows.extend((name, ch, b, int(hist[c, b])) for b in range(args.bins))
    _write_rows(out / "illumination.csv", ("partition", "level", "count"), illum_rows)
    _write_rows(out / "scale.csv", ("partition", "level", "count"), scale_rows)
    _write_rows(out / "histogram.csv", ("partition", "channel", "bin", "count"), hist_rows)
    total = len(records)
    for name, level, count in illum_rows[:3]:
        print(f"{level:>6}: {count:6d} ({100 * count / total:5.1f}%)")
    return 0


def _write_rows(path: Path, header, rows) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "eval": cmd_eval, "enhance": cmd_enhance, "stats": cmd_stats}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](args, cfg)
    except IDFError as exc:
        print(f"idf {args.command}: {exc.category} error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"idf {args.command}: io error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
