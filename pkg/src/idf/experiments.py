"""Train-then-evaluate helpers shared by the CLI, scripts and acceptance tests."""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass
from pathlib import Path


from .config import RunConfig
from .data import PersonRecord, load_records, stack_images, synthesize
from .retrieval import (EvalResult, RetrievalSplit, assemble_features, build_split, evaluate,
                        partition_identities, random_baseline)
from .trainer import IDFModel, TrainResult, train

log = logging.getLogger(__name__)


@dataclass
class ExperimentResult:
    metrics: EvalResult
    baseline_rank1: float
    train_result: TrainResult
    split: RetrievalSplit


def prepare(records: list[PersonRecord], cfg: RunConfig):
    """Identity partition and query/gallery split, controlled by ``cfg.data``."""
    train_recs, test_recs = partition_identities(records, cfg.data.n_train_identities, cfg.data.split_seed)
    split = build_split(test_recs, cfg.data.probes_per_view, cfg.data.split_seed)
    return train_recs, split


def evaluate_model(model: IDFModel, split: RetrievalSplit, metric: str = "cosine") -> EvalResult:
    qf = assemble_features(model, stack_images(split.query))
    gf = assemble_features(model, stack_images(split.gallery))
    return evaluate(split, qf.numpy(), gf.numpy(), metric)


def run_experiment(records: list[PersonRecord], cfg: RunConfig, out_dir: str | Path | None = None) -> ExperimentResult:
    """``records`` must have images loaded at ``cfg.model.input_size``."""
    train_recs, split = prepare(records, cfg)
    result = train(train_recs, cfg, out_dir)
    metrics = evaluate_model(result.model, split, cfg.train.metric)
    return ExperimentResult(metrics, random_baseline(split), result, split)


def load_dataset(path: str | Path, cfg: RunConfig) -> list[PersonRecord]:
    return load_records(path, size=cfg.model.input_size)


def with_train(cfg: RunConfig, **changes) -> RunConfig:
    return dataclasses.replace(cfg, train=dataclasses.replace(cfg.train, **changes))


def with_distill(cfg: RunConfig, **changes) -> RunConfig:
    return dataclasses.replace(cfg, distill=dataclasses.replace(cfg.distill, **changes))


def desk_config(**train_overrides) -> RunConfig:
    """Reduced-size setting used by the acceptance experiments and scripts."""
    cfg = RunConfig()
    cfg.model = dataclasses.replace(cfg.model, input_size=(64, 32), enhancer_width=16)
    cfg.train = dataclasses.replace(cfg.train, **{"learning_rate": 0.01, "epochs": 30, **train_overrides})
    return cfg


def toy_corpus(out_dir: str | Path, seed: int = 0) -> Path:
    """40 identities, 4 cameras, 5 images per identity per camera (reused if already rendered)."""
    out = Path(out_dir)
    if not (out / "manifest.txt").is_file():
        synthesize(out, n_identities=40, images_per_identity=5, cameras=4, seed=seed)
    return out


def ablation(records: list[PersonRecord], base: RunConfig, variants=("mb", "mb+ieb", "full"),
             seeds=(0, 1, 2)) -> dict[str, list[float]]:
    """Rank-1 per training seed for each variant; the identity split stays fixed."""
    out: dict[str, list[float]] = {}
    for variant in variants:
        for seed in seeds:
            res = run_experiment(records, with_train(base, variant=variant, seed=seed))
            log.info("%s seed %d rank-1 %.4f", variant, seed, res.metrics.rank1)
            out.setdefault(variant, []).append(res.metrics.rank1)
    return out


def lambda_sweep(records: list[PersonRecord], base: RunConfig, values=(0.1, 0.5, 0.9)):
    """(lambda1, lambda2, ExperimentResult) for every pair in ``values`` x ``values``."""
    rows = []
    for l1 in values:
        for l2 in values:
            res = run_experiment(records, with_distill(with_train(base, variant="full"), lambda1=l1, lambda2=l2))
            log.info("lambda1 %.1f lambda2 %.1f rank-1 %.4f", l1, l2, res.metrics.rank1)
            rows.append((l1, l2, res))
    return rows
