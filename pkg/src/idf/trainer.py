"""Joint end-to-end training of the two branches and the distillation module.

The objective per batch is

    L_IEB + L_MB + L_IDM
      = id_ieb + dce + id_mb + id_idm + lambda1 * rec + lambda2 * ifd
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np
import torch
from torch import nn

from .config import RunConfig, TrainConfig
from .curve_enhancer import CurveEstimator, enhance, estimate_curves
from .data import PersonRecord, stack_images
from .enhancement_losses import loss_dce
from .distillation import FusionState, IDModule, fuse, idm_loss_terms
from .errors import ContractViolation, DimensionError, IngestionError, ParameterError, StateError
from .reid_branches import Branch, iebranch_forward, iebranch_loss, mbranch_loss

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "idf-checkpoint"
CHECKPOINT_VERSION = 1
METRIC_COLUMNS = ("step", "epoch", "total", "l_id_mb", "l_id_ieb", "l_id_idm", "l_dce", "l_rec", "l_ifd",
                  "l_spa", "l_exp", "l_tva", "l_col")
GROUPS = ("enhancer", "mbranch", "iebranch", "idm")


class IDFModel(nn.Module):
    """All trainable parts. ``variant`` selects which are used:

    * ``full``   -- both branches plus the distillation module
    * ``mb``     -- master branch only
    * ``mb+ieb`` -- both branches, features concatenated, no distillation module
    """

    def __init__(self, cfg: RunConfig, num_classes: int):
        super().__init__()
        m = cfg.model
        self.variant = cfg.train.variant
        self.num_classes = num_classes
        self.enhancer = CurveEstimator(m.n_iter, m.enhancer_width, m.enhancer_init_std, m.zero_init_enhancer_head)
        self.mbranch = Branch(m, num_classes)
        self.iebranch = Branch(m, num_classes)
        self.idm = IDModule.from_config(m, num_classes)

    @property
    def uses_ieb(self) -> bool:
        return self.variant in ("full", "mb+ieb")

    @property
    def uses_idm(self) -> bool:
        return self.variant == "full"

    def group(self, name: str) -> nn.Module:
        return getattr(self, name)

    def active_parameters(self) -> list[tuple[str, nn.Parameter]]:
        names = ["mbranch"] + (["enhancer", "iebranch"] if self.uses_ieb else []) + (["idm"] if self.uses_idm else [])
        return [(f"{g}.{n}", p) for g in GROUPS if g in names for n, p in self.group(g).named_parameters()]


@dataclass
class ForwardOutput:
    mb: object
    ieb: object | None = None
    fusion: FusionState | None = None
    p_idm: torch.Tensor | None = None


def forward(model: IDFModel, images: torch.Tensor) -> ForwardOutput:
    out = ForwardOutput(mb=model.mbranch(images))
    if model.uses_ieb:
        out.ieb = iebranch_forward(model.enhancer, model.iebranch, images)
    if model.uses_idm:
        out.fusion = fuse(out.mb.features, out.ieb.features, model.idm)
        out.p_idm = model.idm.classify(out.fusion.z_cf)
    return out


@dataclass
class LossBreakdown:
    """Unweighted components; ``total`` = weighted sum (see :meth:`recombine`)."""

    total: torch.Tensor
    l_id_mb: torch.Tensor
    l_id_ieb: torch.Tensor
    l_id_idm: torch.Tensor
    l_dce: torch.Tensor
    l_rec: torch.Tensor
    l_ifd: torch.Tensor
    l_spa: torch.Tensor
    l_exp: torch.Tensor
    l_tva: torch.Tensor
    l_col: torch.Tensor
    lambda1: float
    lambda2: float

    def recombine(self) -> float:
        r = self.row()
        return (r["l_id_mb"] + r["l_id_ieb"] + r["l_dce"] + r["l_id_idm"]
                + self.lambda1 * r["l_rec"] + self.lambda2 * r["l_ifd"])

    def row(self) -> dict[str, float]:
        return {f.name: float(torch.as_tensor(getattr(self, f.name)).detach()) for f in fields(self) if f.name.startswith(("l_", "total"))}


def total_loss(model: IDFModel, images: torch.Tensor, labels: torch.Tensor, cfg: RunConfig,
               teacher: torch.Tensor | None = None) -> LossBreakdown:
    """Full objective on one batch.

    ``teacher`` replaces the distillation module's output in the KL term only;
    since that term never differentiates through the teacher, finite-difference
    checks must hold it fixed to compare against autograd.
    """
    if images.dim() != 4 or images.shape[0] == 0:
        raise ParameterError("total_loss needs a non-empty batch of images (B, 3, H, W)")
    labels = torch.as_tensor(labels, dtype=torch.long)
    if labels.shape[0] != images.shape[0]:
        raise DimensionError(f"{images.shape[0]} images but {labels.shape[0]} labels")
    out = forward(model, images)
    zero = images.new_zeros(())
    l_mb = mbranch_loss(out.mb, labels)
    l_id_ieb = l_dce = l_spa = l_exp = l_tva = l_col = zero
    l_id_idm = l_rec = l_ifd = zero
    total = l_mb
    if out.ieb is not None:
        l_ieb, l_id_ieb, dce = iebranch_loss(images, out.ieb, labels, cfg.loss)
        l_dce, l_spa, l_exp, l_tva, l_col = dce.total, dce.spa, dce.exp, dce.tva, dce.col
        total = total + l_ieb
    if out.fusion is not None:
        idm = idm_loss_terms(out.p_idm, labels, out.fusion, out.p_idm if teacher is None else teacher,
                             [out.mb.probs, out.ieb.probs], cfg.distill)
        l_id_idm, l_rec, l_ifd = idm.id, idm.rec, idm.ifd
        total = total + idm.total
    return LossBreakdown(total, l_mb, l_id_ieb, l_id_idm, l_dce, l_rec, l_ifd, l_spa, l_exp, l_tva, l_col,
                         cfg.distill.lambda1, cfg.distill.lambda2)


# ---------------------------------------------------------------------------
# optimiser


def sgd_step(params: Sequence[torch.Tensor], grads: Sequence[torch.Tensor | None],
             velocity: list[torch.Tensor | None], cfg: TrainConfig) -> Sequence[torch.Tensor]:
    """Classical momentum with coupled weight decay, in place.

    v <- momentum * v + (g + weight_decay * theta);  theta <- theta - lr * v.
    ``velocity`` holds one buffer per parameter (None means zero) and is updated.
    """
    if not len(params) == len(grads) == len(velocity):
        raise DimensionError("params, grads and velocity must have the same length")
    with torch.no_grad():
        for i, (p, g) in enumerate(zip(params, grads)):
            if g is None:
                continue
            if g.shape != p.shape:
                raise DimensionError(f"gradient shape {tuple(g.shape)} != parameter shape {tuple(p.shape)}")
            d = g + cfg.weight_decay * p if cfg.weight_decay else g.clone()
            v = velocity[i]
            velocity[i] = d if v is None else v.mul_(cfg.momentum).add_(d)
            p.sub_(cfg.learning_rate * velocity[i])
    return params


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path: str | Path, model: IDFModel, cfg: RunConfig, classes: Sequence[int],
                    epoch: int, velocity: dict[str, torch.Tensor] | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    blob = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": cfg.to_dict(),
        "classes": list(classes),
        "epoch": epoch,
        "seed": cfg.train.seed,
        "state": {g: model.group(g).state_dict() for g in GROUPS},
        "optimizer": {"velocity": dict(velocity or {})},
    }
    torch.save(blob, path)
    return path


def load_checkpoint(path: str | Path) -> tuple[IDFModel, RunConfig, dict]:
    path = Path(path)
    if not path.is_file():
        raise StateError(f"checkpoint not found: {path}")
    try:
        blob = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as exc:  # torch raises a variety of unpickling errors
        raise StateError(f"cannot read checkpoint {path}: {exc}") from exc
    if not isinstance(blob, dict) or blob.get("format") != CHECKPOINT_FORMAT:
        raise StateError(f"{path} is not an idf checkpoint")
    if blob.get("version") != CHECKPOINT_VERSION:
        raise StateError(f"{path}: unsupported checkpoint version {blob.get('version')}")
    cfg = RunConfig.from_dict(blob["config"])
    model = IDFModel(cfg, len(blob["classes"]))
    for g in GROUPS:
        model.group(g).load_state_dict(blob["state"][g])
    model.eval()
    return model, cfg, blob


# ---------------------------------------------------------------------------
# training loop


def seed_everything(seed: int) -> None:
    torch.manual_seed(seed)
    np.random.seed(seed % (2**32))
    torch.use_deterministic_algorithms(True)


def class_index(records: Iterable[PersonRecord]) -> list[int]:
    return sorted({r.identity for r in records})


def batches(n: int, batch_size: int, seed: int, epoch: int) -> list[torch.Tensor]:
    """Uniform shuffle per epoch; a trailing batch with fewer than 2 items is dropped."""
    g = torch.Generator().manual_seed(seed * 100_003 + epoch)
    perm = torch.randperm(n, generator=g)
    out = [perm[i:i + batch_size] for i in range(0, n, batch_size)]
    return [b for b in out if len(b) >= 2]


def _format(v: float) -> str:
    return repr(float(v))


@dataclass
class TrainResult:
    model: IDFModel
    classes: list[int]
    final_checkpoint: Path | None
    best_checkpoint: Path | None
    metrics_path: Path | None
    epoch_losses: list[float]


def train(records: list[PersonRecord], cfg: RunConfig, out_dir: str | Path | None = None,
          model: IDFModel | None = None, progress: Callable[[int, float], None] | None = None) -> TrainResult:
    """Train on ``records`` (images already loaded at ``cfg.model.input_size``).

    Writes ``metrics.csv``, ``final.pt`` and ``best.pt`` (lowest mean epoch loss) to ``out_dir``.
    """
    if not records or any(r.image is None for r in records):
        raise IngestionError("training records must be non-empty with images loaded")
    classes = class_index(records)
    if len(classes) < 2:
        raise ParameterError("training needs at least two identities")
    tc = cfg.train
    seed_everything(tc.seed)
    if model is None:
        model = IDFModel(cfg, len(classes))
    images = stack_images(records)
    lookup = {c: i for i, c in enumerate(classes)}
    labels = torch.tensor([lookup[r.identity] for r in records])

    named = model.active_parameters()
    params = [p for _, p in named]
    velocity: list[torch.Tensor | None] = [None] * len(params)

    out = Path(out_dir) if out_dir is not None else None
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(METRIC_COLUMNS)
    step, best, epoch_losses = 0, math.inf, []
    final_ckpt = best_ckpt = metrics_path = None

    def snapshot(name: str, epoch: int) -> Path | None:
        if out is None:
            return None
        vel = {n: v for (n, _), v in zip(named, velocity) if v is not None}
        return save_checkpoint(out / name, model, cfg, classes, epoch, vel)

    for epoch in range(tc.epochs):
        model.train()
        running = []
        for idx in batches(len(records), tc.batch_size, tc.seed, epoch):
            br = total_loss(model, images[idx], labels[idx], cfg)
            if not torch.isfinite(br.total):
                raise ContractViolation(f"non-finite loss at step {step}")
            grads = torch.autograd.grad(br.total, params, allow_unused=True)
            sgd_step(params, grads, velocity, tc)
            row = br.row()
            writer.writerow([step, epoch] + [_format(row[c]) for c in METRIC_COLUMNS[2:]])
            running.append(row["total"])
            step += 1
        mean_loss = float(np.mean(running)) if running else math.nan
        epoch_losses.append(mean_loss)
        log.info("epoch %d loss %.4f", epoch, mean_loss)
        if progress is not None:
            progress(epoch, mean_loss)
        if mean_loss < best:
            best = mean_loss
            best_ckpt = snapshot("best.pt", epoch)
    model.eval()
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        metrics_path = out / "metrics.csv"
        metrics_path.write_text(buf.getvalue())
        final_ckpt = snapshot("final.pt", tc.epochs)
        if best_ckpt is None:
            best_ckpt = snapshot("best.pt", tc.epochs)
    return TrainResult(model, classes, final_ckpt, best_ckpt, metrics_path, epoch_losses)


def train_enhancer(images: torch.Tensor, cfg: RunConfig, steps: int,
                   enhancer: CurveEstimator | None = None) -> tuple[CurveEstimator, list[float]]:
    """Fit the curve estimator alone on the enhancement loss for ``steps`` SGD updates.

    Batches cycle through seeded per-epoch permutations of ``images`` (B, 3, H, W).
    """
    if images.dim() != 4 or images.shape[0] < 2:
        raise DimensionError(f"expected a stack of at least two images, got {tuple(images.shape)}")
    tc = cfg.train
    seed_everything(tc.seed)
    if enhancer is None:
        m = cfg.model
        enhancer = CurveEstimator(m.n_iter, m.enhancer_width, m.enhancer_init_std, m.zero_init_enhancer_head)
    params = list(enhancer.parameters())
    velocity: list[torch.Tensor | None] = [None] * len(params)
    bs = min(tc.batch_size, images.shape[0])
    losses: list[float] = []
    epoch = 0
    enhancer.train()
    while len(losses) < steps:
        for idx in batches(images.shape[0], bs, tc.seed, epoch):
            if len(losses) == steps:
                break
            x = images[idx]
            maps = estimate_curves(enhancer, x)
            loss = loss_dce(x, enhance(x, maps, check=False), maps, cfg.loss)
            if not torch.isfinite(loss):
                raise ContractViolation(f"non-finite enhancement loss at step {len(losses)}")
            sgd_step(params, torch.autograd.grad(loss, params), velocity, tc)
            losses.append(float(loss.detach()))
        epoch += 1
    enhancer.eval()
    return enhancer, losses


# ---------------------------------------------------------------------------
# finite-difference gradient checking


@dataclass
class GradCheckReport:
    max_rel_error: float
    max_abs_error: float
    n_checked: int
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tolerance


def grad_check(loss_fn: Callable[[], torch.Tensor], params: Sequence[torch.Tensor], tolerance: float = 1e-3,
               *, n_coords: int = 24, step: float = 1e-4, seed: int = 0, floor: float = 1e-6,
               analytic: Sequence[torch.Tensor] | None = None) -> GradCheckReport:
    """Compare autograd gradients of ``loss_fn()`` to central differences.

    ``n_coords`` coordinates are sampled uniformly from all of ``params``.
    The relative error of a coordinate is ``|a - n| / max(|a|, |n|, floor)``.
    Pass ``analytic`` to check externally supplied gradients instead of autograd's.
    """
    params = list(params)
    loss = loss_fn()
    if not torch.isfinite(loss):
        raise ContractViolation("loss is not finite")
    if analytic is None:
        analytic = torch.autograd.grad(loss, params, allow_unused=True)
    analytic = [torch.zeros_like(p) if g is None else g.detach() for p, g in zip(params, analytic)]
    sizes = np.array([p.numel() for p in params])
    rng = np.random.default_rng(seed)
    flat = rng.choice(sizes.sum(), size=min(n_coords, int(sizes.sum())), replace=False)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    max_rel = max_abs = 0.0
    for k in flat:
        i = int(np.searchsorted(offsets, k, side="right") - 1)
        j = int(k - offsets[i])
        p = params[i].data.view(-1)
        orig = p[j].item()
        with torch.no_grad():
            p[j] = orig + step
            up = loss_fn()
            p[j] = orig - step
            down = loss_fn()
            p[j] = orig
        if not (torch.isfinite(up) and torch.isfinite(down)):
            raise ContractViolation("loss is not finite under perturbation")
        numeric = (up.item() - down.item()) / (2 * step)
        a = analytic[i].reshape(-1)[j].item()
        err = abs(a - numeric)
        max_abs = max(max_abs, err)
        max_rel = max(max_rel, err / max(abs(a), abs(numeric), floor))
    return GradCheckReport(max_rel, max_abs, len(flat), tolerance)
