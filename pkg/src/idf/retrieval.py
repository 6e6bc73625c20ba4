"""Inference features, distances, query/gallery splits and CMC/mAP evaluation.

Gallery entries sharing both identity and camera with a query are removed
from that query's ranking (the usual cross-camera protocol).
"""

from __future__ import annotations

import csv
import logging
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .data import PersonRecord
from .distillation import fuse
from .errors import DimensionError, ParameterError, StateError
from .reid_branches import iebranch_forward

log = logging.getLogger(__name__)

METRICS = ("cosine", "euclidean")


def assemble_features(model, images: torch.Tensor, batch_size: int = 64) -> torch.Tensor:
    """Evaluation-mode features in fixed order: MB features, IEB features, fused code.

    Variants without a part simply omit its slice. Accepts (3,H,W) or (B,3,H,W).
    """
    if model is None:
        raise StateError("no trained model loaded")
    single = images.dim() == 3
    x = images.unsqueeze(0) if single else images
    was_training = model.training
    model.eval()
    chunks = []
    with torch.no_grad():
        for i in range(0, x.shape[0], batch_size):
            b = x[i:i + batch_size]
            f_mb = model.mbranch(b).features
            parts = [f_mb]
            if model.uses_ieb:
                f_ieb = iebranch_forward(model.enhancer, model.iebranch, b).features
                parts.append(f_ieb)
                if model.uses_idm:
                    parts.append(fuse(f_mb, f_ieb, model.idm).z_cf)
            chunks.append(torch.cat(parts, dim=1))
    model.train(was_training)
    out = torch.cat(chunks) if chunks else x.new_zeros((0, 0))
    return out[0] if single else out


def distance(a, b, metric: str = "cosine") -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"vector shapes differ: {a.shape} vs {b.shape}")
    if metric == "euclidean":
        return float(np.linalg.norm(a - b))
    if metric == "cosine":
        na, nb = np.linalg.norm(a), np.linalg.norm(b)
        if na == 0 or nb == 0:
            raise ParameterError("cosine distance is undefined for a zero vector")
        return float(1.0 - a @ b / (na * nb))
    raise ParameterError(f"unknown metric {metric!r}")


def distance_matrix(q: np.ndarray, g: np.ndarray, metric: str = "cosine") -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    if q.shape[1:] != g.shape[1:]:
        raise DimensionError(f"feature dimensions differ: {q.shape} vs {g.shape}")
    if metric == "euclidean":
        # row-wise differences rather than the |q|^2 + |g|^2 - 2qg expansion, which cancels badly
        return np.stack([np.linalg.norm(g - row, axis=1) for row in q]) if len(q) else np.zeros((0, len(g)))
    if metric == "cosine":
        nq, ng = np.linalg.norm(q, axis=1), np.linalg.norm(g, axis=1)
        if (nq == 0).any() or (ng == 0).any():
            raise ParameterError("cosine distance is undefined for a zero vector")
        return 1.0 - (q @ g.T) / (nq[:, None] * ng[None, :])
    raise ParameterError(f"unknown metric {metric!r}")


@dataclass
class RetrievalSplit:
    query: list[PersonRecord]
    gallery: list[PersonRecord]
    excluded_identities: list[int] = field(default_factory=list)


@dataclass
class EvalResult:
    rank1: float
    rank5: float
    rank10: float
    mAP: float
    cmc: np.ndarray
    n_queries: int
    n_skipped: int

    def as_dict(self) -> dict[str, float]:
        return {"rank1": self.rank1, "rank5": self.rank5, "rank10": self.rank10, "mAP": self.mAP,
                "n_queries": self.n_queries, "n_skipped": self.n_skipped}

    def table(self) -> str:
        return (f"{'R-1':>7} {'R-5':>7} {'R-10':>7} {'mAP':>7}  (queries {self.n_queries}, skipped {self.n_skipped})\n"
                f"{100 * self.rank1:7.2f} {100 * self.rank5:7.2f} {100 * self.rank10:7.2f} {100 * self.mAP:7.2f}")


def rank_query(dist_row: np.ndarray, q_id: int, q_cam: int, g_ids: np.ndarray, g_cams: np.ndarray):
    """Stable ascending ranking with same-identity-same-camera entries removed.

    Returns (ranked gallery indices, boolean match flags along the ranking).
    """
    order = np.argsort(dist_row, kind="stable")
    keep = ~((g_ids[order] == q_id) & (g_cams[order] == q_cam))
    order = order[keep]
    return order, g_ids[order] == q_id


def evaluate_arrays(dist: np.ndarray, q_ids, q_cams, g_ids, g_cams, max_rank: int = 10) -> EvalResult:
    q_ids, q_cams, g_ids, g_cams = map(np.asarray, (q_ids, q_cams, g_ids, g_cams))
    n_gallery = dist.shape[1]
    cmc = np.zeros(max(max_rank, n_gallery, 1))
    aps = []
    skipped = 0
    for i in range(dist.shape[0]):
        _, matches = rank_query(dist[i], q_ids[i], q_cams[i], g_ids, g_cams)
        hits = np.flatnonzero(matches)
        if hits.size == 0:
            skipped += 1
            continue
        cmc[hits[0]:] += 1
        precision = np.arange(1, hits.size + 1) / (hits + 1)
        aps.append(precision.mean())
    n_valid = len(aps)
    if n_valid:
        cmc /= n_valid
    if skipped:
        log.warning("%d queries had no valid cross-camera positive and were skipped", skipped)

    def at(k):
        return float(cmc[min(k, len(cmc)) - 1]) if n_valid else 0.0

    return EvalResult(at(1), at(5), at(10), float(np.mean(aps)) if aps else 0.0, cmc, n_valid, skipped)


def evaluate(split: RetrievalSplit, query_features, gallery_features, metric: str = "cosine") -> EvalResult:
    qf = np.asarray(query_features, dtype=np.float64)
    gf = np.asarray(gallery_features, dtype=np.float64)
    if len(qf) != len(split.query) or len(gf) != len(split.gallery):
        raise DimensionError("feature counts do not match the split")
    dist = distance_matrix(qf, gf, metric)
    return evaluate_arrays(dist, [r.identity for r in split.query], [r.camera for r in split.query],
                           [r.identity for r in split.gallery], [r.camera for r in split.gallery])


def random_baseline(split: RetrievalSplit) -> float:
    """Expected rank-1 of a uniformly random ranking: mean fraction of valid positives."""
    g_ids = np.array([r.identity for r in split.gallery])
    g_cams = np.array([r.camera for r in split.gallery])
    fractions = []
    for q in split.query:
        valid = ~((g_ids == q.identity) & (g_cams == q.camera))
        pos = (g_ids[valid] == q.identity).sum()
        if pos:
            fractions.append(pos / valid.sum())
    return float(np.mean(fractions)) if fractions else 0.0


def partition_identities(records: Sequence[PersonRecord], n_train: int | None, seed: int = 0):
    """Split records into disjoint train/test identity sets (first ``n_train`` sorted ids after a seeded shuffle)."""
    ids = sorted({r.identity for r in records})
    n_train = len(ids) // 2 if n_train is None else n_train
    if not 0 < n_train < len(ids):
        raise ParameterError(f"n_train must be in (0, {len(ids)}), got {n_train}")
    rng = np.random.default_rng(seed)
    chosen = set(np.asarray(ids)[rng.permutation(len(ids))[:n_train]].tolist())
    train = [r for r in records if r.identity in chosen]
    test = [r for r in records if r.identity not in chosen]
    return train, test


def build_split(records: Sequence[PersonRecord], probes_per_view: int = 3, seed: int = 0) -> RetrievalSplit:
    """Sample ``probes_per_view`` queries from every (identity, camera) group; the rest is gallery.

    Identities seen by a single camera are excluded. Groups smaller than
    ``probes_per_view`` contribute only gallery entries. The gallery order is
    shuffled under ``seed`` so distance ties do not favour file order.
    """
    if probes_per_view < 1:
        raise ParameterError("probes_per_view must be >= 1")
    rng = np.random.default_rng(seed)
    cams_by_id: dict[int, set[int]] = defaultdict(set)
    groups: dict[tuple[int, int], list[PersonRecord]] = defaultdict(list)
    for r in records:
        cams_by_id[r.identity].add(r.camera)
        groups[(r.identity, r.camera)].append(r)
    excluded = sorted(i for i, cams in cams_by_id.items() if len(cams) < 2)
    if excluded:
        log.warning("%d identities appear under a single camera and were excluded", len(excluded))
    query, gallery = [], []
    for key in sorted(groups):
        if key[0] in excluded:
            continue
        members = sorted(groups[key], key=lambda r: (r.frame, r.path))
        if len(members) >= probes_per_view:
            pick = set(rng.choice(len(members), size=probes_per_view, replace=False).tolist())
        else:
            pick = set()
        query.extend(m for i, m in enumerate(members) if i in pick)
        gallery.extend(m for i, m in enumerate(members) if i not in pick)
    gallery = [gallery[i] for i in rng.permutation(len(gallery))]
    return RetrievalSplit(query, gallery, excluded)


def write_metrics_csv(path: str | Path, rows: Sequence[dict]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0].keys()), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    return path


def dump_ranked_lists(path: str | Path, split: RetrievalSplit, dist: np.ndarray, top: int = 10) -> Path:
    """One line per query: query path followed by its top gallery paths."""
    g_ids = np.array([r.identity for r in split.gallery])
    g_cams = np.array([r.camera for r in split.gallery])
    lines = []
    for i, q in enumerate(split.query):
        order, _ = rank_query(dist[i], q.identity, q.camera, g_ids, g_cams)
        lines.append(",".join([q.path] + [split.gallery[j].path for j in order[:top]]))
    path = Path(path)
    path.write_text("\n".join(lines) + "\n")
    return path
