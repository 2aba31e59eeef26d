"""Representation diagnostics and evaluation slicing.

Alignment: mean squared distance between positive-pair embeddings.
Uniformity: log-mean Gaussian potential over distinct embedding pairs.
Both operate on l2-normalized vectors, where alignment lives in [0, 4] and
uniformity in [-8, 0].  Also exports embeddings for external projection
tools and slices next-item metrics by label frequency in the training set.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .augment import MaskPolicy, action_item_token_mask, interaction_reorder
from .encoders import UbmParams, ubm_forward
from .metrics import evaluate_nip
from .rng import rng_for
from .sessions import Session, TokenLimits, Vocabulary, encode_session
from .synth import TaskDataset

AUGMENTATION_TAGS = ("action_item_mask", "reorder")


def _unit_rows(x: np.ndarray, name: str) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    norms = np.linalg.norm(x, axis=-1, keepdims=True)
    if np.any(norms == 0):
        raise ValueError(f"{name}: zero-norm embedding row")
    return x / norms


def alignment_loss(anchors: np.ndarray, positives: np.ndarray) -> float:
    """Mean squared Euclidean distance between normalized positive pairs."""
    anchors = np.atleast_2d(anchors)
    positives = np.atleast_2d(positives)
    if anchors.shape != positives.shape or anchors.shape[0] == 0:
        raise ValueError("alignment_loss needs equal, non-empty embedding sets")
    a = _unit_rows(anchors, "alignment_loss")
    p = _unit_rows(positives, "alignment_loss")
    return float(((a - p) ** 2).sum(axis=1).mean())


def uniformity_loss(embeddings: np.ndarray) -> float:
    """log E exp(-2 ||u - v||^2) over ordered distinct pairs of normalized
    rows; 0 when all embeddings coincide, approaching -8 for antipodal
    spread."""
    x = np.atleast_2d(embeddings)
    if x.shape[0] < 2:
        raise ValueError("uniformity_loss needs at least 2 embeddings")
    u = _unit_rows(x, "uniformity_loss")
    gram = u @ u.T
    sq_dists = np.clip(2.0 - 2.0 * gram, 0.0, None)
    off_diag = ~np.eye(len(u), dtype=bool)
    return float(np.log(np.exp(-2.0 * sq_dists[off_diag]).mean()))


@dataclass(frozen=True)
class AlignUniformReport:
    alignment_loss: float
    uniformity_loss: float
    sample_count: int
    augmentation: str

    def to_dict(self) -> dict:
        return {
            "alignment_loss": self.alignment_loss,
            "uniformity_loss": self.uniformity_loss,
            "sample_count": self.sample_count,
            "augmentation": self.augmentation,
        }


def session_embeddings(
    sessions: list[Session],
    params: UbmParams,
    vocab: Vocabulary,
    limits: TokenLimits,
    batch_size: int = 64,
) -> np.ndarray:
    encoded = [encode_session(s, vocab, limits) for s in sessions]
    rows = []
    for start in range(0, len(encoded), batch_size):
        _, h, _ = ubm_forward(encoded[start : start + batch_size], params, vocab, train=False)
        rows.append(h.data)
    return np.concatenate(rows, axis=0)


def align_uniform_report(
    params: UbmParams,
    sessions: list[Session],
    vocab: Vocabulary,
    limits: TokenLimits,
    augmentation: str = "action_item_mask",
    seed: int = 0,
    policy: MaskPolicy | None = None,
    batch_size: int = 64,
) -> AlignUniformReport:
    """Positive views come from the named augmentation; both diagnostics are
    computed on eval-mode session embeddings."""
    if augmentation not in AUGMENTATION_TAGS:
        raise ValueError(f"augmentation must be one of {AUGMENTATION_TAGS}")
    if not sessions:
        raise ValueError("align_uniform_report needs at least one session")
    policy = policy or MaskPolicy()
    rng = rng_for(seed, f"analysis.augment.{augmentation}")
    encoded = [encode_session(s, vocab, limits) for s in sessions]
    if augmentation == "action_item_mask":
        views = [action_item_token_mask(es, policy, vocab, rng) for es in encoded]
    else:
        views = [interaction_reorder(es, rng) for es in encoded]

    anchors, positives = [], []
    for start in range(0, len(encoded), batch_size):
        _, h, _ = ubm_forward(encoded[start : start + batch_size], params, vocab, train=False)
        _, hv, _ = ubm_forward(views[start : start + batch_size], params, vocab, train=False)
        anchors.append(h.data)
        positives.append(hv.data)
    a = np.concatenate(anchors, axis=0)
    p = np.concatenate(positives, axis=0)
    return AlignUniformReport(
        alignment_loss=alignment_loss(a, p),
        uniformity_loss=uniformity_loss(a),
        sample_count=len(sessions),
        augmentation=augmentation,
    )


def export_embeddings(
    params: UbmParams,
    sessions: list[Session],
    vocab: Vocabulary,
    limits: TokenLimits,
    path,
) -> int:
    """CSV of session embeddings: header row, one row per session, embedding
    values at full round-trip precision."""
    emb = session_embeddings(sessions, params, vocab, limits)
    d = emb.shape[1]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["session_id"] + [f"e{i}" for i in range(d)])
        for s, row in zip(sessions, emb):
            writer.writerow([s.session_id] + [repr(float(v)) for v in row])
    return len(sessions)


@dataclass
class SparsityGroup:
    """Test examples whose label item occurred in [low, high) training
    examples."""

    low: int
    high: float
    count: int
    metrics: dict | None

    def to_dict(self) -> dict:
        return {
            "range": [self.low, None if self.high == float("inf") else self.high],
            "count": self.count,
            "metrics": self.metrics,
        }


def sparsity_report(
    params: UbmParams,
    test_ds: TaskDataset,
    pool,
    train_counts: dict[str, int],
    group_edges: list[int],
    vocab: Vocabulary,
    limits: TokenLimits,
    ks=(10, 20),
) -> list[SparsityGroup]:
    """Bucket next-item test examples by training-frequency of their label
    and evaluate each bucket separately."""
    from .tasks import predict

    labels = [ex.label for ex in test_ds.examples]
    missing = sorted({l for l in labels if l not in train_counts})
    if missing:
        raise KeyError(f"train_counts missing item ids: {missing[:5]}")
    edges = sorted(set(int(e) for e in group_edges))
    bounds = list(zip(edges, edges[1:] + [float("inf")]))

    scores = predict("nip", test_ds, params, vocab, limits, pool=pool)
    rows = pool.rows_for(labels)
    counts = np.array([train_counts[l] for l in labels])

    groups = []
    for low, high in bounds:
        sel = (counts >= low) & (counts < high)
        if not sel.any():
            groups.append(SparsityGroup(low, high, 0, None))
            continue
        metrics = evaluate_nip(scores[sel], rows[sel], ks=ks)
        groups.append(SparsityGroup(low, high, int(sel.sum()), metrics))
    return groups
