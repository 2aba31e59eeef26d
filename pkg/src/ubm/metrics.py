"""Evaluation metrics for the three downstream tasks.

Classification and ranking metrics reduce to integer counts with a single
final division wherever the value is rational, so results are exactly
reproducible and comparable against brute-force references.
"""

from __future__ import annotations

import math

import numpy as np


def _confusion(preds: np.ndarray, labels: np.ndarray) -> tuple[int, int, int, int]:
    tp = int(np.sum((preds == 1) & (labels == 1)))
    tn = int(np.sum((preds == 0) & (labels == 0)))
    fp = int(np.sum((preds == 1) & (labels == 0)))
    fn = int(np.sum((preds == 0) & (labels == 1)))
    return tp, tn, fp, fn


def f1_score(preds: np.ndarray, labels: np.ndarray) -> float:
    tp, _, fp, fn = _confusion(preds, labels)
    denom = 2 * tp + fp + fn
    return 2 * tp / denom if denom else 0.0


def cohen_kappa(preds: np.ndarray, labels: np.ndarray) -> float:
    tp, tn, fp, fn = _confusion(preds, labels)
    n = tp + tn + fp + fn
    agree = n * (tp + tn)
    chance = (tp + fp) * (tp + fn) + (tn + fn) * (tn + fp)
    denom = n * n - chance
    return (agree - chance) / denom if denom else 0.0


def _midranks(values: np.ndarray) -> np.ndarray:
    """Ranks starting at 1; tied values share the mean of their positions."""
    order = np.argsort(values, kind="mergesort")
    ranks = np.empty(len(values), dtype=np.float64)
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and values[order[j + 1]] == values[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def auroc(scores: np.ndarray, labels: np.ndarray) -> float | None:
    """Rank-statistic AUROC with midrank tie handling; None when only one
    class is present (undefined, deliberately distinct from 0)."""
    labels = np.asarray(labels)
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    ranks = _midranks(np.asarray(scores, dtype=np.float64))
    pos_rank_sum = float(ranks[labels == 1].sum())
    return (pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def evaluate_pip(scores, labels, threshold: float = 0.5) -> dict:
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if not np.isin(labels, (0, 1)).all():
        raise ValueError("PIP labels must be 0 or 1")
    if scores.min() < 0 or scores.max() > 1:
        raise ValueError("PIP scores must lie in [0, 1]")
    preds = (scores >= threshold).astype(np.int64)
    n = len(labels)
    return {
        "accuracy": int((preds == labels).sum()) / n,
        "auroc": auroc(scores, labels),
        "f1": f1_score(preds, labels),
        "kappa": cohen_kappa(preds, labels),
    }


def evaluate_rlp(preds, labels) -> dict:
    preds = np.asarray(preds, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if labels.min() < 0:
        raise ValueError("RLP labels must be non-negative")
    err = preds - labels
    clamped = np.maximum(preds, 0.0)
    ss_tot = float(((labels - labels.mean()) ** 2).sum())
    r2 = None if ss_tot == 0.0 else 1.0 - float((err**2).sum()) / ss_tot
    return {
        "mae": float(np.abs(err).mean()),
        "mse": float((err**2).mean()),
        "msle": float(((np.log1p(clamped) - np.log1p(labels)) ** 2).mean()),
        "r2": r2,
    }


def nip_ranks(scores: np.ndarray, label_rows: np.ndarray) -> np.ndarray:
    """1-based rank of each example's label item under descending score,
    ties broken by candidate index (stable)."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(label_rows)
    n, m = scores.shape
    if labels.min() < 0 or labels.max() >= m:
        raise ValueError("label row outside the candidate pool")
    out = np.empty(n, dtype=np.int64)
    cols = np.arange(m)
    for i in range(n):
        s = scores[i]
        sl = s[labels[i]]
        out[i] = 1 + int((s > sl).sum()) + int(((s == sl) & (cols < labels[i])).sum())
    return out


def evaluate_nip(scores: np.ndarray, label_rows, ks=(10, 20), excluded: int = 0) -> dict:
    """hit@K and MRR@K from a (n, m) score matrix over the candidate pool.

    Reciprocal rank is 0 when the label falls outside the top K.
    ``excluded`` reports labels dropped upstream for missing pool entries.
    """
    ranks = nip_ranks(scores, label_rows)
    n = len(ranks)
    out: dict = {}
    for k in ks:
        hits = int((ranks <= k).sum())
        rr = [1.0 / r if r <= k else 0.0 for r in ranks]
        out[f"hit@{k}"] = hits / n
        out[f"mrr@{k}"] = math.fsum(rr) / n
    if excluded:
        out["excluded"] = excluded
    return out
