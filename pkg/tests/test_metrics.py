import math
from fractions import Fraction

import numpy as np
import pytest

from ubm.metrics import auroc, cohen_kappa, evaluate_nip, evaluate_pip, evaluate_rlp, f1_score, nip_ranks
from ubm.rng import rng_for

# ---------------------------------------------------------------------------
# brute-force reference implementations (independent oracles)


def auroc_pairwise(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    if not pos or not neg:
        return None
    wins = Fraction(0)
    for p in pos:
        for q in neg:
            if p > q:
                wins += 1
            elif p == q:
                wins += Fraction(1, 2)
    return float(wins / (len(pos) * len(neg)))


def f1_exhaustive(preds, labels):
    tp = sum(1 for p, y in zip(preds, labels) if p == 1 and y == 1)
    fp = sum(1 for p, y in zip(preds, labels) if p == 1 and y == 0)
    fn = sum(1 for p, y in zip(preds, labels) if p == 0 and y == 1)
    if 2 * tp + fp + fn == 0:
        return 0.0
    return float(Fraction(2 * tp, 2 * tp + fp + fn))


def kappa_exhaustive(preds, labels):
    n = len(labels)
    tp = sum(1 for p, y in zip(preds, labels) if p == 1 and y == 1)
    tn = sum(1 for p, y in zip(preds, labels) if p == 0 and y == 0)
    fp = sum(1 for p, y in zip(preds, labels) if p == 1 and y == 0)
    fn = sum(1 for p, y in zip(preds, labels) if p == 0 and y == 1)
    po = Fraction(tp + tn, n)
    pe = Fraction((tp + fp) * (tp + fn) + (tn + fn) * (tn + fp), n * n)
    if pe == 1:
        return 0.0
    return float((po - pe) / (1 - pe))


def ranks_bruteforce(scores, labels):
    out = []
    for row, label in zip(scores, labels):
        target = row[label]
        rank = 1
        for j, s in enumerate(row):
            if s > target or (s == target and j < label):
                rank += 1
        out.append(rank)
    return out


def mrr_bruteforce(scores, labels, k):
    rrs = [1.0 / r if r <= k else 0.0 for r in ranks_bruteforce(scores, labels)]
    return math.fsum(rrs) / len(rrs)


def hit_bruteforce(scores, labels, k):
    ranks = ranks_bruteforce(scores, labels)
    return sum(1 for r in ranks if r <= k) / len(ranks)


# ---------------------------------------------------------------------------


class TestPip:
    def test_perfect_separation_auroc_one(self):
        m = evaluate_pip([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0])
        assert m["auroc"] == 1.0

    def test_exact_predictions_kappa_one(self):
        m = evaluate_pip([0.9, 0.1, 0.8, 0.2], [1, 0, 1, 0])
        assert m["kappa"] == 1.0

    def test_constant_predictions_kappa_zero(self):
        m = evaluate_pip([0.9, 0.9, 0.9], [1, 0, 1])
        assert m["kappa"] == 0.0

    def test_hand_computed_confusion(self):
        # preds at 0.5: [1, 1, 0]; tp=1 fp=1 fn=0 tn=1
        m = evaluate_pip([0.9, 0.8, 0.3], [1, 0, 0])
        assert m["accuracy"] == pytest.approx(2 / 3)
        assert m["f1"] == pytest.approx(2 / 3)

    def test_one_class_auroc_undefined(self):
        m = evaluate_pip([0.9, 0.8], [1, 1])
        assert m["auroc"] is None

    def test_label_validation(self):
        with pytest.raises(ValueError, match="labels"):
            evaluate_pip([0.5], [2])
        with pytest.raises(ValueError, match="scores"):
            evaluate_pip([1.5], [1])

    def test_threshold_monotonicity_recall_never_increases(self):
        rng = rng_for(0, "metrics.thresh")
        scores = rng.random(200)
        labels = (rng.random(200) < 0.4).astype(int)
        prev_recall = 1.0
        for thr in np.linspace(0.0, 1.0, 21):
            preds = (scores >= thr).astype(int)
            tp = int(((preds == 1) & (labels == 1)).sum())
            fn = int(((preds == 0) & (labels == 1)).sum())
            recall = tp / (tp + fn)
            assert recall <= prev_recall + 1e-12
            prev_recall = recall


class TestMetricOracles:
    def test_hundred_random_instances(self):
        rng = rng_for(1, "metrics.oracle")
        for trial in range(100):
            n = int(rng.integers(3, 20))
            # quantized scores force tie handling through the midrank path
            scores = np.round(rng.random(n), 1)
            labels = (rng.random(n) < 0.5).astype(int)
            if labels.min() == labels.max():
                labels[0] = 1 - labels[0]
            preds = (scores >= 0.5).astype(int)
            assert f1_score(preds, labels) == f1_exhaustive(preds, labels)
            assert cohen_kappa(preds, labels) == kappa_exhaustive(preds, labels)
            got = auroc(scores, labels)
            want = auroc_pairwise(scores.tolist(), labels.tolist())
            assert got == pytest.approx(want, abs=1e-9)

    def test_mrr_and_hit_match_bruteforce(self):
        rng = rng_for(2, "metrics.oracle.nip")
        for trial in range(100):
            n = int(rng.integers(2, 8))
            m = int(rng.integers(3, 30))
            scores = np.round(rng.random((n, m)), 1)
            labels = rng.integers(0, m, size=n)
            got = evaluate_nip(scores, labels, ks=(10, 20))
            assert got["hit@10"] == hit_bruteforce(scores, labels, 10)
            assert got["hit@20"] == hit_bruteforce(scores, labels, 20)
            assert got["mrr@10"] == mrr_bruteforce(scores, labels, 10)
            assert got["mrr@20"] == mrr_bruteforce(scores, labels, 20)


class TestRlp:
    def test_perfect_fit(self):
        m = evaluate_rlp([1.0, 2.0, 5.0], [1.0, 2.0, 5.0])
        assert m["mae"] == m["mse"] == m["msle"] == 0.0
        assert m["r2"] == 1.0

    def test_constant_mean_predictor_r2_zero(self):
        y = np.array([1.0, 4.0, 7.0, 2.0])
        m = evaluate_rlp(np.full(4, y.mean()), y)
        assert abs(m["r2"]) < 1e-3

    def test_hand_values(self):
        m = evaluate_rlp([1.0, 3.0], [2.0, 2.0])
        assert m["mae"] == 1.0
        assert m["mse"] == 1.0
        assert m["r2"] is None  # zero-variance targets

    def test_constant_at_mean_minimizes_mse_among_constants(self):
        y = np.array([2.0, 3.0, 10.0, 1.0])
        best = evaluate_rlp(np.full(4, y.mean()), y)["mse"]
        for c in np.linspace(0, 12, 49):
            assert evaluate_rlp(np.full(4, c), y)["mse"] >= best - 1e-12

    def test_negative_predictions_clamped_for_msle_only(self):
        m = evaluate_rlp([-1.0], [0.0])
        assert m["msle"] == 0.0
        assert m["mae"] == 1.0

    def test_negative_labels_rejected(self):
        with pytest.raises(ValueError, match="non-negative"):
            evaluate_rlp([1.0], [-1.0])


class TestNip:
    def test_rank_one_and_three(self):
        scores = np.array([[5.0, 1.0, 0.0], [5.0, 4.0, 3.0]])
        ranks = nip_ranks(scores, np.array([0, 2]))
        assert list(ranks) == [1, 3]
        m = evaluate_nip(scores, np.array([0, 2]))
        assert m["mrr@10"] == pytest.approx((1.0 + 1 / 3) / 2)

    def test_cutoff_semantics_rank_15(self):
        scores = np.arange(30, dtype=float)[::-1].reshape(1, 30).copy()
        label = np.array([14])  # rank 15
        m = evaluate_nip(scores, label, ks=(10, 20))
        assert m["hit@10"] == 0.0 and m["mrr@10"] == 0.0
        assert m["hit@20"] == 1.0 and m["mrr@20"] == pytest.approx(1 / 15)

    def test_hit_at_10_le_hit_at_20(self):
        rng = rng_for(3, "metrics.nip.prop")
        for _ in range(20):
            scores = rng.random((10, 40))
            labels = rng.integers(0, 40, size=10)
            m = evaluate_nip(scores, labels)
            assert m["hit@10"] <= m["hit@20"]
            assert m["mrr@10"] <= m["mrr@20"]

    def test_random_scores_hit_rate_near_k_over_m(self):
        # Monte-Carlo oracle: with random scores, hit@K concentrates at K/m.
        rng = rng_for(4, "metrics.nip.mc")
        m_items, k, trials = 50, 10, 10_000
        scores = rng.random((trials, m_items))
        labels = rng.integers(0, m_items, size=trials)
        got = evaluate_nip(scores, labels, ks=(k,))[f"hit@{k}"]
        want = k / m_items
        half = 2.576 * math.sqrt(want * (1 - want) / trials)
        assert abs(got - want) < half

    def test_label_outside_pool_rejected(self):
        with pytest.raises(ValueError, match="pool"):
            nip_ranks(np.ones((1, 3)), np.array([3]))

    def test_excluded_count_reported(self):
        m = evaluate_nip(np.ones((1, 3)), np.array([0]), excluded=2)
        assert m["excluded"] == 2
