import math

import numpy as np
import pytest

from ubm import tensor as T
from ubm.encoders import UbmConfig, UbmParams
from ubm.sessions import Item, TokenLimits, build_vocab
from ubm.synth import SynthConfig, derive_task_datasets, generate_corpus
from ubm.tasks import (
    CandidatePool,
    FinetuneConfig,
    PipHead,
    RlpHead,
    best_epoch,
    binary_cross_entropy,
    finetune,
    nip_forward_loss,
    pip_forward_loss,
    predict,
    rlp_forward_loss,
)
from ubm.tensor import Tensor

LIMITS = TokenLimits()


def setup_world(n=200, seed=21):
    cfg = SynthConfig(
        num_intents=4, vocab_size=60, items_per_intent=8, num_sessions=n, seed=seed,
        session_min=6, session_geom_p=0.22,
    )
    sessions = list(generate_corpus(cfg))
    vocab = build_vocab(sessions, min_freq=1)
    model_cfg = UbmConfig.build(vocab.size, LIMITS, hidden_size=16, num_layers=1, num_heads=2, ff_size=32)
    params = UbmParams.init(model_cfg, seed=2)
    splits = {
        "train": sessions[: int(n * 0.7)],
        "valid": sessions[int(n * 0.7) : int(n * 0.85)],
        "test": sessions[int(n * 0.85) :],
    }
    return splits, vocab, params


class TestPipHead:
    def zero_head(self, d=16):
        head = PipHead.init(d, seed=0)
        for p in head.params.values():
            p.data[:] = 0.0
        return head

    def test_maximal_uncertainty_loss_is_log2(self):
        head = self.zero_head()
        h = Tensor(np.random.default_rng(0).normal(size=(4, 16)).astype(np.float32))
        probs, loss = pip_forward_loss(head, h, np.array([1.0, 0.0, 1.0, 0.0]))
        np.testing.assert_allclose(probs.data, 0.5)
        assert loss.item() == pytest.approx(math.log(2), abs=1e-6)

    def test_exact_predictions_zero_loss(self):
        loss = binary_cross_entropy(Tensor(np.array([1.0, 0.0])), np.array([1.0, 0.0]))
        assert loss.item() == 0.0

    def test_point_nine_closed_form(self):
        loss = binary_cross_entropy(Tensor(np.array([0.9])), np.array([1.0]))
        assert loss.item() == pytest.approx(-math.log(0.9), abs=1e-6)

    def test_bad_labels_rejected(self):
        with pytest.raises(ValueError, match="0 or 1"):
            binary_cross_entropy(Tensor(np.array([0.5])), np.array([2.0]))

    def test_output_in_open_interval(self):
        head = PipHead.init(16, seed=1)
        h = Tensor(np.random.default_rng(1).normal(size=(8, 16)).astype(np.float32) * 10)
        probs = head.forward(h)
        assert np.all(probs.data > 0) and np.all(probs.data < 1)


class TestRlpHead:
    def test_zero_loss_when_exact(self):
        head = RlpHead.init(16, seed=0)
        head.params["rlp.b2"].data[:] = 10.0  # keep outputs in the valid label range
        h = Tensor(np.random.default_rng(2).normal(size=(3, 16)).astype(np.float32))
        preds = head.forward(h)
        assert preds.data.min() > 0
        _, loss = rlp_forward_loss(head, h, preds.data.copy())
        assert loss.item() == pytest.approx(0.0, abs=1e-10)

    def test_closed_form(self):
        head = RlpHead.init(16, seed=0)
        for p in head.params.values():
            p.data[:] = 0.0
        head.params["rlp.b2"].data[:] = 2.0  # constant output 2
        h = Tensor(np.zeros((2, 16), dtype=np.float32))
        preds, loss = rlp_forward_loss(head, h, np.array([0.0, 0.0]))
        np.testing.assert_allclose(preds.data, [2.0, 2.0])
        assert loss.item() == pytest.approx(4.0)

    def test_two_four_vs_zero_zero(self):
        # direct loss formula: ((2-0)^2 + (4-0)^2) / 2 = 10
        preds = Tensor(np.array([2.0, 4.0], dtype=np.float32))
        err = preds - Tensor(np.zeros(2, dtype=np.float32))
        assert T.tmean(err * err).item() == pytest.approx(10.0)

    def test_negative_labels_rejected(self):
        head = RlpHead.init(16, seed=0)
        h = Tensor(np.zeros((1, 16), dtype=np.float32))
        with pytest.raises(ValueError, match="non-negative"):
            rlp_forward_loss(head, h, np.array([-1.0]))


class TestNipLoss:
    def pool_of(self, matrix, ids=None):
        m = matrix.shape[0]
        ids = ids or [f"i{j}" for j in range(m)]
        items = [Item(title=f"t{j}") for j in range(m)]
        return CandidatePool(ids=ids, items=items, matrix=matrix.astype(np.float32),
                             id_to_row={k: j for j, k in enumerate(ids)})

    def test_uniform_scores_loss_log_m(self):
        pool = self.pool_of(np.eye(2))
        h = Tensor(np.zeros((3, 2), dtype=np.float32))
        probs, loss = nip_forward_loss(h, pool, np.array([0, 1, 0]))
        assert loss.item() == pytest.approx(math.log(2), abs=1e-6)
        np.testing.assert_allclose(probs.data.sum(axis=1), 1.0, atol=1e-6)

    def test_dominant_label_score_drives_loss_to_zero(self):
        pool = self.pool_of(np.eye(2) * 50.0)
        h = Tensor(np.array([[50.0, 0.0]], dtype=np.float32))
        _, loss = nip_forward_loss(h, pool, np.array([0]))
        assert loss.item() == pytest.approx(0.0, abs=1e-5)

    def test_probability_rows_sum_to_one(self):
        rng = np.random.default_rng(3)
        pool = self.pool_of(rng.normal(size=(7, 4)))
        h = Tensor(rng.normal(size=(5, 4)).astype(np.float32))
        probs, _ = nip_forward_loss(h, pool, np.array([0, 1, 2, 3, 4]))
        np.testing.assert_allclose(probs.data.sum(axis=1), 1.0, atol=1e-6)

    def test_missing_label_named(self):
        pool = self.pool_of(np.eye(2))
        with pytest.raises(KeyError, match="zzz"):
            pool.rows_for(["i0", "zzz"])


class TestSelectionRule:
    def test_minimum_not_last(self):
        assert best_epoch([0.9, 0.3, 0.5, 0.4]) == 1

    def test_tie_prefers_earliest(self):
        assert best_epoch([0.5, 0.3, 0.3]) == 1


class TestFinetune:
    def test_pip_smoke_loss_decreases_majority_of_seeds(self):
        # 3-seed majority oracle: epoch-1 training loss below epoch-0.
        splits, vocab, params0 = setup_world()
        data = derive_task_datasets(splits, "pip", seed=5)
        wins = 0
        for seed in range(3):
            params = UbmParams.from_arrays(params0.config, params0.arrays())
            cfg = FinetuneConfig(task="pip", batch_size=16, lr=1e-3, epochs=2, seed=seed)
            result = finetune("pip", data.splits, params, vocab, LIMITS, cfg)
            wins += result.train_losses[1] < result.train_losses[0]
        assert wins >= 2

    def test_returns_min_validation_snapshot(self):
        splits, vocab, params = setup_world(n=120)
        data = derive_task_datasets(splits, "rlp", seed=5)
        cfg = FinetuneConfig(task="rlp", batch_size=16, lr=1e-3, epochs=3, seed=0)
        result = finetune("rlp", data.splits, params, vocab, LIMITS, cfg)
        assert result.best_epoch == int(np.argmin(result.valid_losses))
        assert len(result.valid_losses) == 3

    def test_nip_end_to_end_with_pool(self):
        splits, vocab, params = setup_world(n=150)
        data = derive_task_datasets(splits, "nip", seed=5)
        cfg = FinetuneConfig(task="nip", batch_size=16, lr=1e-3, epochs=1, seed=0,
                             pool_refresh_interval=4)
        result = finetune("nip", data.splits, params, vocab, LIMITS, cfg, nip_pool=data.pool)
        assert result.pool is not None
        scores = predict("nip", data.splits["test"], result.params, vocab, LIMITS, pool=result.pool)
        assert scores.shape == (data.splits["test"].size, len(data.pool))

    def test_pool_rows_match_item_embedding(self):
        splits, vocab, params = setup_world(n=100)
        data = derive_task_datasets(splits, "nip", seed=5)
        pool = CandidatePool.build(data.pool, params, vocab, LIMITS)
        from ubm.encoders import embed_item_as_session

        key = pool.ids[0]
        np.testing.assert_allclose(
            pool.matrix[0], embed_item_as_session(pool.items[0], params, vocab, LIMITS), atol=1e-6
        )
        assert pool.id_to_row[key] == 0

    def test_config_validation(self):
        with pytest.raises(ValueError, match="task"):
            FinetuneConfig(task="ctr")
        with pytest.raises(ValueError, match="positive"):
            FinetuneConfig(task="pip", epochs=0)
        with pytest.raises(ValueError, match="lr"):
            FinetuneConfig(task="pip", lr=0.0)

    def test_nip_without_pool_rejected(self):
        splits, vocab, params = setup_world(n=60)
        data = derive_task_datasets(splits, "nip", seed=5)
        cfg = FinetuneConfig(task="nip", epochs=1)
        with pytest.raises(ValueError, match="pool"):
            finetune("nip", data.splits, params, vocab, LIMITS, cfg)
