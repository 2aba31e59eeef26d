"""Cosine InfoNCE losses and the two-stage contrastive pre-training driver.

Stage 1 trains the interaction encoder on item views: token-masked copies
and next-item partners.  Stage 2 trains the whole network on session views:
reordered and action-and-item-masked sessions.  Losses are summed over the
batch; every in-batch non-partner row acts as a negative.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .augment import (
    AugmentedItemBatch,
    AugmentedSessionBatch,
    MaskPolicy,
    build_item_batch,
    build_session_batch,
    next_item_pairs,
)
from .checkpoint import load_checkpoint, read_checkpoint_meta, save_checkpoint
from .encoders import UbmParams, interaction_encode, ubm_forward
from .optim import Adam, ScheduleConfig, lr_at
from .rng import rng_for
from .sessions import EncodedSession, Item, Session, TokenLimits, Vocabulary, encode_session
from .tensor import Tensor

LOSS_MODES = ("standard", "paper_literal")
_DIAG_EXCLUDE = -1e30


@dataclass(frozen=True)
class PretrainConfig:
    stage1_batch: int = 512  # item rows per step (2N)
    stage2_batch: int = 128  # sessions per step (N)
    stage1_epochs: int = 1
    stage2_epochs: int = 1
    peak_lr: float = 3e-5
    warmup_fraction: float = 0.10
    temperature: float = 0.05
    loss_mode: str = "standard"
    mask_policy: MaskPolicy = field(default_factory=MaskPolicy)
    reorder_max_distance: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.stage1_batch < 4 or self.stage1_batch % 2 != 0:
            raise ValueError("stage1_batch counts item rows (2N) and must be an even number >= 4")
        if self.stage2_batch < 2:
            raise ValueError("stage2_batch must be >= 2: a batch of 1 has no negatives")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if self.loss_mode not in LOSS_MODES:
            raise ValueError(f"loss_mode must be one of {LOSS_MODES}")


def cosine_sim_matrix(a: Tensor, b: Tensor) -> Tensor:
    """Pairwise cosine similarities: entry (i, j) compares row i of ``a``
    with row j of ``b``."""
    an = T.l2_normalize_rows(a)
    bn = T.l2_normalize_rows(b)
    return T.matmul(an, T.transpose(bn, (1, 0)))


def info_nce(
    anchors: Tensor,
    positives: Tensor,
    tau: float,
    mode: str = "standard",
) -> Tensor:
    """Summed contrastive loss over aligned (anchor, positive) rows.

    ``standard`` keeps the positive in the denominator (NT-Xent, each term
    bounded below by 0); ``paper_literal`` drops the j = i term, which can
    push terms negative.
    """
    if tau <= 0:
        raise ValueError("temperature must be positive")
    if mode not in LOSS_MODES:
        raise ValueError(f"mode must be one of {LOSS_MODES}")
    if anchors.shape != positives.shape:
        raise T.ShapeError(
            f"info_nce: anchor shape {anchors.shape} != positive shape {positives.shape}"
        )
    m = anchors.shape[0]
    if mode == "paper_literal" and m < 2:
        raise ValueError("paper_literal mode needs >= 2 rows: the denominator would be empty")
    sims = T.scale(cosine_sim_matrix(anchors, positives), 1.0 / tau)
    pos_terms = sims[np.arange(m), np.arange(m)]
    if mode == "paper_literal":
        sims = sims + Tensor(np.eye(m, dtype=T.default_dtype()) * _DIAG_EXCLUDE)
    return T.tsum(T.logsumexp_rows(sims) - pos_terms)


def stage1_losses(
    batch: AugmentedItemBatch,
    params: UbmParams,
    vocab: Vocabulary,
    cfg: PretrainConfig,
    drop_rng: np.random.Generator | None,
    train: bool = True,
) -> Tensor:
    """Masked-view loss over all 2N items plus next-item loss over the N
    (item, next item) rows.  Touches only the interaction encoder."""
    from .encoders import _token_batch

    n_pairs = batch.pair_count
    ids, mask = _token_batch(batch.items, vocab.pad_id)
    b = interaction_encode(ids, mask, params, train=train, drop_rng=drop_rng)
    ids_m, mask_m = _token_batch(batch.masked, vocab.pad_id)
    b_masked = interaction_encode(ids_m, mask_m, params, train=train, drop_rng=drop_rng)
    l1 = info_nce(b, b_masked, cfg.temperature, cfg.loss_mode)
    l2 = info_nce(b[:n_pairs], b[n_pairs:], cfg.temperature, cfg.loss_mode)
    return l1 + l2


def stage2_losses(
    batch: AugmentedSessionBatch,
    params: UbmParams,
    vocab: Vocabulary,
    cfg: PretrainConfig,
    drop_rng: np.random.Generator | None,
    train: bool = True,
) -> Tensor:
    """Reordered-view and masked-view losses over session embeddings;
    gradients reach both encoder levels."""
    _, h, _ = ubm_forward(list(batch.originals), params, vocab, train=train, drop_rng=drop_rng)
    _, h_plus, _ = ubm_forward(list(batch.reordered), params, vocab, train=train, drop_rng=drop_rng)
    _, h_mask, _ = ubm_forward(list(batch.masked), params, vocab, train=train, drop_rng=drop_rng)
    l3 = info_nce(h, h_plus, cfg.temperature, cfg.loss_mode)
    l4 = info_nce(h, h_mask, cfg.temperature, cfg.loss_mode)
    return l3 + l4


# ---------------------------------------------------------------------------
# training driver


def _batched(order: np.ndarray, batch: int):
    for start in range(0, len(order) - batch + 1, batch):
        yield order[start : start + batch]


@dataclass
class PretrainState:
    stage: int
    completed_epochs: int
    global_step: int


def pretrain(
    sessions: list[Session],
    vocab: Vocabulary,
    limits: TokenLimits,
    params: UbmParams,
    cfg: PretrainConfig,
    stages: tuple[int, ...] = (1, 2),
    out_dir=None,
    log_fn=None,
    resume: bool = True,
) -> dict:
    """Run the requested pre-training stages in order, mutating ``params``.

    With ``out_dir`` set, a resumable state checkpoint is written after each
    epoch and a final checkpoint after each stage; an interrupted run picks
    up from the last completed epoch.  Returns per-stage loss history.
    """
    from pathlib import Path

    history: dict = {"stage1": [], "stage2": []}
    pairs = list(next_item_pairs(sessions)) if 1 in stages else []
    encoded = [encode_session(s, vocab, limits) for s in sessions] if 2 in stages else []

    for stage in stages:
        if stage == 1:
            data_len = len(pairs)
            batch = cfg.stage1_batch // 2
            epochs = cfg.stage1_epochs
            opt = Adam(params.interaction_parameters())
        elif stage == 2:
            data_len = len(encoded)
            batch = cfg.stage2_batch
            epochs = cfg.stage2_epochs
            opt = Adam(params.parameters())
        else:
            raise ValueError(f"unknown stage {stage}")
        steps_per_epoch = data_len // batch
        if steps_per_epoch == 0:
            raise ValueError(
                f"stage {stage}: {data_len} examples cannot fill one batch of {batch}"
            )
        schedule = ScheduleConfig(
            total_steps=steps_per_epoch * epochs,
            warmup_fraction=cfg.warmup_fraction,
            peak_lr=cfg.peak_lr,
        )

        start_epoch = 0
        state_path = Path(out_dir) / f"pretrain_stage{stage}_state.ckpt" if out_dir else None
        if resume and state_path and state_path.is_file():
            meta, arrays = load_checkpoint(state_path)
            for p in params.parameters():
                p.data = np.array(arrays[p.name], dtype=p.data.dtype)
            opt.load_state_arrays(arrays, meta["adam_t"])
            start_epoch = meta["completed_epochs"]

        t0 = time.monotonic()
        for epoch in range(start_epoch, epochs):
            order = rng_for(cfg.seed, f"stage{stage}.shuffle", epoch).permutation(data_len)
            for step_in_epoch, idx in enumerate(_batched(order, batch)):
                global_step = epoch * steps_per_epoch + step_in_epoch + 1
                aug_rng = rng_for(cfg.seed, f"stage{stage}.augment", epoch, step_in_epoch)
                drop_rng = rng_for(cfg.seed, f"stage{stage}.dropout", epoch, step_in_epoch)
                if stage == 1:
                    item_batch = build_item_batch(
                        [pairs[i] for i in idx], vocab, limits, cfg.mask_policy, aug_rng
                    )
                    loss = stage1_losses(item_batch, params, vocab, cfg, drop_rng)
                else:
                    sess_batch = build_session_batch(
                        [encoded[i] for i in idx],
                        cfg.mask_policy,
                        vocab,
                        aug_rng,
                        cfg.reorder_max_distance,
                    )
                    loss = stage2_losses(sess_batch, params, vocab, cfg, drop_rng)
                lr = lr_at(global_step, schedule)
                opt.zero_grad()
                T.backward(loss)
                opt.step(lr)
                value = loss.item()
                history[f"stage{stage}"].append(value)
                if log_fn:
                    log_fn(
                        stage=stage,
                        step=global_step,
                        loss=round(value, 6),
                        lr=lr,
                        elapsed_s=round(time.monotonic() - t0, 3),
                    )
            if state_path:
                arrays = dict(params.arrays())
                arrays.update(opt.state_arrays())
                save_checkpoint(
                    state_path,
                    {
                        "stage": stage,
                        "completed_epochs": epoch + 1,
                        "adam_t": opt.t,
                        "config": params.config.to_dict(),
                        "vocab_hash": vocab.content_hash(),
                    },
                    arrays,
                )
    return history
