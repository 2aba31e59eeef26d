"""Downstream task heads, losses, and the fine-tuning driver.

PIP stacks two GELU feed-forward layers and a sigmoid-terminated linear
layer on the session embedding; RLP uses two feed-forward layers ending in
a scalar; NIP scores the session embedding against a candidate pool of
item embeddings and trains with cross entropy.  Fine-tuning updates the
heads and both encoder levels together and keeps the checkpoint with the
smallest validation loss.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .encoders import UbmParams, embed_items, ubm_forward
from .optim import Adam
from .rng import rng_for
from .sessions import EncodedSession, Item, TokenLimits, Vocabulary, encode_session
from .synth import TaskDataset
from .tensor import Parameter, Tensor

TASK_TAGS = ("pip", "rlp", "nip")


def _linear_params(rng, prefix: str, dims: list[int]) -> dict[str, Parameter]:
    from .encoders import _trunc_normal

    out: dict[str, Parameter] = {}
    for i, (d_in, d_out) in enumerate(zip(dims, dims[1:]), start=1):
        out[f"{prefix}.w{i}"] = Parameter(_trunc_normal(rng, (d_in, d_out)), f"{prefix}.w{i}")
        out[f"{prefix}.b{i}"] = Parameter(
            np.zeros(d_out, dtype=T.default_dtype()), f"{prefix}.b{i}"
        )
    return out


class PipHead:
    """ff(d->d) -> ff(d->d) -> linear(d->1) -> sigmoid."""

    def __init__(self, params: dict[str, Parameter]):
        self.params = params

    @classmethod
    def init(cls, hidden_size: int, seed: int) -> "PipHead":
        rng = rng_for(seed, "init.pip_head")
        return cls(_linear_params(rng, "pip", [hidden_size, hidden_size, hidden_size, 1]))

    def forward(self, h: Tensor) -> Tensor:
        p = self.params
        z = T.gelu(T.matmul(h, p["pip.w1"]) + p["pip.b1"])
        z = T.gelu(T.matmul(z, p["pip.w2"]) + p["pip.b2"])
        logits = T.matmul(z, p["pip.w3"]) + p["pip.b3"]
        return T.reshape(T.sigmoid(logits), (h.shape[0],))


class RlpHead:
    """ff(d->d) -> ff(d->1): an unbounded scalar length estimate."""

    def __init__(self, params: dict[str, Parameter]):
        self.params = params

    @classmethod
    def init(cls, hidden_size: int, seed: int) -> "RlpHead":
        rng = rng_for(seed, "init.rlp_head")
        return cls(_linear_params(rng, "rlp", [hidden_size, hidden_size, 1]))

    def forward(self, h: Tensor) -> Tensor:
        p = self.params
        z = T.gelu(T.matmul(h, p["rlp.w1"]) + p["rlp.b1"])
        return T.reshape(T.matmul(z, p["rlp.w2"]) + p["rlp.b2"], (h.shape[0],))


def binary_cross_entropy(probs: Tensor, labels: np.ndarray) -> Tensor:
    """Mean BCE with the log arguments floored at 1e-12."""
    y = np.asarray(labels, dtype=T.default_dtype())
    if not np.isin(y, (0.0, 1.0)).all():
        raise ValueError("PIP labels must be 0 or 1")
    pos = Tensor(y) * T.log(probs, floor=1e-12)
    neg = Tensor(1.0 - y) * T.log(T.scale(probs, -1.0) + 1.0, floor=1e-12)
    return T.scale(T.tmean(pos + neg), -1.0)


def pip_forward_loss(head: PipHead, h: Tensor, labels: np.ndarray) -> tuple[Tensor, Tensor]:
    probs = head.forward(h)
    return probs, binary_cross_entropy(probs, labels)


def rlp_forward_loss(head: RlpHead, h: Tensor, labels: np.ndarray) -> tuple[Tensor, Tensor]:
    preds = head.forward(h)
    y = np.asarray(labels, dtype=T.default_dtype())
    if y.min() < 0:
        raise ValueError("RLP labels must be non-negative")
    err = preds - Tensor(y)
    return preds, T.tmean(err * err)


@dataclass
class CandidatePool:
    """Item embeddings ranked at NIP time; ``matrix`` row i embeds
    ``items[i]`` under the weights current at the last refresh."""

    ids: list[str]
    items: list[Item]
    matrix: np.ndarray
    id_to_row: dict[str, int]

    @classmethod
    def build(
        cls, pool: dict[str, Item], params: UbmParams, vocab: Vocabulary, limits: TokenLimits
    ) -> "CandidatePool":
        ids = sorted(pool)
        items = [pool[i] for i in ids]
        matrix = embed_items(items, params, vocab, limits).data
        return cls(ids=ids, items=items, matrix=matrix, id_to_row={k: i for i, k in enumerate(ids)})

    def refresh(self, params: UbmParams, vocab: Vocabulary, limits: TokenLimits) -> None:
        self.matrix = embed_items(self.items, params, vocab, limits).data

    def rows_for(self, labels: list[str]) -> np.ndarray:
        missing = [l for l in labels if l not in self.id_to_row]
        if missing:
            raise KeyError(f"labels absent from candidate pool: {sorted(set(missing))[:5]}")
        return np.array([self.id_to_row[l] for l in labels], dtype=np.int64)


def nip_forward_loss(
    h: Tensor, pool: CandidatePool, label_rows: np.ndarray
) -> tuple[Tensor, Tensor]:
    """Scores are plain dot products against the (constant) pool matrix;
    gradients flow through the session embeddings only."""
    rows = np.asarray(label_rows)
    if rows.min() < 0 or rows.max() >= pool.matrix.shape[0]:
        raise ValueError("label row outside the candidate pool")
    scores = T.matmul(h, Tensor(pool.matrix.T))
    probs = T.softmax_rows(scores)
    logp = T.log_softmax_rows(scores)
    picked = logp[np.arange(len(rows)), rows]
    return probs, T.scale(T.tmean(picked), -1.0)


# ---------------------------------------------------------------------------
# fine-tuning


@dataclass(frozen=True)
class FinetuneConfig:
    task: str
    batch_size: int = 32
    lr: float = 3e-5
    epochs: int = 30
    seed: int = 0
    threshold: float = 0.5
    pool_refresh_interval: int = 1

    def __post_init__(self):
        if self.task not in TASK_TAGS:
            raise ValueError(f"task must be one of {TASK_TAGS}")
        if min(self.batch_size, self.epochs, self.pool_refresh_interval) <= 0:
            raise ValueError("batch_size, epochs and pool_refresh_interval must be positive")
        if self.lr <= 0:
            raise ValueError("lr must be positive")


def make_head(task: str, hidden_size: int, seed: int) -> PipHead | RlpHead | None:
    if task == "pip":
        return PipHead.init(hidden_size, seed)
    if task == "rlp":
        return RlpHead.init(hidden_size, seed)
    return None  # NIP scores against the pool; no extra weights


def best_epoch(validation_losses: list[float]) -> int:
    """Index of the smallest validation loss; earliest wins ties."""
    best = min(validation_losses)
    return validation_losses.index(best)


@dataclass
class FinetuneResult:
    params: UbmParams
    head: PipHead | RlpHead | None
    pool: CandidatePool | None
    train_losses: list[float]
    valid_losses: list[float]
    best_epoch: int


def _encode_examples(ds: TaskDataset, vocab, limits) -> list[EncodedSession]:
    return [encode_session(ex.input, vocab, limits) for ex in ds.examples]


def _labels_array(ds: TaskDataset, task: str, pool: CandidatePool | None) -> np.ndarray:
    if task == "nip":
        return pool.rows_for([ex.label for ex in ds.examples])
    return np.asarray([ex.label for ex in ds.examples], dtype=np.float64)


def _task_loss(task, head, pool, h, labels) -> Tensor:
    if task == "pip":
        return pip_forward_loss(head, h, labels)[1]
    if task == "rlp":
        return rlp_forward_loss(head, h, labels)[1]
    return nip_forward_loss(h, pool, labels)[1]


def finetune(
    task: str,
    splits: dict[str, TaskDataset],
    params: UbmParams,
    vocab: Vocabulary,
    limits: TokenLimits,
    cfg: FinetuneConfig,
    nip_pool: dict[str, Item] | None = None,
    log_fn=None,
) -> FinetuneResult:
    """End-to-end fine-tuning of encoders plus task head.

    Returns the weights from the epoch with the lowest validation loss.
    ``params`` is mutated during training; the returned copy is the
    selected snapshot.
    """
    if task not in TASK_TAGS:
        raise ValueError(f"task must be one of {TASK_TAGS}")
    if task == "nip" and not nip_pool:
        raise ValueError("NIP fine-tuning needs the candidate pool")
    train_ds, valid_ds = splits["train"], splits["valid"]
    head = make_head(task, params.config.hidden_size, cfg.seed)
    pool = CandidatePool.build(nip_pool, params, vocab, limits) if task == "nip" else None

    encoded_train = _encode_examples(train_ds, vocab, limits)
    encoded_valid = _encode_examples(valid_ds, vocab, limits)
    labels_train = _labels_array(train_ds, task, pool)
    labels_valid = _labels_array(valid_ds, task, pool)

    trainable = params.parameters() + (list(head.params.values()) if head else [])
    opt = Adam(trainable)
    t0 = time.monotonic()
    train_losses: list[float] = []
    valid_losses: list[float] = []
    snapshots: list[tuple[dict, dict]] = []
    global_step = 0
    for epoch in range(cfg.epochs):
        order = rng_for(cfg.seed, "finetune.shuffle", epoch).permutation(len(encoded_train))
        epoch_losses = []
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            if len(idx) < 2 and task == "nip":
                continue
            if task == "nip" and global_step % cfg.pool_refresh_interval == 0:
                pool.refresh(params, vocab, limits)
            drop_rng = rng_for(cfg.seed, "finetune.dropout", epoch, start)
            _, h, _ = ubm_forward(
                [encoded_train[i] for i in idx], params, vocab, train=True, drop_rng=drop_rng
            )
            loss = _task_loss(task, head, pool, h, labels_train[idx])
            opt.zero_grad()
            T.backward(loss)
            opt.step(cfg.lr)
            global_step += 1
            epoch_losses.append(loss.item())
        train_loss = float(np.mean(epoch_losses))
        if task == "nip":
            pool.refresh(params, vocab, limits)
        valid_loss = _eval_loss(task, head, pool, encoded_valid, labels_valid, params, vocab, cfg)
        train_losses.append(train_loss)
        valid_losses.append(valid_loss)
        snapshots.append(
            (
                {n: p.data.copy() for n, p in params.params.items()},
                {n: p.data.copy() for n, p in (head.params.items() if head else ())},
            )
        )
        if log_fn:
            log_fn(
                task=task,
                epoch=epoch,
                train_loss=round(train_loss, 6),
                valid_loss=round(valid_loss, 6),
                elapsed_s=round(time.monotonic() - t0, 3),
            )

    chosen = best_epoch(valid_losses)
    best_params_arrays, best_head_arrays = snapshots[chosen]
    best_params = UbmParams.from_arrays(params.config, best_params_arrays)
    best_head = make_head(task, params.config.hidden_size, cfg.seed)
    if best_head:
        for name, p in best_head.params.items():
            p.data = np.array(best_head_arrays[name], dtype=p.data.dtype)
    best_pool = None
    if task == "nip":
        best_pool = CandidatePool.build(nip_pool, best_params, vocab, limits)
    return FinetuneResult(
        params=best_params,
        head=best_head,
        pool=best_pool,
        train_losses=train_losses,
        valid_losses=valid_losses,
        best_epoch=chosen,
    )


def _eval_loss(task, head, pool, encoded, labels, params, vocab, cfg) -> float:
    total = 0.0
    count = 0
    for start in range(0, len(encoded), cfg.batch_size):
        batch = encoded[start : start + cfg.batch_size]
        _, h, _ = ubm_forward(batch, params, vocab, train=False)
        loss = _task_loss(task, head, pool, h, labels[start : start + cfg.batch_size])
        total += loss.item() * len(batch)
        count += len(batch)
    return total / count


def predict(
    task: str,
    splits_ds: TaskDataset,
    params: UbmParams,
    vocab: Vocabulary,
    limits: TokenLimits,
    head: PipHead | RlpHead | None = None,
    pool: CandidatePool | None = None,
    batch_size: int = 64,
) -> np.ndarray:
    """Eval-mode predictions: PIP probabilities, RLP estimates, or NIP
    score rows over the candidate pool."""
    encoded = _encode_examples(splits_ds, vocab, limits)
    outputs = []
    for start in range(0, len(encoded), batch_size):
        batch = encoded[start : start + batch_size]
        _, h, _ = ubm_forward(batch, params, vocab, train=False)
        if task == "pip":
            outputs.append(head.forward(h).data)
        elif task == "rlp":
            outputs.append(head.forward(h).data)
        else:
            outputs.append(T.matmul(h, Tensor(pool.matrix.T)).data)
    return np.concatenate(outputs, axis=0)
