"""Two-level session network.

The interaction encoder is a BERT-style token transformer (learned absolute
positions, post-layer-norm blocks, GELU feed-forward) pooled at the [CLS]
position.  The session encoder is a second transformer over the resulting
interaction vectors with fixed sinusoidal positions, mean-pooled over the
real (non-padded) slots.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .rng import rng_for
from .sessions import EncodedSession, Item, TokenLimits, Vocabulary, tokenize_item
from .tensor import Parameter, Tensor

_NEG_BIAS = -1e9


@dataclass(frozen=True)
class EncoderConfig:
    num_layers: int = 4
    hidden_size: int = 256
    num_heads: int = 4
    ff_size: int = 1024
    dropout_rate: float = 0.10
    max_positions: int = 128

    def __post_init__(self):
        if self.hidden_size % self.num_heads != 0:
            raise ValueError("hidden_size must be divisible by num_heads")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must be in [0, 1)")
        if min(self.num_layers, self.hidden_size, self.num_heads, self.ff_size, self.max_positions) <= 0:
            raise ValueError("encoder dimensions must be positive")

    def to_dict(self) -> dict:
        return {
            "num_layers": self.num_layers,
            "hidden_size": self.hidden_size,
            "num_heads": self.num_heads,
            "ff_size": self.ff_size,
            "dropout_rate": self.dropout_rate,
            "max_positions": self.max_positions,
        }


@dataclass(frozen=True)
class UbmConfig:
    vocab_size: int
    interaction: EncoderConfig
    session: EncoderConfig

    def __post_init__(self):
        if self.interaction.hidden_size != self.session.hidden_size:
            raise ValueError("interaction and session encoders must share hidden_size")

    @property
    def hidden_size(self) -> int:
        return self.interaction.hidden_size

    @staticmethod
    def build(
        vocab_size: int,
        limits: TokenLimits,
        hidden_size: int = 256,
        num_layers: int = 4,
        num_heads: int = 4,
        ff_size: int | None = None,
        dropout_rate: float = 0.10,
    ) -> "UbmConfig":
        ff = 4 * hidden_size if ff_size is None else ff_size
        return UbmConfig(
            vocab_size=vocab_size,
            interaction=EncoderConfig(
                num_layers, hidden_size, num_heads, ff, dropout_rate, limits.max_interaction_tokens
            ),
            session=EncoderConfig(
                num_layers, hidden_size, num_heads, ff, dropout_rate, limits.max_session_len
            ),
        )

    def to_dict(self) -> dict:
        return {
            "vocab_size": self.vocab_size,
            "interaction": self.interaction.to_dict(),
            "session": self.session.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "UbmConfig":
        return cls(
            vocab_size=int(d["vocab_size"]),
            interaction=EncoderConfig(**d["interaction"]),
            session=EncoderConfig(**d["session"]),
        )


def sinusoidal_positions(length: int, dim: int) -> np.ndarray:
    """Fixed position table: (pos, 2i) = sin(pos/10000^{2i/d}),
    (pos, 2i+1) = cos of the same angle."""
    if length < 1 or dim < 1:
        raise ValueError("length and dim must be >= 1")
    if dim % 2 != 0:
        raise ValueError(f"sinusoidal table needs an even dimension, got {dim}")
    pos = np.arange(length, dtype=np.float64)[:, None]
    idx = np.arange(dim // 2, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, 2.0 * idx / dim)
    table = np.empty((length, dim), dtype=np.float64)
    table[:, 0::2] = np.sin(angle)
    table[:, 1::2] = np.cos(angle)
    return table.astype(T.default_dtype())


def _trunc_normal(rng: np.random.Generator, shape, std: float = 0.02) -> np.ndarray:
    out = rng.normal(0.0, std, size=shape)
    bad = np.abs(out) > 2 * std
    while bad.any():
        out[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(out) > 2 * std
    return out.astype(T.default_dtype())


_LAYER_SUFFIXES = (
    "attn.wq", "attn.bq", "attn.wk", "attn.bk", "attn.wv", "attn.bv",
    "attn.wo", "attn.bo", "ln1.g", "ln1.b",
    "ff.w1", "ff.b1", "ff.w2", "ff.b2", "ln2.g", "ln2.b",
)


class UbmParams:
    """All trainable weights of the two-level network, keyed by name."""

    def __init__(self, config: UbmConfig, params: dict[str, Parameter]):
        self.config = config
        self.params = params

    def __getitem__(self, name: str) -> Parameter:
        return self.params[name]

    def parameters(self) -> list[Parameter]:
        return list(self.params.values())

    def interaction_parameters(self) -> list[Parameter]:
        """Embeddings plus interaction-encoder weights (stage-1 scope)."""
        return [p for n, p in self.params.items() if not n.startswith("se.")]

    def session_parameters(self) -> list[Parameter]:
        return [p for n, p in self.params.items() if n.startswith("se.")]

    def num_weights(self) -> int:
        return sum(p.data.size for p in self.params.values())

    def arrays(self) -> dict[str, np.ndarray]:
        return {n: p.data for n, p in self.params.items()}

    @classmethod
    def init(cls, config: UbmConfig, seed: int) -> "UbmParams":
        rng = rng_for(seed, "init.params")
        d = config.hidden_size
        dtype = T.default_dtype()
        params: dict[str, Parameter] = {}

        def add(name, array):
            params[name] = Parameter(array, name)

        add("tok_emb", _trunc_normal(rng, (config.vocab_size, d)))
        add("tok_pos", _trunc_normal(rng, (config.interaction.max_positions, d)))
        add("emb_ln.g", np.ones(d, dtype=dtype))
        add("emb_ln.b", np.zeros(d, dtype=dtype))
        for prefix, cfg in (("ie", config.interaction), ("se", config.session)):
            for layer in range(cfg.num_layers):
                base = f"{prefix}.{layer}."
                add(base + "attn.wq", _trunc_normal(rng, (d, d)))
                add(base + "attn.bq", np.zeros(d, dtype=dtype))
                add(base + "attn.wk", _trunc_normal(rng, (d, d)))
                add(base + "attn.bk", np.zeros(d, dtype=dtype))
                add(base + "attn.wv", _trunc_normal(rng, (d, d)))
                add(base + "attn.bv", np.zeros(d, dtype=dtype))
                add(base + "attn.wo", _trunc_normal(rng, (d, d)))
                add(base + "attn.bo", np.zeros(d, dtype=dtype))
                add(base + "ln1.g", np.ones(d, dtype=dtype))
                add(base + "ln1.b", np.zeros(d, dtype=dtype))
                add(base + "ff.w1", _trunc_normal(rng, (d, cfg.ff_size)))
                add(base + "ff.b1", np.zeros(cfg.ff_size, dtype=dtype))
                add(base + "ff.w2", _trunc_normal(rng, (cfg.ff_size, d)))
                add(base + "ff.b2", np.zeros(d, dtype=dtype))
                add(base + "ln2.g", np.ones(d, dtype=dtype))
                add(base + "ln2.b", np.zeros(d, dtype=dtype))
        return cls(config, params)

    @classmethod
    def from_arrays(cls, config: UbmConfig, arrays: dict[str, np.ndarray]) -> "UbmParams":
        blank = cls.init(config, seed=0)
        params: dict[str, Parameter] = {}
        for name, ref in blank.params.items():
            arr = np.asarray(arrays[name], dtype=ref.data.dtype)
            if arr.shape != ref.data.shape:
                raise ValueError(f"parameter {name}: shape {arr.shape} != expected {ref.data.shape}")
            params[name] = Parameter(arr.copy(), name)
        return cls(config, params)


def expected_num_weights(config: UbmConfig) -> int:
    """Closed-form weight count for a given vocabulary and architecture."""
    d = config.hidden_size
    total = config.vocab_size * d + config.interaction.max_positions * d + 2 * d
    for cfg in (config.interaction, config.session):
        per_layer = 4 * (d * d + d) + 4 * d + 2 * (d * cfg.ff_size) + cfg.ff_size + d
        total += cfg.num_layers * per_layer
    return total


def _attn_bias(mask: np.ndarray) -> Tensor:
    """(N, T) boolean keep-mask -> additive (N, 1, 1, T) attention bias."""
    bias = np.where(mask, 0.0, _NEG_BIAS).astype(T.default_dtype())
    return Tensor(bias[:, None, None, :])


def _encoder_stack(
    x: Tensor,
    mask: np.ndarray,
    prefix: str,
    params: UbmParams,
    cfg: EncoderConfig,
    train: bool,
    drop_rng: np.random.Generator | None,
) -> Tensor:
    n, t, d = x.shape
    heads = cfg.num_heads
    dh = d // heads
    inv_sqrt = 1.0 / float(np.sqrt(dh))
    bias = _attn_bias(mask)
    rate = cfg.dropout_rate if train else 0.0
    if rate > 0.0 and drop_rng is None:
        raise ValueError("train-mode forward requires a dropout rng")

    def drop(v: Tensor) -> Tensor:
        return T.dropout(v, rate, drop_rng) if rate > 0.0 else v

    for layer in range(cfg.num_layers):
        p = lambda s: params[f"{prefix}.{layer}.{s}"]  # noqa: E731

        def split_heads(v: Tensor) -> Tensor:
            return T.transpose(T.reshape(v, (n, t, heads, dh)), (0, 2, 1, 3))

        q = split_heads(T.matmul(x, p("attn.wq")) + p("attn.bq"))
        k = split_heads(T.matmul(x, p("attn.wk")) + p("attn.bk"))
        v = split_heads(T.matmul(x, p("attn.wv")) + p("attn.bv"))
        scores = T.scale(T.matmul(q, T.transpose(k, (0, 1, 3, 2))), inv_sqrt) + bias
        attn = drop(T.softmax_rows(scores))
        ctx = T.reshape(T.transpose(T.matmul(attn, v), (0, 2, 1, 3)), (n, t, d))
        out = drop(T.matmul(ctx, p("attn.wo")) + p("attn.bo"))
        x = T.layer_norm(x + out) * p("ln1.g") + p("ln1.b")
        ff = T.matmul(T.gelu(T.matmul(x, p("ff.w1")) + p("ff.b1")), p("ff.w2")) + p("ff.b2")
        x = T.layer_norm(x + drop(ff)) * p("ln2.g") + p("ln2.b")
    return x


def interaction_encode(
    token_ids: np.ndarray,
    token_mask: np.ndarray,
    params: UbmParams,
    train: bool = False,
    drop_rng: np.random.Generator | None = None,
) -> Tensor:
    """Encode (n, T) id rows into (n, d) embeddings at the [CLS] position."""
    cfg = params.config.interaction
    ids = np.asarray(token_ids)
    n, t = ids.shape
    if t > cfg.max_positions:
        raise ValueError(f"interaction length {t} exceeds max_positions {cfg.max_positions}")
    if ids.max() >= params.config.vocab_size:
        raise ValueError("token id out of vocabulary range")
    emb = T.take_rows(params["tok_emb"], ids)
    pos = params["tok_pos"][:t]
    x = T.layer_norm(emb + pos) * params["emb_ln.g"] + params["emb_ln.b"]
    if train and cfg.dropout_rate > 0.0:
        x = T.dropout(x, cfg.dropout_rate, drop_rng)
    x = _encoder_stack(x, np.asarray(token_mask, dtype=bool), "ie", params, cfg, train, drop_rng)
    return x[:, 0, :]


def session_encode(
    interaction_vecs: Tensor,
    pad_mask: np.ndarray,
    params: UbmParams,
    train: bool = False,
    drop_rng: np.random.Generator | None = None,
) -> tuple[Tensor, Tensor]:
    """Run the session transformer over (B, L, d) interaction vectors.

    Returns the per-slot outputs and their mean over true-mask positions.
    """
    cfg = params.config.session
    mask = np.asarray(pad_mask, dtype=bool)
    b, l, d = interaction_vecs.shape
    if l > cfg.max_positions:
        raise ValueError(f"session length {l} exceeds max_positions {cfg.max_positions}")
    if not mask.any(axis=1).all():
        raise ValueError("session_encode: a session has an all-false pad mask")
    x = interaction_vecs + Tensor(sinusoidal_positions(l, d))
    if train and cfg.dropout_rate > 0.0:
        x = T.dropout(x, cfg.dropout_rate, drop_rng)
    out = _encoder_stack(x, mask, "se", params, cfg, train, drop_rng)
    pooled = T.mean_over_mask(out, mask)
    return out, pooled


def _token_batch(encodings, pad_id: int) -> tuple[np.ndarray, np.ndarray]:
    """Right-pad variable-length id tuples into (n, T) ids plus keep-mask."""
    max_t = max(len(e) for e in encodings)
    ids = np.full((len(encodings), max_t), pad_id, dtype=np.int64)
    mask = np.zeros((len(encodings), max_t), dtype=bool)
    for i, enc in enumerate(encodings):
        ids[i, : len(enc)] = enc.token_ids
        mask[i, : len(enc)] = True
    return ids, mask


def ubm_forward(
    sessions: list[EncodedSession] | EncodedSession,
    params: UbmParams,
    vocab: Vocabulary,
    train: bool = False,
    drop_rng: np.random.Generator | None = None,
    trim: bool = True,
) -> tuple[Tensor, Tensor, np.ndarray]:
    """Full two-level forward.

    Returns (interaction vectors (B, L, d), session embeddings (B, d),
    slot mask (B, L)).  With ``trim`` the slot axis is cut to the longest
    real length in the batch; padding invariance makes this a no-op on the
    outputs.
    """
    if isinstance(sessions, EncodedSession):
        sessions = [sessions]
    b = len(sessions)
    full_l = len(sessions[0].pad_mask)
    mask = np.array([s.pad_mask for s in sessions], dtype=bool)
    l = max(1, int(mask.sum(axis=1).max())) if trim else full_l
    mask = mask[:, :l]

    flat_encs = []
    flat_pos = []
    for i, s in enumerate(sessions):
        for j in range(l):
            if mask[i, j]:
                flat_encs.append(s.interactions[j])
                flat_pos.append(i * l + j)
    ids, tok_mask = _token_batch(flat_encs, vocab.pad_id)
    real_vecs = interaction_encode(ids, tok_mask, params, train, drop_rng)
    d = params.config.hidden_size
    slots = T.reshape(T.scatter_rows(real_vecs, np.asarray(flat_pos), b * l), (b, l, d))
    out, pooled = session_encode(slots, mask, params, train, drop_rng)
    return slots, pooled, mask


def embed_items(
    items: list[Item],
    params: UbmParams,
    vocab: Vocabulary,
    limits: TokenLimits,
) -> Tensor:
    """Embed products as one-interaction sessions without action markers."""
    encs = [tokenize_item(p, vocab, limits) for p in items]
    ids, tok_mask = _token_batch(encs, vocab.pad_id)
    vecs = interaction_encode(ids, tok_mask, params, train=False)
    b = T.reshape(vecs, (len(items), 1, params.config.hidden_size))
    _, pooled = session_encode(b, np.ones((len(items), 1), dtype=bool), params, train=False)
    return pooled


def embed_item_as_session(
    item: Item, params: UbmParams, vocab: Vocabulary, limits: TokenLimits
) -> np.ndarray:
    return embed_items([item], params, vocab, limits).data[0]
