"""Augmentation strategies that manufacture positive views for contrastive
training.

Item-level: token masking over an interaction's word tokens, and pairing an
item with the next item seen in the same shopping episode.  Session-level:
swapping two interactions, and token masking that may also hit the action
markers.  Dropout masking is not a data transform; it happens inside the
encoders whenever they run in train mode.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Iterator

import numpy as np

from .sessions import (
    Action,
    EncodedInteraction,
    EncodedSession,
    Item,
    Session,
    TokenLimits,
    Vocabulary,
    tokenize_item,
)


@dataclass(frozen=True)
class MaskPolicy:
    """Selection probability and the fate of selected positions.

    Of the selected tokens, ``mask_frac`` become [MASK], ``random_frac``
    become a random non-reserved token, and ``keep_frac`` stay unchanged.
    """

    select_prob: float = 0.20
    mask_frac: float = 0.50
    random_frac: float = 0.25
    keep_frac: float = 0.25
    protect_structural: bool = True

    def __post_init__(self):
        if not 0.0 <= self.select_prob <= 1.0:
            raise ValueError("select_prob must be in [0, 1]")
        if abs(self.mask_frac + self.random_frac + self.keep_frac - 1.0) > 1e-9:
            raise ValueError("mask/random/keep fractions must sum to 1")


@dataclass(frozen=True)
class AugmentedItemBatch:
    """2N item encodings (first N anchors, last N their next items) plus
    index-aligned token-masked views."""

    items: tuple[EncodedInteraction, ...]
    masked: tuple[EncodedInteraction, ...]

    @property
    def pair_count(self) -> int:
        return len(self.items) // 2


@dataclass(frozen=True)
class AugmentedSessionBatch:
    originals: tuple[EncodedSession, ...]
    reordered: tuple[EncodedSession, ...]
    masked: tuple[EncodedSession, ...]


def _mask_ids(
    ids: tuple[int, ...],
    eligible: np.ndarray,
    policy: MaskPolicy,
    vocab: Vocabulary,
    rng: np.random.Generator,
) -> tuple[int, ...]:
    n = len(ids)
    sel_draws = rng.random(n)
    fate_draws = rng.random(n)
    lo = vocab.reserved_id_bound()
    rand_ids = rng.integers(lo, max(vocab.size, lo + 1), size=n)
    out = list(ids)
    for i in range(n):
        if not eligible[i] or sel_draws[i] >= policy.select_prob:
            continue
        if fate_draws[i] < policy.mask_frac:
            out[i] = vocab.mask_id
        elif fate_draws[i] < policy.mask_frac + policy.random_frac and lo < vocab.size:
            out[i] = int(rand_ids[i])
        # else: selected but kept unchanged
    return tuple(out)


def _eligibility(ids, vocab: Vocabulary, policy: MaskPolicy, include_actions: bool) -> np.ndarray:
    structural = vocab.structural_ids()
    actions = vocab.action_ids()
    out = np.ones(len(ids), dtype=bool)
    for i, t in enumerate(ids):
        if policy.protect_structural and t in structural:
            out[i] = False
        elif t in actions and not include_actions:
            out[i] = False
    return out


def item_token_mask(
    enc: EncodedInteraction,
    policy: MaskPolicy,
    vocab: Vocabulary,
    rng: np.random.Generator,
) -> EncodedInteraction:
    """Mask word tokens of one interaction; action and structural markers
    are never selected."""
    eligible = _eligibility(enc.token_ids, vocab, policy, include_actions=False)
    return EncodedInteraction(_mask_ids(enc.token_ids, eligible, policy, vocab, rng))


def action_item_token_mask(
    es: EncodedSession,
    policy: MaskPolicy,
    vocab: Vocabulary,
    rng: np.random.Generator,
) -> EncodedSession:
    """Session-level masking whose eligible set also covers action markers."""
    out = []
    for enc, real in zip(es.interactions, es.pad_mask):
        if not real:
            out.append(enc)
            continue
        eligible = _eligibility(enc.token_ids, vocab, policy, include_actions=True)
        out.append(EncodedInteraction(_mask_ids(enc.token_ids, eligible, policy, vocab, rng)))
    return EncodedSession(interactions=tuple(out), pad_mask=es.pad_mask)


def interaction_reorder(
    es: EncodedSession,
    rng: np.random.Generator,
    max_distance: int | None = None,
) -> EncodedSession:
    """Exchange two distinct real interactions chosen uniformly at random.

    Sessions with fewer than two real interactions come back unchanged.
    ``max_distance`` restricts the swap to positions at most that far apart.
    """
    real = int(sum(es.pad_mask))
    if real < 2:
        return es
    pairs = [
        (i, j)
        for i in range(real)
        for j in range(i + 1, real)
        if max_distance is None or j - i <= max_distance
    ]
    if not pairs:
        return es
    i, j = pairs[int(rng.integers(len(pairs)))]
    out = list(es.interactions)
    out[i], out[j] = out[j], out[i]
    return EncodedSession(interactions=tuple(out), pad_mask=es.pad_mask)


def next_item_pairs(corpus: Iterable[Session]) -> Iterator[tuple[Item, Item]]:
    """Yield (item, next item) pairs of consecutive item-bearing interactions.

    Search interactions are skipped without breaking adjacency.  A purchase
    closes its shopping episode: the bought item can be the second member of
    a pair but never the first.
    """
    for session in corpus:
        prev: Item | None = None
        for inter in session.interactions:
            item = inter.item
            if item is None:
                continue
            if prev is not None:
                yield prev, item
            prev = None if inter.action is Action.BUY else item


def build_item_batch(
    pairs: list[tuple[Item, Item]],
    vocab: Vocabulary,
    limits: TokenLimits,
    policy: MaskPolicy,
    rng: np.random.Generator,
) -> AugmentedItemBatch:
    """Tokenize N item pairs into the 2N layout and attach masked views."""
    items = [tokenize_item(a, vocab, limits) for a, _ in pairs]
    items += [tokenize_item(b, vocab, limits) for _, b in pairs]
    masked = [item_token_mask(e, policy, vocab, rng) for e in items]
    return AugmentedItemBatch(items=tuple(items), masked=tuple(masked))


def build_session_batch(
    encoded: list[EncodedSession],
    policy: MaskPolicy,
    vocab: Vocabulary,
    rng: np.random.Generator,
    max_distance: int | None = None,
) -> AugmentedSessionBatch:
    reordered = tuple(interaction_reorder(es, rng, max_distance) for es in encoded)
    masked = tuple(action_item_token_mask(es, policy, vocab, rng) for es in encoded)
    return AugmentedSessionBatch(
        originals=tuple(encoded), reordered=reordered, masked=masked
    )
