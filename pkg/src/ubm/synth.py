"""Synthetic session corpus with planted latent intents.

Each session is driven by one hidden intent that controls its word
distribution (Zipf-weighted over a shared word list), its item
neighborhood, and its purchase probability.  The structure is strong
enough that contrastive pre-training measurably improves the downstream
tasks, which the acceptance suite relies on.

Also derives the three task datasets: purchase intention (PIP), remaining
length (RLP) and next item (NIP).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from .rng import rng_for
from .sessions import (
    Action,
    Interaction,
    Item,
    Query,
    Session,
    TokenLimits,
    item_key,
    parse_session_record,
    session_to_record,
)

TASKS = ("pip", "rlp", "nip")
MIN_INPUT_LEN = 5  # PIP/RLP inputs shorter than this are dropped

_SYLLABLES = [c + v for c in "bdfglmnprstvz" for v in "aeiou"]


def _word(i: int) -> str:
    first = _SYLLABLES[i % len(_SYLLABLES)]
    second = _SYLLABLES[(i // len(_SYLLABLES)) % len(_SYLLABLES)]
    return first + second + ("x" if i >= len(_SYLLABLES) ** 2 else "")


@dataclass(frozen=True)
class SynthConfig:
    num_intents: int = 10
    vocab_size: int = 500
    items_per_intent: int = 20
    session_min: int = 2
    session_max: int = 32
    session_geom_p: float = 0.18
    purchase_probs: tuple[float, ...] = ()
    seed: int = 0
    num_sessions: int = 1000

    def __post_init__(self):
        if self.vocab_size < self.num_intents:
            raise ValueError("vocab_size must be at least num_intents")
        if self.session_min < 1:
            raise ValueError("session_min must be >= 1")
        if self.session_max < self.session_min:
            raise ValueError("session_max must be >= session_min")
        if not 0.0 < self.session_geom_p <= 1.0:
            raise ValueError("session_geom_p must be in (0, 1]")
        probs = self.purchase_probs or tuple(
            0.15 + 0.7 * k / max(1, self.num_intents - 1) for k in range(self.num_intents)
        )
        if len(probs) == 1:
            probs = probs * self.num_intents
        if len(probs) != self.num_intents:
            raise ValueError("purchase_probs must have one entry per intent")
        if any(not 0.0 <= p <= 1.0 for p in probs):
            raise ValueError("purchase probabilities must lie in [0, 1]")
        object.__setattr__(self, "purchase_probs", tuple(float(p) for p in probs))
        if self.num_sessions < 0:
            raise ValueError("num_sessions must be >= 0")


class _Catalog:
    """Deterministic per-intent item catalog and word distributions."""

    def __init__(self, cfg: SynthConfig):
        self.cfg = cfg
        self.intent_order = []
        self.intent_weights = []
        for k in range(cfg.num_intents):
            rng = rng_for(cfg.seed, "synth.intent", k)
            order = rng.permutation(cfg.vocab_size)
            ranks = np.arange(1, cfg.vocab_size + 1, dtype=np.float64)
            weights = 1.0 / ranks**1.1
            self.intent_order.append(order)
            self.intent_weights.append(weights / weights.sum())
        self.items = [
            [self._make_item(k, j) for j in range(cfg.items_per_intent)]
            for k in range(cfg.num_intents)
        ]

    def sample_words(self, intent: int, n: int, rng: np.random.Generator) -> list[str]:
        idx = rng.choice(self.cfg.vocab_size, size=n, p=self.intent_weights[intent])
        return [_word(int(self.intent_order[intent][i])) for i in idx]

    def _make_item(self, intent: int, j: int) -> Item:
        rng = rng_for(self.cfg.seed, "synth.item", intent, j)
        title = " ".join(self.sample_words(intent, int(rng.integers(2, 5)), rng))
        category = _word(int(self.intent_order[intent][0]))
        attrs = (("color", self.sample_words(intent, 1, rng)[0]),)
        return Item(title=title, category=category, attributes=attrs)


def generate_corpus(cfg: SynthConfig, start_index: int = 0) -> Iterator[Session]:
    """Yield ``num_sessions`` sessions starting at ``start_index``.

    Sessions are a pure function of (seed, session index), so disjoint index
    ranges give independent train/validation/test corpora and generation can
    be sharded by index.
    """
    catalog = _Catalog(cfg)
    for i in range(start_index, start_index + cfg.num_sessions):
        yield _one_session(cfg, catalog, i)


def _one_session(cfg: SynthConfig, catalog: _Catalog, index: int) -> Session:
    rng = rng_for(cfg.seed, "synth.session", index)
    intent = int(rng.integers(cfg.num_intents))
    planned = min(cfg.session_min + int(rng.geometric(cfg.session_geom_p)) - 1, cfg.session_max)
    will_buy = rng.random() < cfg.purchase_probs[intent]
    # A purchase closes the shopping episode early, so high-purchase intents
    # produce systematically shorter sessions.
    length = int(rng.integers((planned + 1) // 2, planned + 1)) if will_buy else planned
    focus = int(rng.integers(cfg.items_per_intent))
    items = catalog.items[intent]

    def search_interaction() -> Interaction:
        query = " ".join(catalog.sample_words(intent, int(rng.integers(1, 4)), rng))
        return Interaction(Action.SEARCH, Query(query))

    inters: list[Interaction] = []
    if length >= 2 and rng.random() < 0.6:
        inters.append(search_interaction())
    pos = focus
    while len(inters) < length - 1:
        r = rng.random()
        if r < 0.12:
            inters.append(search_interaction())
            continue
        # browse a small neighborhood around the focus item
        pos = (focus + int(rng.integers(-2, 3))) % cfg.items_per_intent
        if r < 0.24:
            inters.append(Interaction(Action.ADD, items[pos]))
        else:
            inters.append(Interaction(Action.VIEW, items[pos]))
    if will_buy:
        inters.append(Interaction(Action.BUY, items[focus]))
    else:
        pos = (focus + int(rng.integers(-2, 3))) % cfg.items_per_intent
        inters.append(Interaction(Action.VIEW, items[pos]))
    return Session(session_id=f"synth-{index}", interactions=tuple(inters[:length]))


# ---------------------------------------------------------------------------
# task dataset derivation


@dataclass(frozen=True)
class TaskExample:
    input: Session
    label: float | int | str


@dataclass
class TaskDataset:
    task: str
    split: str
    examples: list[TaskExample] = field(default_factory=list)

    @property
    def size(self) -> int:
        return len(self.examples)


@dataclass
class TaskData:
    """All splits of one task, plus the NIP candidate pool when relevant."""

    task: str
    splits: dict[str, TaskDataset]
    pool: dict[str, Item] | None = None
    train_label_counts: dict[str, int] | None = None


def _first_buy_index(s: Session) -> int | None:
    for i, inter in enumerate(s.interactions):
        if inter.action is Action.BUY:
            return i
    return None


def _derive_pip(split: str, sessions: list[Session]) -> TaskDataset:
    pos: list[TaskExample] = []
    neg: list[TaskExample] = []
    for s in sessions:
        buy_at = _first_buy_index(s)
        if buy_at is None:
            if len(s) >= MIN_INPUT_LEN:
                neg.append(TaskExample(s, 0))
        elif buy_at >= MIN_INPUT_LEN:
            prefix = Session(s.session_id, s.interactions[:buy_at])
            pos.append(TaskExample(prefix, 1))
    # Balance by cyclically duplicating the minority class (the paper's
    # regime over-samples purchases; synthetic corpora can lean either way).
    minority, majority = (pos, neg) if len(pos) <= len(neg) else (neg, pos)
    out = pos + neg
    if minority and len(minority) < len(majority):
        deficit = len(majority) - len(minority)
        out = out + [minority[i % len(minority)] for i in range(deficit)]
    return TaskDataset("pip", split, out)


def _derive_rlp(split: str, sessions: list[Session], seed: int) -> TaskDataset:
    out = []
    for idx, s in enumerate(sessions):
        if len(s) < MIN_INPUT_LEN + 1:
            continue
        rng = rng_for(seed, f"rlp.cut.{split}", idx)
        cut = int(rng.integers(MIN_INPUT_LEN, len(s)))
        prefix = Session(s.session_id, s.interactions[:cut])
        out.append(TaskExample(prefix, len(s) - cut))
    return TaskDataset("rlp", split, out)


def _nip_pairs(sessions: list[Session]) -> Iterator[tuple[Session, Item]]:
    for s in sessions:
        for i in range(1, len(s)):
            target = s.interactions[i].item
            if target is None:
                continue
            yield Session(s.session_id, s.interactions[:i]), target


def derive_task_datasets(
    splits: dict[str, list[Session]],
    task: str,
    seed: int,
    nip_min_count: int = 5,
) -> TaskData:
    """Derive train/valid/test datasets for one downstream task.

    PIP: binary purchase labels, inputs truncated before the first buy,
    minority class over-sampled to a balanced set.  RLP: sessions cut at a
    random position from ``MIN_INPUT_LEN`` onward; the label counts the
    remaining interactions.  NIP: every prefix paired with its next
    item-bearing interaction; items seen fewer than ``nip_min_count`` times
    in training leave the pool, and validation/test examples whose label is
    outside the pool are removed.
    """
    if task not in TASKS:
        raise ValueError(f"unknown task {task!r}; expected one of {TASKS}")
    if task == "pip":
        return TaskData("pip", {name: _derive_pip(name, ss) for name, ss in splits.items()})
    if task == "rlp":
        return TaskData("rlp", {name: _derive_rlp(name, ss, seed) for name, ss in splits.items()})

    train_pairs = list(_nip_pairs(splits.get("train", [])))
    counts: dict[str, int] = {}
    items: dict[str, Item] = {}
    for _, target in train_pairs:
        key = item_key(target)
        counts[key] = counts.get(key, 0) + 1
        items[key] = target
    pool = {k: items[k] for k, c in counts.items() if c >= nip_min_count}
    out: dict[str, TaskDataset] = {}
    for name, sessions in splits.items():
        pairs = train_pairs if name == "train" else list(_nip_pairs(sessions))
        examples = [
            TaskExample(prefix, item_key(target))
            for prefix, target in pairs
            if item_key(target) in pool
        ]
        out[name] = TaskDataset("nip", name, examples)
    label_counts = {k: counts[k] for k in pool}
    return TaskData("nip", out, pool=pool, train_label_counts=label_counts)


# ---------------------------------------------------------------------------
# JSONL persistence


def write_task_dataset(path, ds: TaskDataset) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ex in ds.examples:
            fh.write(
                json.dumps(
                    {"input": session_to_record(ex.input), "label": ex.label},
                    ensure_ascii=False,
                )
                + "\n"
            )


def read_task_dataset(path, task: str, split: str, limits: TokenLimits) -> TaskDataset:
    examples = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            sess = parse_session_record(json.dumps(obj["input"]), limits)
            examples.append(TaskExample(sess, obj["label"]))
    return TaskDataset(task, split, examples)


def write_nip_pool(path, pool: dict[str, Item], counts: dict[str, int]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for key in sorted(pool):
            item = pool[key]
            fh.write(
                json.dumps(
                    {
                        "item_id": key,
                        "train_count": counts[key],
                        "item": {
                            "title": item.title,
                            "category": item.category,
                            "attributes": [{"name": n, "value": v} for n, v in item.attributes],
                        },
                    },
                    ensure_ascii=False,
                )
                + "\n"
            )


def read_nip_pool(path) -> tuple[dict[str, Item], dict[str, int]]:
    pool: dict[str, Item] = {}
    counts: dict[str, int] = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            it = obj["item"]
            pool[obj["item_id"]] = Item(
                title=it["title"],
                category=it["category"],
                attributes=tuple((a["name"], a["value"]) for a in it["attributes"]),
            )
            counts[obj["item_id"]] = int(obj["train_count"])
    return pool, counts
