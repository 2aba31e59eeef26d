"""Session data model, vocabulary, and tokenization.

A session is an ordered list of interactions; each interaction pairs an
action with either an item (title/category/attributes) or a search query.
Records arrive as JSONL, one object per line:

    {"session_id": "...", "interactions": [
        {"action": "view", "item": {"title": "...", "category": "...",
                                    "attributes": [{"name": "...", "value": "..."}]}},
        {"action": "search", "query": "..."}]}

Tokenization is word-level: lowercase, split on whitespace/punctuation with
punctuation dropped.  Structural markers, action markers, field markers and
attribute-name markers are reserved tokens with ids below all corpus words.
"""

from __future__ import annotations

import collections
import hashlib
import json
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Iterator

PAD, CLS, SEP, MASK, UNK = "[PAD]", "[CLS]", "[SEP]", "[MASK]", "[UNK]"
STRUCTURAL_TOKENS = (PAD, CLS, SEP, MASK, UNK)
TITLE_TOKEN, CATEGORY_TOKEN = "[TITLE]", "[CATEGORY]"

_WORD_RE = re.compile(r"\w+", re.UNICODE)

# Count of attribute-name markers that were absent from the vocabulary and
# fell back to [UNK]; not an error, but visible to callers.
TOKENIZE_WARNINGS = collections.Counter()


class ValidationError(ValueError):
    """A record violates the session schema."""


class ParseError(ValueError):
    """A line is not valid JSON."""


class Action(Enum):
    SEARCH = "search"
    VIEW = "view"
    ADD = "add"
    BUY = "buy"

    @property
    def token(self) -> str:
        return f"[{self.value.upper()}]"


ACTION_TOKENS = tuple(a.token for a in Action)


def tokenize_text(text: str) -> list[str]:
    """Lowercased word tokens; punctuation acts as a separator and is dropped."""
    return _WORD_RE.findall(text.lower())


def attribute_token(name: str) -> str:
    """Reserved-token form of an attribute name: uppercase, bracketed,
    whitespace runs collapsed."""
    collapsed = " ".join(name.split())
    if not collapsed:
        raise ValidationError("attribute name must be non-empty")
    return f"[{collapsed.upper()}]"


@dataclass(frozen=True)
class Item:
    title: str
    category: str = ""
    attributes: tuple[tuple[str, str], ...] = ()

    def __post_init__(self):
        if not self.title:
            raise ValidationError("item.title must be non-empty")
        names = [attribute_token(n) for n, _ in self.attributes]
        if len(set(names)) != len(names):
            raise ValidationError("item.attributes names must be unique within an item")


@dataclass(frozen=True)
class Query:
    text: str

    def __post_init__(self):
        if not self.text:
            raise ValidationError("query text must be non-empty")


@dataclass(frozen=True)
class Interaction:
    action: Action
    payload: Item | Query

    def __post_init__(self):
        if self.action is Action.SEARCH and not isinstance(self.payload, Query):
            raise ValidationError("interaction.action: search requires a query payload")
        if self.action is not Action.SEARCH and not isinstance(self.payload, Item):
            raise ValidationError(f"interaction.action: {self.action.value} requires an item payload")

    @property
    def item(self) -> Item | None:
        return self.payload if isinstance(self.payload, Item) else None


@dataclass(frozen=True)
class Session:
    session_id: str
    interactions: tuple[Interaction, ...]

    def __post_init__(self):
        if len(self.interactions) < 1:
            raise ValidationError("session.interactions must be non-empty")

    def __len__(self) -> int:
        return len(self.interactions)


@dataclass(frozen=True)
class TokenLimits:
    max_title_tokens: int = 32
    max_item_tokens: int = 64
    max_session_len: int = 32

    def __post_init__(self):
        if min(self.max_title_tokens, self.max_item_tokens, self.max_session_len) <= 0:
            raise ValueError("token limits must be positive")
        if self.max_title_tokens > self.max_item_tokens:
            raise ValueError("max_title_tokens must not exceed max_item_tokens")

    @property
    def max_interaction_tokens(self) -> int:
        # [CLS] + action marker + payload + [SEP]
        return self.max_item_tokens + 3


@dataclass(frozen=True)
class EncodedInteraction:
    token_ids: tuple[int, ...]

    def __len__(self) -> int:
        return len(self.token_ids)


@dataclass(frozen=True)
class EncodedSession:
    """Per-interaction encodings padded to ``max_session_len`` slots."""

    interactions: tuple[EncodedInteraction, ...]
    pad_mask: tuple[bool, ...]

    @property
    def num_real(self) -> int:
        return sum(self.pad_mask)


@dataclass(frozen=True)
class Vocabulary:
    """Immutable token -> dense id map; reserved tokens occupy the low ids."""

    token_to_id: dict
    reserved: tuple[str, ...]
    attribute_tokens: tuple[str, ...]

    @property
    def size(self) -> int:
        return len(self.token_to_id)

    @property
    def num_reserved(self) -> int:
        return len(self.reserved)

    def __getattr__(self, name: str) -> int:
        # pad_id, cls_id, sep_id, mask_id, unk_id
        if name.endswith("_id"):
            token = f"[{name[:-3].upper()}]"
            if token in self.token_to_id:
                return self.token_to_id[token]
        raise AttributeError(name)

    def id_of(self, token: str) -> int:
        """Id for a token; unknown words map to [UNK]."""
        return self.token_to_id.get(token, self.token_to_id[UNK])

    def action_ids(self) -> frozenset[int]:
        return frozenset(self.token_to_id[t] for t in ACTION_TOKENS)

    def structural_ids(self) -> frozenset[int]:
        return frozenset(self.token_to_id[t] for t in (CLS, SEP, PAD))

    def reserved_id_bound(self) -> int:
        """Ids below this are reserved; at or above are corpus words."""
        return self.num_reserved

    def content_hash(self) -> str:
        payload = json.dumps(
            {"tokens": self.token_to_id, "reserved": list(self.reserved)},
            sort_keys=True,
            ensure_ascii=False,
        )
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()

    def save(self, path) -> None:
        doc = {
            "tokens": self.token_to_id,
            "reserved": list(self.reserved),
            "attribute_tokens": list(self.attribute_tokens),
            "hash": self.content_hash(),
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, ensure_ascii=False, indent=1)

    @classmethod
    def load(cls, path) -> "Vocabulary":
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
        vocab = cls(
            token_to_id=dict(doc["tokens"]),
            reserved=tuple(doc["reserved"]),
            attribute_tokens=tuple(doc["attribute_tokens"]),
        )
        if doc.get("hash") and doc["hash"] != vocab.content_hash():
            raise ValueError(f"vocabulary file {path} failed its content-hash check")
        return vocab


def build_vocab(corpus: Iterable[Session], min_freq: int = 2) -> Vocabulary:
    """Build a word-level vocabulary over the corpus.

    All reserved tokens are always present; corpus words are kept when they
    occur at least ``min_freq`` times, ordered by descending frequency then
    alphabetically.  Attribute names seen anywhere in the corpus register
    reserved marker tokens.
    """
    counts: collections.Counter = collections.Counter()
    attr_tokens: set[str] = set()
    saw_any = False
    for session in corpus:
        saw_any = True
        for inter in session.interactions:
            if isinstance(inter.payload, Query):
                counts.update(tokenize_text(inter.payload.text))
            else:
                item = inter.payload
                counts.update(tokenize_text(item.title))
                counts.update(tokenize_text(item.category))
                for name, value in item.attributes:
                    attr_tokens.add(attribute_token(name))
                    counts.update(tokenize_text(value))
    if not saw_any:
        raise ValueError("build_vocab: corpus is empty")

    reserved = list(STRUCTURAL_TOKENS) + list(ACTION_TOKENS) + [TITLE_TOKEN, CATEGORY_TOKEN]
    reserved.extend(sorted(attr_tokens))
    words = sorted((w for w, c in counts.items() if c >= min_freq), key=lambda w: (-counts[w], w))
    token_to_id = {tok: i for i, tok in enumerate(reserved)}
    for w in words:
        if w not in token_to_id:
            token_to_id[w] = len(token_to_id)
    return Vocabulary(
        token_to_id=token_to_id,
        reserved=tuple(reserved),
        attribute_tokens=tuple(sorted(attr_tokens)),
    )


def _item_payload_ids(item: Item, vocab: Vocabulary, limits: TokenLimits) -> list[int]:
    ids = [vocab.token_to_id[TITLE_TOKEN]]
    title_words = tokenize_text(item.title)[: limits.max_title_tokens]
    ids.extend(vocab.id_of(w) for w in title_words)
    ids.append(vocab.token_to_id[CATEGORY_TOKEN])
    ids.extend(vocab.id_of(w) for w in tokenize_text(item.category))
    for name, value in item.attributes:
        marker = attribute_token(name)
        if marker in vocab.token_to_id:
            ids.append(vocab.token_to_id[marker])
        else:
            TOKENIZE_WARNINGS["unknown_attribute_name"] += 1
            ids.append(vocab.token_to_id[UNK])
        ids.extend(vocab.id_of(w) for w in tokenize_text(value))
    return ids[: limits.max_item_tokens]


def tokenize_interaction(b: Interaction, vocab: Vocabulary, limits: TokenLimits) -> EncodedInteraction:
    """[CLS] [ACTION] <payload tokens> [SEP] as vocabulary ids."""
    ids = [vocab.token_to_id[CLS], vocab.token_to_id[b.action.token]]
    if isinstance(b.payload, Query):
        words = tokenize_text(b.payload.text)[: limits.max_item_tokens]
        ids.extend(vocab.id_of(w) for w in words)
    else:
        ids.extend(_item_payload_ids(b.payload, vocab, limits))
    ids.append(vocab.token_to_id[SEP])
    return EncodedInteraction(tuple(ids))


def tokenize_item(item: Item, vocab: Vocabulary, limits: TokenLimits) -> EncodedInteraction:
    """Item text alone, no action marker: [CLS] <payload> [SEP].

    Used when a product is treated as a one-interaction session, e.g. for
    candidate-pool embeddings and item-level contrastive pre-training.
    """
    ids = [vocab.token_to_id[CLS]]
    ids.extend(_item_payload_ids(item, vocab, limits))
    ids.append(vocab.token_to_id[SEP])
    return EncodedInteraction(tuple(ids))


def pad_encoding(vocab: Vocabulary) -> EncodedInteraction:
    """Placeholder encoding occupying padded session slots."""
    return EncodedInteraction((vocab.token_to_id[CLS], vocab.token_to_id[SEP]))


def encode_session(s: Session, vocab: Vocabulary, limits: TokenLimits) -> EncodedSession:
    """Tokenize every interaction and pad the slot list to ``max_session_len``."""
    if len(s) > limits.max_session_len:
        raise ValidationError(
            f"session {s.session_id}: length {len(s)} exceeds max_session_len {limits.max_session_len}"
        )
    encs = [tokenize_interaction(b, vocab, limits) for b in s.interactions]
    n_pad = limits.max_session_len - len(encs)
    encs.extend([pad_encoding(vocab)] * n_pad)
    mask = (True,) * len(s) + (False,) * n_pad
    return EncodedSession(interactions=tuple(encs), pad_mask=mask)


# ---------------------------------------------------------------------------
# JSONL ingestion / serialization


def _parse_item(obj, where: str) -> Item:
    if not isinstance(obj, dict):
        raise ValidationError(f"{where}.item: expected an object")
    title = obj.get("title")
    if not isinstance(title, str) or not title:
        raise ValidationError(f"{where}.item.title: must be a non-empty string")
    category = obj.get("category", "")
    if not isinstance(category, str):
        raise ValidationError(f"{where}.item.category: must be a string")
    attrs = []
    for j, a in enumerate(obj.get("attributes", []) or []):
        name, value = a.get("name"), a.get("value")
        if not isinstance(name, str) or not name.strip():
            raise ValidationError(f"{where}.item.attributes[{j}].name: must be a non-empty string")
        if not isinstance(value, str):
            raise ValidationError(f"{where}.item.attributes[{j}].value: must be a string")
        attrs.append((name, value))
    return Item(title=title, category=category, attributes=tuple(attrs))


def parse_session_record(line: str, limits: TokenLimits) -> Session:
    """Parse one JSONL line into a validated Session.

    Sessions longer than ``max_session_len`` keep only their most recent
    interactions.
    """
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as e:
        raise ParseError(f"malformed JSON at offset {e.pos}: {e.msg}") from None
    if not isinstance(obj, dict):
        raise ValidationError("record: expected a JSON object")
    sid = obj.get("session_id")
    if not isinstance(sid, str) or not sid:
        raise ValidationError("session_id: must be a non-empty string")
    raw = obj.get("interactions")
    if not isinstance(raw, list) or not raw:
        raise ValidationError("interactions: must be a non-empty array")

    inters: list[Interaction] = []
    for i, entry in enumerate(raw):
        where = f"interactions[{i}]"
        if not isinstance(entry, dict):
            raise ValidationError(f"{where}: expected an object")
        try:
            action = Action(entry.get("action"))
        except ValueError:
            raise ValidationError(f"{where}.action: unknown action {entry.get('action')!r}") from None
        has_q, has_i = "query" in entry, "item" in entry
        if has_q == has_i:
            raise ValidationError(f"{where}: exactly one of 'query'/'item' is required")
        if action is Action.SEARCH:
            if not has_q:
                raise ValidationError(f"{where}.query: search interactions require a query")
            q = entry["query"]
            if not isinstance(q, str) or not q:
                raise ValidationError(f"{where}.query: must be a non-empty string")
            inters.append(Interaction(action, Query(q)))
        else:
            if not has_i:
                raise ValidationError(f"{where}.item: {action.value} interactions require an item")
            inters.append(Interaction(action, _parse_item(entry["item"], where)))

    if len(inters) > limits.max_session_len:
        inters = inters[-limits.max_session_len :]
    return Session(session_id=sid, interactions=tuple(inters))


def session_to_record(s: Session) -> dict:
    out = {"session_id": s.session_id, "interactions": []}
    for inter in s.interactions:
        entry: dict = {"action": inter.action.value}
        if isinstance(inter.payload, Query):
            entry["query"] = inter.payload.text
        else:
            item = inter.payload
            entry["item"] = {
                "title": item.title,
                "category": item.category,
                "attributes": [{"name": n, "value": v} for n, v in item.attributes],
            }
        out["interactions"].append(entry)
    return out


def session_to_line(s: Session) -> str:
    return json.dumps(session_to_record(s), ensure_ascii=False)


def read_sessions_jsonl(path, limits: TokenLimits) -> Iterator[Session]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                yield parse_session_record(line, limits)
            except (ParseError, ValidationError) as e:
                raise type(e)(f"{path}:{lineno}: {e}") from None


def write_sessions_jsonl(path, sessions: Iterable[Session]) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for s in sessions:
            fh.write(session_to_line(s) + "\n")
            n += 1
    return n


def item_key(item: Item) -> str:
    """Stable content-derived identifier for an item."""
    payload = json.dumps(
        [item.title, item.category, [[n, v] for n, v in item.attributes]],
        ensure_ascii=False,
    )
    return hashlib.sha1(payload.encode("utf-8")).hexdigest()[:16]
