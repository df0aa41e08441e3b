"""Tokenization and triplet sequence construction.

A triplet is rendered as one token sequence

    [B] <head description> [S] <relation description> [S] <tail description> [S]

padded to a fixed length, with half-open index spans marking the three
description segments.  The tokenizer is a whitespace/punctuation word
tokenizer over lowercased text; anything implementing the same surface
(``encode_text``/``decode``/special ids) can be substituted.
"""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass

from .errors import EncodingError
from .graph import KnowledgeGraph, Triple

_WORD_RE = re.compile(r"[a-z0-9]+")

PAD, UNK, BEGIN, SEP = 0, 1, 2, 3
SPECIAL_TOKENS = ("[PAD]", "[UNK]", "[B]", "[S]")


def word_tokens(text: str) -> list[str]:
    """Lowercased alphanumeric runs; punctuation and whitespace delimit."""
    return _WORD_RE.findall(text.lower())


@dataclass(frozen=True)
class EncodedTriple:
    """A padded token-id sequence plus the three description spans.

    Spans are half-open [start, end) ranges into ``token_ids``; they are
    nonempty, disjoint, ordered head < rel < tail, and contain no special
    tokens.  ``attention_len`` is the unpadded length.
    """

    token_ids: tuple[int, ...]
    head_span: tuple[int, int]
    rel_span: tuple[int, int]
    tail_span: tuple[int, int]
    attention_len: int

    @property
    def spans(self) -> tuple[tuple[int, int], tuple[int, int], tuple[int, int]]:
        return (self.head_span, self.rel_span, self.tail_span)


class Tokenizer:
    """Word-level vocabulary with the four special tokens at ids 0..3."""

    def __init__(self, content_tokens: list[str], max_len: int = 128):
        if max_len < 8:
            raise ValueError("max_len must leave room for three nonempty spans")
        self.max_len = max_len
        self.id_to_token = list(SPECIAL_TOKENS) + list(content_tokens)
        self.token_to_id = {tok: i for i, tok in enumerate(self.id_to_token)}
        if len(self.token_to_id) != len(self.id_to_token):
            raise ValueError("duplicate tokens in vocabulary")

    @property
    def vocab_size(self) -> int:
        return len(self.id_to_token)

    def encode_text(self, text: str) -> list[int]:
        """Token ids for one description; unknown words map to UNK."""
        return [self.token_to_id.get(w, UNK) for w in word_tokens(text)]

    def decode(self, ids) -> str:
        return " ".join(self.id_to_token[i] for i in ids)

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for tok in self.id_to_token:
                fh.write(tok + "\n")

    @classmethod
    def load(cls, path: str, max_len: int = 128) -> "Tokenizer":
        with open(path, encoding="utf-8") as fh:
            tokens = [line.rstrip("\n") for line in fh if line.rstrip("\n")]
        if tuple(tokens[:4]) != SPECIAL_TOKENS:
            raise ValueError(f"{path} does not start with the special tokens")
        return cls(tokens[4:], max_len=max_len)


def build_vocab(g: KnowledgeGraph, min_count: int = 1, max_len: int = 128) -> Tokenizer:
    """Build a tokenizer from every entity and relation description.

    Content tokens are those occurring at least ``min_count`` times,
    ordered by (count desc, lexicographic) after the special tokens.
    """
    counts: Counter[str] = Counter()
    for desc in g.entity_descriptions.values():
        counts.update(word_tokens(desc))
    for desc in g.relation_descriptions.values():
        counts.update(word_tokens(desc))
    if not counts:
        raise ValueError("no tokens found in any description")
    kept = sorted((tok for tok, c in counts.items() if c >= min_count),
                  key=lambda tok: (-counts[tok], tok))
    return Tokenizer(kept, max_len=max_len)


def _truncate_segments(segments: list[list[int]], budget: int) -> list[list[int]]:
    """Drop one token at a time from the currently longest segment.

    Ties go to the rightmost longest segment; every segment keeps at least
    one token.
    """
    lengths = [len(s) for s in segments]
    if sum(lengths) <= budget:
        return segments
    if budget < len(segments):
        raise EncodingError(f"max_len leaves a budget of {budget} tokens for "
                            f"{len(segments)} segments")
    while sum(lengths) > budget:
        longest = max(range(len(lengths)), key=lambda i: (lengths[i], i))
        if lengths[longest] <= 1:
            raise EncodingError("cannot truncate a segment below one token")
        lengths[longest] -= 1
    return [s[:n] for s, n in zip(segments, lengths)]


def encode_triplet(tok: Tokenizer, g: KnowledgeGraph, t: Triple) -> EncodedTriple:
    """Render a triple as its padded special-token sequence with spans.

    Raises EncodingError if any description tokenizes to zero tokens (an
    empty span would make mean pooling undefined).
    """
    g.check_triple(t)
    segments = [tok.encode_text(g.entity_description(t.head)),
                tok.encode_text(g.relation_description(t.relation)),
                tok.encode_text(g.entity_description(t.tail))]
    for seg, what, name in zip(segments,
                               ("head", "relation", "tail"),
                               (g.entities[t.head], g.relations[t.relation],
                                g.entities[t.tail])):
        if not seg:
            raise EncodingError(f"{what} {name!r} has a description with no tokens")

    segments = _truncate_segments(segments, tok.max_len - 4)

    ids = [BEGIN]
    spans = []
    for seg in segments:
        start = len(ids)
        ids.extend(seg)
        spans.append((start, len(ids)))
        ids.append(SEP)
    attention_len = len(ids)
    ids.extend([PAD] * (tok.max_len - attention_len))

    return EncodedTriple(token_ids=tuple(ids),
                         head_span=spans[0],
                         rel_span=spans[1],
                         tail_span=spans[2],
                         attention_len=attention_len)


class EncodingCache:
    """Memo for encode_triplet; encoding is pure so reuse is always safe."""

    def __init__(self, tok: Tokenizer, g: KnowledgeGraph, max_size: int = 500_000):
        self.tok = tok
        self.g = g
        self.max_size = max_size
        self._store: dict[tuple[int, int, int], EncodedTriple] = {}

    def get(self, t: Triple) -> EncodedTriple:
        key = t.as_tuple()
        hit = self._store.get(key)
        if hit is None:
            hit = encode_triplet(self.tok, self.g, t)
            if len(self._store) >= self.max_size:
                self._store.clear()
            self._store[key] = hit
        return hit

    def get_many(self, triples) -> list[EncodedTriple]:
        return [self.get(t) for t in triples]
