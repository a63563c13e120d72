"""Mention input windows and pairwise joint features.

Each mention becomes a fixed-length window of word / POS token ids:
8 preceding tokens, a begin marker, the mention itself (its last 10 tokens
when longer), an end marker, and 8 succeeding tokens.  Windows are counted
over raw document tokens, across sentence boundaries.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class EncodingConfig:
    context_window: int = 8
    max_mention_tokens: int = 10
    max_token_distance: int = 2000

    @property
    def length(self):
        return 2 * self.context_window + self.max_mention_tokens + 2


@dataclass
class MentionEncoding:
    word_ids: np.ndarray
    pos_ids: np.ndarray
    mask: np.ndarray


@dataclass(frozen=True)
class PairFeatures:
    same_speaker: int
    token_distance: int
    mention_index_distance: int


class PosVocabulary:
    """POS-tag index built from a training corpus.

    Line-per-tag text persistence, index = line number.  The first four
    rows are reserved: padding, mention-begin, mention-end, unknown.
    """

    _SPECIALS = ("<pad>", "<m>", "</m>", "<unk>")

    def __init__(self, tags):
        self.tags = list(self._SPECIALS) + [t for t in tags if t not in self._SPECIALS]
        self.index = {t: i for i, t in enumerate(self.tags)}
        self.pad_id, self.begin_id, self.end_id, self.unk_id = range(4)

    def __len__(self):
        return len(self.tags)

    def encode(self, tag):
        return self.index.get(tag, self.unk_id)

    @classmethod
    def from_documents(cls, documents):
        tags = sorted({t.pos for doc in documents for t in doc.tokens})
        return cls(tags)

    def to_text(self):
        return "\n".join(self.tags) + "\n"

    @classmethod
    def from_text(cls, text):
        lines = [l for l in text.splitlines() if l]
        if lines[:4] != list(cls._SPECIALS):
            raise ValueError("POS vocabulary file is missing its reserved rows")
        return cls(lines[4:])


def encode_mention(doc, mention, emb, pos_vocab, config=EncodingConfig()):
    """Fixed-layout window of word / POS ids for one mention.

    Layout: [context][begin marker][mention, tail-kept][end marker][context],
    padded (mask 0) where the mention is short or the document runs out.
    """
    cw, mm = config.context_window, config.max_mention_tokens
    length = config.length
    word_ids = np.full(length, emb.pad_id, dtype=np.int64)
    pos_ids = np.full(length, pos_vocab.pad_id, dtype=np.int64)
    mask = np.zeros(length, dtype=np.float64)

    def put(slot, token):
        word_ids[slot] = emb.lookup(token.surface)
        pos_ids[slot] = pos_vocab.encode(token.pos)
        mask[slot] = 1.0

    tokens = doc.tokens
    # left context ends flush against the begin marker
    left = tokens[max(0, mention.start - cw):mention.start]
    for offset, token in enumerate(reversed(left)):
        put(cw - 1 - offset, token)

    word_ids[cw] = emb.begin_id
    pos_ids[cw] = pos_vocab.begin_id
    mask[cw] = 1.0

    span = tokens[mention.start:mention.end + 1]
    if len(span) > mm:
        span = span[-mm:]  # heads of English NPs are typically final
    for offset, token in enumerate(span):
        put(cw + 1 + offset, token)

    end_slot = cw + 1 + mm
    word_ids[end_slot] = emb.end_id
    pos_ids[end_slot] = pos_vocab.end_id
    mask[end_slot] = 1.0

    right = tokens[mention.end + 1:mention.end + 1 + cw]
    for offset, token in enumerate(right):
        put(end_slot + 1 + offset, token)

    return MentionEncoding(word_ids=word_ids, pos_ids=pos_ids, mask=mask)


def pair_features(doc, a, b):
    """Joint features for two distinct mentions of the same document."""
    if a.id == b.id:
        raise ValueError("pair_features: mentions must be distinct")
    return _joint_features(doc, a, b)


def _joint_features(doc, a, b):
    speaker_a = doc.tokens[a.start].speaker
    speaker_b = doc.tokens[b.start].speaker
    same = int(speaker_a is not None and speaker_a == speaker_b)
    return PairFeatures(same_speaker=same,
                        token_distance=abs(a.start - b.start),
                        mention_index_distance=abs(a.id - b.id))


def normalize_distance(token_distance, max_token_distance=2000):
    """Log-scale token distance into [0, 1], clipped at the configured cap."""
    if token_distance < 0:
        raise ValueError("token distance cannot be negative")
    scaled = math.log1p(token_distance) / math.log1p(max_token_distance)
    return min(1.0, scaled)


class EncodedDocument:
    """All mention windows of a document, stacked for batching."""

    def __init__(self, doc, emb, pos_vocab, config=EncodingConfig()):
        self.doc = doc
        self.config = config
        n = len(doc.mentions)
        length = config.length
        self.word_ids = np.zeros((n, length), dtype=np.int64)
        self.pos_ids = np.zeros((n, length), dtype=np.int64)
        self.masks = np.zeros((n, length), dtype=np.float64)
        for m in doc.mentions:
            enc = encode_mention(doc, m, emb, pos_vocab, config)
            self.word_ids[m.id] = enc.word_ids
            self.pos_ids[m.id] = enc.pos_ids
            self.masks[m.id] = enc.mask

    @property
    def n_mentions(self):
        return len(self.doc.mentions)

    def pair_vector(self, a_id, b_id):
        """Model-facing joint features; also defined for a degenerate self pair."""
        a = self.doc.mentions[a_id]
        b = self.doc.mentions[b_id]
        feats = _joint_features(self.doc, a, b)
        return np.array([
            float(feats.same_speaker),
            normalize_distance(feats.token_distance, self.config.max_token_distance),
        ])
