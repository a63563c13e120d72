"""Corpus I/O: CoNLL-2012-style column files, word vectors, synthetic data.

A document is a flat token sequence with gold mention spans; each part of a
multi-part file is its own independent document.  The column layout follows
the shared-task distribution: word in column 4, POS in column 5, speaker in
column 10 (1-based), coreference brackets in the last column.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

PRONOUN_TAGS = frozenset({"PRP", "PRP$"})
PROPER_TAGS = frozenset({"NNP", "NNPS"})

_MIN_COLUMNS = 11  # columns 1-10 plus at least the trailing coreference column


class ConllParseError(ValueError):
    """Malformed CoNLL input; message carries the 1-based line number."""


@dataclass(frozen=True)
class Token:
    surface: str
    pos: str
    speaker: str | None
    sentence_index: int
    doc_token_index: int


@dataclass(frozen=True)
class Mention:
    id: int
    start: int  # doc_token_index of first token
    end: int    # doc_token_index of last token, inclusive
    entity_id: int | None = None


@dataclass
class Document:
    doc_key: str
    tokens: list[Token]
    mentions: list[Mention]

    def entity_partition(self):
        """Gold clusters as a list of mention-id lists, ordered by entity id."""
        clusters = {}
        for m in self.mentions:
            if m.entity_id is not None:
                clusters.setdefault(m.entity_id, []).append(m.id)
        return [clusters[k] for k in sorted(clusters)]

    def mention_tokens(self, mention):
        return self.tokens[mention.start:mention.end + 1]


def _sort_mention_spans(spans):
    """Assign dense ids in (start, end) order; spans are (start, end, entity)."""
    ordered = sorted(spans, key=lambda s: (s[0], s[1]))
    return [Mention(id=i, start=s, end=e, entity_id=ent)
            for i, (s, e, ent) in enumerate(ordered)]


_COREF_SEGMENT = re.compile(r"^(\()?(\d+)(\))?$")


def parse_conll(text):
    """Parse CoNLL column text into a list of documents (one per part)."""
    documents = []
    doc_key = None
    tokens = []
    spans = []
    open_spans = {}
    sentence_index = 0
    saw_token_in_sentence = False

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.rstrip()
        if line.startswith("#begin document"):
            if doc_key is not None:
                raise ConllParseError(f"line {lineno}: nested #begin document")
            doc_key = line[len("#begin document"):].strip()
            tokens, spans, open_spans = [], [], {}
            sentence_index = 0
            saw_token_in_sentence = False
            continue
        if line.startswith("#end document"):
            if doc_key is None:
                raise ConllParseError(f"line {lineno}: #end document outside a document")
            leftover = {e: v for e, v in open_spans.items() if v}
            if leftover:
                raise ConllParseError(
                    f"line {lineno}: unclosed coreference bracket for entity "
                    f"{sorted(leftover)[0]}")
            documents.append(Document(doc_key, tokens, _sort_mention_spans(spans)))
            doc_key = None
            continue
        if doc_key is None:
            if line and not line.startswith("#"):
                raise ConllParseError(f"line {lineno}: data outside a document")
            continue
        if not line:
            if saw_token_in_sentence:
                sentence_index += 1
                saw_token_in_sentence = False
            continue

        cols = line.split()
        if len(cols) < _MIN_COLUMNS:
            raise ConllParseError(
                f"line {lineno}: expected at least {_MIN_COLUMNS} columns, got {len(cols)}")
        idx = len(tokens)
        speaker = cols[9] if cols[9] not in ("-", "") else None
        tokens.append(Token(surface=cols[3], pos=cols[4], speaker=speaker,
                            sentence_index=sentence_index, doc_token_index=idx))
        saw_token_in_sentence = True

        coref = cols[-1]
        if coref != "-":
            for segment in coref.split("|"):
                m = _COREF_SEGMENT.match(segment)
                if not m:
                    raise ConllParseError(
                        f"line {lineno}: bad coreference segment {segment!r}")
                opens, entity, closes = m.group(1), int(m.group(2)), m.group(3)
                if opens:
                    open_spans.setdefault(entity, []).append(idx)
                if closes:
                    stack = open_spans.get(entity)
                    if not stack:
                        raise ConllParseError(
                            f"line {lineno}: close bracket for entity {entity} "
                            f"without a matching open")
                    spans.append((stack.pop(), idx, entity))

    if doc_key is not None:
        raise ConllParseError("unexpected end of input: missing #end document")
    return documents


def to_conll(documents):
    """Serialize documents back to CoNLL column text (round-trips parse_conll)."""
    lines = []
    for doc in documents:
        starts, singles, ends = {}, {}, {}
        for m in doc.mentions:
            if m.start == m.end:
                singles.setdefault(m.start, []).append(m)
            else:
                starts.setdefault(m.start, []).append(m)
                ends.setdefault(m.end, []).append(m)
        doc_id = re.sub(r"\s+", "_", doc.doc_key) or "-"
        lines.append(f"#begin document {doc.doc_key}")
        previous_sentence = None
        column_index = 0
        for tok in doc.tokens:
            if previous_sentence is not None and tok.sentence_index != previous_sentence:
                lines.append("")
                column_index = 0
            previous_sentence = tok.sentence_index
            segments = []
            # outermost spans open first so nesting is well bracketed
            for m in sorted(starts.get(tok.doc_token_index, ()),
                            key=lambda m: -m.end):
                segments.append(f"({m.entity_id}")
            for m in singles.get(tok.doc_token_index, ()):
                segments.append(f"({m.entity_id})")
            for m in sorted(ends.get(tok.doc_token_index, ()),
                            key=lambda m: -m.start):
                segments.append(f"{m.entity_id})")
            coref = "|".join(segments) if segments else "-"
            speaker = tok.speaker if tok.speaker is not None else "-"
            lines.append("\t".join([doc_id, "0", str(column_index), tok.surface,
                                    tok.pos, "-", "-", "-", "-", speaker, "-", coref]))
            column_index += 1
        lines.append("")
        lines.append("#end document")
    return "\n".join(lines) + "\n"


def read_corpus_dir(path):
    """Parse every *.conll file under `path`, in filename order."""
    files = sorted(Path(path).glob("*.conll"))
    if not files:
        raise FileNotFoundError(f"no .conll files under {path}")
    documents = []
    for f in files:
        documents.extend(parse_conll(f.read_text(encoding="utf-8")))
    return documents


def write_corpus_dir(documents, path):
    """Write one .conll file per document; returns the file paths."""
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, doc in enumerate(documents):
        p = out / f"doc_{i:04d}.conll"
        p.write_text(to_conll([doc]), encoding="utf-8")
        paths.append(p)
    return paths


# ---------------------------------------------------------------------------
# word vectors


@dataclass
class LoadStats:
    pretrained: int = 0
    oov: int = 0
    skipped_lines: int = 0
    duplicates: int = 0


class EmbeddingTable:
    """Immutable word-vector table with unknown/pad/mention-marker rows.

    Lookup tries the exact surface first, then its lowercase form, then
    falls back to the unknown row.
    """

    def __init__(self, dim, vocab, vectors, load_stats=None):
        self.dim = dim
        self.vocab = vocab
        self.vectors = vectors
        self.load_stats = load_stats or LoadStats()
        n_words = len(vocab)
        self.unk_id = n_words
        self.pad_id = n_words + 1
        self.begin_id = n_words + 2
        self.end_id = n_words + 3
        self.surfaces = [None] * n_words
        for word, idx in vocab.items():
            self.surfaces[idx] = word

    @property
    def n_rows(self):
        return self.vectors.shape[0]

    def lookup(self, surface):
        idx = self.vocab.get(surface)
        if idx is None:
            idx = self.vocab.get(surface.lower(), self.unk_id)
        return idx

    def decode(self, idx):
        """Surface form for a row id (markers map to readable placeholders)."""
        if idx < len(self.surfaces):
            return self.surfaces[idx]
        return {self.unk_id: "<unk>", self.pad_id: "<pad>",
                self.begin_id: "<m>", self.end_id: "</m>"}[idx]

    @staticmethod
    def _finish(dim, vocab, word_rows, rng, stats):
        special = rng.uniform(-0.05, 0.05, size=(3, dim))
        vectors = np.vstack([
            word_rows,
            special[0:1],                 # unknown
            np.zeros((1, dim)),           # padding
            special[1:3],                 # mention begin / end markers
        ])
        return EmbeddingTable(dim, vocab, vectors, stats)

    @classmethod
    def from_pretrained(cls, text, vocab_filter, seed, dim=300):
        """Build a table from `word v1 ... v<dim>` lines, filtered to a vocabulary."""
        stats = LoadStats()
        rows = {}
        for line in text.splitlines():
            if not line.strip():
                continue
            fields = line.rstrip("\n").split(" ")
            if len(fields) != dim + 1:
                stats.skipped_lines += 1
                continue
            word = fields[0]
            if word not in vocab_filter:
                continue
            if word in rows:
                stats.duplicates += 1
                continue
            rows[word] = np.asarray([float(v) for v in fields[1:]])
        if not rows:
            raise ValueError("no pretrained vector matches the vocabulary filter")
        stats.pretrained = len(rows)
        rng = np.random.default_rng(seed)
        words = sorted(vocab_filter)
        vocab = {w: i for i, w in enumerate(words)}
        word_rows = np.empty((len(words), dim))
        for w, i in vocab.items():
            if w in rows:
                word_rows[i] = rows[w]
            else:
                word_rows[i] = rng.uniform(-0.05, 0.05, size=dim)
                stats.oov += 1
        return cls._finish(dim, vocab, word_rows, rng, stats)

    @classmethod
    def random(cls, words, dim, seed):
        """Uniform [-0.05, 0.05] rows for every word; no pretrained file needed."""
        rng = np.random.default_rng(seed)
        ordered = sorted(set(words))
        vocab = {w: i for i, w in enumerate(ordered)}
        rows = rng.uniform(-0.05, 0.05, size=(len(ordered), dim))
        stats = LoadStats(oov=len(ordered))
        return cls._finish(dim, vocab, rows, rng, stats)

    @classmethod
    def from_corpus(cls, documents, dim, seed):
        surfaces = {t.surface for doc in documents for t in doc.tokens}
        return cls.random(surfaces, dim, seed)


def load_embeddings(text, vocab_filter, seed, dim=300):
    return EmbeddingTable.from_pretrained(text, vocab_filter, seed, dim=dim)


# ---------------------------------------------------------------------------
# synthetic corpora

_THIRD_PERSON_PRONOUNS = ("he", "she", "it", "they", "him", "her", "his")


@dataclass
class SynthConfig:
    """Knobs for the synthetic-corpus generator.

    Every entity is realized as one proper-name token type plus pronoun
    mentions; a per-entity cue token is planted next to pronoun mentions so
    coreference is learnable from context windows.  `cue_noise` is the
    probability that a pronoun's cue names a different entity (used to make
    pronoun pairs resolvable only through a bridging name mention), and
    `first_person_rate` mixes in "I" pronouns for speaker-substitution
    exercises.
    """
    documents: int = 20
    entities_per_doc: int = 6
    mentions_per_entity: int = 4
    vocab_size: int = 120
    pronoun_rate: float = 0.4
    speaker_count: int = 2
    cue_noise: float = 0.0
    first_person_rate: float = 0.0
    min_gap: int = 2
    max_gap: int = 5
    tokens_per_sentence: int = 10

    def validate(self):
        if self.documents < 1:
            raise ValueError("synthetic corpus needs at least one document")
        if self.entities_per_doc < 1 or self.mentions_per_entity < 1:
            raise ValueError("entities per document and mentions per entity must be >= 1")
        if self.vocab_size < 1:
            raise ValueError("vocabulary size must be >= 1")
        if not (0 <= self.pronoun_rate <= 1 and 0 <= self.cue_noise <= 1
                and 0 <= self.first_person_rate <= 1):
            raise ValueError("rates must lie in [0, 1]")
        if self.min_gap < 0 or self.max_gap < self.min_gap:
            raise ValueError("filler gap bounds must satisfy 0 <= min <= max")


def generate_synthetic_corpus(config, seed):
    """Deterministically generate gold-annotated documents under `seed`."""
    config.validate()
    rng = np.random.default_rng(seed)
    documents = []
    for d in range(config.documents):
        documents.append(_generate_document(config, rng, d))
    return documents


def _generate_document(config, rng, doc_index):
    n_entities = config.entities_per_doc
    names = [f"Entity{doc_index}_{e}" for e in range(n_entities)]
    cues = [f"cue{doc_index}_{e}" for e in range(n_entities)]

    surfaces, tags = [], []
    spans = []

    def emit(surface, pos):
        surfaces.append(surface)
        tags.append(pos)

    def emit_fillers():
        for _ in range(int(rng.integers(config.min_gap, config.max_gap + 1))):
            emit(f"w{rng.integers(config.vocab_size)}", "NN")

    # round-robin over entities keeps same-entity mentions inside small windows
    for occurrence in range(config.mentions_per_entity):
        for e in range(n_entities):
            emit_fillers()
            use_pronoun = occurrence > 0 and rng.random() < config.pronoun_rate
            start = len(surfaces)
            if use_pronoun:
                if rng.random() < config.first_person_rate:
                    emit("I", "PRP")
                else:
                    emit(str(rng.choice(_THIRD_PERSON_PRONOUNS)), "PRP")
                cue_entity = e
                if config.cue_noise and rng.random() < config.cue_noise:
                    others = [x for x in range(n_entities) if x != e]
                    if others:
                        cue_entity = int(rng.choice(others))
                emit(cues[cue_entity], "NN")
            else:
                emit(names[e], "NNP")
                emit(cues[e], "NN")
            spans.append((start, start, e))
    emit_fillers()

    tokens = []
    sentence_index = 0
    speaker = _pick_speaker(config, rng)
    for i, (surface, pos) in enumerate(zip(surfaces, tags)):
        if i and i % config.tokens_per_sentence == 0:
            sentence_index += 1
            speaker = _pick_speaker(config, rng)
        tokens.append(Token(surface=surface, pos=pos, speaker=speaker,
                            sentence_index=sentence_index, doc_token_index=i))
    doc_key = f"(synth/doc_{doc_index:04d}); part 000"
    return Document(doc_key, tokens, _sort_mention_spans(spans))


def _pick_speaker(config, rng):
    if config.speaker_count <= 0:
        return None
    return f"speaker{int(rng.integers(config.speaker_count))}"
