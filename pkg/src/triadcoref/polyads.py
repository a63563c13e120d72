"""Triad and pair enumeration under mention-index distance windows, plus batching.

Windows are measured in mention ids ("stretch"): a training triad (i, j, k)
with i < j < k requires k - i <= train_window - 1, so every pair inside it
has at most train_window - 2 mentions between them.  Scoring-time triads
for a pair (a, b) add any third mention within eval_window - 1 of either
member.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class PolyadSpec:
    order: int = 3
    train_window: int = 15
    eval_window: int = 40
    max_third_members: int | None = None

    def validate(self):
        if self.order not in (2, 3):
            raise ValueError(f"polyad order {self.order} not supported (only 2 and 3)")
        if self.train_window < 2 or self.eval_window < 2:
            raise ValueError("distance windows must be >= 2")
        if self.max_third_members is not None and self.max_third_members < 1:
            raise ValueError("max_third_members must be >= 1 when set")


@dataclass(frozen=True)
class LabeledTriad:
    members: tuple  # mention ids (i, j, k); degenerate triads repeat a member
    labels: tuple   # pair labels in slot order (ij, jk, ki)


@dataclass(frozen=True)
class LabeledPair:
    members: tuple
    label: int


class TransitivityError(AssertionError):
    """Gold labels violated y_ij & y_jk => y_ki; the source partition is broken."""


def _gold_entity_map(doc):
    entities = {}
    for m in doc.mentions:
        if m.entity_id is None:
            raise ValueError(f"{doc.doc_key}: mention {m.id} has no gold entity id")
        entities[m.id] = m.entity_id
    return entities


def _check_transitive(members, labels):
    y = labels
    rotations = ((0, 1, 2), (1, 2, 0), (2, 0, 1))
    for a, b, c in rotations:
        if y[a] and y[b] and not y[c]:
            raise TransitivityError(
                f"triad {members}: labels {labels} are not transitive")


def enumerate_training_triads(doc, spec):
    """All gold-labeled triads (i, j, k), i < j < k, with k - i <= window - 1."""
    spec.validate()
    n = len(doc.mentions)
    if n < 3:
        return []
    entity = _gold_entity_map(doc)
    reach = spec.train_window - 1
    triads = []
    for i in range(n):
        top = min(n - 1, i + reach)
        for j in range(i + 1, top + 1):
            for k in range(j + 1, top + 1):
                labels = (int(entity[i] == entity[j]),
                          int(entity[j] == entity[k]),
                          int(entity[k] == entity[i]))
                _check_transitive((i, j, k), labels)
                triads.append(LabeledTriad((i, j, k), labels))
    return triads


def enumerate_training_pairs(doc, spec):
    """Gold-labeled pairs (i, j), i < j, within the training window."""
    spec.validate()
    n = len(doc.mentions)
    if n < 2:
        return []
    entity = _gold_entity_map(doc)
    reach = spec.train_window - 1
    return [LabeledPair((i, j), int(entity[i] == entity[j]))
            for i in range(n)
            for j in range(i + 1, min(n - 1, i + reach) + 1)]


def eval_third_members(n_mentions, a, b, spec):
    """Third members for scoring pair (a, b): within the window of either one."""
    spec.validate()
    reach = spec.eval_window - 1
    if abs(a - b) > reach:
        raise ValueError(f"pair ({a}, {b}) lies outside the evaluation window")
    thirds = [c for c in range(n_mentions)
              if c != a and c != b and min(abs(c - a), abs(c - b)) <= reach]
    if spec.max_third_members is not None and len(thirds) > spec.max_third_members:
        thirds.sort(key=lambda c: (min(abs(c - a), abs(c - b)), c))
        thirds = sorted(thirds[:spec.max_third_members])
    return thirds


def enumerate_eval_triads(doc, pair, spec):
    """Scoring triads (a, b, c) for one pair; symmetric in pair orientation."""
    a, b = pair
    return [(a, b, c) for c in eval_third_members(len(doc.mentions), a, b, spec)]


def degenerate_triad(a, b):
    """Fallback triad for a pair with no eligible third member."""
    return (a, b, a)


def degenerate_labeled_triad(a, b, label):
    """Training form of the fallback: the replicated self pair is trivially positive."""
    return LabeledTriad((a, b, a), (label, label, 1))


def _pair_slot(triple, a, b):
    i, j, k = triple
    pair = {a, b}
    if pair == {i, j}:
        return 0
    if pair == {j, k}:
        return 1
    return 2


def plan_eval_triples(n_mentions, spec):
    """Unique scoring triples plus, per triple, the pair slots to harvest.

    Returns (triples, harvests) where harvests[t] lists (a, b, slot): the
    model output at `slot` of triples[t] contributes to the affinity
    accumulator of pair (a, b).  With a third-member cap a slot is harvested
    only when the triple belongs to that pair's own capped enumeration.
    """
    spec.validate()
    reach = spec.eval_window - 1
    plan = {}
    for a in range(n_mentions):
        for b in range(a + 1, min(n_mentions - 1, a + reach) + 1):
            for c in eval_third_members(n_mentions, a, b, spec):
                triple = tuple(sorted((a, b, c)))
                plan.setdefault(triple, []).append((a, b, _pair_slot(triple, a, b)))
    triples = sorted(plan)
    return triples, [plan[t] for t in triples]


# ---------------------------------------------------------------------------
# batching


@dataclass
class TriadBatch:
    word_ids: np.ndarray   # (B, 3, L)
    pos_ids: np.ndarray    # (B, 3, L)
    masks: np.ndarray      # (B, 3, L)
    pair_feats: np.ndarray  # (B, 3, 2) in slot order (ij, jk, ki)
    labels: np.ndarray | None  # (B, 3)
    items: list            # (encoded_doc, members) per row

    def __len__(self):
        return self.word_ids.shape[0]


@dataclass
class DyadBatch:
    word_ids: np.ndarray   # (B, 2, L)
    pos_ids: np.ndarray
    masks: np.ndarray
    pair_feats: np.ndarray  # (B, 2)
    labels: np.ndarray | None  # (B,)
    items: list

    def __len__(self):
        return self.word_ids.shape[0]


def _gather_triad(items):
    length = items[0][0].word_ids.shape[1]
    b = len(items)
    batch = TriadBatch(
        word_ids=np.zeros((b, 3, length), dtype=np.int64),
        pos_ids=np.zeros((b, 3, length), dtype=np.int64),
        masks=np.zeros((b, 3, length), dtype=np.float64),
        pair_feats=np.zeros((b, 3, 2), dtype=np.float64),
        labels=np.zeros((b, 3), dtype=np.float64),
        items=[(enc, triad.members) for enc, triad in items],
    )
    for row, (enc, triad) in enumerate(items):
        i, j, k = triad.members
        for col, mention in enumerate((i, j, k)):
            batch.word_ids[row, col] = enc.word_ids[mention]
            batch.pos_ids[row, col] = enc.pos_ids[mention]
            batch.masks[row, col] = enc.masks[mention]
        for col, (x, y) in enumerate(((i, j), (j, k), (k, i))):
            batch.pair_feats[row, col] = enc.pair_vector(x, y)
        batch.labels[row] = triad.labels
    return batch


def _gather_dyad(items):
    length = items[0][0].word_ids.shape[1]
    b = len(items)
    batch = DyadBatch(
        word_ids=np.zeros((b, 2, length), dtype=np.int64),
        pos_ids=np.zeros((b, 2, length), dtype=np.int64),
        masks=np.zeros((b, 2, length), dtype=np.float64),
        pair_feats=np.zeros((b, 2), dtype=np.float64),
        labels=np.zeros(b, dtype=np.float64),
        items=[(enc, pair.members) for enc, pair in items],
    )
    for row, (enc, pair) in enumerate(items):
        i, j = pair.members
        for col, mention in enumerate((i, j)):
            batch.word_ids[row, col] = enc.word_ids[mention]
            batch.pos_ids[row, col] = enc.pos_ids[mention]
            batch.masks[row, col] = enc.masks[mention]
        batch.pair_feats[row] = enc.pair_vector(i, j)
        batch.labels[row] = pair.label
    return batch


def gather_batch(items, kind="triad"):
    """Stack (encoded_doc, polyad) items into model-ready arrays."""
    if kind not in ("triad", "dyad"):
        raise ValueError(f"unknown batch kind {kind!r}")
    return (_gather_triad if kind == "triad" else _gather_dyad)(items)


def shuffle_chunks(items, batch_size, seed):
    """Deterministic shuffle of items, split into batch-sized groups."""
    if batch_size < 1:
        raise ValueError("batch size must be >= 1")
    if not items:
        return []
    order = np.random.default_rng(seed).permutation(len(items))
    shuffled = [items[i] for i in order]
    return [shuffled[lo:lo + batch_size]
            for lo in range(0, len(shuffled), batch_size)]


def make_batches(items, batch_size, seed, kind="triad"):
    """Shuffle (encoded_doc, polyad) items deterministically and batch them.

    Concatenating the returned batches recovers the input multiset; the
    same seed always produces the same order.
    """
    return [gather_batch(group, kind)
            for group in shuffle_chunks(items, batch_size, seed)]
