"""Pairwise affinity scores from polyad outputs, and the distance transform.

A pair's affinity is the mean of its output slot over every scored triad
containing it (each unordered triple is evaluated once, members in
ascending id order, and all three slots harvested).  Distances are the
reciprocal affinity capped at a maximum; pairs outside the evaluation
window get a fixed constant slightly above the clustering cutoff.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import polyads
from .polyads import LabeledPair, LabeledTriad

AGGREGATIONS = ("mean", "max", "topk")


@dataclass(frozen=True)
class AffinityConfig:
    aggregation: str = "mean"
    top_k: int = 3
    max_distance: float = 10.0
    out_of_window_distance: float = 3.7

    def validate(self):
        if self.aggregation not in AGGREGATIONS:
            raise ValueError(f"unknown aggregation {self.aggregation!r}")
        if self.top_k < 1:
            raise ValueError("top_k must be >= 1")
        if self.max_distance <= 1.0:
            raise ValueError("max_distance must exceed 1")


class AffinityMatrix:
    """Symmetric per-document affinity scores with provenance counts."""

    def __init__(self, n):
        self.n = n
        self.scores = np.zeros((n, n))
        self.counts = np.zeros((n, n), dtype=np.int64)
        self.in_window = np.zeros((n, n), dtype=bool)

    def set_score(self, a, b, value, count=1):
        self.scores[a, b] = self.scores[b, a] = value
        self.counts[a, b] = self.counts[b, a] = count
        self.in_window[a, b] = self.in_window[b, a] = True

    def get(self, a, b):
        return self.scores[a, b] if self.in_window[a, b] else None


def override_affinity(aff, a, b, value):
    """Force a pair's affinity (postprocessing hook); symmetric, idempotent."""
    aff.set_score(a, b, value, count=max(1, int(aff.counts[a, b])))
    return aff


def _chunks(seq, size):
    for lo in range(0, len(seq), size):
        yield seq[lo:lo + size]


def _reduce(values, config):
    if config.aggregation == "mean":
        return float(np.mean(values))
    if config.aggregation == "max":
        return float(np.max(values))
    top = sorted(values, reverse=True)[:config.top_k]
    return float(np.mean(top))


def aggregate(enc_doc, scoring_model, spec, config=AffinityConfig(), batch_size=256):
    """Affinity matrix for one encoded document under a trained model."""
    config.validate()
    n = enc_doc.n_mentions
    aff = AffinityMatrix(n)
    if n < 2:
        return aff
    if scoring_model.kind == "dyad":
        return _aggregate_dyad(enc_doc, scoring_model, spec, aff, batch_size)

    triples, harvests = polyads.plan_eval_triples(n, spec)
    collected = {}
    for chunk_ids in _chunks(list(range(len(triples))), batch_size):
        items = [(enc_doc, LabeledTriad(triples[t], (0, 0, 0))) for t in chunk_ids]
        batch = polyads._gather_triad(items)
        out = scoring_model.forward(batch).values
        for row, t in enumerate(chunk_ids):
            for a, b, slot in harvests[t]:
                collected.setdefault((min(a, b), max(a, b)), []).append(
                    float(out[row, slot]))

    reach = spec.eval_window - 1
    for a in range(n):
        for b in range(a + 1, min(n - 1, a + reach) + 1):
            values = collected.get((a, b))
            if values is None:
                # no eligible third member: score the pair as (a, b, a)
                batch = polyads._gather_triad(
                    [(enc_doc, polyads.degenerate_labeled_triad(a, b, 0))])
                values = [float(scoring_model.forward(batch).values[0, 0])]
            aff.set_score(a, b, _reduce(values, config), count=len(values))
    return aff


def _aggregate_dyad(enc_doc, scoring_model, spec, aff, batch_size):
    n = aff.n
    reach = spec.eval_window - 1
    pairs = [(a, b) for a in range(n)
             for b in range(a + 1, min(n - 1, a + reach) + 1)]
    for chunk in _chunks(pairs, batch_size):
        items = [(enc_doc, LabeledPair(p, 0)) for p in chunk]
        batch = polyads._gather_dyad(items)
        out = scoring_model.forward(batch).values
        for (a, b), value in zip(chunk, out):
            aff.set_score(a, b, float(value), count=1)
    return aff


def to_distances(aff, config=AffinityConfig()):
    """Distance matrix: reciprocal affinity capped at max_distance; pairs
    outside the window get the fixed out-of-window constant."""
    config.validate()
    scores = aff.scores
    used = aff.in_window
    if np.any((scores[used] < 0) | (scores[used] > 1)):
        raise ValueError("affinity scores outside [0, 1]; model contract violated")
    dist = np.full((aff.n, aff.n), config.out_of_window_distance)
    # reciprocals of tiny affinities would overflow the cap anyway
    floor = 1.0 / config.max_distance
    with np.errstate(divide="ignore"):
        inv = np.where(scores <= floor, config.max_distance,
                       np.minimum(1.0 / np.maximum(scores, 1e-300), config.max_distance))
    dist[used] = inv[used]
    np.fill_diagonal(dist, 0.0)
    return dist


# ---------------------------------------------------------------------------
# text serialization (feeds the standalone `cluster` CLI stage)


def write_affinities(doc_entries, config=AffinityConfig()):
    """Serialize (doc_key, AffinityMatrix) pairs: per document a `#doc` line,
    the mention count, then one `i j affinity distance` row per scored pair."""
    dist_of = {}
    lines = []
    for doc_key, aff in doc_entries:
        dist = to_distances(aff, config)
        dist_of[doc_key] = dist
        lines.append(f"#doc {doc_key}")
        lines.append(str(aff.n))
        for a in range(aff.n):
            for b in range(a + 1, aff.n):
                if aff.in_window[a, b]:
                    lines.append(f"{a} {b} {aff.scores[a, b]:.17g} {dist[a, b]:.17g}")
    return "\n".join(lines) + "\n"


def read_affinities(text):
    """Inverse of write_affinities; returns a list of (doc_key, AffinityMatrix)."""
    entries = []
    aff = None
    expect_count = False
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#doc "):
            aff = None
            doc_key = line[len("#doc "):]
            expect_count = True
            continue
        if expect_count:
            aff = AffinityMatrix(int(line))
            entries.append((doc_key, aff))
            expect_count = False
            continue
        if aff is None:
            raise ValueError(f"affinity file line {lineno}: row outside a document")
        parts = line.split()
        if len(parts) != 4:
            raise ValueError(f"affinity file line {lineno}: expected 'i j phi d'")
        a, b = int(parts[0]), int(parts[1])
        aff.set_score(a, b, float(parts[2]))
    return entries
