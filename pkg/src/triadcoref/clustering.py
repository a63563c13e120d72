"""Agglomerative clustering with average linkage and a distance cutoff.

The linkage between two clusters is the mean of all cross-cluster pairwise
distances (sum divided by the product of cardinalities).  Merging runs the
nearest-neighbor-chain algorithm, which is O(n^2) for reducible linkages
and produces the same dendrogram as greedy closest-pair merging; ties are
broken toward the cluster containing the smallest mention id.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

LINKAGES = ("average", "single", "complete")


@dataclass(frozen=True)
class MergeStep:
    left: int       # cluster id (leaves are 0..n-1, merge t creates n+t)
    right: int
    distance: float
    size: int       # members in the merged cluster


@dataclass
class Dendrogram:
    n_points: int
    merges: list

    def __len__(self):
        return len(self.merges)


@dataclass
class EntityPartition:
    clusters: list  # disjoint, non-empty frozensets of mention ids

    @classmethod
    def from_clusters(cls, groups):
        clusters = sorted((frozenset(g) for g in groups if len(g)),
                          key=lambda c: min(c))
        part = cls(clusters)
        part.validate()
        return part

    def validate(self):
        seen = set()
        for c in self.clusters:
            if not c:
                raise ValueError("empty cluster in partition")
            if seen & c:
                raise ValueError("overlapping clusters in partition")
            seen |= c
        return self

    def mention_ids(self):
        out = set()
        for c in self.clusters:
            out |= c
        return out

    def sizes(self):
        return sorted((len(c) for c in self.clusters), reverse=True)

    def __len__(self):
        return len(self.clusters)

    def __eq__(self, other):
        return set(self.clusters) == set(other.clusters)


def _check_matrix(dist):
    dist = np.asarray(dist, dtype=np.float64)
    if dist.ndim != 2 or dist.shape[0] != dist.shape[1]:
        raise ValueError(f"distance matrix must be square, got shape {dist.shape}")
    if dist.shape[0] == 0:
        raise ValueError("cannot cluster zero points")
    if not np.allclose(dist, dist.T):
        raise ValueError("distance matrix must be symmetric")
    if np.any(dist < 0):
        raise ValueError("distances must be non-negative")
    return dist


def agglomerate(dist, linkage="average"):
    """Full merge tree over the points of a symmetric distance matrix."""
    if linkage not in LINKAGES:
        raise ValueError(f"unknown linkage {linkage!r} (choose from {LINKAGES})")
    dist = _check_matrix(dist)
    n = dist.shape[0]
    if n == 1:
        return Dendrogram(n_points=1, merges=[])

    total = 2 * n - 1
    # `stat` holds the linkage bookkeeping between clusters: pairwise-distance
    # sums for average linkage, current min/max for single/complete
    stat = np.zeros((total, total))
    stat[:n, :n] = dist
    sizes = np.zeros(total, dtype=np.int64)
    sizes[:n] = 1
    min_member = np.arange(total)

    def link_value(a, b):
        if linkage == "average":
            return stat[a, b] / (sizes[a] * sizes[b])
        return stat[a, b]

    active = list(range(n))  # kept ordered by min_member for tie-breaking
    raw_merges = []
    chain = []
    next_id = n
    while len(active) > 1:
        if not chain:
            chain.append(active[0])
        top = chain[-1]
        others = [c for c in active if c != top]
        values = np.array([link_value(top, c) for c in others])
        nearest = others[int(np.argmin(values))]
        if len(chain) >= 2 and nearest == chain[-2]:
            a, b = chain[-2], chain[-1]
            chain = chain[:-2]
            merged = next_id
            next_id += 1
            raw_merges.append((a, b, link_value(a, b), merged))
            sizes[merged] = sizes[a] + sizes[b]
            min_member[merged] = min(min_member[a], min_member[b])
            active = [c for c in active if c not in (a, b)]
            for c in active:
                if linkage == "average":
                    combined = stat[a, c] + stat[b, c]
                elif linkage == "single":
                    combined = min(stat[a, c], stat[b, c])
                else:
                    combined = max(stat[a, c], stat[b, c])
                stat[merged, c] = stat[c, merged] = combined
            # insert keeping min_member order
            pos = 0
            while pos < len(active) and min_member[active[pos]] < min_member[merged]:
                pos += 1
            active.insert(pos, merged)
        else:
            chain.append(nearest)

    # reducibility guarantees children merge at distances <= their parents,
    # so a stable sort by distance yields a nondecreasing, replayable sequence
    order = sorted(range(len(raw_merges)), key=lambda i: raw_merges[i][2])
    remap = {i: i for i in range(n)}
    merges = []
    for new_step, old_step in enumerate(order):
        a, b, value, merged = raw_merges[old_step]
        a, b = remap[a], remap[b]
        if min_member[b] < min_member[a]:
            a, b = b, a
        remap[merged] = n + new_step
        merges.append(MergeStep(left=a, right=b, distance=float(value),
                                size=int(sizes[merged])))
    return Dendrogram(n_points=n, merges=merges)


def cut(dendrogram, threshold):
    """Partition after applying every merge with distance <= threshold."""
    n = dendrogram.n_points
    members = {i: [i] for i in range(n)}
    for step_index, step in enumerate(dendrogram.merges):
        if step.distance > threshold:
            break
        merged = members.pop(step.left) + members.pop(step.right)
        members[n + step_index] = merged
    return EntityPartition.from_clusters(members.values())


def cluster_mentions(dist, threshold, linkage="average"):
    """agglomerate + cut in one call."""
    return cut(agglomerate(dist, linkage=linkage), threshold)


def partition_to_document(doc, partition):
    """Copy of `doc` whose mentions carry the partition's cluster indices as
    entity ids, so a system response serializes through the corpus writer."""
    from dataclasses import replace

    from .corpus import Document

    cluster_of = {}
    for index, cluster in enumerate(partition.clusters):
        for mention_id in cluster:
            cluster_of[mention_id] = index
    mentions = [replace(m, entity_id=cluster_of.get(m.id)) for m in doc.mentions]
    return Document(doc.doc_key, doc.tokens, mentions)
