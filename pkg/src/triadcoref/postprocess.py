"""Scoring-time adjustment rules applied around clustering.

Three rules, each individually switchable and applied identically for the
triad and dyad pipelines: identical proper names get the minimum distance,
first/second-person pronouns take their speaker's name before feature
extraction, and pronoun-only clusters get one shot at adopting a nearby
non-pronoun antecedent before a single re-clustering pass.
"""

from __future__ import annotations

from dataclasses import replace

from .affinity import override_affinity
from .clustering import EntityPartition
from .corpus import PRONOUN_TAGS, PROPER_TAGS, Document


def is_pronoun(doc, mention):
    return mention.start == mention.end and doc.tokens[mention.start].pos in PRONOUN_TAGS


def is_proper_name(doc, mention):
    return all(t.pos in PROPER_TAGS for t in doc.mention_tokens(mention))


def link_same_proper_names(doc, dist, min_distance=1.0):
    """Give mention pairs with identical proper-name token sequences the
    minimum distance, overriding even the out-of-window constant."""
    groups = {}
    for m in doc.mentions:
        if is_proper_name(doc, m):
            surface = tuple(t.surface.lower() for t in doc.mention_tokens(m))
            groups.setdefault(surface, []).append(m.id)
    out = dist.copy()
    for ids in groups.values():
        for i, a in enumerate(ids):
            for b in ids[i + 1:]:
                out[a, b] = out[b, a] = min_distance
    return out


def substitute_speakers(doc):
    """Replace single-token "I"/"you" mentions with the speaker name.

    "I" takes its own token's speaker; "you" is substituted only when
    exactly one other speaker exists in the document (ambiguity guard).
    The replacement also retags the token as a proper name so it joins the
    proper-name rule; token counts and mention spans never change.
    """
    speakers = {t.speaker for t in doc.tokens if t.speaker is not None}
    new_tokens = list(doc.tokens)
    for m in doc.mentions:
        if m.start != m.end:
            continue
        token = new_tokens[m.start]
        surface = token.surface.lower()
        replacement = None
        if surface == "i" and token.speaker is not None:
            replacement = token.speaker
        elif surface == "you":
            others = speakers - {token.speaker}
            if len(others) == 1:
                replacement = next(iter(others))
        if replacement is not None:
            new_tokens[m.start] = replace(token, surface=replacement, pos="NNP")
    if new_tokens == list(doc.tokens):
        return doc
    return Document(doc.doc_key, new_tokens, doc.mentions)


def pronoun_only_clusters(partition, doc):
    """Non-singleton clusters whose mentions are all pronouns."""
    return [c for c in partition.clusters
            if len(c) > 1 and all(is_pronoun(doc, doc.mentions[m]) for m in c)]


def resolve_pronoun_only_clusters(partition, doc, aff, recluster):
    """One pass of antecedent adoption for pronoun-only clusters.

    For each such cluster the earliest mention becomes the target; among up
    to three preceding and three following non-pronoun mentions, the one
    with the highest affinity to the target (ties to the nearer, then the
    earlier) gets its affinity forced to 1.0.  `recluster` rebuilds a
    partition from the updated affinities; the result is kept only if it
    does not increase the number of pronoun-only clusters.
    """
    targets = pronoun_only_clusters(partition, doc)
    if not targets:
        return partition
    non_pronoun = [m.id for m in doc.mentions if not is_pronoun(doc, m)]
    changed = False
    for cluster in targets:
        target = min(cluster)
        before = [m for m in non_pronoun if m < target][-3:]
        after = [m for m in non_pronoun if m > target][:3]
        candidates = before + after
        if not candidates:
            continue
        scored = [(c, aff.get(target, c) or 0.0) for c in candidates]
        scored.sort(key=lambda item: (-item[1], abs(item[0] - target), item[0]))
        override_affinity(aff, target, scored[0][0], 1.0)
        changed = True
    if not changed:
        return partition
    reclustered = recluster(aff)
    if len(pronoun_only_clusters(reclustered, doc)) <= len(targets):
        return reclustered
    return partition


def strip_singletons(partition):
    """Drop size-1 clusters (metric path only)."""
    return EntityPartition([c for c in partition.clusters if len(c) > 1])
