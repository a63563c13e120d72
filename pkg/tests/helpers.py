"""Shared test utilities: finite-difference oracles and tiny fixtures."""

import numpy as np

from triadcoref import corpus as corpus_mod
from triadcoref.corpus import Document, Mention, Token


def finite_difference(scalar_fn, arrays, h=1e-5):
    """Central finite differences of scalar_fn() wrt each array, in place."""
    grads = [np.zeros_like(a) for a in arrays]
    for a, g in zip(arrays, grads):
        flat, gflat = a.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            hi = scalar_fn()
            flat[i] = orig - h
            lo = scalar_fn()
            flat[i] = orig
            gflat[i] = (hi - lo) / (2.0 * h)
    return grads


def relative_error(analytic, numeric):
    analytic, numeric = np.asarray(analytic), np.asarray(numeric)
    if analytic.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-6)
    return float(np.max(np.abs(analytic - numeric) / denom))


def gradcheck(make_loss, leaves, h=1e-5):
    """Largest relative error between backprop and central differences.

    `make_loss` must rebuild the graph from the leaves' current values so
    the finite-difference probes see perturbed inputs.
    """
    for leaf in leaves:
        leaf.zero_grad()
    make_loss().backward()
    analytic = [leaf.grad.copy() if leaf.grad is not None else np.zeros_like(leaf.values)
                for leaf in leaves]
    numeric = finite_difference(lambda: float(make_loss().values),
                                [leaf.values for leaf in leaves], h=h)
    return max(relative_error(a, n) for a, n in zip(analytic, numeric))


def make_document(token_specs, mention_specs, doc_key="(test); part 000"):
    """Document from (surface, pos, speaker) triples and (start, end, entity)."""
    tokens = []
    sentence = 0
    for i, (surface, pos, speaker) in enumerate(token_specs):
        tokens.append(Token(surface=surface, pos=pos, speaker=speaker,
                            sentence_index=sentence, doc_token_index=i))
    mentions = [Mention(id=i, start=s, end=e, entity_id=ent)
                for i, (s, e, ent) in enumerate(
                    sorted(mention_specs, key=lambda m: (m[0], m[1])))]
    return Document(doc_key, tokens, mentions)


def simple_document(n_mentions=6, gap=3, entities=2, doc_key="(test); part 000"):
    """Single-token mentions every `gap` tokens, entities assigned round-robin."""
    token_specs = []
    mention_specs = []
    idx = 0
    for m in range(n_mentions):
        for f in range(gap):
            token_specs.append((f"w{idx}", "NN", "speaker0"))
            idx += 1
        mention_specs.append((idx, idx, m % entities))
        token_specs.append((f"name{m % entities}", "NNP", "speaker0"))
        idx += 1
    return make_document(token_specs, mention_specs, doc_key)


def random_partition(rng, mentions, max_clusters=None):
    """Uniformly random partition of `mentions` into nonempty clusters."""
    mentions = list(mentions)
    if not mentions:
        return []
    k = int(rng.integers(1, (max_clusters or len(mentions)) + 1))
    assignment = rng.integers(0, k, size=len(mentions))
    clusters = {}
    for m, c in zip(mentions, assignment):
        clusters.setdefault(int(c), set()).add(m)
    return list(clusters.values())


def tiny_table_and_pos(documents, dim=8, seed=0):
    emb = corpus_mod.EmbeddingTable.from_corpus(documents, dim=dim, seed=seed)
    from triadcoref.features import PosVocabulary
    return emb, PosVocabulary.from_documents(documents)
