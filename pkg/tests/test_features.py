"""Mention window encoding and pairwise joint features."""

import numpy as np
import pytest

from helpers import make_document, tiny_table_and_pos

from triadcoref.corpus import Mention, Token
from triadcoref.features import (EncodedDocument, EncodingConfig, PosVocabulary,
                                 encode_mention, normalize_distance, pair_features)


def doc_of_words(words, mentions, speaker="s0"):
    return make_document([(w, "NN", speaker) for w in words], mentions)


def setup_doc(n_words=40, mention_specs=((20, 20, 0),)):
    doc = doc_of_words([f"tok{i}" for i in range(n_words)], list(mention_specs))
    emb, pos = tiny_table_and_pos([doc])
    return doc, emb, pos


def test_layout_lengths():
    config = EncodingConfig()
    assert config.length == 28  # 8 + 1 + 10 + 1 + 8
    doc, emb, pos = setup_doc()
    enc = encode_mention(doc, doc.mentions[0], emb, pos, config)
    # single-token mention mid-document: 8 + begin + 1 + end + 8 unmasked
    assert int(enc.mask.sum()) == 19
    assert enc.word_ids[8] == emb.begin_id
    assert enc.word_ids[8 + 1 + 10] == emb.end_id


def test_document_start_pads_left():
    doc, emb, pos = setup_doc(mention_specs=((0, 0, 0),))
    enc = encode_mention(doc, doc.mentions[0], emb, pos)
    assert np.all(enc.mask[:8] == 0)
    assert np.all(enc.word_ids[:8] == emb.pad_id)


def test_document_end_pads_right():
    doc, emb, pos = setup_doc(n_words=21, mention_specs=((20, 20, 0),))
    enc = encode_mention(doc, doc.mentions[0], emb, pos)
    assert np.all(enc.mask[-8:] == 0)


def test_long_mention_keeps_tail():
    doc, emb, pos = setup_doc(n_words=40, mention_specs=((10, 21, 0),))  # 12 tokens
    enc = encode_mention(doc, doc.mentions[0], emb, pos)
    segment = enc.word_ids[9:19]
    expected = [emb.lookup(f"tok{i}") for i in range(12, 22)]  # final 10 kept
    assert list(segment) == expected
    assert np.all(enc.mask[9:19] == 1)


def test_boundary_markers_once_each():
    doc, emb, pos = setup_doc(mention_specs=((5, 7, 0),))
    enc = encode_mention(doc, doc.mentions[0], emb, pos)
    unmasked = enc.word_ids[enc.mask == 1]
    assert list(unmasked).count(emb.begin_id) == 1
    assert list(unmasked).count(emb.end_id) == 1


def test_unmasked_ids_decode_to_window_text():
    doc, emb, pos = setup_doc(n_words=30, mention_specs=((12, 13, 0),))
    enc = encode_mention(doc, doc.mentions[0], emb, pos)
    decoded = [emb.decode(int(i)) for i in enc.word_ids[enc.mask == 1]]
    window = [f"tok{i}" for i in range(4, 12)]
    expected = window + ["<m>", "tok12", "tok13", "</m>"] + \
        [f"tok{i}" for i in range(14, 22)]
    assert decoded == expected


def test_shift_equivariance_away_from_edges():
    # inserting filler tokens outside both windows changes token_distance only
    words = [f"tok{i}" for i in range(60)]
    doc_a = doc_of_words(words, [(15, 15, 0), (45, 45, 1)])
    shifted_words = words[:30] + [f"pad{i}" for i in range(7)] + words[30:]
    doc_b = doc_of_words(shifted_words, [(15, 15, 0), (52, 52, 1)])
    emb, pos = tiny_table_and_pos([doc_a, doc_b])
    for a, b in zip(doc_a.mentions, doc_b.mentions):
        ea = encode_mention(doc_a, a, emb, pos)
        eb = encode_mention(doc_b, b, emb, pos)
        assert np.array_equal(ea.word_ids, eb.word_ids)
        assert np.array_equal(ea.mask, eb.mask)
    fa = pair_features(doc_a, *doc_a.mentions)
    fb = pair_features(doc_b, *doc_b.mentions)
    assert fb.token_distance == fa.token_distance + 7
    assert fb.same_speaker == fa.same_speaker


def test_pair_features_values_and_symmetry():
    doc = make_document(
        [("a", "NN", "s1")] * 4 + [("b", "NN", "s1")] * 36 + [("c", "NN", "s2")] * 10,
        [(4, 4, 0), (40, 40, 1), (41, 41, 2)])
    m = doc.mentions
    f = pair_features(doc, m[0], m[1])
    assert (f.same_speaker, f.token_distance, f.mention_index_distance) == (0, 36, 1)
    g = pair_features(doc, m[1], m[0])
    assert f == g  # symmetric
    adj = pair_features(doc, m[1], m[2])  # adjacent, same speaker
    assert adj.token_distance == 1 and adj.same_speaker == 1


def test_missing_speaker_never_matches():
    doc = make_document([("a", "NN", None), ("b", "NN", None)],
                        [(0, 0, 0), (1, 1, 1)])
    assert pair_features(doc, *doc.mentions).same_speaker == 0


def test_pair_features_requires_distinct_mentions():
    doc, _, _ = setup_doc()
    with pytest.raises(ValueError):
        pair_features(doc, doc.mentions[0], doc.mentions[0])


def test_normalize_distance():
    assert normalize_distance(0) == 0.0
    assert normalize_distance(2000) == 1.0
    assert normalize_distance(8000) == 1.0  # clipped
    assert 0.0 < normalize_distance(10) < normalize_distance(100) < 1.0


def test_pos_vocabulary_roundtrip_and_unknown():
    vocab = PosVocabulary(["NN", "NNP", "PRP"])
    assert vocab.encode("NN") == 4
    assert vocab.encode("XYZ") == vocab.unk_id
    again = PosVocabulary.from_text(vocab.to_text())
    assert again.tags == vocab.tags


def test_encoded_document_stacks_all_mentions():
    doc, emb, pos = setup_doc(mention_specs=((5, 5, 0), (20, 20, 1)))
    enc = EncodedDocument(doc, emb, pos)
    assert enc.word_ids.shape == (2, 28)
    one = encode_mention(doc, doc.mentions[1], emb, pos)
    assert np.array_equal(enc.word_ids[1], one.word_ids)
    vec = enc.pair_vector(0, 1)
    assert vec[0] == 1.0  # same speaker fixture
    assert 0 < vec[1] < 1
    self_vec = enc.pair_vector(0, 0)  # degenerate triads need the self pair
    assert self_vec[1] == 0.0
