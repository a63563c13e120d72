"""CoNLL parsing/serialization, embeddings, and the synthetic generator."""

import numpy as np
import pytest

from triadcoref import corpus
from triadcoref.corpus import (ConllParseError, EmbeddingTable, SynthConfig,
                               generate_synthetic_corpus, load_embeddings,
                               parse_conll, to_conll)


def data_line(word, pos="NN", speaker="-", coref="-", idx=0):
    return "\t".join(["doc", "0", str(idx), word, pos, "-", "-", "-", "-",
                      speaker, "-", coref])


def wrap(lines, key="(t); part 000"):
    return "\n".join([f"#begin document {key}", *lines, "", "#end document", ""])


# ---------------------------------------------------------------------------
# parsing


def test_single_token_mention():
    docs = parse_conll(wrap([data_line("Obama", "NNP", coref="(12)")]))
    assert len(docs) == 1
    (m,) = docs[0].mentions
    assert (m.start, m.end, m.entity_id) == (0, 0, 12)


def test_multitoken_mention():
    lines = [data_line("the", coref="(3", idx=0),
             data_line("old", coref="-", idx=1),
             data_line("man", coref="3)", idx=2)]
    docs = parse_conll(wrap(lines))
    (m,) = docs[0].mentions
    assert (m.start, m.end, m.entity_id) == (0, 2, 3)


def test_nested_mentions():
    lines = [data_line("New", "NNP", coref="(3|(0)", idx=0),
             data_line("York", "NNP", coref="3)", idx=1)]
    docs = parse_conll(wrap(lines))
    mentions = docs[0].mentions
    assert [(m.start, m.end, m.entity_id) for m in mentions] == [(0, 0, 0), (0, 1, 3)]
    # ids dense in (start, end) order
    assert [m.id for m in mentions] == [0, 1]


def test_unbalanced_bracket_reports_line():
    lines = [data_line("a", coref="(3", idx=0)]
    with pytest.raises(ConllParseError, match="line 4"):
        parse_conll(wrap(lines))
    with pytest.raises(ConllParseError, match="line 2"):
        parse_conll(wrap([data_line("a", coref="7)", idx=0)]))


def test_missing_columns_is_an_error():
    bad = "\n".join(["#begin document (t); part 000", "one two three",
                     "#end document", ""])
    with pytest.raises(ConllParseError, match="columns"):
        parse_conll(bad)


def test_speaker_dash_means_absent():
    docs = parse_conll(wrap([data_line("hi", speaker="-"),
                             data_line("there", speaker="Jim", idx=1)]))
    assert docs[0].tokens[0].speaker is None
    assert docs[0].tokens[1].speaker == "Jim"


def test_sentence_indices_from_blank_lines():
    lines = [data_line("a", idx=0), "", data_line("b", idx=0), data_line("c", idx=1)]
    docs = parse_conll(wrap(lines))
    assert [t.sentence_index for t in docs[0].tokens] == [0, 1, 1]


def test_parts_become_independent_documents():
    text = (wrap([data_line("a", coref="(1)")], key="(x); part 000")
            + wrap([data_line("b", coref="(1)")], key="(x); part 001"))
    docs = parse_conll(text)
    assert [d.doc_key for d in docs] == ["(x); part 000", "(x); part 001"]
    assert all(len(d.mentions) == 1 for d in docs)


def test_mention_order_ties_break_on_smaller_end():
    lines = [data_line("a", coref="(1|(2", idx=0),
             data_line("b", coref="1)", idx=1),
             data_line("c", coref="2)", idx=2)]
    docs = parse_conll(wrap(lines))
    assert [(m.start, m.end) for m in docs[0].mentions] == [(0, 1), (0, 2)]


# ---------------------------------------------------------------------------
# embeddings


def glove_text(words, dim=4, scale=1.0):
    lines = []
    for i, w in enumerate(words):
        values = " ".join(str(scale * (i + 1) * 0.1) for _ in range(dim))
        lines.append(f"{w} {values}")
    return "\n".join(lines) + "\n"


def test_pretrained_rows_plus_specials():
    table = load_embeddings(glove_text(["cat"]), {"cat"}, seed=0, dim=4)
    assert table.vectors.shape == (5, 4)  # one word + unk/pad/begin/end
    assert table.load_stats.pretrained == 1
    assert np.allclose(table.vectors[table.vocab["cat"]], 0.1)
    assert np.allclose(table.vectors[table.pad_id], 0.0)


def test_oov_rows_are_small_random():
    table = load_embeddings(glove_text(["cat"], dim=300), {"cat", "xylophone"},
                            seed=3, dim=300)
    row = table.vectors[table.vocab["xylophone"]]
    assert np.linalg.norm(row) <= 0.05 * np.sqrt(300)
    assert table.load_stats.oov == 1


def test_duplicate_lines_first_wins():
    text = glove_text(["cat"]) + glove_text(["cat"], scale=9.0)
    table = load_embeddings(text, {"cat"}, seed=0, dim=4)
    assert np.allclose(table.vectors[table.vocab["cat"]], 0.1)
    assert table.load_stats.duplicates == 1


def test_malformed_lines_skipped_with_count():
    text = "cat 0.1 0.2\n" + glove_text(["dog"], dim=4)
    table = load_embeddings(text, {"cat", "dog"}, seed=0, dim=4)
    assert table.load_stats.skipped_lines == 1
    assert table.load_stats.pretrained == 1


def test_empty_intersection_is_error():
    with pytest.raises(ValueError, match="vocabulary"):
        load_embeddings(glove_text(["cat"], dim=4), {"dog"}, seed=0, dim=4)


def test_lookup_falls_back_to_lowercase_then_unk():
    table = EmbeddingTable.random(["cat"], dim=4, seed=0)
    assert table.lookup("cat") == table.vocab["cat"]
    assert table.lookup("Cat") == table.vocab["cat"]
    assert table.lookup("zebra") == table.unk_id


# ---------------------------------------------------------------------------
# synthetic corpora


def test_synthetic_counts_match_config():
    config = SynthConfig(documents=1, entities_per_doc=2, mentions_per_entity=3)
    (doc,) = generate_synthetic_corpus(config, seed=5)
    assert len(doc.mentions) == 6
    assert len(doc.entity_partition()) == 2


def test_synthetic_determinism_is_byte_identical():
    config = SynthConfig(documents=3, entities_per_doc=3, mentions_per_entity=3)
    one = to_conll(generate_synthetic_corpus(config, seed=11))
    two = to_conll(generate_synthetic_corpus(config, seed=11))
    assert one == two
    other = to_conll(generate_synthetic_corpus(config, seed=12))
    assert one != other


def test_synthetic_validation_errors():
    with pytest.raises(ValueError):
        generate_synthetic_corpus(SynthConfig(entities_per_doc=0), seed=0)
    with pytest.raises(ValueError):
        generate_synthetic_corpus(SynthConfig(mentions_per_entity=0), seed=0)


def test_roundtrip_through_parser():
    config = SynthConfig(documents=4, entities_per_doc=4, mentions_per_entity=3,
                         pronoun_rate=0.5, speaker_count=3, cue_noise=0.2)
    documents = generate_synthetic_corpus(config, seed=21)
    parsed = parse_conll(to_conll(documents))
    assert parsed == documents


def test_roundtrip_preserves_partition():
    config = SynthConfig(documents=2, entities_per_doc=3, mentions_per_entity=4)
    documents = generate_synthetic_corpus(config, seed=8)
    for original, parsed in zip(documents, parse_conll(to_conll(documents))):
        truth = {frozenset((m.start, m.end) for m in original.mentions
                           if m.entity_id == e)
                 for e in range(config.entities_per_doc)}
        back = {}
        for m in parsed.mentions:
            back.setdefault(m.entity_id, set()).add((m.start, m.end))
        assert {frozenset(v) for v in back.values()} == truth


def test_nested_mention_document_roundtrip():
    from helpers import make_document
    doc = make_document(
        [("the", "DT", None), ("New", "NNP", None), ("York", "NNP", None),
         ("mayor", "NN", None), ("spoke", "VBD", None)],
        [(0, 3, 1), (1, 2, 2)],
        doc_key="(nested); part 000")
    assert parse_conll(to_conll([doc])) == [doc]


def test_corpus_dir_roundtrip(tmp_path):
    config = SynthConfig(documents=3, entities_per_doc=2, mentions_per_entity=2)
    documents = generate_synthetic_corpus(config, seed=2)
    corpus.write_corpus_dir(documents, tmp_path / "corpus")
    assert corpus.read_corpus_dir(tmp_path / "corpus") == documents
