"""Triad-scored coreference resolution.

Mentions are scored three at a time by a shared-context neural network,
triad outputs are averaged into pairwise affinities, affinities become
distances for average-linkage agglomerative clustering, and the resulting
entity partitions are evaluated with MUC, B-cubed, and entity-aligned CEAF.
"""

from .affinity import AffinityConfig, AffinityMatrix, aggregate, override_affinity, to_distances
from .clustering import (Dendrogram, EntityPartition, agglomerate, cluster_mentions,
                         cut, partition_to_document)
from .corpus import (Document, EmbeddingTable, Mention, SynthConfig, Token,
                     generate_synthetic_corpus, load_embeddings, parse_conll,
                     read_corpus_dir, to_conll, write_corpus_dir)
from .features import (EncodedDocument, EncodingConfig, MentionEncoding,
                       PairFeatures, PosVocabulary, encode_mention,
                       normalize_distance, pair_features)
from .metrics import (MetricReport, b_cubed, ceaf_phi4, corpus_report,
                      entity_size_histogram, muc, report)
from .model import DyadModel, ModelConfig, TriadModel, build_model
from .polyads import (LabeledPair, LabeledTriad, PolyadSpec, degenerate_triad,
                      enumerate_eval_triads, enumerate_training_pairs,
                      enumerate_training_triads, make_batches)
from .training import (ExperimentConfig, config_from_text, config_to_text,
                       evaluate_corpus, load_model_dir, run_pipeline,
                       run_training, save_model_dir)

__version__ = "0.1.0"

__all__ = [
    "AffinityConfig", "AffinityMatrix", "aggregate", "override_affinity",
    "to_distances",
    "Dendrogram", "EntityPartition", "agglomerate", "cluster_mentions", "cut",
    "partition_to_document",
    "Document", "EmbeddingTable", "Mention", "SynthConfig", "Token",
    "generate_synthetic_corpus", "load_embeddings", "parse_conll",
    "read_corpus_dir", "to_conll", "write_corpus_dir",
    "EncodedDocument", "EncodingConfig", "MentionEncoding", "PairFeatures",
    "PosVocabulary", "encode_mention", "normalize_distance", "pair_features",
    "MetricReport", "b_cubed", "ceaf_phi4", "corpus_report",
    "entity_size_histogram", "muc", "report",
    "DyadModel", "ModelConfig", "TriadModel", "build_model",
    "LabeledPair", "LabeledTriad", "PolyadSpec", "degenerate_triad",
    "enumerate_eval_triads", "enumerate_training_pairs",
    "enumerate_training_triads", "make_batches",
    "ExperimentConfig", "config_from_text", "config_to_text", "evaluate_corpus",
    "load_model_dir", "run_pipeline", "run_training", "save_model_dir",
    "__version__",
]
