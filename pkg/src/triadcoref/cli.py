"""Command line front end wiring all pipeline stages.

Subcommands: synth, train, score, cluster, evaluate, compare.  Exit codes:
0 success, 1 usage error, 2 data/format error, 3 model error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import affinity as affinity_mod
from . import clustering, corpus, metrics, postprocess, training

USAGE_ERROR, DATA_ERROR, MODEL_ERROR = 1, 2, 3


class CliError(Exception):
    def __init__(self, code, message):
        super().__init__(message)
        self.code = code


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise CliError(USAGE_ERROR, f"{self.prog}: error: {message}")


def _load_corpus(path):
    try:
        return corpus.read_corpus_dir(path)
    except (corpus.ConllParseError, FileNotFoundError, ValueError) as exc:
        raise CliError(DATA_ERROR, str(exc))


def _load_model(path):
    try:
        return training.load_model_dir(path)
    except Exception as exc:
        raise CliError(MODEL_ERROR, f"cannot load model from {path}: {exc}")


def _load_config(path, base=None):
    try:
        text = Path(path).read_text(encoding="utf-8")
        return training.config_from_text(text, base=base)
    except OSError as exc:
        raise CliError(DATA_ERROR, str(exc))
    except ValueError as exc:
        raise CliError(DATA_ERROR, f"{path}: {exc}")


def _postprocess_flags(parser):
    parser.add_argument("--no-propername", action="store_true",
                        help="disable the same-proper-name minimum-distance rule")
    parser.add_argument("--no-speaker-sub", action="store_true",
                        help="disable I/you speaker substitution")
    parser.add_argument("--no-pronoun-fix", action="store_true",
                        help="disable the pronoun-only cluster fix")


def _flag_overrides(args):
    return {
        "use_propername": False if args.no_propername else None,
        "use_speaker_sub": False if args.no_speaker_sub else None,
        "use_pronoun_fix": False if args.no_pronoun_fix else None,
    }


def build_parser():
    parser = _Parser(prog="triadcoref",
                     description="Triad-scored coreference resolution pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic gold-annotated corpus")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True, help="output corpus directory")
    p.add_argument("--docs", type=int, default=20)
    p.add_argument("--entities", type=int, default=6)
    p.add_argument("--mentions", type=int, default=4)
    p.add_argument("--vocab", type=int, default=120)
    p.add_argument("--pronoun-rate", type=float, default=0.4)
    p.add_argument("--speakers", type=int, default=2)
    p.add_argument("--cue-noise", type=float, default=0.0)
    p.add_argument("--first-person-rate", type=float, default=0.0)

    p = sub.add_parser("train", help="train a triad or dyad scorer")
    p.add_argument("--config", help="flat key = value experiment config")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True, help="checkpoint directory")
    p.add_argument("--resume", action="store_true")
    p.add_argument("--embeddings", help="pretrained word-vector text file")
    p.add_argument("--robust", action="store_true",
                   help="enable gradient clipping at global norm 5.0")
    p.add_argument("--quiet", action="store_true")

    p = sub.add_parser("score", help="write pairwise affinities for a corpus")
    p.add_argument("--model", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True, help="affinity text file")
    p.add_argument("--no-speaker-sub", action="store_true")

    p = sub.add_parser("cluster", help="cluster a scored affinity file")
    p.add_argument("--affinities", required=True)
    p.add_argument("--t", type=float, default=3.5, help="distance cutoff")
    p.add_argument("--linkage", default="average", choices=clustering.LINKAGES)
    p.add_argument("--oow-distance", type=float, default=3.7,
                   help="distance for pairs absent from the affinity file")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--corpus", help="original corpus (enables CoNLL output)")

    p = sub.add_parser("evaluate", help="run the full pipeline and report metrics")
    p.add_argument("--model", action="append", required=True,
                   help="checkpoint directory (repeat to compare models)")
    p.add_argument("--corpus", required=True)
    _postprocess_flags(p)
    p.add_argument("--histogram", action="store_true",
                   help="print entity-size histograms (log scale)")
    p.add_argument("--kv", action="store_true", help="machine-readable output")
    p.add_argument("--workers", type=int, default=1)

    p = sub.add_parser("compare", help="dyad vs triad affinity for one mention pair")
    p.add_argument("--model", required=True, help="triad checkpoint directory")
    p.add_argument("--dyad-model")
    p.add_argument("--corpus", required=True)
    p.add_argument("--doc", required=True, help="document key")
    p.add_argument("--pair", type=int, nargs=2, required=True,
                   metavar=("A", "B"), help="mention ids")
    return parser


# ---------------------------------------------------------------------------


def _cmd_synth(args):
    config = corpus.SynthConfig(
        documents=args.docs, entities_per_doc=args.entities,
        mentions_per_entity=args.mentions, vocab_size=args.vocab,
        pronoun_rate=args.pronoun_rate, speaker_count=args.speakers,
        cue_noise=args.cue_noise, first_person_rate=args.first_person_rate)
    try:
        documents = corpus.generate_synthetic_corpus(config, args.seed)
    except ValueError as exc:
        raise CliError(DATA_ERROR, str(exc))
    paths = corpus.write_corpus_dir(documents, args.out)
    mentions = sum(len(d.mentions) for d in documents)
    print(f"wrote {len(paths)} documents ({mentions} mentions) to {args.out}")
    return 0


def _cmd_train(args):
    config = training.ExperimentConfig()
    if args.config:
        config = _load_config(args.config, base=config)
    if args.robust and config.grad_clip == 0:
        config.grad_clip = 5.0
    documents = _load_corpus(args.corpus)
    emb_table = None
    if args.embeddings:
        surfaces = {t.surface for d in documents for t in d.tokens}
        surfaces |= {s.lower() for s in surfaces}
        try:
            emb_table = corpus.load_embeddings(
                Path(args.embeddings).read_text(encoding="utf-8"),
                surfaces, seed=config.seed, dim=config.word_emb_dim)
        except (OSError, ValueError) as exc:
            raise CliError(DATA_ERROR, f"{args.embeddings}: {exc}")

    def log(record):
        if not args.quiet:
            print(f"subepoch {record['subepoch']:>4}  loss {record['loss']:.6f}  "
                  f"lr {record['lr']:g}  {record['seconds']:.1f}s")

    try:
        result = training.run_training(documents, config, args.out,
                                       emb_table=emb_table, resume=args.resume,
                                       log=log)
    except ValueError as exc:
        raise CliError(DATA_ERROR, str(exc))
    print(f"checkpoint written to {result.out_dir}")
    return 0


def _cmd_score(args):
    model, config = _load_model(args.model)
    documents = _load_corpus(args.corpus)
    use_sub = False if args.no_speaker_sub else None
    entries = []
    for doc in documents:
        used, aff = training.score_document(model, config, doc,
                                            use_speaker_sub=use_sub)
        entries.append((used.doc_key, aff))
    text = affinity_mod.write_affinities(entries, config.to_affinity_config())
    Path(args.out).write_text(text, encoding="utf-8")
    print(f"wrote affinities for {len(entries)} documents to {args.out}")
    return 0


def _cmd_cluster(args):
    try:
        entries = affinity_mod.read_affinities(
            Path(args.affinities).read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise CliError(DATA_ERROR, str(exc))
    aff_config = affinity_mod.AffinityConfig(out_of_window_distance=args.oow_distance)
    docs_by_key = {}
    if args.corpus:
        docs_by_key = {d.doc_key: d for d in _load_corpus(args.corpus)}

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    listing = []
    response_docs = []
    for doc_key, aff in entries:
        dist = affinity_mod.to_distances(aff, aff_config)
        if aff.n < 2:
            partition = clustering.EntityPartition.from_clusters(
                [[i] for i in range(aff.n)])
        else:
            partition = clustering.cluster_mentions(dist, args.t, args.linkage)
        listing.append({"doc_key": doc_key,
                        "clusters": [sorted(c) for c in partition.clusters]})
        if doc_key in docs_by_key:
            response_docs.append(
                clustering.partition_to_document(docs_by_key[doc_key], partition))
    (out / "clusters.json").write_text(json.dumps(listing, indent=2) + "\n",
                                       encoding="utf-8")
    written = [out / "clusters.json"]
    if response_docs:
        (out / "response.conll").write_text(corpus.to_conll(response_docs),
                                            encoding="utf-8")
        written.append(out / "response.conll")
    print("wrote " + ", ".join(str(p) for p in written))
    return 0


def _cmd_evaluate(args):
    documents = _load_corpus(args.corpus)
    flags = _flag_overrides(args)
    rows = []
    all_results = []
    for model_dir in args.model:
        model, config = _load_model(model_dir)
        report, results = training.evaluate_corpus(
            model, config, documents, workers=args.workers, **flags)
        rows.append((model.kind, report))
        all_results.append(results)
    if args.kv:
        for label, report in rows:
            print(metrics.format_report_kv(label, report))
    else:
        print(metrics.format_report_table(rows))
    if args.histogram:
        key_hist = {}
        for doc in documents:
            for size, count in metrics.entity_size_histogram(
                    doc.entity_partition()).items():
                key_hist[size] = key_hist.get(size, 0) + count
        print("\nkey entity sizes:")
        print(metrics.format_histogram(key_hist))
        for (label, _), results in zip(rows, all_results):
            resp_hist = {}
            for _, _, partition in results:
                for size, count in metrics.entity_size_histogram(partition).items():
                    resp_hist[size] = resp_hist.get(size, 0) + count
            print(f"\n{label} response entity sizes (singletons included):")
            print(metrics.format_histogram(resp_hist))
    return 0


def _cmd_compare(args):
    model, config = _load_model(args.model)
    if model.kind != "triad":
        raise CliError(MODEL_ERROR, f"--model must be a triad checkpoint, got {model.kind}")
    dyad_model = dyad_config = None
    if args.dyad_model:
        dyad_model, dyad_config = _load_model(args.dyad_model)
        if dyad_model.kind != "dyad":
            raise CliError(MODEL_ERROR,
                           f"--dyad-model must be a dyad checkpoint, got {dyad_model.kind}")
    documents = [d for d in _load_corpus(args.corpus) if d.doc_key == args.doc]
    if not documents:
        raise CliError(DATA_ERROR, f"no document with key {args.doc!r}")
    doc = documents[0]
    a, b = args.pair
    if not (0 <= a < len(doc.mentions) and 0 <= b < len(doc.mentions)) or a == b:
        raise CliError(DATA_ERROR,
                       f"pair must name two distinct mentions in [0, {len(doc.mentions)})")
    try:
        diag = training.pair_diagnostics(model, config, doc, min(a, b), max(a, b),
                                         dyad_model=dyad_model,
                                         dyad_config=dyad_config)
    except ValueError as exc:
        raise CliError(DATA_ERROR, str(exc))

    def span_text(mention_id):
        m = doc.mentions[mention_id]
        return " ".join(t.surface for t in doc.mention_tokens(m))

    print(f"pair ({a}, {b}): '{span_text(a)}' / '{span_text(b)}'")
    if "dyad_affinity" in diag:
        print(f"dyad affinity:  {diag['dyad_affinity']:.3f}")
    print(f"triad affinity: {diag['triad_affinity']:.3f} "
          f"(mean over {len(diag['third_members'])} third members)")
    for c, value in diag["third_members"]:
        print(f"  third member {c:>3} '{span_text(c)}': {value:.3f}")
    return 0


_COMMANDS = {
    "synth": _cmd_synth,
    "train": _cmd_train,
    "score": _cmd_score,
    "cluster": _cmd_cluster,
    "evaluate": _cmd_evaluate,
    "compare": _cmd_compare,
}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except CliError as exc:
        print(str(exc), file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
