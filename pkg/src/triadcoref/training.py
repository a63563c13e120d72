"""Training loop, checkpointing, and the end-to-end scoring pipeline.

Training runs in sub-epochs: each samples a fixed number of corpus files,
enumerates their training polyads, batches them through a bounded
producer/consumer queue, and applies Adam at the scheduled learning rate.
Every sub-epoch ends with a full checkpoint (parameters, optimizer moments,
RNG streams), so interrupted runs resume bit-for-bit.
"""

from __future__ import annotations

import json
import queue
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import affinity as affinity_mod
from . import polyads, postprocess
from .affinity import AffinityConfig
from .autodiff import Adam, bce_loss, load_arrays, save_arrays
from .clustering import EntityPartition, cluster_mentions
from .corpus import EmbeddingTable
from .features import EncodedDocument, EncodingConfig, PosVocabulary
from .metrics import corpus_report
from .model import ModelConfig, build_model
from .polyads import PolyadSpec

STATE_VERSION = 1


# ---------------------------------------------------------------------------
# experiment configuration (flat key = value text format)


def _parse_bool(s):
    low = s.lower()
    if low in ("true", "1", "yes"):
        return True
    if low in ("false", "0", "no"):
        return False
    raise ValueError(f"expected a boolean, got {s!r}")


def _parse_int_tuple(s):
    return tuple(int(x) for x in s.split(",") if x.strip())


def _parse_schedule(s):
    out = []
    for piece in s.split(","):
        boundary, value = piece.split(":")
        out.append((int(boundary), float(value)))
    return tuple(out)


def _parse_optional_int(s):
    return None if s.lower() in ("none", "") else int(s)


def _fmt_default(v):
    return repr(v) if isinstance(v, float) else str(v)


_FIELD_IO = {
    "pair_hidden": (_parse_int_tuple, lambda v: ",".join(str(x) for x in v)),
    "lr_schedule": (_parse_schedule,
                    lambda v: ",".join(f"{b}:{lr!r}" for b, lr in v)),
    "max_third_members": (_parse_optional_int, lambda v: "none" if v is None else str(v)),
}


@dataclass
class ExperimentConfig:
    """Every tunable of the pipeline, settable via the flat config file."""
    # model
    model: str = "triad"
    word_emb_dim: int = 300
    pos_emb_dim: int = 16
    word_lstm_hidden: int = 128
    pos_lstm_hidden: int = 32
    pair_hidden: tuple = (256, 128)
    shared_context_dim: int = 128
    decoder_dim: int = 64
    input_dropout: float = 0.5
    pair_dropout: float = 0.3
    # mention windows
    context_window: int = 8
    max_mention_tokens: int = 10
    max_token_distance: int = 2000
    # polyad enumeration
    train_window: int = 15
    eval_window: int = 40
    max_third_members: int | None = None
    # affinity and clustering
    aggregation: str = "mean"
    top_k: int = 3
    max_distance: float = 10.0
    out_of_window_distance: float = 3.7
    linkage: str = "average"
    cutoff: float = 3.5
    # postprocessing defaults (CLI flags can switch each rule off)
    use_propername: bool = True
    use_speaker_sub: bool = True
    use_pronoun_fix: bool = True
    # training schedule
    files_per_subepoch: int = 50
    total_subepochs: int = 300
    batch_size: int = 64
    seed: int = 0
    lr_schedule: tuple = ((0, 1e-3), (100, 5e-4), (200, 1e-4))
    grad_clip: float = 0.0
    workers: int = 1

    def validate(self):
        self.to_model_config().validate()
        self.to_polyad_spec().validate()
        self.to_affinity_config().validate()
        if self.model not in ("triad", "dyad"):
            raise ValueError(f"model must be 'triad' or 'dyad', got {self.model!r}")
        if min(self.files_per_subepoch, self.total_subepochs, self.batch_size,
               self.workers, self.context_window, self.max_mention_tokens) < 1:
            raise ValueError("sizes and counts must be positive")
        if not self.lr_schedule or self.lr_schedule[0][0] != 0:
            raise ValueError("lr_schedule must start at sub-epoch 0")
        boundaries = [b for b, _ in self.lr_schedule]
        if boundaries != sorted(boundaries):
            raise ValueError("lr_schedule boundaries must be nondecreasing")
        if any(lr <= 0 for _, lr in self.lr_schedule):
            raise ValueError("learning rates must be positive")
        if self.grad_clip < 0:
            raise ValueError("grad_clip must be >= 0 (0 disables clipping)")
        if self.cutoff <= 0 or self.out_of_window_distance <= 0:
            raise ValueError("distance constants must be positive")
        return self

    def to_model_config(self):
        return ModelConfig(
            word_emb_dim=self.word_emb_dim, pos_emb_dim=self.pos_emb_dim,
            word_lstm_hidden=self.word_lstm_hidden,
            pos_lstm_hidden=self.pos_lstm_hidden,
            pair_hidden=tuple(self.pair_hidden),
            shared_context_dim=self.shared_context_dim,
            decoder_dim=self.decoder_dim,
            input_dropout=self.input_dropout, pair_dropout=self.pair_dropout)

    def to_encoding_config(self):
        return EncodingConfig(context_window=self.context_window,
                              max_mention_tokens=self.max_mention_tokens,
                              max_token_distance=self.max_token_distance)

    def to_polyad_spec(self):
        return PolyadSpec(order=3 if self.model == "triad" else 2,
                          train_window=self.train_window,
                          eval_window=self.eval_window,
                          max_third_members=self.max_third_members)

    def to_affinity_config(self):
        return AffinityConfig(aggregation=self.aggregation, top_k=self.top_k,
                              max_distance=self.max_distance,
                              out_of_window_distance=self.out_of_window_distance)

    def learning_rate(self, subepoch):
        lr = self.lr_schedule[0][1]
        for boundary, value in self.lr_schedule:
            if subepoch >= boundary:
                lr = value
        return lr


def config_to_text(config):
    lines = []
    for f in fields(ExperimentConfig):
        value = getattr(config, f.name)
        _, fmt = _FIELD_IO.get(f.name, (None, _fmt_default))
        lines.append(f"{f.name} = {fmt(value)}")
    return "\n".join(lines) + "\n"


def config_from_text(text, base=None):
    """Parse `key = value` lines; unknown keys are errors."""
    config = base or ExperimentConfig()
    by_name = {f.name: f for f in fields(ExperimentConfig)}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected 'key = value'")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key not in by_name:
            raise ValueError(f"config line {lineno}: unknown key {key!r}")
        if key in _FIELD_IO:
            parsed = _FIELD_IO[key][0](value)
        else:
            kind = by_name[key].type
            if kind == "int":
                parsed = int(value)
            elif kind == "float":
                parsed = float(value)
            elif kind == "bool":
                parsed = _parse_bool(value)
            else:
                parsed = value
        setattr(config, key, parsed)
    return config.validate()


# ---------------------------------------------------------------------------
# model directory I/O


def _save_vocab(path, surfaces):
    path.write_text("\n".join(surfaces) + "\n", encoding="utf-8")


def _load_vocab(path):
    return [line for line in path.read_text(encoding="utf-8").splitlines()]


def save_model_dir(out_dir, model, config):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(config_to_text(config), encoding="utf-8")
    _save_vocab(out / "wordvocab.txt", model.emb_table.surfaces)
    (out / "posvocab.txt").write_text(model.pos_vocab.to_text(), encoding="utf-8")
    save_arrays(out / "params.bin", model.parameter_values())


def load_model_dir(path):
    """Rebuild a scoring model (and its config) from a checkpoint directory."""
    path = Path(path)
    if not (path / "params.bin").exists():
        raise FileNotFoundError(f"{path} does not contain a model checkpoint")
    config = config_from_text((path / "config.txt").read_text(encoding="utf-8"))
    surfaces = _load_vocab(path / "wordvocab.txt")
    params = load_arrays(path / "params.bin")
    vectors = params["word_emb.table"]
    emb = EmbeddingTable(config.word_emb_dim,
                         {w: i for i, w in enumerate(surfaces)}, vectors)
    pos_vocab = PosVocabulary.from_text((path / "posvocab.txt").read_text(encoding="utf-8"))
    model = build_model(config.model, config.to_model_config(), emb, pos_vocab,
                        seed=config.seed)
    model.load_parameter_values(params)
    return model, config


def _save_train_state(out, model, config, optimizer, next_subepoch, data_rng, dropout_rng):
    save_model_dir(out, model, config)
    moments = {}
    for name, p in model.parameters().items():
        moments[f"m.{name}"] = p.m
        moments[f"v.{name}"] = p.v
    save_arrays(out / "state.bin", moments)
    state = {
        "format_version": STATE_VERSION,
        "next_subepoch": next_subepoch,
        "adam_step": optimizer.step_count,
        "data_rng": data_rng.bit_generator.state,
        "dropout_rng": dropout_rng.bit_generator.state,
    }
    (out / "state.json").write_text(json.dumps(state, sort_keys=True), encoding="utf-8")


def _restore_rng(state):
    rng = np.random.default_rng()
    rng.bit_generator.state = state
    return rng


# ---------------------------------------------------------------------------
# training loop


@dataclass
class TrainResult:
    model: object
    config: ExperimentConfig
    history: list  # one dict per sub-epoch: subepoch, loss, lr, seconds
    out_dir: Path


def _training_items_for(doc, enc, kind, spec):
    if kind == "triad":
        triads = polyads.enumerate_training_triads(doc, spec)
        if not triads and len(doc.mentions) == 2:
            a, b = doc.mentions[0], doc.mentions[1]
            triads = [polyads.degenerate_labeled_triad(
                0, 1, int(a.entity_id == b.entity_id))]
        return [(enc, t) for t in triads]
    return [(enc, p) for p in polyads.enumerate_training_pairs(doc, spec)]


def _produce_batches(groups, kind, out_queue):
    for group in groups:
        out_queue.put(polyads.gather_batch(group, kind))
    out_queue.put(None)


def run_training(documents, config, out_dir, emb_table=None, resume=False, log=None):
    """Train a triad or dyad scorer; checkpoints land in `out_dir` every
    sub-epoch.  With `resume=True` an interrupted run continues from the
    stored state (the same corpus must be supplied) and reproduces the
    uninterrupted loss trajectory bit for bit."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    state_file = out / "state.json"

    if resume and state_file.exists():
        model, config = load_model_dir(out)
        state = json.loads(state_file.read_text(encoding="utf-8"))
        if state["format_version"] != STATE_VERSION:
            raise ValueError(f"unsupported training state version {state['format_version']}")
        moments = load_arrays(out / "state.bin")
        for name, p in model.parameters().items():
            p.m = moments[f"m.{name}"]
            p.v = moments[f"v.{name}"]
        optimizer = Adam(model.parameters())
        optimizer.step_count = state["adam_step"]
        data_rng = _restore_rng(state["data_rng"])
        dropout_rng = _restore_rng(state["dropout_rng"])
        start = state["next_subepoch"]
        if config.use_speaker_sub:
            documents = [postprocess.substitute_speakers(d) for d in documents]
    else:
        config.validate()
        if config.use_speaker_sub:
            documents = [postprocess.substitute_speakers(d) for d in documents]
        least = 3 if config.model == "triad" else 2
        if not any(len(d.mentions) >= least for d in documents):
            raise ValueError(
                f"{config.model} training needs a document with >= {least} mentions")
        if emb_table is None:
            emb_table = EmbeddingTable.from_corpus(documents, config.word_emb_dim,
                                                   config.seed)
        pos_vocab = PosVocabulary.from_documents(documents)
        model = build_model(config.model, config.to_model_config(), emb_table,
                            pos_vocab, seed=config.seed)
        optimizer = Adam(model.parameters())
        data_rng = np.random.default_rng([config.seed, 0])
        dropout_rng = np.random.default_rng([config.seed, 1])
        start = 0
        (out / "loss.log").write_text("", encoding="utf-8")

    kind = config.model
    spec = config.to_polyad_spec()
    enc_config = config.to_encoding_config()
    eligible = [i for i, d in enumerate(documents) if len(d.mentions) >= 2]
    if not eligible:
        raise ValueError("no document has two or more mentions")
    item_cache = {}

    def items_for(idx):
        if idx not in item_cache:
            enc = EncodedDocument(documents[idx], model.emb_table, model.pos_vocab,
                                  enc_config)
            item_cache[idx] = _training_items_for(documents[idx], enc, kind, spec)
        return item_cache[idx]

    history = []
    for subepoch in range(start, config.total_subepochs):
        t0 = time.perf_counter()
        lr = config.learning_rate(subepoch)
        sampled = data_rng.choice(len(eligible), size=config.files_per_subepoch,
                                  replace=config.files_per_subepoch > len(eligible))
        shuffle_seed = int(data_rng.integers(2 ** 63))
        items = []
        for s in sampled:
            items.extend(items_for(eligible[int(s)]))
        if not items:
            raise ValueError(
                f"no training {kind}s inside train_window={config.train_window} "
                f"for the sampled files")

        groups = polyads.shuffle_chunks(items, config.batch_size, shuffle_seed)
        batch_queue = queue.Queue(maxsize=max(4, 2 * config.workers))
        producers = []
        for w in range(config.workers):
            share = groups[w::config.workers]
            thread = threading.Thread(target=_produce_batches,
                                      args=(share, kind, batch_queue), daemon=True)
            thread.start()
            producers.append(thread)

        total_loss = 0.0
        total_items = 0
        finished = 0
        while finished < config.workers:
            batch = batch_queue.get()
            if batch is None:
                finished += 1
                continue
            optimizer.zero_grad()
            out_scores = model.forward(batch, training=True, rng=dropout_rng)
            loss = bce_loss(out_scores, batch.labels)
            loss.backward()
            if config.grad_clip > 0:
                optimizer.clip_gradients(config.grad_clip)
            optimizer.step(lr)
            total_loss += float(loss.values) * len(batch)
            total_items += len(batch)
        for thread in producers:
            thread.join()

        mean_loss = total_loss / total_items
        seconds = time.perf_counter() - t0
        record = {"subepoch": subepoch, "loss": mean_loss, "lr": lr,
                  "seconds": seconds}
        history.append(record)
        with open(out / "loss.log", "a", encoding="utf-8") as fh:
            fh.write(f"{subepoch} {mean_loss:.6f} {lr:g} {seconds:.3f}\n")
        if log:
            log(record)
        _save_train_state(out, model, config, optimizer, subepoch + 1,
                          data_rng, dropout_rng)

    return TrainResult(model=model, config=config, history=history, out_dir=out)


# ---------------------------------------------------------------------------
# scoring pipeline


def _resolve_flags(config, use_propername, use_speaker_sub, use_pronoun_fix):
    return (config.use_propername if use_propername is None else use_propername,
            config.use_speaker_sub if use_speaker_sub is None else use_speaker_sub,
            config.use_pronoun_fix if use_pronoun_fix is None else use_pronoun_fix)


def score_document(model, config, doc, use_speaker_sub=None):
    """Affinity matrix for one document (speaker substitution included when
    enabled, since it changes the features the model sees)."""
    _, sub, _ = _resolve_flags(config, None, use_speaker_sub, None)
    used = postprocess.substitute_speakers(doc) if sub else doc
    enc = EncodedDocument(used, model.emb_table, model.pos_vocab,
                          config.to_encoding_config())
    aff = affinity_mod.aggregate(enc, model, config.to_polyad_spec(),
                                 config.to_affinity_config())
    return used, aff


def cluster_document(doc, aff, config, use_propername=None, use_pronoun_fix=None):
    """Distances -> agglomerate -> cut, with the distance-level and
    cluster-level postprocessing rules applied when enabled."""
    propername, _, pronoun_fix = _resolve_flags(config, use_propername, None,
                                                use_pronoun_fix)
    aff_config = config.to_affinity_config()

    def derive(matrix):
        dist = affinity_mod.to_distances(matrix, aff_config)
        if propername:
            dist = postprocess.link_same_proper_names(doc, dist)
        return dist

    n = aff.n
    if n < 2:
        return EntityPartition.from_clusters([[i] for i in range(n)])
    partition = cluster_mentions(derive(aff), config.cutoff, config.linkage)
    if pronoun_fix:
        partition = postprocess.resolve_pronoun_only_clusters(
            partition, doc, aff,
            recluster=lambda a: cluster_mentions(derive(a), config.cutoff,
                                                 config.linkage))
    return partition


def run_pipeline(model, config, documents, use_propername=None,
                 use_speaker_sub=None, use_pronoun_fix=None, workers=1):
    """Score, cluster, and postprocess every document.

    Returns a list of (document_used, affinity, partition); documents are
    processed independently, in order, optionally across worker threads
    over a read-only model snapshot.
    """
    def process(doc):
        used, aff = score_document(model, config, doc, use_speaker_sub)
        partition = cluster_document(used, aff, config, use_propername,
                                     use_pronoun_fix)
        return used, aff, partition

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(process, documents))
    return [process(doc) for doc in documents]


def evaluate_corpus(model, config, documents, use_propername=None,
                    use_speaker_sub=None, use_pronoun_fix=None, workers=1):
    """Full pipeline plus metrics; returns (report, pipeline results)."""
    results = run_pipeline(model, config, documents, use_propername,
                           use_speaker_sub, use_pronoun_fix, workers)
    pairs = [(EntityPartition.from_clusters(doc.entity_partition()), partition)
             for doc, (_, _, partition) in zip(documents, results)]
    return corpus_report(pairs), results


def pair_diagnostics(model, config, doc, a, b, dyad_model=None, dyad_config=None):
    """Affinity breakdown for one mention pair: the aggregate score, each
    third member's contribution (sorted descending), and optionally the
    dyad model's direct score."""
    used, aff = score_document(model, config, doc)
    enc = EncodedDocument(used, model.emb_table, model.pos_vocab,
                          config.to_encoding_config())
    spec = config.to_polyad_spec()
    thirds = polyads.eval_third_members(len(used.mentions), a, b, spec)
    contributions = []
    for c in thirds:
        triple = tuple(sorted((a, b, c)))
        batch = polyads.gather_batch(
            [(enc, polyads.LabeledTriad(triple, (0, 0, 0)))], "triad")
        slot = polyads._pair_slot(triple, a, b)
        contributions.append((c, float(model.forward(batch).values[0, slot])))
    contributions.sort(key=lambda item: (-item[1], item[0]))
    out = {
        "pair": (a, b),
        "triad_affinity": aff.get(a, b),
        "third_members": contributions,
    }
    if dyad_model is not None:
        dyad_config = dyad_config or config
        _, dyad_aff = score_document(dyad_model, dyad_config, doc)
        out["dyad_affinity"] = dyad_aff.get(a, b)
    return out
