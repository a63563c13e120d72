"""Triad scoring network and its reduced dyad baseline.

Three mentions are encoded by shared bidirectional LSTMs over word and POS
windows, enriched by mutual attention between members, fused and pooled to
fixed vectors, and combined pairwise.  The triad head sums the three pair
vectors into a shared context that all three decoders consult before a
joint sigmoid layer emits one probability per pair.  The dyad baseline
reuses the same encoders and pair stack but wires the pair vector straight
to a scalar output.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor

_MASK_BIAS = -1e9


@dataclass(frozen=True)
class ModelConfig:
    word_emb_dim: int = 300
    pos_emb_dim: int = 16
    word_lstm_hidden: int = 128   # per direction
    pos_lstm_hidden: int = 32     # per direction
    pair_hidden: tuple = (256, 128)
    shared_context_dim: int = 128
    decoder_dim: int = 64
    input_dropout: float = 0.5
    pair_dropout: float = 0.3

    def validate(self):
        dims = (self.word_emb_dim, self.pos_emb_dim, self.word_lstm_hidden,
                self.pos_lstm_hidden, self.shared_context_dim, self.decoder_dim,
                *self.pair_hidden)
        if any(d < 1 for d in dims):
            raise ValueError("all layer widths must be positive")
        if not self.pair_hidden:
            raise ValueError("pair_hidden needs at least one layer")
        if not (0 <= self.input_dropout < 1 and 0 <= self.pair_dropout < 1):
            raise ValueError("dropout rates must lie in [0, 1)")

    @property
    def word_out(self):
        return 2 * self.word_lstm_hidden

    @property
    def pos_out(self):
        return 2 * self.pos_lstm_hidden

    @property
    def pair_input(self):
        return 2 + 2 * self.word_out + 2 * self.pos_out


def expected_parameter_count(config, n_word_rows, n_pos_rows, kind):
    """Closed-form size of the parameter set; the tests audit weight sharing
    against this number."""
    c = config
    total = n_word_rows * c.word_emb_dim + n_pos_rows * c.pos_emb_dim
    for d_in, h in ((c.word_emb_dim, c.word_lstm_hidden),
                    (c.pos_emb_dim, c.pos_lstm_hidden)):
        total += 2 * (d_in * 4 * h + h * 4 * h + 4 * h)
    for d in (c.word_out, c.pos_out):
        total += 3 * d * d + d  # fusion layer per stream
    widths = [c.pair_input, *c.pair_hidden]
    for a, b in zip(widths, widths[1:]):
        total += a * b + b
    p_top = c.pair_hidden[-1]
    if kind == "triad":
        total += p_top * c.shared_context_dim + c.shared_context_dim
        total += (p_top + c.shared_context_dim) * c.decoder_dim + c.decoder_dim
        total += 3 * c.decoder_dim * 3 + 3
    else:
        total += p_top + 1
    return total


# ---------------------------------------------------------------------------
# spec-level single-instance ops (the batched model uses the same math inline)


def mutual_attention(queries, keys, key_mask=None):
    """Attention of one mention over another: weights (T_q, T_k) and the
    context (T_q, d) they select from `keys`."""
    queries, keys = ad.as_tensor(queries), ad.as_tensor(keys)
    if queries.shape[-1] != keys.shape[-1]:
        raise ad.ShapeError(
            f"mutual_attention: feature dims differ {queries.shape} vs {keys.shape}")
    scores = ad.matmul(queries, ad.transpose_last2(keys))
    if key_mask is not None:
        key_mask = np.asarray(key_mask, dtype=np.float64)
        if not key_mask.any():
            raise ValueError("mutual_attention: every key position is masked")
        scores = ad.add(scores, Tensor((1.0 - key_mask) * _MASK_BIAS))
    weights = ad.softmax(scores)
    return weights, ad.matmul(weights, keys)


def fuse_mention(states, context_a, context_b, mask, weight, bias):
    """Per-step tanh mix of a mention's states with two partner contexts,
    pooled to one vector by a masked mean over time."""
    mixed = ad.tanh(ad.add(ad.matmul(
        ad.concat([states, context_a, context_b], axis=-1), weight), bias))
    single = mixed.ndim == 2
    if single:
        mixed = ad.reshape(mixed, (1,) + mixed.shape)
        mask = np.asarray(mask, dtype=np.float64)[None, :]
    pooled = ad.masked_mean(mixed, mask, axis=1)
    return ad.reshape(pooled, (pooled.shape[-1],)) if single else pooled


# ---------------------------------------------------------------------------


class _ScoringModel:
    """Parameters and stages shared by the triad and dyad networks."""

    kind = None

    def __init__(self, config, emb_table, pos_vocab, seed):
        config.validate()
        if emb_table.dim != config.word_emb_dim:
            raise ValueError(
                f"embedding table dim {emb_table.dim} != config {config.word_emb_dim}")
        self.config = config
        self.emb_table = emb_table
        self.pos_vocab = pos_vocab
        rng = np.random.default_rng(seed)
        c = config
        p = {"word_emb.table": Parameter(emb_table.vectors.copy()),
             "pos_emb.table": Parameter(self._pos_init(rng, len(pos_vocab), c.pos_emb_dim))}
        p.update(ad.lstm_params(rng, c.word_emb_dim, c.word_lstm_hidden, "word_lstm"))
        p.update(ad.lstm_params(rng, c.pos_emb_dim, c.pos_lstm_hidden, "pos_lstm"))
        p.update(ad.dense_params(rng, 3 * c.word_out, c.word_out, "word_fuse"))
        p.update(ad.dense_params(rng, 3 * c.pos_out, c.pos_out, "pos_fuse"))
        widths = [c.pair_input, *c.pair_hidden]
        for i, (a, b) in enumerate(zip(widths, widths[1:])):
            p.update(ad.dense_params(rng, a, b, f"pair.{i}"))
        self.params = p
        self._init_head(rng)

    @staticmethod
    def _pos_init(rng, n_tags, dim):
        # roughly one-hot: identity slice over random noise, trainable after
        init = rng.uniform(-0.05, 0.05, size=(n_tags, dim))
        for i in range(min(n_tags, dim)):
            init[i, i] = 1.0
        return init

    def parameters(self):
        return self.params

    def parameter_count(self):
        return sum(p.values.size for p in self.params.values())

    def load_parameter_values(self, arrays):
        for name, p in self.params.items():
            if name not in arrays:
                raise KeyError(f"checkpoint is missing parameter {name}")
            if arrays[name].shape != p.values.shape:
                raise ValueError(
                    f"parameter {name}: checkpoint shape {arrays[name].shape} "
                    f"!= model shape {p.values.shape}")
            p.tensor.values = arrays[name].astype(np.float64).copy()

    def parameter_values(self):
        return {name: p.values.copy() for name, p in self.params.items()}

    # -- stages ------------------------------------------------------------

    def _embed_stream(self, ids, masks, table_name, lstm_prefix, training, rng, dropout_rate):
        n, length = ids.shape
        table = self.params[table_name].tensor
        vecs = ad.reshape(ad.take_rows(table, ids.reshape(-1)),
                          (n, length, table.shape[1]))
        vecs = ad.dropout(vecs, dropout_rate, training, rng)
        return ad.bilstm_forward(vecs, masks, self.params, lstm_prefix)

    def _encode(self, word_ids, pos_ids, masks, training, rng):
        h_word = self._embed_stream(word_ids, masks, "word_emb.table", "word_lstm",
                                    training, rng, self.config.input_dropout)
        h_pos = self._embed_stream(pos_ids, masks, "pos_emb.table", "pos_lstm",
                                   training, rng, self.config.input_dropout)
        return h_word, h_pos

    def _contexts(self, h, masks, q_idx, k_idx):
        q = ad.take_rows(h, q_idx)
        k = ad.take_rows(h, k_idx)
        bias = Tensor((1.0 - masks[k_idx])[:, None, :] * _MASK_BIAS)
        weights = ad.softmax(ad.add(ad.matmul(q, ad.transpose_last2(k)), bias))
        return ad.matmul(weights, k)

    def _fuse_stream(self, h, contexts, masks, first_idx, second_idx, prefix):
        n, length, dim = h.shape
        x = ad.concat([h, ad.take_rows(contexts, first_idx),
                       ad.take_rows(contexts, second_idx)], axis=2)
        mixed = ad.tanh(ad.add(ad.matmul(ad.reshape(x, (n * length, 3 * dim)),
                                         self.params[f"{prefix}.w"].tensor),
                               self.params[f"{prefix}.b"].tensor))
        return ad.masked_mean(ad.reshape(mixed, (n, length, dim)), masks, axis=1)

    def _pair_stack(self, x, training, rng):
        out = x
        last = len(self.config.pair_hidden) - 1
        for i in range(len(self.config.pair_hidden)):
            out = ad.dense(out, self.params, f"pair.{i}", ad.tanh)
            if i != last:
                out = ad.dropout(out, self.config.pair_dropout, training, rng)
        return out

    def encode_sequences(self, encodings, training=False, rng=None):
        """Shared-encoder LSTM states for a list of mention encodings."""
        word_ids = np.stack([e.word_ids for e in encodings])
        pos_ids = np.stack([e.pos_ids for e in encodings])
        masks = np.stack([e.mask for e in encodings])
        h_word, h_pos = self._encode(word_ids, pos_ids, masks, training, rng)
        return h_word, h_pos


class TriadModel(_ScoringModel):
    kind = "triad"

    def _init_head(self, rng):
        c = self.config
        p_top = c.pair_hidden[-1]
        self.params.update(ad.dense_params(rng, p_top, c.shared_context_dim, "shared_ctx"))
        self.params.update(ad.dense_params(
            rng, p_top + c.shared_context_dim, c.decoder_dim, "decoder"))
        self.params.update(ad.dense_params(rng, 3 * c.decoder_dim, 3, "out"))

    def forward(self, batch, training=False, rng=None, return_parts=False):
        """Pair probabilities (B, 3) in slot order (ij, jk, ki)."""
        b, _, length = batch.word_ids.shape
        n = 3 * b
        masks = batch.masks.reshape(n, length)
        h_word, h_pos = self._encode(batch.word_ids.reshape(n, length),
                                     batch.pos_ids.reshape(n, length),
                                     masks, training, rng)

        base = np.arange(b) * 3
        q_idx = (base[:, None] + np.array([0, 0, 1, 1, 2, 2])).reshape(-1)
        k_idx = (base[:, None] + np.array([1, 2, 0, 2, 0, 1])).reshape(-1)
        six = np.arange(b) * 6
        first_idx = (six[:, None] + np.array([0, 2, 4])).reshape(-1)
        second_idx = (six[:, None] + np.array([1, 3, 5])).reshape(-1)

        pooled = []
        for h, prefix in ((h_word, "word_fuse"), (h_pos, "pos_fuse")):
            contexts = self._contexts(h, masks, q_idx, k_idx)
            pooled.append(self._fuse_stream(h, contexts, masks,
                                            first_idx, second_idx, prefix))

        first = np.concatenate([base, base + 1, base + 2])   # ij, jk, ki blocks
        second = np.concatenate([base + 1, base + 2, base])
        feats = Tensor(np.concatenate([batch.pair_feats[:, 0],
                                       batch.pair_feats[:, 1],
                                       batch.pair_feats[:, 2]]))
        pair_x = ad.concat([feats] + [ad.take_rows(h, idx)
                                      for h in pooled for idx in (first, second)],
                           axis=1)
        pairs = self._pair_stack(pair_x, training, rng)

        blocks = [ad.slice_axis(pairs, 0, i * b, (i + 1) * b) for i in range(3)]
        shared = ad.dense(ad.add_n(blocks), self.params, "shared_ctx", ad.tanh)
        decoded = ad.dense(ad.concat([pairs, ad.concat([shared] * 3, axis=0)], axis=1),
                           self.params, "decoder", ad.tanh)
        joined = ad.concat([ad.slice_axis(decoded, 0, i * b, (i + 1) * b)
                            for i in range(3)], axis=1)
        scores = ad.sigmoid(ad.dense(joined, self.params, "out", activation=None))
        if return_parts:
            return scores, {"shared_context": shared, "pair_vectors": pairs}
        return scores


class DyadModel(_ScoringModel):
    kind = "dyad"

    def _init_head(self, rng):
        self.params.update(ad.dense_params(rng, self.config.pair_hidden[-1], 1, "out"))

    def forward(self, batch, training=False, rng=None, return_parts=False):
        """Pair probability (B,) for each row's mention pair."""
        b, _, length = batch.word_ids.shape
        n = 2 * b
        masks = batch.masks.reshape(n, length)
        h_word, h_pos = self._encode(batch.word_ids.reshape(n, length),
                                     batch.pos_ids.reshape(n, length),
                                     masks, training, rng)

        base = np.arange(b) * 2
        q_idx = (base[:, None] + np.array([0, 1])).reshape(-1)
        k_idx = (base[:, None] + np.array([1, 0])).reshape(-1)

        pooled = []
        for h, prefix in ((h_word, "word_fuse"), (h_pos, "pos_fuse")):
            contexts = self._contexts(h, masks, q_idx, k_idx)
            # a dyad has a single partner, so the fusion sees its context twice
            pooled.append(self._fuse_stream(h, contexts, masks, q_idx, q_idx, prefix))

        feats = Tensor(batch.pair_feats)
        pair_x = ad.concat([feats] + [ad.take_rows(h, idx)
                                      for h in pooled for idx in (base, base + 1)],
                           axis=1)
        pairs = self._pair_stack(pair_x, training, rng)
        scores = ad.sigmoid(ad.dense(pairs, self.params, "out", activation=None))
        out = ad.reshape(scores, (b,))
        if return_parts:
            return out, {"pair_vectors": pairs}
        return out


def build_model(kind, config, emb_table, pos_vocab, seed):
    if kind == "triad":
        return TriadModel(config, emb_table, pos_vocab, seed)
    if kind == "dyad":
        return DyadModel(config, emb_table, pos_vocab, seed)
    raise ValueError(f"unknown model kind {kind!r}")
