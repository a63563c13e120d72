"""Coreference evaluation: MUC, B-cubed, and entity-aligned CEAF (phi4).

All three scorers work on partitions of mention ids ("key" = gold,
"response" = system).  Corpus-level results aggregate per-document
numerators and denominators, not per-document ratios.  Mentions present on
only one side participate as singletons of themselves on the other side.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment


def _clusters(partition):
    clusters = partition.clusters if hasattr(partition, "clusters") else partition
    out = [frozenset(c) for c in clusters]
    if any(not c for c in out):
        raise ValueError("partitions must not contain empty clusters")
    return out


def _mention_map(clusters):
    mapping = {}
    for idx, cluster in enumerate(clusters):
        for m in cluster:
            if m in mapping:
                raise ValueError(f"mention {m!r} appears in two clusters")
            mapping[m] = idx
    return mapping


@dataclass
class MetricCounts:
    """Precision/recall numerators and denominators; addable across documents."""
    p_num: float = 0.0
    p_den: float = 0.0
    r_num: float = 0.0
    r_den: float = 0.0

    def __add__(self, other):
        return MetricCounts(self.p_num + other.p_num, self.p_den + other.p_den,
                            self.r_num + other.r_num, self.r_den + other.r_den)

    @property
    def degenerate(self):
        return self.p_den == 0 and self.r_den == 0

    def prf(self):
        p = self.p_num / self.p_den if self.p_den > 0 else 0.0
        r = self.r_num / self.r_den if self.r_den > 0 else 0.0
        f1 = 2 * p * r / (p + r) if p + r > 0 else 0.0
        return p, r, f1


def _muc_side(own, other):
    """Link-based numerator/denominator for one side of MUC."""
    other_map = _mention_map(other)
    num = den = 0
    for cluster in own:
        parts = {other_map[m] for m in cluster if m in other_map}
        # unmatched mentions each count as their own partition
        partitions = len(parts) + sum(1 for m in cluster if m not in other_map)
        num += len(cluster) - partitions
        den += len(cluster) - 1
    return num, den


def muc_counts(key, response):
    key, response = _clusters(key), _clusters(response)
    r_num, r_den = _muc_side(key, response)
    p_num, p_den = _muc_side(response, key)
    return MetricCounts(p_num, p_den, r_num, r_den)


def muc(key, response):
    """Link-based score penalizing missing and spurious coreference links."""
    return muc_counts(key, response).prf()


def _b_cubed_side(own, other):
    """Per-mention overlap fractions summed over one side's mentions."""
    own_map = _mention_map(own)
    other_map = _mention_map(other)
    total = 0.0
    for m, idx in own_map.items():
        own_cluster = own[idx]
        other_cluster = other[other_map[m]] if m in other_map else frozenset([m])
        total += len(own_cluster & other_cluster) / len(own_cluster)
    return total, len(own_map)


def b_cubed_counts(key, response):
    key, response = _clusters(key), _clusters(response)
    r_num, r_den = _b_cubed_side(key, response)
    p_num, p_den = _b_cubed_side(response, key)
    return MetricCounts(p_num, p_den, r_num, r_den)


def b_cubed(key, response):
    """Mention-based score averaging cluster overlap per mention."""
    return b_cubed_counts(key, response).prf()


def phi4(key_cluster, response_cluster):
    """Entity similarity 2|K & R| / (|K| + |R|)."""
    inter = len(frozenset(key_cluster) & frozenset(response_cluster))
    return 2.0 * inter / (len(key_cluster) + len(response_cluster))


def ceaf_phi4_counts(key, response):
    key, response = _clusters(key), _clusters(response)
    if key and response:
        sims = np.zeros((len(key), len(response)))
        for i, k in enumerate(key):
            for j, r in enumerate(response):
                sims[i, j] = phi4(k, r)
        rows, cols = linear_sum_assignment(-sims)  # maximize total similarity
        best = float(sims[rows, cols].sum())
    else:
        best = 0.0
    return MetricCounts(best, float(len(response)), best, float(len(key)))


def ceaf_phi4(key, response):
    """Score from the optimal one-to-one alignment of key and response entities."""
    return ceaf_phi4_counts(key, response).prf()


def entity_size_histogram(partition):
    """Cluster-size counts, singletons included."""
    histogram = {}
    for cluster in _clusters(partition):
        histogram[len(cluster)] = histogram.get(len(cluster), 0) + 1
    return histogram


# ---------------------------------------------------------------------------
# reporting


@dataclass
class MetricReport:
    """Percent-scale scores in shared-task layout."""
    mention_recall: float
    muc: tuple
    b_cubed: tuple
    ceaf: tuple
    average_f1: float
    degenerate: list = field(default_factory=list)

    def as_dict(self):
        out = {"mention_recall": self.mention_recall, "average_f1": self.average_f1}
        for name, triple in (("muc", self.muc), ("b_cubed", self.b_cubed),
                             ("ceaf_phi4", self.ceaf)):
            out[f"{name}_recall"], out[f"{name}_precision"], out[f"{name}_f1"] = triple
        return out


def strip_singletons_for_metrics(partition):
    return [c for c in _clusters(partition) if len(c) > 1]


def _ratio(num, den):
    return num / den if den > 0 else 0.0


def corpus_report(doc_pairs, strip=True):
    """Aggregate report over (key, response) partitions, one pair per document.

    Responses are singleton-stripped first (matching how systems are scored);
    mention recall is the fraction of key mentions that survive into the
    stripped response.
    """
    total = {"muc": MetricCounts(), "b3": MetricCounts(), "ceaf": MetricCounts()}
    matched = key_total = 0
    for key, response in doc_pairs:
        key = _clusters(key)
        response = strip_singletons_for_metrics(response) if strip else _clusters(response)
        total["muc"] += muc_counts(key, response)
        total["b3"] += b_cubed_counts(key, response)
        total["ceaf"] += ceaf_phi4_counts(key, response)
        key_mentions = {m for c in key for m in c}
        response_mentions = {m for c in response for m in c}
        matched += len(key_mentions & response_mentions)
        key_total += len(key_mentions)

    triples = {}
    degenerate = []
    for name, counts in total.items():
        p, r, f1 = counts.prf()
        triples[name] = (100.0 * r, 100.0 * p, 100.0 * f1)
        if counts.degenerate:
            degenerate.append(name)
    average = sum(t[2] for t in triples.values()) / 3.0
    return MetricReport(
        mention_recall=100.0 * _ratio(matched, key_total),
        muc=triples["muc"], b_cubed=triples["b3"], ceaf=triples["ceaf"],
        average_f1=average, degenerate=degenerate)


def report(key, response, strip=True):
    """Single-document convenience wrapper around corpus_report."""
    return corpus_report([(key, response)], strip=strip)


def format_report_table(rows):
    """Text table over (label, MetricReport) rows, shared-task column order."""
    header = (f"{'':<16}{'Mention':>8} {'MUC':>23} {'B3':>23} {'CEAF':>23} {'Avg F1':>8}\n"
              f"{'':<16}{'Rec.':>8} "
              + " ".join(f"{c:>7}" for c in ("Rec.", "Prec.", "F1") * 3)
              + f" {'':>8}")
    lines = [header]
    for label, rep in rows:
        cells = [f"{label:<16}", f"{rep.mention_recall:>8.2f}"]
        for triple in (rep.muc, rep.b_cubed, rep.ceaf):
            cells.append(" " + " ".join(f"{v:>7.2f}" for v in triple))
        cells.append(f" {rep.average_f1:>8.2f}")
        lines.append("".join(cells))
    return "\n".join(lines)


def format_report_kv(label, rep):
    """Machine-readable `key=value` lines for one report."""
    lines = [f"{label}.{k}={v:.2f}" for k, v in sorted(rep.as_dict().items())]
    if rep.degenerate:
        lines.append(f"{label}.degenerate={','.join(sorted(rep.degenerate))}")
    return "\n".join(lines)


def format_histogram(histogram, width=40):
    """Log-scale text rendering of a size -> count histogram."""
    if not histogram:
        return "(empty)"
    peak = max(histogram.values())
    scale = width / np.log10(peak + 1) if peak > 0 else 1.0
    lines = []
    for size in sorted(histogram):
        count = histogram[size]
        bar = "#" * max(1, int(round(np.log10(count + 1) * scale)))
        lines.append(f"{size:>5} | {bar} {count}")
    return "\n".join(lines)
