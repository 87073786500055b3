"""Coreference evaluation: mention alignment, MUC, B-cubed, CEAF-e, CoNLL.

Mentions are compared through *node keys* so that gold and predicted
corpora need not share empty-node ids: a surface word is keyed by its
sentence and word id, an empty node by its sentence, dependency head and
relation (and optionally its word-order position).

All figures are percentages.  Counts are summed over documents before the
ratios are taken; the macro average over corpora is unweighted.
"""

import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import _kernels

logger = logging.getLogger(__name__)

MODES = ("head", "partial", "exact")
METRICS = ("muc", "bcub", "ceafe")


class ScoringError(ValueError):
    pass


class ScoredMention(NamedTuple):
    nodes: tuple
    head: tuple
    sort_key: tuple


@dataclass
class PRF:
    p_num: float = 0.0
    p_den: float = 0.0
    r_num: float = 0.0
    r_den: float = 0.0

    def __iadd__(self, other):
        self.p_num += other.p_num
        self.p_den += other.p_den
        self.r_num += other.r_num
        self.r_den += other.r_den
        return self

    @property
    def precision(self):
        return 100.0 * self.p_num / self.p_den if self.p_den else 0.0

    @property
    def recall(self):
        return 100.0 * self.r_num / self.r_den if self.r_den else 0.0

    @property
    def f1(self):
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r else 0.0


@dataclass
class ScoreReport:
    mode: str
    with_singletons: bool
    metrics: dict = field(default_factory=dict)

    @property
    def conll(self):
        return sum(self.metrics[m].f1 for m in METRICS) / len(METRICS)

    def as_dict(self):
        out = {"mode": self.mode, "with_singletons": self.with_singletons, "conll": self.conll}
        for name in METRICS:
            m = self.metrics[name]
            out[name] = {"precision": m.precision, "recall": m.recall, "f1": m.f1}
        return out


# --------------------------------------------------------------------------
# Mention extraction


def _node_keys(sentence, sent_idx, zero_match_order):
    keys = []
    seen = Counter()
    for node in sentence.nodes:
        if node.is_empty:
            head, rel = node.dependency()
            base = ("e", sent_idx, head, rel) + ((node.id.word,) if zero_match_order else ())
            keys.append(base + (seen[base],))
            seen[base] += 1
        else:
            keys.append(("w", sent_idx, node.id.word))
    return keys


def document_entities(doc, zero_match_order=True):
    """Entities of ``doc`` as lists of ``ScoredMention``."""
    keys = [_node_keys(s, i, zero_match_order) for i, s in enumerate(doc.sentences)]
    entities = []
    for entity in doc.entities:
        mentions = []
        for m in entity.mentions:
            sent_keys = keys[m.sentence]
            mentions.append(ScoredMention(tuple(sent_keys[m.start:m.end + 1]), sent_keys[m.head],
                                          (m.sentence, m.start, m.end)))
        if mentions:
            entities.append(mentions)
    return entities


def _dedupe(entities, side):
    seen = set()
    out = []
    for entity in entities:
        kept = []
        for m in entity:
            if m.nodes in seen:
                logger.warning("%s: duplicate mention %s dropped", side, m.sort_key)
                continue
            seen.add(m.nodes)
            kept.append(m)
        if kept:
            out.append(kept)
    return out


# --------------------------------------------------------------------------
# Alignment


def mentions_match(gold, pred, mode):
    if mode == "exact":
        return gold.nodes == pred.nodes
    if mode == "head":
        return gold.head == pred.head
    if mode == "partial":
        return gold.head in pred.nodes and set(pred.nodes) <= set(gold.nodes)
    raise ValueError(f"unknown match mode {mode!r}")


def align_mentions(gold, pred, mode):
    """Maximum one-to-one matching of mention lists; returns ``{pred_idx: gold_idx}``.

    Gold mentions are visited by span start; each tries its candidates
    identical spans first, then by span start, augmenting as needed.
    """
    if mode not in MODES:
        raise ValueError(f"unknown match mode {mode!r}")
    gold_order = sorted(range(len(gold)), key=lambda i: gold[i].sort_key)
    candidates = {}
    by_head = {}
    if mode != "exact":
        for j, p in enumerate(pred):
            for key in (p.nodes if mode == "partial" else (p.head,)):
                by_head.setdefault(key, []).append(j)
    by_nodes = {}
    if mode == "exact":
        for j, p in enumerate(pred):
            by_nodes.setdefault(p.nodes, []).append(j)
    for i in gold_order:
        g = gold[i]
        if mode == "exact":
            pool = by_nodes.get(g.nodes, [])
        else:
            pool = by_head.get(g.head, [])
        pool = [j for j in pool if mentions_match(g, pred[j], mode)]
        pool.sort(key=lambda j: (pred[j].nodes != g.nodes, pred[j].sort_key))
        candidates[i] = pool
    gold_of = {}

    def augment(i, visited):
        for j in candidates[i]:
            if j in visited:
                continue
            visited.add(j)
            if j not in gold_of or augment(gold_of[j], visited):
                gold_of[j] = i
                return True
        return False

    for i in gold_order:
        augment(i, set())
    return gold_of


# --------------------------------------------------------------------------
# Metrics over a shared mention space


def _shared_labels(gold_entities, pred_entities, mapping):
    """Key/response entity labels over a mention space shared by both sides."""
    gold_flat = [(e, m) for e, ent in enumerate(gold_entities) for m in ent]
    pred_flat = [(e, m) for e, ent in enumerate(pred_entities) for m in ent]
    n_gold = len(gold_flat)
    size = n_gold + len(pred_flat)
    key = np.full(size, -1, dtype=np.int64)
    resp = np.full(size, -1, dtype=np.int64)
    for i, (e, _) in enumerate(gold_flat):
        key[i] = e
    for j, (e, _) in enumerate(pred_flat):
        slot = mapping.get(j, n_gold + j)
        resp[slot] = e
    return key, resp


def _contingency(key, resp, n_key, n_resp):
    return _kernels.contingency(key, resp, n_key, n_resp)


def muc_counts(c, key_sizes, resp_sizes):
    r_num = float(sum(k - (np.count_nonzero(c[i]) + k - c[i].sum()) for i, k in enumerate(key_sizes)))
    r_den = float(sum(k - 1 for k in key_sizes))
    p_num = float(sum(r - (np.count_nonzero(c[:, j]) + r - c[:, j].sum()) for j, r in enumerate(resp_sizes)))
    p_den = float(sum(r - 1 for r in resp_sizes))
    return PRF(p_num, p_den, r_num, r_den)


def bcub_counts(c, key_sizes, resp_sizes):
    sq = c.astype(np.float64) ** 2
    r_num = float((sq.sum(axis=1) / np.maximum(key_sizes, 1)).sum()) if len(key_sizes) else 0.0
    p_num = float((sq.sum(axis=0) / np.maximum(resp_sizes, 1)).sum()) if len(resp_sizes) else 0.0
    return PRF(p_num, float(np.sum(resp_sizes)), r_num, float(np.sum(key_sizes)))


def phi4(c, key_sizes, resp_sizes):
    return 2.0 * c / (key_sizes[:, None] + resp_sizes[None, :])


def ceafe_counts(c, key_sizes, resp_sizes):
    if len(key_sizes) == 0 or len(resp_sizes) == 0:
        best = 0.0
    else:
        _, _, best = _kernels.max_weight_assignment(phi4(c, key_sizes, resp_sizes))
    return PRF(best, float(len(resp_sizes)), best, float(len(key_sizes)))


def _metric_counts(gold_entities, pred_entities, mapping):
    key, resp = _shared_labels(gold_entities, pred_entities, mapping)
    key_sizes = np.array([len(e) for e in gold_entities], dtype=np.int64)
    resp_sizes = np.array([len(e) for e in pred_entities], dtype=np.int64)
    c = _contingency(key, resp, len(gold_entities), len(pred_entities))
    return {
        "muc": muc_counts(c, key_sizes, resp_sizes),
        "bcub": bcub_counts(c, key_sizes, resp_sizes),
        "ceafe": ceafe_counts(c, key_sizes, resp_sizes),
    }


def _filter_singletons(entities, with_singletons):
    return entities if with_singletons else [e for e in entities if len(e) > 1]


def score_entities(gold_entities, pred_entities, mode="head", with_singletons=False):
    """Metric counts for one document given entities as ``ScoredMention`` lists."""
    gold_entities = _dedupe(_filter_singletons(gold_entities, with_singletons), "gold")
    pred_entities = _dedupe(_filter_singletons(pred_entities, with_singletons), "pred")
    gold_flat = [m for e in gold_entities for m in e]
    pred_flat = [m for e in pred_entities for m in e]
    mapping = align_mentions(gold_flat, pred_flat, mode)
    return _metric_counts(gold_entities, pred_entities, mapping)


def muc(gold_entities, pred_entities, mapping):
    """MUC precision/recall/F1 given an alignment ``{pred_idx: gold_idx}`` over flattened mentions."""
    key, resp = _shared_labels(gold_entities, pred_entities, mapping)
    c = _contingency(key, resp, len(gold_entities), len(pred_entities))
    return muc_counts(c, np.array([len(e) for e in gold_entities]), np.array([len(e) for e in pred_entities]))


def b_cubed(gold_entities, pred_entities, mapping):
    key, resp = _shared_labels(gold_entities, pred_entities, mapping)
    c = _contingency(key, resp, len(gold_entities), len(pred_entities))
    return bcub_counts(c, np.array([len(e) for e in gold_entities]), np.array([len(e) for e in pred_entities]))


def ceaf_e(gold_entities, pred_entities, mapping):
    key, resp = _shared_labels(gold_entities, pred_entities, mapping)
    c = _contingency(key, resp, len(gold_entities), len(pred_entities))
    return ceafe_counts(c, np.array([len(e) for e in gold_entities], dtype=np.int64),
                        np.array([len(e) for e in pred_entities], dtype=np.int64))


def _pair_documents(gold, pred):
    gold_ids = [d.doc_id for d in gold.documents]
    pred_ids = [d.doc_id for d in pred.documents]
    if all(i is None for i in gold_ids + pred_ids):
        if len(gold_ids) != len(pred_ids):
            raise ScoringError(f"{len(gold_ids)} gold vs {len(pred_ids)} predicted unnamed documents")
        return list(zip(gold.documents, pred.documents))
    pred_by_id = {d.doc_id: d for d in pred.documents}
    missing = [i for i in gold_ids if i not in pred_by_id]
    extra = sorted(set(pred_ids) - set(gold_ids), key=str)
    if missing or extra:
        raise ScoringError(f"unpaired documents: missing predictions for {missing}, unknown predictions {extra}")
    return [(d, pred_by_id[d.doc_id]) for d in gold.documents]


def score_corpus(gold, pred, mode="head", with_singletons=False, zero_match_order=True) -> ScoreReport:
    """Score a predicted corpus against gold; documents are paired by id."""
    if mode not in MODES:
        raise ValueError(f"unknown match mode {mode!r}")
    totals = {name: PRF() for name in METRICS}
    for gold_doc, pred_doc in _pair_documents(gold, pred):
        counts = score_entities(document_entities(gold_doc, zero_match_order),
                                document_entities(pred_doc, zero_match_order),
                                mode, with_singletons)
        for name in METRICS:
            totals[name] += counts[name]
    return ScoreReport(mode, with_singletons, totals)


def macro_average(reports: dict) -> float:
    """Unweighted mean CoNLL score over named per-corpus reports."""
    if not reports:
        return 0.0
    return sum(r.conll for r in reports.values()) / len(reports)


def format_report(report: ScoreReport) -> str:
    lines = [f"mode={report.mode} singletons={'yes' if report.with_singletons else 'no'}",
             f"{'metric':<8}{'P':>8}{'R':>8}{'F1':>8}"]
    for name in METRICS:
        m = report.metrics[name]
        lines.append(f"{name:<8}{m.precision:8.2f}{m.recall:8.2f}{m.f1:8.2f}")
    lines.append(f"{'conll':<8}{'':>16}{report.conll:8.2f}")
    return "\n".join(lines)
