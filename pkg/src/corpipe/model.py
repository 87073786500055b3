"""Mention detection, zero mentions and antecedent linking.

Two variants share this module:

* ``two-stage`` -- the input already contains (predicted) empty nodes; each
  node, surface or empty, is an encoder input unit and mentions are any
  contiguous run of units.
* ``single-stage`` -- only surface words are encoded.  Every word proposes
  two empty-node candidates, each classified as NONE or a dependency
  relation; a non-NONE candidate becomes a one-node *zero mention* placed
  right after its head word.

Surface mentions are represented by ``[first unit; last unit]``, zero
mentions by ``[candidate; candidate]``.  Each mention attends over itself
and every earlier mention of the document and links to the argmax.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from . import _kernels, codec
from .corefud import (Document, EmptyNodeSpec, Entity, Mention, NodeId, insert_empty_nodes, strip_coreference,
                      syntactic_head, without_empty_nodes)
from .encoder import EMPTY_TOKEN, encode_segments, segment_document
from .zeros import SLOTS, CandidateGenerator, dense_block

logger = logging.getLogger(__name__)

VARIANTS = ("two-stage", "single-stage")
NONE_LABEL = "NONE"


@dataclass(frozen=True)
class MentionCandidate:
    """A surface span ``[start, end]`` of sentence units, or a zero mention.

    For zero mentions ``start == end`` is the head word's unit index and
    ``slot`` selects which of its two candidates produced it.
    """
    sentence: int
    start: int
    end: int
    kind: str = "surface"
    slot: int = 0
    deprel: str = ""

    def order_key(self):
        if self.kind == "surface":
            return self.sentence, 2 * self.start, 2 * self.end, 0, 0
        return self.sentence, 2 * self.start + 1, 2 * self.start + 1, 1, self.slot


def order_mentions(mentions):
    return sorted(mentions, key=MentionCandidate.order_key)


@dataclass
class DocumentInput:
    """Encoder-ready view of a document.

    ``units[s]`` lists the node positions (into ``Sentence.nodes``) that are
    encoder inputs for sentence ``s``; ``offsets[s]`` is the document-level
    index of its first unit.
    """
    document: Document
    variant: str
    units: list
    forms: list
    offsets: list = field(default_factory=list)

    @property
    def n_units(self):
        return sum(len(u) for u in self.units)


def prepare_document(doc: Document, variant: str) -> DocumentInput:
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    units, forms, offsets = [], [], []
    total = 0
    for sentence in doc.sentences:
        if variant == "two-stage":
            pos = list(range(len(sentence.nodes)))
        else:
            pos = [i for i, n in enumerate(sentence.nodes) if not n.is_empty]
        units.append(pos)
        forms.append([EMPTY_TOKEN if sentence.nodes[p].is_empty else sentence.nodes[p].form for p in pos])
        offsets.append(total)
        total += len(pos)
    return DocumentInput(doc, variant, units, forms, offsets)


def model_input(doc: Document, variant: str) -> Document:
    """What a model sees at prediction time: no coreference, and no empty nodes for single-stage."""
    return without_empty_nodes(doc) if variant == "single-stage" else strip_coreference(doc)


@dataclass
class GoldTargets:
    """Training targets for one document."""
    tags: list            # per sentence: int array of tag ids
    mentions: list        # ordered MentionCandidate
    entity_of: list       # entity index per mention
    zero_labels: list     # per sentence: int array over 2*n candidates (single-stage)
    dropped: int = 0


def _zero_slots(sentence, unit_of_node, candidates_positions):
    """Slot assignment ``node position -> (head unit, slot)`` for zero-mention empty nodes."""
    groups = {}
    for pos in candidates_positions:
        node = sentence.nodes[pos]
        head, _ = node.dependency()
        try:
            head_id = NodeId.parse(head)
        except ValueError:
            continue
        if head_id.is_empty or head_id.word == 0:
            continue
        try:
            head_pos = sentence.word_position(head_id.word)
        except KeyError:
            continue
        groups.setdefault(unit_of_node[head_pos], []).append((node.id.word, node.id.empty, pos))
    slots = {}
    for head_unit, items in groups.items():
        items.sort()
        for slot, (_, _, pos) in enumerate(items[:SLOTS]):
            slots[pos] = (head_unit, slot)
    return slots


def gold_targets(inputs: DocumentInput, tag_index, deprel_index, max_depth, max_opens) -> GoldTargets:
    doc = inputs.document
    entity_ids = {e.eid: i for i, e in enumerate(doc.entities)}
    per_sentence_spans = [[] for _ in doc.sentences]
    zero_nodes = [{} for _ in doc.sentences]
    mentions, entity_of = [], []
    dropped = 0
    single = inputs.variant == "single-stage"
    for entity in doc.entities:
        for m in entity.mentions:
            sentence = doc.sentences[m.sentence]
            if single and m.start == m.end and sentence.nodes[m.start].is_empty:
                zero_nodes[m.sentence][m.start] = entity_ids[entity.eid]
                continue
            unit_of_node = {p: u for u, p in enumerate(inputs.units[m.sentence])}
            covered = [unit_of_node[p] for p in range(m.start, m.end + 1) if p in unit_of_node]
            if not covered:
                dropped += 1
                continue
            per_sentence_spans[m.sentence].append(((covered[0], covered[-1]), entity_ids[entity.eid]))
    tags, zero_labels = [], []
    for s, sentence in enumerate(doc.sentences):
        n = len(inputs.units[s])
        spans = [sp for sp, _ in per_sentence_spans[s]]
        kept, lost = codec.drop_crossing(spans)
        dropped += len(lost)
        pushes, pops = codec.encode_actions(kept, n)
        pushes, pops, removed = codec.clip_to_vocabulary(pushes, pops, max_depth, max_opens)
        dropped += removed
        tags.append(np.array([tag_index[codec.format_tag(int(a), int(b))] for a, b in zip(pushes, pops)],
                             dtype=np.int64))
        encodable = set(codec.decode_actions(pushes, pops).spans)
        seen = set()
        for span, ent in per_sentence_spans[s]:
            if span in encodable and (span, ent) not in seen:
                seen.add((span, ent))
                mentions.append((MentionCandidate(s, span[0], span[1]), ent))
        labels = np.zeros(SLOTS * n, dtype=np.int64)
        if single:
            unit_of_node = {p: u for u, p in enumerate(inputs.units[s])}
            slots = _zero_slots(sentence, unit_of_node, zero_nodes[s].keys())
            dropped += len(zero_nodes[s]) - len(slots)
            for pos, (head_unit, slot) in slots.items():
                _, rel = sentence.nodes[pos].dependency()
                labels[SLOTS * head_unit + slot] = deprel_index.get(rel, deprel_index["<unk>"])
                mentions.append((MentionCandidate(s, head_unit, head_unit, "zero", slot, rel), zero_nodes[s][pos]))
        zero_labels.append(labels)
    mentions.sort(key=lambda p: p[0].order_key())
    return GoldTargets(tags, [m for m, _ in mentions], [e for _, e in mentions], zero_labels, dropped)


def link_targets(entity_of):
    """Row-stochastic target matrix: uniform over earlier coreferent mentions, else self."""
    n = len(entity_of)
    target = np.zeros((n, n))
    for i in range(n):
        earlier = [j for j in range(i) if entity_of[j] == entity_of[i]]
        if earlier:
            target[i, earlier] = 1.0 / len(earlier)
        else:
            target[i, i] = 1.0
    return target


def causal_mask(n, device=None):
    return torch.ones(n, n, dtype=torch.bool, device=device).tril()


def masked_link_logits(scores):
    n = scores.shape[0]
    return scores.masked_fill(~causal_mask(n, scores.device), float("-inf"))


def link_loss(scores, target, rows=None):
    """KL(target || softmax(scores)) averaged over rows; zero at a perfect fit.

    ``scores`` is the square causal score matrix; ``rows`` optionally selects
    which mentions (rows of both ``scores`` and ``target``) contribute.
    """
    logp = F.log_softmax(masked_link_logits(scores), dim=-1)
    target = torch.as_tensor(target, dtype=scores.dtype)
    if rows is not None:
        logp, target = logp[rows], target[rows]
    positive = target > 0
    safe = torch.where(positive, target, torch.ones_like(target))
    kl = torch.where(positive, target * (torch.log(safe) - logp), torch.zeros_like(target))
    return kl.sum(dim=-1).mean()


def loss_terms(tag_logits, tag_targets, link_scores=None, link_target=None, zero_logits=None, zero_targets=None):
    """Unweighted sum of tag CE, link KL and (optional) zero-label CE, plus the parts."""
    parts = {"tags": F.cross_entropy(tag_logits, torch.as_tensor(tag_targets)) if len(tag_targets)
             else tag_logits.sum() * 0}
    zero = tag_logits.sum() * 0
    parts["links"] = zero if link_scores is None or link_scores.shape[0] == 0 else link_loss(link_scores, link_target)
    if zero_logits is not None:
        parts["zeros"] = (F.cross_entropy(zero_logits, torch.as_tensor(zero_targets)) if len(zero_targets)
                          else zero)
    total = sum(parts.values())
    return total, parts


@dataclass
class ModelConfig:
    variant: str = "two-stage"
    hidden: int = 256
    attention: int = 128
    dropout: float = 0.1
    max_depth: int = 4
    max_opens: int = 3
    max_segment: int = 512
    max_right: int = 50


class CorefModel(nn.Module):
    def __init__(self, adapter, config: ModelConfig, deprels=()):
        super().__init__()
        if config.variant not in VARIANTS:
            raise ValueError(f"unknown variant {config.variant!r}")
        self.adapter = adapter
        self.config = config
        d = adapter.hidden_size
        self.tags = codec.tag_vocabulary(config.max_depth, config.max_opens)
        self.tag_index = {t: i for i, t in enumerate(self.tags)}
        self.tag_head = nn.Sequential(dense_block(d, config.hidden, config.dropout),
                                      nn.Linear(config.hidden, len(self.tags)))
        self.link_trunk = dense_block(2 * d, config.hidden, config.dropout)
        self.link_query = nn.Linear(config.hidden, config.attention)
        self.link_key = nn.Linear(config.hidden, config.attention)
        self.deprels = ["<unk>"] + sorted(set(deprels) - {"<unk>", NONE_LABEL})
        self.deprel_index = {d_: i + 1 for i, d_ in enumerate(self.deprels)}
        self.zero_labels = [NONE_LABEL] + self.deprels
        if self.single_stage:
            self.candidates = CandidateGenerator(d, cand_dim=d, hidden=config.hidden, dropout=config.dropout)
            self.zero_head = nn.Sequential(dense_block(d, config.hidden, config.dropout),
                                           nn.Linear(config.hidden, len(self.zero_labels)))

    @property
    def single_stage(self):
        return self.config.variant == "single-stage"

    def vocabularies(self):
        return {"tags": list(self.tags), "zero_labels": list(self.zero_labels), "variant": self.config.variant}

    # -- encoding ---------------------------------------------------------

    def encode(self, inputs: DocumentInput, upto=None):
        """Unit vectors ``(N, d)`` for sentences ``[0, upto)`` of the document."""
        forms = inputs.forms if upto is None else inputs.forms[:upto]
        all_forms = inputs.forms
        segments = segment_document(all_forms, self.adapter.tokenize, self.config.max_segment, self.config.max_right)
        if upto is not None:
            limit = sum(len(f) for f in forms)
            segments = [s for s in segments if s.focus[0] < limit]
        return encode_segments(self.adapter, segments)

    def tag_logits(self, words):
        return self.tag_head(words)

    def zero_outputs(self, words):
        cands = self.candidates(words)
        return cands, self.zero_head(cands)

    def mention_vectors(self, inputs, mentions, words, cands=None):
        rows = []
        for m in mentions:
            base = inputs.offsets[m.sentence]
            if m.kind == "surface":
                rows.append(torch.cat([words[base + m.start], words[base + m.end]]))
            else:
                c = cands[SLOTS * (base + m.start) + m.slot]
                rows.append(torch.cat([c, c]))
        if not rows:
            return words.new_zeros((0, 2 * words.shape[-1]))
        return torch.stack(rows)

    def link_scores(self, vectors):
        h = self.link_trunk(vectors)
        return self.link_query(h) @ self.link_key(h).T * self.config.attention ** -0.5

    # -- training ---------------------------------------------------------

    def targets(self, inputs):
        zero_index = {d_: i for i, d_ in enumerate(self.zero_labels)}
        return gold_targets(inputs, self.tag_index, zero_index, self.config.max_depth, self.config.max_opens)

    def sentence_loss(self, inputs, gold, sentence):
        """Combined loss for one focus sentence, linking over all earlier mentions."""
        words = self.encode(inputs, upto=sentence + 1)
        lo = inputs.offsets[sentence]
        hi = lo + len(inputs.units[sentence])
        tag_logits = self.tag_logits(words[lo:hi])
        cands = zero_logits = zero_targets = None
        if self.single_stage:
            cands, all_zero = self.zero_outputs(words)
            zero_logits = all_zero[SLOTS * lo:SLOTS * hi]
            zero_targets = gold.zero_labels[sentence]
        idx = [i for i, m in enumerate(gold.mentions) if m.sentence <= sentence]
        rows = [k for k, i in enumerate(idx) if gold.mentions[i].sentence == sentence]
        total, parts = loss_terms(tag_logits, gold.tags[sentence], None, None, zero_logits, zero_targets)
        if rows:
            mentions = [gold.mentions[i] for i in idx]
            scores = self.link_scores(self.mention_vectors(inputs, mentions, words, cands))
            parts["links"] = link_loss(scores, link_targets([gold.entity_of[i] for i in idx]), rows)
            total = total + parts["links"]
        return total, parts

    def document_loss(self, inputs, gold=None):
        """Combined loss over every sentence of a document in one pass."""
        gold = gold or self.targets(inputs)
        words = self.encode(inputs)
        tag_logits = self.tag_logits(words)
        tag_targets = np.concatenate(gold.tags) if gold.tags else np.zeros(0, dtype=np.int64)
        cands = zero_logits = zero_targets = None
        if self.single_stage:
            cands, zero_logits = self.zero_outputs(words)
            zero_targets = np.concatenate(gold.zero_labels)
        scores = target = None
        if gold.mentions:
            scores = self.link_scores(self.mention_vectors(inputs, gold.mentions, words, cands))
            target = link_targets(gold.entity_of)
        return loss_terms(tag_logits, tag_targets, scores, target, zero_logits, zero_targets)

    # -- inference --------------------------------------------------------

    def word_distributions(self, inputs):
        """Per-unit tag probabilities and (single-stage) per-candidate zero-label probabilities."""
        words = self.encode(inputs)
        out = {"words": words, "tags": torch.softmax(self.tag_logits(words), dim=-1)}
        if self.single_stage:
            cands, zl = self.zero_outputs(words)
            out["candidates"] = cands
            out["zeros"] = torch.softmax(zl, dim=-1)
        return out

    def link_distribution(self, inputs, mentions, outputs):
        vectors = self.mention_vectors(inputs, mentions, outputs["words"], outputs.get("candidates"))
        if len(mentions) == 0:
            return vectors.new_zeros((0, 0))
        return torch.softmax(masked_link_logits(self.link_scores(vectors)), dim=-1)


# ----------------------------------------------------------------------------
# Decoding


def decode_mentions(tag_ids, tags, sentence=0):
    """Surface mentions of one sentence from per-unit tag ids, ordered by (start, end)."""
    decoded = codec.decode([tags[int(t)] for t in tag_ids])
    return [MentionCandidate(sentence, s, e) for s, e in decoded.spans], decoded.repairs


def predict_zero_mentions(zero_probs, zero_labels, sentence, n_units, offset=0):
    """Zero mentions for one sentence from candidate label probabilities."""
    out = []
    labels = zero_probs[SLOTS * offset:SLOTS * (offset + n_units)].argmax(axis=-1)
    for c, label in enumerate(labels):
        if label != 0:
            out.append(MentionCandidate(sentence, c // SLOTS, c // SLOTS, "zero", c % SLOTS, zero_labels[int(label)]))
    return out


def link_mentions(scores):
    """Antecedent index per mention: argmax over ``j <= i``, ties toward smaller ``j``."""
    scores = np.ascontiguousarray(scores, dtype=np.float64)
    if scores.shape[0] == 0:
        return np.zeros(0, dtype=np.int64)
    return _kernels.causal_argmax(scores)


def clusters_from_links(antecedents):
    """Clusters (lists of mention indices) in first-mention order."""
    antecedents = np.ascontiguousarray(antecedents, dtype=np.int64)
    if len(antecedents) == 0:
        return []
    if np.any(antecedents > np.arange(len(antecedents))) or np.any(antecedents < 0):
        raise ValueError("antecedent points forward")
    labels = _kernels.union_find_labels(antecedents)
    clusters = [[] for _ in range(int(labels.max()) + 1)]
    for i, label in enumerate(labels):
        clusters[label].append(i)
    return clusters


def average_distributions(arrays):
    """Mean of equally shaped float arrays, accumulated in float64."""
    acc = np.zeros(arrays[0].shape, dtype=np.float64)
    for a in arrays:
        acc += a.astype(np.float64)
    return acc / len(arrays)


def check_compatible(members):
    vocab = members[0].vocabularies()
    for m in members[1:]:
        if m.vocabularies() != vocab:
            raise EnsembleError("ensemble members differ in variant or label vocabularies")


class EnsembleError(ValueError):
    pass


@torch.no_grad()
def predict_document(members, doc: Document, variant=None):
    """Predicted copy of ``doc`` using the averaged distributions of ``members``.

    Tag and zero-label distributions are averaged first to fix the mention
    set; link distributions are then averaged over that set.
    """
    if not isinstance(members, (list, tuple)):
        members = [members]
    check_compatible(members)
    lead = members[0]
    variant = variant or lead.config.variant
    for m in members:
        m.eval()
    inputs = prepare_document(doc, variant)
    outputs = [m.word_distributions(inputs) for m in members]
    tag_probs = average_distributions([o["tags"].numpy() for o in outputs])
    zero_probs = average_distributions([o["zeros"].numpy() for o in outputs]) if lead.single_stage else None
    mentions = []
    for s, units in enumerate(inputs.units):
        lo = inputs.offsets[s]
        ids = tag_probs[lo:lo + len(units)].argmax(axis=-1)
        surface, _ = decode_mentions(ids, lead.tags, s)
        mentions.extend(surface)
        if zero_probs is not None:
            mentions.extend(predict_zero_mentions(zero_probs, lead.zero_labels, s, len(units), lo))
    mentions = order_mentions(mentions)
    if mentions:
        links = average_distributions([m.link_distribution(inputs, mentions, o).numpy()
                                       for m, o in zip(members, outputs)])
        antecedents = link_mentions(np.where(np.tril(np.ones_like(links)) > 0, links, -np.inf))
    else:
        antecedents = np.zeros(0, dtype=np.int64)
    return build_prediction(inputs, mentions, antecedents)


def build_prediction(inputs: DocumentInput, mentions, antecedents) -> Document:
    """Document with predicted entities (and, for zero mentions, new empty nodes)."""
    doc = inputs.document
    sentences = list(doc.sentences)
    node_pos = {}
    for s, sentence in enumerate(doc.sentences):
        zeros = [m for m in mentions if m.sentence == s and m.kind == "zero"]
        if not zeros:
            continue
        words = sentence.nodes
        specs = []
        for m in sorted(zeros, key=MentionCandidate.order_key):
            head_word = words[inputs.units[s][m.start]].id.word
            specs.append((m, EmptyNodeSpec(head_word, m.deprel, head_word)))
        new_sentence = insert_empty_nodes(sentence, [sp for _, sp in specs])
        sentences[s] = new_sentence
        existing = {id(n) for n in sentence.nodes}
        new_positions = [i for i, n in enumerate(new_sentence.nodes) if id(n) not in existing]
        for (m, _), pos in zip(specs, new_positions):
            node_pos[m] = pos
    result = Document(doc.doc_id, sentences, [], doc.entity_columns)
    for k, cluster in enumerate(clusters_from_links(antecedents), start=1):
        entity = Entity(f"c{k}")
        for i in cluster:
            m = mentions[i]
            sentence = sentences[m.sentence]
            if m.kind == "zero":
                start = end = node_pos[m]
            else:
                start, end = _surface_span(doc.sentences[m.sentence], sentence, inputs.units[m.sentence], m)
            head = syntactic_head(sentence, start, end)
            entity.mentions.append(Mention(m.sentence, start, end, head, order=i))
        result.entities.append(entity)
    return result


def _surface_span(original, updated, units, mention):
    """Map unit indices of ``original`` onto node positions of ``updated``."""
    start_node = original.nodes[units[mention.start]]
    end_node = original.nodes[units[mention.end]]
    if updated is original:
        return units[mention.start], units[mention.end]
    ids = [n.id for n in updated.nodes]
    return ids.index(start_node.id), ids.index(end_node.id)
