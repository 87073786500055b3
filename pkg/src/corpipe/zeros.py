"""Empty-node prediction from surface words (the first stage of the two-stage flow).

Every word proposes two candidate empty nodes.  Per candidate three heads
decide whether it exists, which word it follows in word order, and its
dependency relation; the generating word becomes its dependency head.
"""

import logging
from collections import Counter
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .corefud import EmptyNodeSpec, NodeId
from .encoder import encode_segments, segment_document

logger = logging.getLogger(__name__)

UNK_DEPREL = "<unk>"
SLOTS = 2


def dense_block(d_in, hidden, dropout):
    """Dense -> ReLU -> Dropout, the shared trunk of every head."""
    return nn.Sequential(nn.Linear(d_in, hidden), nn.ReLU(), nn.Dropout(dropout))


class CandidateGenerator(nn.Module):
    """Two candidate vectors per word.

    The first is ``dense(dropout(relu(dense(w))))``; the second applies an
    analogous module to the first candidate concatenated with ``w``.
    """

    def __init__(self, d_word, cand_dim=768, hidden=2048, dropout=0.5):
        super().__init__()
        self.cand_dim = cand_dim
        self.first = nn.Sequential(dense_block(d_word, hidden, dropout), nn.Linear(hidden, cand_dim))
        self.second = nn.Sequential(dense_block(cand_dim + d_word, hidden, dropout), nn.Linear(hidden, cand_dim))

    def forward(self, words):
        """``(n, d) -> (2n, cand_dim)``; candidate ``2*i + k`` is slot k of word i."""
        c1 = self.first(words)
        c2 = self.second(torch.cat([c1, words], dim=-1))
        return torch.stack([c1, c2], dim=1).reshape(-1, self.cand_dim)


@dataclass
class CandidateOutputs:
    candidates: torch.Tensor
    existence: torch.Tensor
    order: torch.Tensor
    deprel: torch.Tensor


class EmptyNodeHeads(nn.Module):
    def __init__(self, d_word, cand_dim, n_deprels, hidden=2048, attention=256, dropout=0.5):
        super().__init__()
        self.existence = nn.Sequential(dense_block(cand_dim, hidden, dropout), nn.Linear(hidden, 1))
        self.query = nn.Sequential(dense_block(cand_dim, hidden, dropout), nn.Linear(hidden, attention))
        self.key = nn.Sequential(dense_block(d_word, hidden, dropout), nn.Linear(hidden, attention))
        self.deprel = nn.Sequential(dense_block(cand_dim + d_word, hidden, dropout), nn.Linear(hidden, n_deprels))
        self.scale = attention ** -0.5

    @property
    def deprel_input_width(self):
        return self.deprel[0][0].in_features

    def forward(self, candidates, words, order_words=None):
        """Existence ``(2n,)``, order ``(2n, n)`` and deprel ``(2n, L)`` logits.

        The deprel head sees the word chosen by the order head (argmax) unless
        ``order_words`` supplies indices, which training uses for positives.
        """
        existence = self.existence(candidates).squeeze(-1)
        order = self.query(candidates) @ self.key(words).T * self.scale
        if order_words is None:
            order_words = order.argmax(dim=-1)
        deprel = self.deprel(torch.cat([candidates, words[order_words]], dim=-1))
        return existence, order, deprel


@dataclass
class AlignedTargets:
    exists: np.ndarray
    order: np.ndarray
    deprel: np.ndarray
    dropped: int


def gold_empty_nodes(sentence):
    """Gold empty nodes as ``(head, deprel, order_after)`` with string heads."""
    return [node.empty_triple() for node in sentence.nodes if node.is_empty]


def align_gold(sentence, deprel_index=None):
    """Per-candidate training targets for one sentence.

    Gold empty nodes are grouped by their dependency head word, sorted by
    word-order position and assigned to slots 1, 2 of that word.  Nodes
    that do not fit (third and later per head, head not a surface word, or
    placed before the first word) are dropped and counted.
    """
    words = sentence.words()
    n = len(words)
    exists = np.zeros(SLOTS * n, dtype=np.int64)
    order = np.full(SLOTS * n, -1, dtype=np.int64)
    deprel = np.full(SLOTS * n, -1, dtype=np.int64)
    groups = {}
    dropped = 0
    for node in sentence.empty_nodes():
        head, rel, after = node.empty_triple()
        try:
            head_id = NodeId.parse(head)
        except ValueError:
            dropped += 1
            continue
        if head_id.is_empty or not 1 <= head_id.word <= n or not 1 <= after <= n:
            dropped += 1
            continue
        groups.setdefault(head_id.word, []).append((after, node.id.empty, rel))
    for head_word, nodes in groups.items():
        nodes.sort()
        dropped += max(0, len(nodes) - SLOTS)
        for slot, (after, _, rel) in enumerate(nodes[:SLOTS]):
            c = SLOTS * (head_word - 1) + slot
            exists[c] = 1
            order[c] = after - 1
            if deprel_index is not None:
                deprel[c] = deprel_index.get(rel, deprel_index[UNK_DEPREL])
    return AlignedTargets(exists, order, deprel, dropped)


def count_dropped(corpus):
    """``(dropped, total)`` gold empty nodes that the two-slot alignment cannot represent."""
    dropped = total = 0
    for sentence in corpus.sentences():
        total += len(sentence.empty_nodes())
        dropped += align_gold(sentence).dropped
    return dropped, total


def evaluate_empty_nodes(gold, predicted):
    """Precision, recall and F1 (fractions) over per-sentence multisets of triples.

    A predicted node is correct when head, deprel and word order all match.
    Both sides empty gives F1 = 1; otherwise an empty denominator gives 0.
    """
    if len(gold) != len(predicted):
        raise ValueError("gold and predicted differ in number of sentences")
    matched = n_gold = n_pred = 0
    for g, p in zip(gold, predicted):
        g, p = Counter(map(tuple, g)), Counter(map(tuple, p))
        matched += sum((g & p).values())
        n_gold += sum(g.values())
        n_pred += sum(p.values())
    if n_gold == 0 and n_pred == 0:
        return 1.0, 1.0, 1.0
    precision = matched / n_pred if n_pred else 0.0
    recall = matched / n_gold if n_gold else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


class ZeroPredictor(nn.Module):
    """Encoder + candidate generator + three heads, one sentence at a time."""

    def __init__(self, adapter, deprels, cand_dim=768, hidden=2048, attention=256, dropout=0.5,
                 threshold=0.5, max_segment=512):
        super().__init__()
        self.adapter = adapter
        self.deprels = [UNK_DEPREL] + sorted(set(deprels) - {UNK_DEPREL})
        self.deprel_index = {d: i for i, d in enumerate(self.deprels)}
        self.generator = CandidateGenerator(adapter.hidden_size, cand_dim, hidden, dropout)
        self.heads = EmptyNodeHeads(adapter.hidden_size, cand_dim, len(self.deprels), hidden, attention, dropout)
        self.threshold = threshold
        self.max_segment = max_segment
        self.hparams = {"cand_dim": cand_dim, "hidden": hidden, "attention": attention, "dropout": dropout,
                        "threshold": threshold, "max_segment": max_segment}

    def generate_candidates(self, words):
        return self.generator(words)

    def sentence_words(self, sentences):
        """Per-sentence word vectors; each sentence is encoded without context."""
        segments = []
        for sent in sentences:
            forms = [[w.form for w in sent.words()]]
            segments.extend(segment_document(forms, self.adapter.tokenize, self.max_segment, max_right=0))
        vectors = encode_segments(self.adapter, segments)
        out, start = [], 0
        for sent in sentences:
            n = len(sent.words())
            out.append(vectors[start:start + n])
            start += n
        return out

    def forward_sentence(self, words, order_words=None):
        candidates = self.generate_candidates(words)
        existence, order, deprel = self.heads(candidates, words, order_words)
        return CandidateOutputs(candidates, existence, order, deprel)

    def loss(self, sentences):
        """Mean over sentences of existence BCE + order CE + deprel CE (positives only)."""
        total = 0.0
        parts = {"existence": 0.0, "order": 0.0, "deprel": 0.0}
        for sent, words in zip(sentences, self.sentence_words(sentences)):
            if len(words) == 0:
                continue
            targets = align_gold(sent, self.deprel_index)
            exists = torch.as_tensor(targets.exists, dtype=words.dtype)
            positive = torch.as_tensor(targets.exists.astype(bool))
            order_t = torch.as_tensor(targets.order)
            teacher = torch.where(positive, order_t, torch.zeros_like(order_t))
            out = self.forward_sentence(words, order_words=teacher)
            terms = {"existence": F.binary_cross_entropy_with_logits(out.existence, exists)}
            if positive.any():
                terms["order"] = F.cross_entropy(out.order[positive], order_t[positive])
                terms["deprel"] = F.cross_entropy(out.deprel[positive], torch.as_tensor(targets.deprel)[positive])
            for k, v in terms.items():
                parts[k] = parts[k] + v
                total = total + v
        n = max(len(sentences), 1)
        return total / n, {k: float(v.detach() if torch.is_tensor(v) else v) / n for k, v in parts.items()}

    def probabilities(self, sentence, words=None):
        """Existence, order and deprel probabilities for one sentence (eval mode)."""
        if words is None:
            words = self.sentence_words([sentence])[0]
        out = self.forward_sentence(words)
        return (torch.sigmoid(out.existence), torch.softmax(out.order, dim=-1),
                torch.softmax(out.deprel, dim=-1))

    @torch.no_grad()
    def predict(self, sentences):
        """Predicted ``EmptyNodeSpec`` lists, one per sentence."""
        results = []
        if not sentences:
            return results
        for sent, words in zip(sentences, self.sentence_words(sentences)):
            if len(words) == 0:
                results.append([])
                continue
            exist_p, order_p, deprel_p = self.probabilities(sent, words)
            results.append(decode_candidates(exist_p.numpy(), order_p.numpy(), deprel_p.numpy(),
                                             self.deprels, self.threshold))
        return results


def decode_candidates(exist_p, order_p, deprel_p, deprels, threshold=0.5):
    """Candidates whose existence probability reaches ``threshold``."""
    specs = []
    for c in np.flatnonzero(exist_p >= threshold):
        word = c // SLOTS + 1
        specs.append(EmptyNodeSpec(int(word), deprels[int(deprel_p[c].argmax())], int(order_p[c].argmax()) + 1))
    return specs


def spec_triples(specs):
    return [(str(s.head_word), s.deprel, s.order_after) for s in specs]
