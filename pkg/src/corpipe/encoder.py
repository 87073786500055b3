"""Subword tokenization, context segmentation and contextual word vectors.

A document is a list of sentences, each a list of word strings (empty nodes
are spelled ``EMPTY_TOKEN``).  ``segment_document`` makes one segment per
sentence: the sentence itself (the *focus*), up to ``max_right`` following
subwords, and as many preceding subwords as still fit into ``max_segment``.
Encoders map subword ids to vectors; a word is represented by its first
subword.
"""

import logging
import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

logger = logging.getLogger(__name__)

PAD, UNK, EMPTY = "<pad>", "<unk>", "<empty>"
EMPTY_TOKEN = EMPTY
SPECIALS = (PAD, UNK, EMPTY)
WORD_PREFIX = "▁"


class EncoderBackendError(RuntimeError):
    """Requested encoder backend cannot be loaded or run."""


class TokenizationError(ValueError):
    pass


class SubwordTokenizer:
    """Whole-word vocabulary with a character fallback.

    Known words map to one piece ``"▁word"``.  Other words become ``"▁c"``
    for the first character and ``"c"`` for each following one; characters
    never seen at build time become ``<unk>``.
    """

    def __init__(self, pieces):
        self.pieces = list(pieces)
        if tuple(self.pieces[:len(SPECIALS)]) != SPECIALS:
            raise ValueError("tokenizer vocabulary must start with the special tokens")
        self.index = {p: i for i, p in enumerate(self.pieces)}

    @classmethod
    def build(cls, words, min_count=1, max_words=None):
        counts = {}
        chars = set()
        for w in words:
            if w == EMPTY_TOKEN:
                continue
            counts[w] = counts.get(w, 0) + 1
            chars.update(w)
        frequent = sorted((w for w, c in counts.items() if c >= min_count), key=lambda w: (-counts[w], w))
        if max_words is not None:
            frequent = frequent[:max_words]
        pieces = list(SPECIALS)
        pieces += sorted(WORD_PREFIX + w for w in frequent)
        for c in sorted(chars):
            for piece in (WORD_PREFIX + c, c):
                if piece not in pieces:
                    pieces.append(piece)
        seen = set()
        unique = [p for p in pieces if not (p in seen or seen.add(p))]
        return cls(unique)

    def __len__(self):
        return len(self.pieces)

    @property
    def empty_id(self):
        return self.index[EMPTY]

    @property
    def pad_id(self):
        return self.index[PAD]

    def tokenize(self, word):
        if word == EMPTY_TOKEN:
            return [self.empty_id]
        if not word:
            raise TokenizationError("cannot tokenize an empty word")
        whole = self.index.get(WORD_PREFIX + word)
        if whole is not None:
            return [whole]
        unk = self.index[UNK]
        ids = [self.index.get(WORD_PREFIX + word[0], unk)]
        ids += [self.index.get(c, unk) for c in word[1:]]
        return ids

    def to_dict(self):
        return {"pieces": self.pieces}

    @classmethod
    def from_dict(cls, data):
        return cls(data["pieces"])


@dataclass
class Segment:
    """One encoder input: focus words plus surrounding context.

    ``word_offset`` is the document-level index of the first word in the
    segment; ``first_subword[i]`` is where segment word ``i`` starts in
    ``subword_ids``; ``focus`` is the document-level ``[start, stop)`` word
    range owned by this segment.
    """
    subword_ids: np.ndarray
    first_subword: np.ndarray
    word_offset: int
    focus: tuple
    left: int
    right: int

    @property
    def focus_local(self):
        return self.focus[0] - self.word_offset, self.focus[1] - self.word_offset


@dataclass
class EncoderConfig:
    kind: str = "toy"
    hidden: int = 64
    layers: int = 2
    heads: int = 4
    ff: int = 128
    dropout: float = 0.0
    max_segment: int = 512
    max_right: int = 50
    model_name: str = ""


def segment_document(sentences, tokenize, max_segment=512, max_right=50):
    """Segments (one per sentence, more if a sentence exceeds ``max_segment``).

    ``tokenize`` maps a word to its subword ids.  Context is added in whole
    words: following words first (at most ``max_right`` subwords), then
    preceding words up to the remaining budget.
    """
    words = [w for sent in sentences for w in sent]
    pieces = []
    for w in words:
        ids = list(tokenize(w))
        if not ids:
            raise TokenizationError(f"word {w!r} produced no subwords")
        if len(ids) > max_segment:
            logger.warning("word %r has %d subwords; truncated to %d", w, len(ids), max_segment)
            ids = ids[:max_segment]
        pieces.append(ids)
    sizes = [len(p) for p in pieces]
    segments = []
    start = 0
    for sent in sentences:
        stop = start + len(sent)
        if stop == start:
            continue
        focus_size = sum(sizes[start:stop])
        if focus_size > max_segment:
            logger.warning("sentence of %d subwords exceeds max_segment=%d; splitting it", focus_size, max_segment)
            lo = start
            while lo < stop:
                hi, used = lo, 0
                while hi < stop and used + sizes[hi] <= max_segment:
                    used += sizes[hi]
                    hi += 1
                segments.append(_make_segment(pieces, lo, hi, lo, hi))
                lo = hi
            start = stop
            continue
        budget = max_segment - focus_size
        right_stop, right = stop, 0
        while right_stop < len(words) and right + sizes[right_stop] <= min(max_right, budget):
            right += sizes[right_stop]
            right_stop += 1
        budget -= right
        left_start, left = start, 0
        while left_start > 0 and left + sizes[left_start - 1] <= budget:
            left += sizes[left_start - 1]
            left_start -= 1
        segments.append(_make_segment(pieces, left_start, right_stop, start, stop))
        start = stop
    return segments


def _make_segment(pieces, lo, hi, focus_lo, focus_hi):
    ids = []
    first = []
    for i in range(lo, hi):
        first.append(len(ids))
        ids.extend(pieces[i])
    left = sum(len(pieces[i]) for i in range(lo, focus_lo))
    right = sum(len(pieces[i]) for i in range(focus_hi, hi))
    return Segment(np.asarray(ids, dtype=np.int64), np.asarray(first, dtype=np.int64), lo,
                   (focus_lo, focus_hi), left, right)


def word_representations(subword_vectors, first_subword):
    """Gather the first-subword vector of every word."""
    if isinstance(subword_vectors, torch.Tensor):
        return subword_vectors[torch.as_tensor(first_subword, dtype=torch.long, device=subword_vectors.device)]
    return np.asarray(subword_vectors)[np.asarray(first_subword)]


class SinusoidalPositions(nn.Module):
    def __init__(self, d):
        super().__init__()
        self.d = d

    def forward(self, length, dtype, device):
        pos = torch.arange(length, dtype=dtype, device=device)[:, None]
        i = torch.arange(0, self.d, 2, dtype=dtype, device=device)
        angle = pos / torch.pow(torch.tensor(10000.0, dtype=dtype, device=device), i / self.d)
        out = torch.zeros(length, self.d, dtype=dtype, device=device)
        out[:, 0::2] = torch.sin(angle)
        out[:, 1::2] = torch.cos(angle[:, : self.d // 2])
        return out


class ToyEncoder(nn.Module):
    """Small transformer encoder: embeddings + sinusoidal positions + N layers."""

    def __init__(self, vocab_size, config: EncoderConfig):
        super().__init__()
        self.config = config
        self.embed = nn.Embedding(vocab_size, config.hidden)
        self.positions = SinusoidalPositions(config.hidden)
        layer = nn.TransformerEncoderLayer(config.hidden, config.heads, config.ff, config.dropout,
                                           batch_first=True, norm_first=True)
        self.layers = nn.TransformerEncoder(layer, config.layers, enable_nested_tensor=False)
        self.norm = nn.LayerNorm(config.hidden)

    @property
    def hidden_size(self):
        return self.config.hidden

    def forward(self, ids, mask=None):
        """``ids``: (batch, length) long; ``mask``: (batch, length) bool, True = real token."""
        x = self.embed(ids) * math.sqrt(self.config.hidden)
        x = x + self.positions(ids.shape[1], x.dtype, x.device)[None]
        padding = None if mask is None else ~mask
        return self.norm(self.layers(x, src_key_padding_mask=padding))


class EncoderAdapter(nn.Module):
    """What the coreference and empty-node models need from an encoder.

    ``tokenize(word) -> list[int]``, ``encode(ids, mask) -> (batch, length,
    hidden)`` and ``hidden_size``.  Adapters must be deterministic in eval
    mode.
    """

    hidden_size: int

    def tokenize(self, word):
        raise NotImplementedError

    def encode(self, ids, mask):
        raise NotImplementedError

    def describe(self):
        return {}


class ToyAdapter(EncoderAdapter):
    def __init__(self, tokenizer: SubwordTokenizer, config: EncoderConfig):
        super().__init__()
        self.tokenizer = tokenizer
        self.config = config
        self.encoder = ToyEncoder(len(tokenizer), config)

    @property
    def hidden_size(self):
        return self.config.hidden

    @property
    def pad_id(self):
        return self.tokenizer.pad_id

    def tokenize(self, word):
        return self.tokenizer.tokenize(word)

    def encode(self, ids, mask):
        return self.encoder(ids, mask)

    def describe(self):
        return {"kind": "toy", "tokenizer": self.tokenizer.to_dict(), "config": vars(self.config)}


class TransformersAdapter(EncoderAdapter):
    """Wraps any Hugging Face encoder available locally.

    Empty-node sentinels are added to the tokenizer as an extra token.
    """

    def __init__(self, model_name, config: EncoderConfig):
        super().__init__()
        try:
            import transformers
            self.hf_tokenizer = transformers.AutoTokenizer.from_pretrained(model_name)
            self.hf_tokenizer.add_tokens([EMPTY_TOKEN])
            model = transformers.AutoModel.from_pretrained(model_name)
        except Exception as err:  # any loading failure means the backend is unusable
            raise EncoderBackendError(f"cannot load encoder {model_name!r}: {err}") from err
        model.resize_token_embeddings(len(self.hf_tokenizer))
        self.model = model.get_encoder() if hasattr(model, "get_encoder") else model
        self.config = config
        self.model_name = model_name

    @property
    def hidden_size(self):
        return self.model.config.hidden_size if hasattr(self.model.config, "hidden_size") else self.model.config.d_model

    @property
    def pad_id(self):
        return self.hf_tokenizer.pad_token_id or 0

    def tokenize(self, word):
        return self.hf_tokenizer(word, add_special_tokens=False)["input_ids"]

    def encode(self, ids, mask):
        return self.model(input_ids=ids, attention_mask=mask.long()).last_hidden_state

    def describe(self):
        return {"kind": "transformers", "model_name": self.model_name, "config": vars(self.config)}


def build_adapter(config: EncoderConfig, tokenizer=None) -> EncoderAdapter:
    if config.kind == "toy":
        if tokenizer is None:
            raise ValueError("the toy encoder needs a tokenizer built from training data")
        return ToyAdapter(tokenizer, config)
    if config.kind == "transformers":
        return TransformersAdapter(config.model_name, config)
    raise EncoderBackendError(f"unknown encoder kind {config.kind!r}")


def encode_segments(adapter: EncoderAdapter, segments):
    """Word vectors for every segment's focus words, concatenated in document order."""
    if not segments:
        return torch.zeros(0, adapter.hidden_size)
    param = next(adapter.parameters())
    length = max(len(s.subword_ids) for s in segments)
    ids = torch.full((len(segments), length), adapter.pad_id, dtype=torch.long, device=param.device)
    mask = torch.zeros((len(segments), length), dtype=torch.bool, device=param.device)
    for b, seg in enumerate(segments):
        ids[b, : len(seg.subword_ids)] = torch.as_tensor(seg.subword_ids)
        mask[b, : len(seg.subword_ids)] = True
    vectors = adapter.encode(ids, mask)
    out = []
    for b, seg in enumerate(segments):
        lo, hi = seg.focus_local
        out.append(word_representations(vectors[b], seg.first_subword[lo:hi]))
    return torch.cat(out, dim=0)


def encode_segment(adapter: EncoderAdapter, segment: Segment):
    """Per-subword vectors ``(#subwords, hidden)`` for one segment."""
    param = next(adapter.parameters())
    ids = torch.as_tensor(segment.subword_ids, dtype=torch.long, device=param.device)[None]
    mask = torch.ones_like(ids, dtype=torch.bool)
    return adapter.encode(ids, mask)[0]
