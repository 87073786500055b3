"""Overlapping-span tagging: one tag per token, read as stack actions.

A tag holds ``a`` PUSH actions and ``b`` POP actions, applied in that order
at its token.  PUSH opens a span starting at the token; POP closes the most
recently opened span still open, ending it at the token.  Any set of spans
where every pair is nested or disjoint has exactly one encoding.

Tag grammar (used in vocabularies and debug dumps)::

    tag   := "O" | push pop | push | pop
    push  := "P" count
    pop   := "Q" count
    count := "" (means 1) | integer >= 2

so ``"P"`` opens one span, ``"PQ"`` is a single-token span, ``"P2Q"`` opens
two spans and closes one of them on the same token.  ``"P2Q1"`` is also
accepted by the parser.
"""

import logging
import re
from typing import Iterable, NamedTuple

import numpy as np

from . import _kernels

logger = logging.getLogger(__name__)

OUTSIDE = "O"
_TAG_RE = re.compile(r"^(?:P(\d*))?(?:Q(\d*))?$")


class CodecError(ValueError):
    """Span set cannot be encoded (crossing spans in strict mode, bad bounds)."""


class Decoded(NamedTuple):
    spans: list
    repairs: int


def format_tag(pushes: int, pops: int) -> str:
    if pushes == 0 and pops == 0:
        return OUTSIDE
    out = ""
    if pushes:
        out += "P" + (str(pushes) if pushes > 1 else "")
    if pops:
        out += "Q" + (str(pops) if pops > 1 else "")
    return out


def parse_tag(tag: str) -> tuple:
    """``"P2Q"`` -> ``(2, 1)``.  Unparseable tags raise ``CodecError``."""
    if tag == OUTSIDE:
        return 0, 0
    match = _TAG_RE.match(tag)
    if not match or not tag:
        raise CodecError(f"malformed tag {tag!r}")
    push, pop = match.groups()
    pushes = 0 if push is None else int(push or 1)
    pops = 0 if pop is None else int(pop or 1)
    return pushes, pops


def crossing(a, b) -> bool:
    """True when spans overlap without one containing the other."""
    (s1, e1), (s2, e2) = sorted([a, b])
    return s1 < s2 <= e1 < e2


def find_crossing(spans) -> list:
    ordered = sorted(set(spans))
    pairs = []
    for i, a in enumerate(ordered):
        for b in ordered[i + 1:]:
            if b[0] > a[1]:
                break
            if crossing(a, b):
                pairs.append((a, b))
    return pairs


def drop_crossing(spans) -> tuple:
    """Keep spans in (start, -end) order, skipping any that crosses a kept one."""
    kept = []
    dropped = []
    for span in sorted(spans, key=lambda s: (s[0], -s[1])):
        if any(crossing(span, k) for k in kept):
            dropped.append(span)
        else:
            kept.append(span)
    return kept, dropped


def encode_actions(spans: Iterable, length: int, strict: bool = True) -> tuple:
    """Per-token ``(pushes, pops)`` count arrays for a nested/disjoint span multiset."""
    spans = [(int(s), int(e)) for s, e in spans]
    for s, e in spans:
        if not 0 <= s <= e < length:
            raise CodecError(f"span {(s, e)} outside sentence of length {length}")
    if strict:
        pairs = find_crossing(spans)
        if pairs:
            raise CodecError(f"crossing spans: {pairs}")
    else:
        spans, dropped = drop_crossing(spans)
        if dropped:
            logger.warning("dropped %d crossing span(s): %s", len(dropped), dropped)
    pushes = np.zeros(length, dtype=np.int64)
    pops = np.zeros(length, dtype=np.int64)
    for s, e in spans:
        pushes[s] += 1
        pops[e] += 1
    return pushes, pops


def encode(spans: Iterable, length: int, strict: bool = True) -> list:
    """Tag strings for ``spans`` (inclusive ``(start, end)`` pairs) over ``length`` tokens.

    With ``strict=False`` crossing spans are resolved by dropping the later
    starting one and logging a warning.
    """
    pushes, pops = encode_actions(spans, length, strict=strict)
    return [format_tag(int(a), int(b)) for a, b in zip(pushes, pops)]


def decode_actions(pushes, pops) -> Decoded:
    pushes = np.ascontiguousarray(pushes, dtype=np.int64)
    pops = np.ascontiguousarray(pops, dtype=np.int64)
    if pushes.shape != pops.shape:
        raise ValueError("pushes and pops differ in length")
    if len(pushes) == 0:
        return Decoded([], 0)
    starts, ends, count, repairs = _kernels.decode_actions(pushes, pops)
    spans = sorted(zip(starts[:count].tolist(), ends[:count].tolist()))
    if repairs:
        logger.debug("decode repaired %d action(s)", repairs)
    return Decoded(spans, int(repairs))


def decode(tags) -> Decoded:
    """Spans (sorted by start, end) plus the number of repairs applied.

    Never raises on well-formed tag strings: a POP with nothing open is
    ignored, and spans left open are closed at the last token.
    """
    counts = [parse_tag(t) for t in tags]
    if not counts:
        return Decoded([], 0)
    pushes, pops = zip(*counts)
    return decode_actions(pushes, pops)


def tag_vocabulary(max_depth: int, max_opens_per_token: int) -> list:
    """All tags with at most ``max_opens_per_token`` pushes and ``max_depth`` pops.

    Index 0 is always ``"O"``; the rest are ordered by (pushes, pops).
    """
    if max_depth < 1 or max_opens_per_token < 1:
        raise ValueError("max_depth and max_opens_per_token must be >= 1")
    vocab = [OUTSIDE]
    for a in range(max_opens_per_token + 1):
        for b in range(max_depth + 1):
            if a or b:
                vocab.append(format_tag(a, b))
    return vocab


def nesting_depth(spans) -> int:
    """Largest number of spans covering one token."""
    if not spans:
        return 0
    end = max(e for _, e in spans) + 1
    cover = np.zeros(end + 1, dtype=np.int64)
    for s, e in spans:
        cover[s] += 1
        cover[e + 1] -= 1
    return int(np.cumsum(cover).max())


def clip_to_vocabulary(pushes, pops, max_depth, max_opens):
    """Bound per-token counts so that every tag exists in the vocabulary.

    Returns clipped copies plus the number of spans that had to be removed.
    Excess pushes drop the innermost spans opened at that token; the matching
    pops are removed where those spans would have closed.
    """
    pushes = np.asarray(pushes, dtype=np.int64).copy()
    pops = np.asarray(pops, dtype=np.int64).copy()
    decoded = decode_actions(pushes, pops)
    if decoded.repairs:
        raise CodecError("action counts are not well-formed")
    spans = decoded.spans
    by_start = {}
    for s, e in spans:
        by_start.setdefault(s, []).append(e)
    keep = []
    for s, ends in by_start.items():
        ends.sort(reverse=True)
        keep.extend((s, e) for e in ends[:max_opens])
    removed = len(spans) - len(keep)
    by_end = {}
    for s, e in keep:
        by_end.setdefault(e, []).append(s)
    final = []
    for e, starts in by_end.items():
        starts.sort(reverse=True)
        final.extend((s, e) for s in starts[:max_depth])
    removed += len(keep) - len(final)
    out_push, out_pop = encode_actions(final, len(pushes))
    return out_push, out_pop, removed
