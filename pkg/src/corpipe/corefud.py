"""CorefUD-flavoured CoNLL-U: reading, writing and structural checks.

Only the ``Entity`` key of MISC is interpreted; every other column and MISC
item is carried verbatim so that ``serialize(parse(text)) == text`` for files
that follow the bracket ordering used here.

Positions inside a sentence index ``Sentence.nodes``, which holds surface
words and empty nodes in word order (empty node ``m.k`` right after word
``m``).  Multi-word token lines are kept on the side and excluded from those
positions.
"""

import logging
import re
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

logger = logging.getLogger(__name__)

DEFAULT_ENTITY_COLUMNS = ("eid", "etype", "head", "other")
_ID_RE = re.compile(r"^(\d+)(?:\.(\d+))?$")
_RANGE_RE = re.compile(r"^(\d+)-(\d+)$")
_BRACKET_BOTH = re.compile(r"^\(([^( )]+)\)")
_BRACKET_OPEN = re.compile(r"^\(([^( )]+)")
_BRACKET_CLOSE = re.compile(r"^([^( )]+)\)")
_DISCONTINUOUS = re.compile(r"^(.+)\[(\d+)/(\d+)\]$")


class ParseError(ValueError):
    def __init__(self, message, line=None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class CorefUDValidationError(ValueError):
    """Annotation cannot be turned into a well-formed corpus."""


class SerializationError(ValueError):
    pass


class NodeId(NamedTuple):
    word: int
    empty: int = 0

    @property
    def is_empty(self):
        return self.empty > 0

    def __str__(self):
        return f"{self.word}.{self.empty}" if self.empty else str(self.word)

    @classmethod
    def parse(cls, text):
        match = _ID_RE.match(text)
        if not match:
            raise ValueError(f"bad node id {text!r}")
        return cls(int(match.group(1)), int(match.group(2) or 0))


@dataclass
class Node:
    id: NodeId
    form: str = "_"
    lemma: str = "_"
    upos: str = "_"
    xpos: str = "_"
    feats: str = "_"
    head: Optional[int] = None
    deprel: str = "_"
    deps: str = "_"
    misc: list = field(default_factory=list)

    @property
    def is_empty(self):
        return self.id.is_empty

    def dependency(self):
        """``(head, deprel)`` as strings, falling back to the first DEPS item.

        Empty nodes in released CorefUD files carry their attachment only in
        DEPS; predicted ones carry it in both HEAD/DEPREL and DEPS.
        """
        if self.head is not None:
            return str(self.head), self.deprel
        if self.deps not in ("", "_"):
            first = self.deps.split("|")[0]
            head, _, rel = first.partition(":")
            return head, rel
        return "_", self.deprel

    def empty_triple(self):
        """``(head, deprel, order_after)``: identity of an empty node."""
        head, rel = self.dependency()
        return head, rel, self.id.word


@dataclass
class Mention:
    sentence: int
    start: int
    end: int
    head: int
    attrs: dict = field(default_factory=dict, compare=False)
    order: int = field(default=0, compare=False)

    @property
    def span(self):
        return self.start, self.end

    def __len__(self):
        return self.end - self.start + 1


@dataclass
class Entity:
    eid: str
    mentions: list = field(default_factory=list)


@dataclass
class Sentence:
    nodes: list = field(default_factory=list)
    comments: list = field(default_factory=list)
    multiword: dict = field(default_factory=dict)

    def words(self):
        return [n for n in self.nodes if not n.is_empty]

    def empty_nodes(self):
        return [n for n in self.nodes if n.is_empty]

    def position_of(self, node_id):
        for i, node in enumerate(self.nodes):
            if node.id == node_id:
                return i
        raise KeyError(node_id)

    def word_position(self, word_id):
        """Position of surface word ``word_id`` (1-based) in ``nodes``."""
        return self.position_of(NodeId(word_id))


@dataclass
class Document:
    doc_id: Optional[str]
    sentences: list = field(default_factory=list)
    entities: list = field(default_factory=list)
    entity_columns: tuple = DEFAULT_ENTITY_COLUMNS

    def mentions(self):
        """All mentions with their entity ids, in document order."""
        pairs = [(m, e.eid) for e in self.entities for m in e.mentions]
        pairs.sort(key=lambda p: (p[0].sentence, p[0].start, -p[0].end, p[0].order))
        return pairs


@dataclass
class Corpus:
    documents: list = field(default_factory=list)
    issues: list = field(default_factory=list)

    def sentences(self):
        for doc in self.documents:
            yield from doc.sentences


# --------------------------------------------------------------------------
# Parsing


def _split_misc(value):
    return [] if value == "_" else value.split("|")


def _parse_entity_value(value, line_no):
    items = []
    rest = value
    while rest:
        for kind, regex in (("both", _BRACKET_BOTH), ("open", _BRACKET_OPEN), ("close", _BRACKET_CLOSE)):
            match = regex.match(rest)
            if match:
                items.append((kind, match.group(1)))
                rest = rest[match.end():]
                break
        else:
            raise ParseError(f"cannot parse Entity value {value!r}", line_no)
    return items


def _entity_columns_from(comment):
    _, _, value = comment.partition("=")
    cols = tuple(c.strip() for c in value.strip().split("-"))
    return cols if "eid" in cols else DEFAULT_ENTITY_COLUMNS


class _DocBuilder:
    def __init__(self, doc, issues):
        self.doc = doc
        self.issues = issues
        self.open = []
        self.entities = {}
        self.seq = 0

    def opening(self, attrs_text, sent_idx, pos, line_no):
        values = attrs_text.split("-")
        cols = self.doc.entity_columns
        attrs = {c: v for c, v in zip(cols, values)}
        eid = attrs.pop("eid", values[0])
        record = {"eid": eid, "sentence": sent_idx, "start": pos, "attrs": attrs,
                  "line": line_no, "seq": self.seq}
        self.seq += 1
        self.open.append(record)
        return eid

    def closing(self, eid, sent_idx, pos, line_no):
        for i in range(len(self.open) - 1, -1, -1):
            if self.open[i]["eid"] == eid:
                record = self.open.pop(i)
                break
        else:
            raise ParseError(f"closing bracket for entity {eid!r} without an opening", line_no)
        if record["sentence"] != sent_idx:
            self.issues.append(f"line {record['line']}: mention of entity {eid} crosses a sentence boundary; dropped")
            return
        match = _DISCONTINUOUS.match(eid)
        if match:
            self.issues.append(f"line {record['line']}: discontinuous mention part {eid} rejected")
            return
        attrs = dict(record["attrs"])
        head_text = attrs.pop("head", "")
        start = record["start"]
        length = pos - start + 1
        if head_text.isdigit() and 1 <= int(head_text) <= length:
            head = start + int(head_text) - 1
        else:
            if head_text:
                self.issues.append(f"line {record['line']}: head {head_text} outside mention of {eid}; using first node")
            else:
                logger.warning("line %s: mention of %s has no head; using first node", record["line"], eid)
            head = start
        mention = Mention(sent_idx, start, pos, head, attrs=attrs, order=record["seq"])
        if eid not in self.entities:
            self.entities[eid] = Entity(eid)
            self.doc.entities.append(self.entities[eid])
        self.entities[eid].mentions.append(mention)

    def finish(self):
        if self.open:
            eids = sorted({r["eid"] for r in self.open})
            raise CorefUDValidationError(
                f"document {self.doc.doc_id}: unmatched entity bracket(s) for {', '.join(eids)}")


def parse_conllu(text: str) -> Corpus:
    """Parse CoNLL-U text with CorefUD ``Entity`` annotations into a ``Corpus``."""
    corpus = Corpus()
    doc = None
    builder = None
    entity_columns = DEFAULT_ENTITY_COLUMNS
    sentence = Sentence()
    block_lines = []

    def flush_sentence():
        nonlocal doc, builder, sentence, block_lines
        if not block_lines:
            return
        for comment in sentence.comments:
            if comment.startswith("# newdoc"):
                if builder is not None:
                    builder.finish()
                _, _, value = comment.partition("id")
                doc_id = value.lstrip(" =").strip() or None
                doc = Document(doc_id, entity_columns=entity_columns)
                corpus.documents.append(doc)
                builder = _DocBuilder(doc, corpus.issues)
        if doc is None:
            doc = Document(None, entity_columns=entity_columns)
            corpus.documents.append(doc)
            builder = _DocBuilder(doc, corpus.issues)
        sent_idx = len(doc.sentences)
        doc.sentences.append(sentence)
        for pos, (node, line_no) in enumerate(block_lines):
            for item in node.misc:
                if item.startswith("Entity="):
                    for kind, payload in _parse_entity_value(item[len("Entity="):], line_no):
                        if kind == "close":
                            builder.closing(payload, sent_idx, pos, line_no)
                        else:
                            eid = builder.opening(payload, sent_idx, pos, line_no)
                            if kind == "both":
                                builder.closing(eid, sent_idx, pos, line_no)
        sentence = Sentence()
        block_lines = []

    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.rstrip("\r")
        if not line.strip():
            flush_sentence()
            if sentence.comments:
                raise ParseError("comment block without tokens", line_no)
            continue
        if line.startswith("#"):
            if line.startswith("# global.Entity"):
                entity_columns = _entity_columns_from(line)
            sentence.comments.append(line)
            continue
        cols = line.split("\t")
        if len(cols) != 10:
            raise ParseError(f"expected 10 tab-separated columns, got {len(cols)}", line_no)
        range_match = _RANGE_RE.match(cols[0])
        if range_match:
            sentence.multiword[int(range_match.group(1))] = cols
            continue
        try:
            node_id = NodeId.parse(cols[0])
        except ValueError:
            raise ParseError(f"bad ID {cols[0]!r}", line_no) from None
        head = None
        if cols[6] != "_":
            if not cols[6].isdigit():
                raise ParseError(f"bad HEAD {cols[6]!r}", line_no)
            head = int(cols[6])
        node = Node(node_id, cols[1], cols[2], cols[3], cols[4], cols[5], head, cols[7], cols[8],
                    _split_misc(cols[9]))
        sentence.nodes.append(node)
        block_lines.append((node, line_no))
    flush_sentence()
    if sentence.comments:
        raise ParseError("trailing comment block without tokens")
    if builder is not None:
        builder.finish()
    return corpus


def read_conllu(path) -> Corpus:
    with open(path, encoding="utf-8") as f:
        return parse_conllu(f.read())


# --------------------------------------------------------------------------
# Serialization


def _render_opening(mention, eid, columns, single):
    values = []
    for col in columns:
        if col == "eid":
            values.append(eid)
        elif col == "head":
            values.append(str(mention.head - mention.start + 1))
        else:
            values.append(mention.attrs.get(col, ""))
    while values and values[-1] == "":
        values.pop()
    return "(" + "-".join(values) + (")" if single else "")


def entity_annotations(doc: Document, sent_idx: int) -> dict:
    """Bracket string for every position of one sentence that needs one.

    At a position: spans ending here close innermost first; spans starting
    here open longest first; single-node spans go after the openings, or
    before the closings when nothing multi-node opens here.
    """
    per_pos = {}
    for entity_idx, entity in enumerate(doc.entities):
        for mention in entity.mentions:
            if mention.sentence != sent_idx:
                continue
            per_pos.setdefault(mention.start, []).append(("start", mention, entity.eid))
            if mention.end != mention.start:
                per_pos.setdefault(mention.end, []).append(("end", mention, entity.eid))
    out = {}
    for pos, items in per_pos.items():
        closings = sorted((i for i in items if i[0] == "end"),
                          key=lambda i: (-i[1].start, -i[1].order))
        openings = sorted((i for i in items if i[0] == "start" and i[1].end > pos),
                          key=lambda i: (-i[1].end, i[1].order))
        singles = sorted((i for i in items if i[0] == "start" and i[1].end == pos),
                         key=lambda i: i[1].order)
        rendered_close = [eid + ")" for _, _, eid in closings]
        rendered_open = [_render_opening(m, eid, doc.entity_columns, False) for _, m, eid in openings]
        rendered_single = [_render_opening(m, eid, doc.entity_columns, True) for _, m, eid in singles]
        if rendered_open:
            parts = rendered_close + rendered_open + rendered_single
        else:
            parts = rendered_single + rendered_close
        out[pos] = "".join(parts)
    return out


def _misc_with_entity(misc, entity_value):
    items = []
    placed = False
    for item in misc:
        if item.startswith("Entity="):
            if entity_value and not placed:
                items.append("Entity=" + entity_value)
                placed = True
            continue
        items.append(item)
    if entity_value and not placed:
        items.append("Entity=" + entity_value)
    return "|".join(items) if items else "_"


def _check_serializable(doc):
    for entity in doc.entities:
        for m in entity.mentions:
            if not 0 <= m.sentence < len(doc.sentences):
                raise SerializationError(f"entity {entity.eid}: mention in missing sentence {m.sentence}")
            n = len(doc.sentences[m.sentence].nodes)
            if not 0 <= m.start <= m.end < n:
                raise SerializationError(
                    f"entity {entity.eid}: mention {m.span} crosses the boundary of sentence {m.sentence}")
            if not m.start <= m.head <= m.end:
                raise SerializationError(f"entity {entity.eid}: head {m.head} outside mention {m.span}")


def serialize_conllu(corpus: Corpus) -> str:
    """Render a corpus as CoNLL-U text.

    Every sentence is followed by one blank line; an empty corpus yields "".
    A ``# newdoc id`` comment is added for documents that have an id but no
    such comment, and ``# global.Entity`` is added once when the corpus has
    entities but declares no columns.
    """
    lines = []
    declared = any(c.startswith("# global.Entity") for s in corpus.sentences() for c in s.comments)
    for doc in corpus.documents:
        _check_serializable(doc)
        for sent_idx, sentence in enumerate(doc.sentences):
            comments = list(sentence.comments)
            if sent_idx == 0 and doc.doc_id is not None and not any(c.startswith("# newdoc") for c in comments):
                comments.insert(0, f"# newdoc id = {doc.doc_id}")
            if not declared and doc.entities:
                at = 1 if comments and comments[0].startswith("# newdoc") else 0
                comments.insert(at, "# global.Entity = " + "-".join(doc.entity_columns))
                declared = True
            lines.extend(comments)
            brackets = entity_annotations(doc, sent_idx)
            for pos, node in enumerate(sentence.nodes):
                if not node.is_empty and node.id.word in sentence.multiword:
                    lines.append("\t".join(sentence.multiword[node.id.word]))
                head = "_" if node.head is None else str(node.head)
                misc = _misc_with_entity(node.misc, brackets.get(pos, ""))
                lines.append("\t".join([str(node.id), node.form, node.lemma, node.upos, node.xpos,
                                        node.feats, head, node.deprel, node.deps, misc]))
            lines.append("")
    return "\n".join(lines) + "\n" if lines else ""


def write_conllu(corpus: Corpus, path):
    with open(path, "w", encoding="utf-8") as f:
        f.write(serialize_conllu(corpus))


# --------------------------------------------------------------------------
# Validation


def validate(corpus: Corpus) -> list:
    """Every structural violation found, as human-readable strings."""
    violations = list(corpus.issues)
    for d, doc in enumerate(corpus.documents):
        where_doc = doc.doc_id if doc.doc_id is not None else f"#{d}"
        for s, sentence in enumerate(doc.sentences):
            where = f"document {where_doc} sentence {s + 1}"
            words = sentence.words()
            n = len(words)
            for i, w in enumerate(words, start=1):
                if w.id.word != i:
                    violations.append(f"{where}: surface ids not consecutive at {w.id} (expected {i})")
                    break
            word_ids = {w.id.word for w in words}
            last_major, last_minor = None, 0
            prev_word = 0
            for pos, node in enumerate(sentence.nodes):
                if not node.is_empty:
                    prev_word = node.id.word
                    last_major, last_minor = None, 0
                    if node.head is not None and node.head != 0 and node.head not in word_ids:
                        violations.append(f"{where}: node {node.id} has head {node.head} outside the sentence")
                    continue
                major, minor = node.id
                if major > n:
                    violations.append(f"{where}: empty node {node.id} follows missing word {major}")
                if major != prev_word:
                    violations.append(f"{where}: empty node {node.id} not placed right after word {major}")
                expected = last_minor + 1 if last_major == major else 1
                if minor != expected:
                    violations.append(f"{where}: empty node {node.id} breaks minor numbering (expected {major}.{expected})")
                last_major, last_minor = major, minor
                head, _ = node.dependency()
                if head != "_":
                    try:
                        head_id = NodeId.parse(head)
                    except ValueError:
                        violations.append(f"{where}: empty node {node.id} has malformed head {head!r}")
                        continue
                    if head_id.is_empty:
                        ok = any(e.id == head_id for e in sentence.nodes)
                    else:
                        ok = head_id.word == 0 or head_id.word in word_ids
                    if not ok:
                        violations.append(f"{where}: empty node {node.id} has head {head} outside the sentence")
        for entity in doc.entities:
            if not entity.mentions:
                violations.append(f"document {where_doc}: entity {entity.eid} has no mentions")
            for m in entity.mentions:
                label = f"document {where_doc}: mention {m.span} of entity {entity.eid} in sentence {m.sentence + 1}"
                if not 0 <= m.sentence < len(doc.sentences):
                    violations.append(f"{label}: sentence does not exist")
                    continue
                size = len(doc.sentences[m.sentence].nodes)
                if not 0 <= m.start <= m.end < size:
                    violations.append(f"{label}: span not contiguous within the sentence")
                if not m.start <= m.head <= m.end:
                    violations.append(f"{label}: head {m.head} outside span")
    return violations


# --------------------------------------------------------------------------
# Helpers used by the pipeline


def governor_position(sentence: Sentence, pos: int) -> Optional[int]:
    """Position of the node governing ``nodes[pos]``, or None for root/unknown."""
    head, _ = sentence.nodes[pos].dependency()
    if head in ("_", "0"):
        return None
    try:
        return sentence.position_of(NodeId.parse(head))
    except (KeyError, ValueError):
        return None


def syntactic_head(sentence: Sentence, start: int, end: int) -> int:
    """First node of the span whose governor lies outside it; ``start`` if none."""
    for pos in range(start, end + 1):
        gov = governor_position(sentence, pos)
        if gov is None or not start <= gov <= end:
            return pos
    return start


def strip_coreference(doc: Document) -> Document:
    """Copy of ``doc`` without entities (nodes are shared, MISC re-rendered on write)."""
    return Document(doc.doc_id, list(doc.sentences), [], doc.entity_columns)


def _copy_sentence(sentence, keep):
    return Sentence([n for n in sentence.nodes if keep(n)], list(sentence.comments), dict(sentence.multiword))


def without_empty_nodes(doc: Document) -> Document:
    """Copy of ``doc`` with empty nodes and all coreference removed."""
    sentences = [_copy_sentence(s, lambda n: not n.is_empty) for s in doc.sentences]
    return Document(doc.doc_id, sentences, [], doc.entity_columns)


class EmptyNodeSpec(NamedTuple):
    """An empty node to insert: attached to surface word ``head_word``."""
    head_word: int
    deprel: str
    order_after: int


def insert_empty_nodes(sentence: Sentence, specs) -> Sentence:
    """New sentence with ``specs`` appended as empty nodes after their word.

    Existing empty nodes keep their ids; new ones get the next free minor
    number at their major position.  FORM and the other unpredicted columns
    are ``_``; HEAD/DEPREL and DEPS carry the attachment.
    """
    by_major = {}
    for spec in specs:
        by_major.setdefault(spec.order_after, []).append(spec)
    nodes = []
    original = list(sentence.nodes)

    def emit_new(major, minor_start):
        for k, spec in enumerate(by_major.pop(major, []), start=minor_start):
            nodes.append(Node(NodeId(major, k), head=spec.head_word, deprel=spec.deprel,
                              deps=f"{spec.head_word}:{spec.deprel}"))

    i = 0
    major = 0
    while True:
        last_minor = 0
        while i < len(original) and original[i].is_empty and original[i].id.word == major:
            nodes.append(original[i])
            last_minor = original[i].id.empty
            i += 1
        emit_new(major, last_minor + 1)
        if i >= len(original):
            break
        nodes.append(original[i])
        major = original[i].id.word
        i += 1
    if by_major:
        raise ValueError(f"empty nodes after missing words: {sorted(by_major)}")
    return Sentence(nodes, list(sentence.comments), dict(sentence.multiword))
