"""Deterministic synthetic pro-drop corpus for smoke tests and toy training.

Documents are short stories about a few people.  Subjects are often dropped
and recovered as an empty ``nsubj`` node right after the verb; dropped and
pronominal subjects refer to the most recently named person.  Possessive
phrases give nested mentions.
"""

import random

from .corefud import Corpus, Document, Entity, Mention, Node, NodeId, Sentence

PEOPLE = ["Anna", "Petr", "Marie", "Karel", "Jana", "Tomas", "Eva", "Pavel"]
VERBS = ["saw", "found", "bought", "sold", "painted", "lost"]
INTRANSITIVE = ["slept", "laughed", "left", "sang"]
SAYING = ["said", "thought", "knew"]
THINGS = ["house", "car", "book", "dog", "boat", "lamp"]


class _Builder:
    def __init__(self):
        self.nodes = []
        self.mentions = []   # (start_pos, end_pos, head_pos, entity key)

    def word(self, form, head, deprel):
        wid = len([n for n in self.nodes if not n.is_empty]) + 1
        self.nodes.append(Node(NodeId(wid), form, form.lower(), "X", "_", "_", head, deprel, f"{head}:{deprel}"))
        return len(self.nodes) - 1

    def empty(self, head, deprel):
        major = self.nodes[-1].id.word
        minor = sum(1 for n in self.nodes if n.is_empty and n.id.word == major) + 1
        self.nodes.append(Node(NodeId(major, minor), "_", "_", "PRON", "_", "_", None, "_", f"{head}:{deprel}"))
        return len(self.nodes) - 1

    def mention(self, start, end, head, key):
        self.mentions.append((start, end, head, key))


def _sentence(rng, cast, last_person, things_seen):
    """One sentence; returns the builder and the person mentioned last."""
    b = _Builder()
    kinds = ["named", "drop", "drop", "drop", "pronoun", "nested", "saying", "saying"]
    kind = rng.choice(kinds) if last_person else "named"
    if kind == "named":
        person = rng.choice(cast)
        p = b.word(person, 2, "nsubj")
        b.word(rng.choice(VERBS), 0, "root")
        det = b.word("the", 4, "det")
        thing = rng.choice(THINGS)
        t = b.word(thing, 2, "obj")
        b.word(".", 2, "punct")
        b.mention(p, p, p, ("person", person))
        b.mention(det, t, t, ("thing", thing))
        return b, person
    if kind == "drop":
        verb = b.word(rng.choice(VERBS + INTRANSITIVE).capitalize(), 0, "root")
        z = b.empty(1, "nsubj")
        b.mention(z, z, z, ("person", last_person))
        if b.nodes[verb].form.lower() in VERBS and things_seen:
            thing = rng.choice(sorted(things_seen))
            det = b.word("the", 3, "det")
            t = b.word(thing, 1, "obj")
            b.mention(det, t, t, ("thing", thing))
        b.word(".", 1, "punct")
        return b, last_person
    if kind == "pronoun":
        p = b.word("They", 2, "nsubj")
        b.word(rng.choice(INTRANSITIVE), 0, "root")
        b.word(".", 2, "punct")
        b.mention(p, p, p, ("person", last_person))
        return b, last_person
    if kind == "nested":
        owner = b.word(last_person, 3, "nmod:poss")
        b.word("'s", 1, "case")
        friend = b.word("friend", 4, "nsubj")
        b.word(rng.choice(INTRANSITIVE), 0, "root")
        b.word(".", 4, "punct")
        b.mention(owner, friend, friend, ("friend", last_person))
        b.mention(owner, owner, owner, ("person", last_person))
        return b, last_person
    # saying: two dropped subjects, both coreferent
    b.word(rng.choice(SAYING).capitalize(), 0, "root")
    z1 = b.empty(1, "nsubj")
    b.word("that", 3, "mark")
    b.word(rng.choice(INTRANSITIVE), 1, "ccomp")
    z2 = b.empty(3, "nsubj")
    b.word(".", 1, "punct")
    b.mention(z1, z1, z1, ("person", last_person))
    b.mention(z2, z2, z2, ("person", last_person))
    return b, last_person


def make_prodrop_corpus(n_sentences=32, sentences_per_doc=4, seed=0) -> Corpus:
    rng = random.Random(seed)
    documents = []
    for d in range((n_sentences + sentences_per_doc - 1) // sentences_per_doc):
        doc_id = f"toy-{d + 1:02d}"
        cast = rng.sample(PEOPLE, 2)
        last, things = None, set()
        entities = {}
        sentences = []
        for s in range(min(sentences_per_doc, n_sentences - d * sentences_per_doc)):
            b, last = _sentence(rng, cast, last, things)
            text = " ".join(n.form for n in b.nodes if not n.is_empty)
            sentences.append(Sentence(b.nodes, [f"# sent_id = {doc_id}-s{s + 1}", f"# text = {text}"]))
            for start, end, head, key in b.mentions:
                if key[0] == "thing":
                    things.add(key[1])
                entities.setdefault(key, []).append(Mention(s, start, end, head))
        doc_entities = []
        for k, (key, mentions) in enumerate(entities.items(), start=1):
            for m in mentions:
                m.attrs = {"etype": "person" if key[0] != "thing" else "object"}
            doc_entities.append(Entity(f"e{k}", mentions))
        documents.append(Document(doc_id, sentences, doc_entities))
    return Corpus(documents)
