import pytest

from corpipe import corefud as cu

MINI = """# newdoc id = d1
# global.Entity = eid-etype-head-other
# sent_id = 1
1\tA\ta\tX\t_\t_\t2\tnsubj\t2:nsubj\tEntity=(e1-person-1)
2\tsaw\tsee\tVERB\t_\t_\t0\troot\t0:root\t_
2.1\t_\t_\t_\t_\t_\t_\t_\t2:obj\tEntity=(e2-thing-1)
3\tit\tit\tPRON\t_\t_\t2\tobj\t2:obj\tEntity=(e2-thing-1)|SpaceAfter=No

"""


def _field_lines(text):
    """ID, FORM, HEAD, DEPREL and MISC of every token line."""
    out = []
    for line in text.splitlines():
        if line and not line.startswith("#"):
            cols = line.split("\t")
            out.append((cols[0], cols[1], cols[6], cols[7], cols[9]))
    return out


def test_roundtrip_is_byte_identical(sample_text):
    assert cu.serialize_conllu(cu.parse_conllu(sample_text)) == sample_text


def test_roundtrip_preserves_token_fields(sample_text):
    again = cu.serialize_conllu(cu.parse_conllu(sample_text))
    assert _field_lines(again) == _field_lines(sample_text)


def test_sample_structure(sample_text):
    corpus = cu.parse_conllu(sample_text)
    assert [d.doc_id for d in corpus.documents] == ["cs-sample-01", "es-sample-02"]
    assert cu.validate(corpus) == []
    doc = corpus.documents[0]
    e1 = next(e for e in doc.entities if e.eid == "e1")
    s2 = doc.sentences[1]
    zero = [m for m in e1.mentions if m.sentence == 1]
    assert all(s2.nodes[m.start].is_empty and m.start == m.end for m in zero)
    assert len(zero) == 2
    assert s2.nodes[zero[0].start].dependency() == ("1", "nsubj")


def test_nested_mentions_and_heads(sample_text):
    doc = cu.parse_conllu(sample_text).documents[0]
    e4 = next(e for e in doc.entities if e.eid == "e4")
    m = e4.mentions[0]
    assert (m.sentence, m.start, m.end, m.head) == (2, 2, 3, 2)
    assert m.attrs["etype"] == "person"


def test_multiword_tokens_kept(sample_text):
    corpus = cu.parse_conllu(sample_text)
    sentence = corpus.documents[1].sentences[1]
    assert 3 in sentence.multiword and sentence.multiword[3][1] == "del"
    assert all(not isinstance(n, list) for n in sentence.nodes)


def test_empty_node_positions():
    corpus = cu.parse_conllu(MINI)
    s = corpus.documents[0].sentences[0]
    assert [str(n.id) for n in s.nodes] == ["1", "2", "2.1", "3"]
    assert s.word_position(3) == 3
    assert [str(n.id) for n in s.empty_nodes()] == ["2.1"]
    assert s.nodes[2].empty_triple() == ("2", "obj", 2)


def test_unmatched_bracket_is_an_error():
    bad = MINI.replace("Entity=(e1-person-1)", "Entity=(e1-person-1")
    with pytest.raises(cu.CorefUDValidationError, match="e1"):
        cu.parse_conllu(bad)


def test_closing_without_opening():
    bad = MINI.replace("Entity=(e1-person-1)", "Entity=e1)")
    with pytest.raises(cu.ParseError):
        cu.parse_conllu(bad)


def test_wrong_column_count():
    with pytest.raises(cu.ParseError) as err:
        cu.parse_conllu("1\tA\ta\n\n")
    assert err.value.line == 1


def test_cross_sentence_mention_reported():
    text = MINI.replace("Entity=(e1-person-1)", "Entity=(e9-person-1") + MINI.replace(
        "# newdoc id = d1\n# global.Entity = eid-etype-head-other\n", "").replace(
        "Entity=(e1-person-1)", "Entity=e9)")
    corpus = cu.parse_conllu(text)
    assert any("sentence boundary" in i for i in corpus.issues)
    assert cu.validate(corpus)


def test_discontinuous_mention_rejected():
    text = MINI.replace("Entity=(e1-person-1)", "Entity=(e5[1/2]-person-1)")
    corpus = cu.parse_conllu(text)
    assert any("discontinuous" in i for i in corpus.issues)


def test_missing_head_uses_first_node(caplog):
    text = MINI.replace("Entity=(e1-person-1)", "Entity=(e1-person)")
    doc = cu.parse_conllu(text).documents[0]
    m = doc.entities[0].mentions[0]
    assert m.head == m.start
    assert "no head" in caplog.text


def test_serialize_empty_corpus():
    assert cu.serialize_conllu(cu.Corpus()) == ""


def test_serialize_rejects_bad_mention():
    corpus = cu.parse_conllu(MINI)
    corpus.documents[0].entities[0].mentions[0].end = 10
    with pytest.raises(cu.SerializationError):
        cu.serialize_conllu(corpus)


def test_validate_flags_broken_ids():
    corpus = cu.parse_conllu(MINI)
    corpus.documents[0].sentences[0].nodes[3].id = cu.NodeId(5)
    assert any("not consecutive" in v for v in cu.validate(corpus))


def test_insert_and_remove_empty_nodes():
    corpus = cu.parse_conllu(MINI)
    doc = corpus.documents[0]
    bare = cu.without_empty_nodes(doc)
    assert [str(n.id) for n in bare.sentences[0].nodes] == ["1", "2", "3"]
    assert bare.entities == []
    s = cu.insert_empty_nodes(doc.sentences[0], [cu.EmptyNodeSpec(2, "nsubj", 2), cu.EmptyNodeSpec(3, "obl", 1)])
    assert [str(n.id) for n in s.nodes] == ["1", "1.1", "2", "2.1", "2.2", "3"]
    new = s.nodes[4]
    assert (new.head, new.deprel, new.deps, new.form) == (2, "nsubj", "2:nsubj", "_")
    assert cu.validate(cu.Corpus([cu.Document("x", [s])])) == []


def test_syntactic_head():
    corpus = cu.parse_conllu(MINI)
    s = corpus.documents[0].sentences[0]
    assert cu.syntactic_head(s, 0, 1) == 1   # "A saw": saw governs A
    assert cu.syntactic_head(s, 0, 0) == 0


def test_write_and_read(tmp_path, sample_text):
    path = tmp_path / "x.conllu"
    cu.write_conllu(cu.parse_conllu(sample_text), path)
    assert path.read_text(encoding="utf-8") == sample_text
    assert len(cu.read_conllu(path).documents) == 2
