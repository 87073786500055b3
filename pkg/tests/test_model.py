import numpy as np
import pytest
import torch

from corpipe import codec
from corpipe import model as cm
from corpipe.corefud import parse_conllu
from corpipe.encoder import EncoderConfig, SubwordTokenizer, build_adapter
from oracles import causal_argmax_loop, closure_clusters


def small_model(corpus, variant="two-stage", seed=0, dropout=0.0):
    torch.manual_seed(seed)
    words = [n.form for d in corpus.documents for s in d.sentences for n in s.nodes]
    deprels = {n.dependency()[1] for d in corpus.documents for s in d.sentences for n in s.empty_nodes()}
    adapter = build_adapter(EncoderConfig(hidden=16, heads=2, ff=32, layers=1), SubwordTokenizer.build(words))
    return cm.CorefModel(adapter, cm.ModelConfig(variant, hidden=24, attention=8, dropout=dropout), deprels)


@pytest.fixture(scope="module")
def small_doc():
    from corpipe.toydata import make_prodrop_corpus
    return make_prodrop_corpus(n_sentences=4, sentences_per_doc=4, seed=1)


# -- decoding ----------------------------------------------------------------


def test_decode_mentions_from_tags():
    tags = codec.tag_vocabulary(4, 3)
    ids = [tags.index(t) for t in ["P2Q", "O", "O", "Q"]]
    mentions, repairs = cm.decode_mentions(ids, tags, sentence=3)
    assert [(m.sentence, m.start, m.end) for m in mentions] == [(3, 0, 0), (3, 0, 3)]
    assert repairs == 0


def test_link_examples():
    s = np.array([[0.0, 9, 9], [5.0, 1, 9], [2.0, 2, 1]])
    assert cm.link_mentions(s).tolist() == [0, 0, 0]   # ties go to the earlier mention
    assert cm.link_mentions(np.zeros((0, 0))).tolist() == []


def test_link_random_matches_loop_and_invariants():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        n = int(rng.integers(1, 12))
        s = rng.normal(size=(n, n))
        a = cm.link_mentions(s)
        assert a.tolist() == causal_argmax_loop(s)
        assert np.all(a <= np.arange(n))
        assert np.array_equal(a, cm.link_mentions(s + rng.normal(size=(n, 1)) * 10))
        assert cm.clusters_from_links(a) == closure_clusters(a.tolist())


def test_clusters_examples():
    assert cm.clusters_from_links([0, 0, 2, 1, 2]) == [[0, 1, 3], [2, 4]]
    assert cm.clusters_from_links([]) == []
    with pytest.raises(ValueError):
        cm.clusters_from_links([0, 2, 2])


def test_predict_zero_mentions():
    probs = np.zeros((8, 3))
    probs[:, 0] = 1
    probs[5] = [0.1, 0.2, 0.7]   # unit 2 of this sentence, slot 1
    got = cm.predict_zero_mentions(probs, ["NONE", "nsubj", "obj"], sentence=1, n_units=2, offset=1)
    assert got == [cm.MentionCandidate(1, 1, 1, "zero", 1, "obj")]


def test_zero_mentions_order_after_head_word():
    a = cm.MentionCandidate(0, 2, 2, "zero", 0, "nsubj")
    assert cm.order_mentions([cm.MentionCandidate(0, 3, 3), a, cm.MentionCandidate(0, 2, 5),
                              cm.MentionCandidate(0, 2, 2)])[1:3] == [cm.MentionCandidate(0, 2, 5), a]


# -- losses ------------------------------------------------------------------


def test_link_targets():
    t = cm.link_targets([0, 1, 0, 0])
    assert t.tolist() == [[1, 0, 0, 0], [0, 1, 0, 0], [1, 0, 0, 0], [0.5, 0, 0.5, 0]]


def test_perfect_fit_loss_is_near_zero():
    target = cm.link_targets([0, 0, 1])
    scores = torch.tensor(np.where(target > 0, 50.0, -50.0))
    assert cm.link_loss(scores, target).item() <= 1e-6
    tag_logits = torch.full((3, 4), -50.0)
    tag_logits[[0, 1, 2], [1, 0, 3]] = 50.0
    total, _ = cm.loss_terms(tag_logits, np.array([1, 0, 3]), scores, target)
    assert total.item() <= 1e-6


def test_loss_without_mentions():
    total, parts = cm.loss_terms(torch.zeros(2, 3), np.array([0, 1]))
    assert parts["links"].item() == 0.0 and total.item() == pytest.approx(np.log(3))


def test_gold_targets_roundtrip(small_doc):
    doc = small_doc.documents[0]
    model = small_model(small_doc)
    inputs = cm.prepare_document(doc, "two-stage")
    gold = model.targets(inputs)
    assert gold.dropped == 0
    n_mentions = sum(len(e.mentions) for e in doc.entities)
    assert len(gold.mentions) == n_mentions
    for s, tags in enumerate(gold.tags):
        decoded, _ = cm.decode_mentions(tags, model.tags, s)
        assert {(m.start, m.end) for m in decoded} == {(m.start, m.end) for m in gold.mentions if m.sentence == s}


def test_single_stage_targets_have_zero_mentions(small_doc):
    doc = small_doc.documents[0]
    model = small_model(small_doc, "single-stage")
    inputs = cm.prepare_document(doc, "single-stage")
    gold = model.targets(inputs)
    zeros = [m for m in gold.mentions if m.kind == "zero"]
    n_empty = sum(len(list(s.empty_nodes())) for s in doc.sentences)
    assert len(zeros) + gold.dropped >= n_empty > 0
    assert all(lab.shape == (2 * len(u),) for lab, u in zip(gold.zero_labels, inputs.units))


@pytest.mark.parametrize("variant", cm.VARIANTS)
def test_finite_differences(small_doc, variant):
    model = small_model(small_doc, variant).double().eval()
    inputs = cm.prepare_document(small_doc.documents[0], variant)
    gold = model.targets(inputs)
    loss, _ = model.document_loss(inputs, gold)
    model.zero_grad()
    loss.backward()
    params = [p for p in model.parameters() if p.grad is not None]
    rng = np.random.default_rng(0)
    checked, eps = 0, 1e-6
    while checked < 10:
        p = params[int(rng.integers(len(params)))]
        idx = tuple(int(rng.integers(n)) for n in p.shape)
        g = p.grad[idx].item()
        if abs(g) < 1e-7:
            continue
        with torch.no_grad():
            old = p[idx].item()
            p[idx] = old + eps
            up = model.document_loss(inputs, gold)[0].item()
            p[idx] = old - eps
            down = model.document_loss(inputs, gold)[0].item()
            p[idx] = old
        fd = (up - down) / (2 * eps)
        assert abs(fd - g) / max(abs(fd), abs(g)) < 1e-3
        checked += 1


def test_sentence_loss_backpropagates(small_doc):
    model = small_model(small_doc, "single-stage")
    inputs = cm.prepare_document(small_doc.documents[0], "single-stage")
    gold = model.targets(inputs)
    loss, parts = model.sentence_loss(inputs, gold, 2)
    loss.backward()
    assert {"tags", "links", "zeros"} <= set(parts)
    assert model.zero_head[1].weight.grad.abs().sum() > 0


# -- prediction and ensembles ------------------------------------------------


@pytest.mark.parametrize("variant", cm.VARIANTS)
def test_predict_probabilities_and_shapes(small_doc, variant):
    model = small_model(small_doc, variant).eval()
    doc = cm.model_input(small_doc.documents[0], variant)
    inputs = cm.prepare_document(doc, variant)
    with torch.no_grad():
        out = model.word_distributions(inputs)
    assert out["tags"].shape == (inputs.n_units, len(model.tags))
    assert torch.allclose(out["tags"].sum(-1), torch.ones(inputs.n_units))
    if variant == "single-stage":
        assert out["zeros"].shape == (2 * inputs.n_units, len(model.zero_labels))
    pred = cm.predict_document(model, doc)
    assert [len(s.words()) for s in pred.sentences] == [len(s.words()) for s in doc.sentences]


def _serialized(doc):
    from corpipe.corefud import Corpus, serialize_conllu
    return serialize_conllu(Corpus([doc]))


@pytest.mark.parametrize("variant", cm.VARIANTS)
def test_ensemble_of_copies_is_exact(small_doc, variant):
    model = small_model(small_doc, variant, seed=3)
    copies = [small_model(small_doc, variant, seed=k) for k in range(3)]
    for c in copies:
        c.load_state_dict(model.state_dict())
    doc = cm.model_input(small_doc.documents[0], variant)
    assert _serialized(cm.predict_document(copies, doc)) == _serialized(cm.predict_document(model, doc))


def test_incompatible_members(small_doc):
    a = small_model(small_doc, "two-stage")
    b = small_model(small_doc, "single-stage")
    with pytest.raises(cm.EnsembleError):
        cm.predict_document([a, b], small_doc.documents[0])


def test_predicted_zero_mentions_are_single_empty_nodes():
    text = ("# newdoc id = z\n1\tRan\trun\tVERB\t_\t_\t0\troot\t0:root\t_\n"
            "2\thome\thome\tNOUN\t_\t_\t1\tobl\t1:obl\t_\n\n")
    doc = parse_conllu(text).documents[0]
    inputs = cm.prepare_document(doc, "single-stage")
    mentions = [cm.MentionCandidate(0, 0, 0, "zero", 0, "nsubj"), cm.MentionCandidate(0, 1, 1)]
    pred = cm.build_prediction(inputs, cm.order_mentions(mentions), np.array([0, 0]))
    s = pred.sentences[0]
    assert [str(n.id) for n in s.nodes] == ["1", "1.1", "2"]
    (entity,) = pred.entities
    zero = entity.mentions[0]
    assert zero.start == zero.end == 1 and s.nodes[1].is_empty
    assert s.nodes[1].dependency() == ("1", "nsubj")
