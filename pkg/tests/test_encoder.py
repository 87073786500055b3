import numpy as np
import pytest
import torch

from corpipe import encoder as enc


@pytest.fixture
def tokenizer():
    return enc.SubwordTokenizer.build(["the", "cat", "sat", "on", "mat", "the"])


def test_tokenizer_whole_words_and_fallback(tokenizer):
    assert len(tokenizer.tokenize("cat")) == 1
    pieces = tokenizer.tokenize("cats")  # unknown word: characters
    assert len(pieces) == 4
    assert tokenizer.tokenize("zz") == [tokenizer.index["<unk>"]] * 2
    assert tokenizer.tokenize(enc.EMPTY_TOKEN) == [tokenizer.empty_id]
    with pytest.raises(enc.TokenizationError):
        tokenizer.tokenize("")


def test_tokenizer_serialization(tokenizer):
    again = enc.SubwordTokenizer.from_dict(tokenizer.to_dict())
    assert again.pieces == tokenizer.pieces


def _lengths_tokenizer(lengths):
    return lambda w: list(range(lengths.get(w, 1)))


def test_single_sentence_has_no_context():
    (seg,) = enc.segment_document([["a", "b"]], _lengths_tokenizer({}))
    assert (seg.left, seg.right, seg.focus) == (0, 0, (0, 2))


def test_context_rule():
    sents = [[f"s{k}w{i}" for i in range(10)] for k in range(3)]
    segs = enc.segment_document(sents, _lengths_tokenizer({}), max_segment=512, max_right=50)
    assert segs[1].left == 10 and segs[1].right == 10
    assert segs[1].word_offset == 0 and segs[1].focus == (10, 20)


def test_right_context_capped():
    sents = [["x"] * 5, ["y"] * 100]
    seg = enc.segment_document(sents, _lengths_tokenizer({}), max_segment=512, max_right=50)[0]
    assert seg.right == 50


def test_left_context_fills_budget():
    sents = [["x"] * 30, ["y"] * 10, ["z"] * 30]
    seg = enc.segment_document(sents, _lengths_tokenizer({}), max_segment=40, max_right=5)[1]
    assert seg.right == 5 and seg.left == 25 and len(seg.subword_ids) == 40


def test_random_documents_partition_words():
    rng = np.random.default_rng(0)
    for _ in range(100):
        sents = [[f"w{int(rng.integers(0, 20))}" for _ in range(int(rng.integers(1, 15)))]
                 for _ in range(int(rng.integers(1, 8)))]
        lengths = {f"w{i}": int(rng.integers(1, 4)) for i in range(20)}
        budget = int(rng.integers(50, 120))
        segs = enc.segment_document(sents, _lengths_tokenizer(lengths), max_segment=budget, max_right=20)
        covered = [i for s in segs for i in range(*s.focus)]
        assert covered == list(range(sum(len(s) for s in sents)))
        for s in segs:
            assert s.right <= 20 and len(s.subword_ids) <= budget


def test_overlong_sentence_is_split(caplog):
    segs = enc.segment_document([["a"] * 25], _lengths_tokenizer({"a": 2}), max_segment=10)
    assert [s.focus for s in segs] == [(0, 5), (5, 10), (10, 15), (15, 20), (20, 25)]
    assert "exceeds" in caplog.text


def test_word_representations_gather():
    rng = np.random.default_rng(1)
    vecs = rng.normal(size=(12, 3))
    first = np.array([0, 2, 3, 7])
    out = enc.word_representations(vecs, first)
    for i, f in enumerate(first):
        assert np.array_equal(out[i], vecs[f])
    torch_out = enc.word_representations(torch.as_tensor(vecs), first)
    assert np.array_equal(torch_out.numpy(), out)


def test_toy_encoder_shape_and_determinism(tokenizer):
    torch.manual_seed(0)
    adapter = enc.build_adapter(enc.EncoderConfig(hidden=16, heads=2, ff=32), tokenizer)
    adapter.eval()
    (seg,) = enc.segment_document([["the", "cats", "sat"]], adapter.tokenize)
    a = enc.encode_segment(adapter, seg)
    b = enc.encode_segment(adapter, seg)
    assert a.shape == (len(seg.subword_ids), 16)
    assert torch.equal(a, b)
    words = enc.encode_segments(adapter, [seg])
    assert words.shape == (3, 16)


def test_padding_does_not_change_outputs(tokenizer):
    torch.manual_seed(0)
    adapter = enc.build_adapter(enc.EncoderConfig(hidden=16, heads=2, ff=32), tokenizer)
    adapter.eval()
    segs = enc.segment_document([["the", "cat"], ["sat", "on", "the", "mat", "cats"]], adapter.tokenize,
                                max_right=0)
    together = enc.encode_segments(adapter, segs)
    apart = torch.cat([enc.encode_segments(adapter, [s]) for s in segs])
    assert torch.allclose(together, apart, atol=1e-5)


def test_unknown_backend():
    with pytest.raises(enc.EncoderBackendError):
        enc.build_adapter(enc.EncoderConfig(kind="nope"))


def test_missing_external_model():
    with pytest.raises(enc.EncoderBackendError):
        enc.build_adapter(enc.EncoderConfig(kind="transformers", model_name="/nonexistent/model/path"))
