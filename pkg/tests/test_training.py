import math

import numpy as np
import pytest
import torch

from corpipe import training as tr


def test_mix_sqrt_weights():
    mix = tr.MixSpec.from_counts({"a": 100, "b": 400})
    assert mix.probability("a") == pytest.approx(1 / 3) and mix.probability("b") == pytest.approx(2 / 3)


def test_mix_single_and_scale_invariant():
    assert tr.MixSpec.from_counts({"only": 7}).probability("only") == 1.0
    a = tr.MixSpec.from_counts({"x": 3, "y": 5, "z": 11})
    b = tr.MixSpec.from_counts({"x": 300, "y": 500, "z": 1100})
    assert np.allclose(a.weights, b.weights)


@pytest.mark.parametrize("counts", [{}, {"a": 10, "b": 0}])
def test_mix_rejects_empty(counts):
    with pytest.raises(tr.TrainingConfigError):
        tr.MixSpec.from_counts(counts)


def test_sampling_frequencies_within_three_sigma():
    counts = {"a": 1000, "b": 250, "c": 40}
    mix = tr.MixSpec.from_counts(counts)
    n = 100_000
    draws = tr.sample_corpora(mix, np.random.default_rng(0), n)
    total = sum(math.sqrt(c) for c in counts.values())
    for i, name in enumerate(mix.names):
        p = math.sqrt(counts[name]) / total
        assert abs((draws == i).sum() - n * p) <= 3 * math.sqrt(n * p * (1 - p))


def test_sample_batch_pairs():
    mix = tr.MixSpec.from_counts({"a": 1, "b": 1})
    batch = tr.sample_batch(mix, np.random.default_rng(1), {"a": [1, 2], "b": [3]}, 20)
    assert len(batch) == 20
    assert all((n == "a" and x in (1, 2)) or (n == "b" and x == 3) for n, x in batch)


def test_lr_examples():
    s = tr.Schedule(1e-3, 100, 10)
    assert tr.lr_at(0, s) == 0.0
    assert tr.lr_at(5, s) == pytest.approx(5e-4)
    assert tr.lr_at(10, s) == pytest.approx(1e-3)
    assert tr.lr_at(55, s) == pytest.approx(5e-4)
    assert tr.lr_at(100, s) <= 1e-8 * 1e-3
    with pytest.raises(ValueError):
        tr.lr_at(101, s)
    with pytest.raises(ValueError):
        tr.lr_at(-1, s)


def test_lr_monotone_pieces():
    s = tr.Schedule.with_warmup_fraction(2e-4, 1000, 0.1)
    assert s.warmup_steps == 100
    lrs = [tr.lr_at(k, s) for k in range(1001)]
    assert all(a <= b for a, b in zip(lrs[:100], lrs[1:101]))
    assert all(a >= b for a, b in zip(lrs[100:], lrs[101:]))


def test_bad_schedule():
    with pytest.raises(tr.TrainingConfigError):
        tr.Schedule(1e-3, 10, 20)


def test_torch_scheduler_follows_lr_at():
    s = tr.Schedule(0.1, 20, 4)
    opt = torch.optim.SGD([torch.nn.Parameter(torch.zeros(1))], lr=s.peak_lr)
    sched = tr.torch_scheduler(opt, s)
    for step in range(20):
        assert opt.param_groups[0]["lr"] == pytest.approx(tr.lr_at(step, s))
        opt.step()
        sched.step()


# -- selection ---------------------------------------------------------------

SCORES = {
    ("m1", 1): {"cs": 60.0, "en": 70.0},
    ("m1", 2): {"cs": 64.0, "en": 69.0},
    ("m2", 1): {"cs": 66.0, "en": 62.0},
    ("m2", 2): {"cs": 61.0, "en": 74.0},
    ("m3", 1): {"cs": 64.0, "en": 69.0},
}


@pytest.fixture
def pool():
    p = tr.CheckpointPool()
    for (mid, ep), sc in SCORES.items():
        p.add(tr.CheckpointRecord(mid, ep, sc))
    return p


def _key(r):
    return r.model_id, r.epoch


def _hand_best(score):
    best, best_key = None, None
    for key, sc in SCORES.items():
        s = score(sc)
        if best is None or s > best or (s == best and (key[0] < best_key[0] or
                                                       (key[0] == best_key[0] and key[1] > best_key[1]))):
            best, best_key = s, key
    return best_key


def test_overall(pool):
    sel = tr.select_checkpoints(pool, "overall")
    expected = _hand_best(lambda sc: (sc["cs"] + sc["en"]) / 2)
    assert {c: [_key(r) for r in rs] for c, rs in sel.items()} == {"cs": [expected], "en": [expected]}


def test_per_corpus(pool):
    sel = tr.select_checkpoints(pool, "per-corpus")
    for corpus in ("cs", "en"):
        assert [_key(r) for r in sel[corpus]] == [_hand_best(lambda sc, c=corpus: sc[c])]


@pytest.mark.parametrize("k", [1, 2, 3, 5])
def test_ensemble_top_k(pool, k):
    sel = tr.select_checkpoints(pool, f"ensemble({k})")
    for corpus in ("cs", "en"):
        remaining, expected = dict(SCORES), []
        for _ in range(k):
            best = None
            for key, sc in remaining.items():
                if best is None or (sc[corpus], -ord(key[0][-1]), key[1]) > \
                        (remaining[best][corpus], -ord(best[0][-1]), best[1]):
                    best = key
            expected.append(best)
            del remaining[best]
        assert [_key(r) for r in sel[corpus]] == expected


def test_tie_prefers_earlier_model_then_later_epoch(pool):
    # m1 epoch 2 and m3 epoch 1 tie on both corpora
    sel = tr.select_checkpoints(pool, "ensemble", k=5)
    cs = [_key(r) for r in sel["cs"]]
    assert cs.index(("m1", 2)) < cs.index(("m3", 1))


def test_selection_errors(pool):
    with pytest.raises(tr.SelectionError):
        tr.select_checkpoints(pool, "ensemble", k=6)
    with pytest.raises(tr.SelectionError):
        tr.select_checkpoints(pool, "ensemble")
    with pytest.raises(tr.SelectionError):
        tr.select_checkpoints(pool, "best")
    with pytest.raises(tr.SelectionError):
        tr.select_checkpoints(tr.CheckpointPool(), "overall")
    pool.add(tr.CheckpointRecord("m4", 1, {"cs": 1.0}))
    with pytest.raises(tr.SelectionError, match="lacks"):
        tr.select_checkpoints(pool, "overall")


def test_parse_mode():
    assert tr.parse_mode("ensemble(3)") == ("ensemble", 3)
    assert tr.parse_mode("ensemble", 2) == ("ensemble", 2)
    assert tr.parse_mode("overall") == ("overall", None)


def test_pool_save_and_load(tmp_path):
    from corpipe.encoder import EncoderConfig, SubwordTokenizer, build_adapter
    from corpipe.zeros import ZeroPredictor
    torch.manual_seed(0)
    adapter = build_adapter(EncoderConfig(hidden=8, heads=2, ff=16, layers=1), SubwordTokenizer.build(["a"]))
    model = ZeroPredictor(adapter, {"nsubj"}, cand_dim=4, hidden=8, attention=4, dropout=0.0)
    pool = tr.CheckpointPool()
    pool.save(tmp_path, "m1", 1, model, {"x": 50.0})
    pool.save(tmp_path, "m1", 2, model, {"x": 60.0})
    again = tr.CheckpointPool.load(tmp_path)
    assert [(r.model_id, r.epoch, r.scores) for r in again.records] == [("m1", 1, {"x": 50.0}), ("m1", 2, {"x": 60.0})]
    loaded = tr.load_model(again.records[1].path)
    for a, b in zip(model.state_dict().values(), loaded.state_dict().values()):
        assert torch.equal(a, b)
    with pytest.raises(FileNotFoundError):
        tr.load_model(tmp_path / "nothing")
    text = tr.manifest_json(tr.select_checkpoints(again, "overall"), "overall")
    assert '"epoch": 2' in text
