import os
import sys
import time
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))
# the missing-model check must not wait on the network
os.environ.setdefault("HF_HUB_OFFLINE", "1")

DATA = Path(__file__).parent / "data"


@pytest.fixture
def sample_path():
    return DATA / "corefud_sample.conllu"


@pytest.fixture
def sample_text(sample_path):
    return sample_path.read_text(encoding="utf-8")


@pytest.fixture(scope="session")
def toy_corpus():
    from corpipe.toydata import make_prodrop_corpus
    return make_prodrop_corpus()


@pytest.fixture(scope="session")
def toy_runs(toy_corpus, tmp_path_factory):
    """Toy models trained once per session: empty-node predictor and both coreference variants.

    Every run saves one checkpoint per epoch into its own pool directory.
    """
    from corpipe import pipeline
    from corpipe.corefud import write_conllu
    from corpipe.training import CheckpointPool, corpus_vocabulary, train_coref, train_zeros

    root = tmp_path_factory.mktemp("runs")
    data = root / "toy.conllu"
    write_conllu(toy_corpus, data)
    config = pipeline.load_config(profile="toy")
    train = {"toy": toy_corpus}
    tokenizer, deprels = corpus_vocabulary(train.values())
    runs = {"data": data, "root": root, "config": config}

    runs["seconds"] = {}
    start = time.perf_counter()
    zeros = pipeline.build_zero_predictor(config, tokenizer, deprels)
    pool = CheckpointPool()
    runs["zeros"] = (zeros, train_zeros(zeros, train, pipeline.train_config(config, "zeros"), train,
                                        root / "zeros", pool), pool)
    runs["seconds"]["zeros"] = time.perf_counter() - start
    for variant in ("two-stage", "single-stage"):
        start = time.perf_counter()
        model = pipeline.build_coref_model(config, variant, tokenizer, deprels)
        pool = CheckpointPool()
        runs[variant] = (model, train_coref(model, train, pipeline.train_config(config, "coref"), train,
                                            root / variant, pool), pool)
        runs["seconds"][variant] = time.perf_counter() - start
    for value in runs.values():
        if isinstance(value, tuple):
            value[0].eval()
    return runs
