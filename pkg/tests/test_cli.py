import json

import pytest

from corpipe.cli import main
from corpipe.corefud import read_conllu


def test_score_self(sample_path, capsys):
    assert main(["score", "--gold", str(sample_path), "--pred", str(sample_path)]) == 0
    assert capsys.readouterr().out.strip().splitlines()[-1] == "100.00"


def test_score_json(sample_path, capsys):
    assert main(["score", "--gold", str(sample_path), "--pred", str(sample_path), "--json", "--mode", "exact"]) == 0
    out = capsys.readouterr().out
    assert json.loads(out[:out.rindex("}") + 1])["mode"] == "exact"


def test_convert_roundtrip(sample_path, tmp_path):
    out = tmp_path / "out.conllu"
    assert main(["convert", str(sample_path), str(out)]) == 0
    assert out.read_text() == sample_path.read_text()
    assert main(["convert", str(sample_path), str(out), "--strip-coreference", "--strip-empty-nodes"]) == 0
    corpus = read_conllu(out)
    assert not any(d.entities for d in corpus.documents)
    assert not any(s.empty_nodes() for s in corpus.sentences())


@pytest.mark.parametrize("argv", [
    ["predict", "--variant", "two-stage", "--input", "x", "--output", "y"],
    ["predict", "--variant", "two-stage", "--input", "x", "--output", "y", "--coref-model", "m"],
    ["predict", "--variant", "single-stage", "--input", "x", "--output", "y", "--coref-model", "m",
     "--zeros-model", "z"],
    ["score", "--gold", "x"],
    ["frobnicate"],
])
def test_usage_errors_exit_2(argv):
    with pytest.raises(SystemExit) as err:
        main(argv)
    assert err.value.code == 2


def test_runtime_errors_exit_1(tmp_path, capsys):
    assert main(["score", "--gold", str(tmp_path / "missing"), "--pred", str(tmp_path / "missing")]) == 1
    assert "error" in capsys.readouterr().err
    bad = tmp_path / "c.json"
    bad.write_text('{"nonsense": 1}')
    assert main(["train-zeros", "--train", str(bad), "--out", str(tmp_path), "--config", str(bad)]) == 1


def test_select_and_ensemble(toy_runs, tmp_path, capsys):
    manifest = tmp_path / "m.json"
    assert main(["select-checkpoints", "--pool", str(toy_runs["root"] / "single-stage"), "--mode", "ensemble",
                 "-k", "2", "--output", str(manifest)]) == 0
    data = json.loads(manifest.read_text())
    assert data["mode"] == "ensemble(2)" and len(data["corpora"]["toy"]) == 2
    out = tmp_path / "pred.conllu"
    assert main(["ensemble", "--variant", "single-stage", "--manifest", str(manifest), "--input",
                 str(toy_runs["data"]), "--output", str(out)]) == 0
    capsys.readouterr()
    assert main(["score", "--gold", str(toy_runs["data"]), "--pred", str(out)]) == 0
    assert float(capsys.readouterr().out.strip().splitlines()[-1]) >= 90


def test_predict_two_stage(toy_runs, tmp_path, capsys):
    out = tmp_path / "pred.conllu"
    coref = toy_runs["two-stage"][2].records[-1].path
    zeros = toy_runs["zeros"][2].records[-1].path
    assert main(["predict", "--variant", "two-stage", "--coref-model", coref, "--zeros-model", zeros,
                 "--input", str(toy_runs["data"]), "--output", str(out)]) == 0
    assert main(["score", "--gold", str(toy_runs["data"]), "--pred", str(out)]) == 0
    assert float(capsys.readouterr().out.strip().splitlines()[-1]) >= 90


def test_train_coref_cli(toy_corpus, tmp_path, capsys):
    from corpipe.corefud import Corpus, write_conllu
    data = tmp_path / "small.conllu"
    write_conllu(Corpus(toy_corpus.documents[:1]), data)
    argv = ["train-coref", "--variant", "single-stage", "--train", f"tiny={data}", "--out", str(tmp_path / "pool"),
            "--set", "epochs=1", "--set", "steps_per_epoch=2", "--set", "encoder_hidden=16",
            "--set", "encoder_heads=2"]
    assert main(argv) == 0
    record = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert record["epoch"] == 1 and "tiny" in record["scores"]
    assert (tmp_path / "pool" / "m1" / "epoch-1" / "params.pt").exists()
