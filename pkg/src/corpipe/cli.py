"""Command-line interface: ``corpipe <command> ...``."""

import argparse
import json
import logging
import sys
from pathlib import Path

from . import pipeline
from .corefud import Corpus, CorefUDValidationError, ParseError, read_conllu, strip_coreference, \
    without_empty_nodes, write_conllu
from .scorer import MODES, ScoringError, format_report, score_corpus
from .training import (CheckpointPool, SelectionError, TrainingConfigError, corpus_vocabulary, manifest_json,
                       select_checkpoints, train_coref, train_zeros)

logger = logging.getLogger("corpipe")


def _named_paths(values, flag):
    """``NAME=PATH`` or bare ``PATH`` (named after the file stem)."""
    out = {}
    for value in values or []:
        name, sep, path = value.partition("=")
        if not sep:
            name, path = Path(value).stem, value
        if name in out:
            raise argparse.ArgumentTypeError(f"{flag}: corpus name {name!r} given twice")
        out[name] = path
    return out


def _overrides(pairs):
    out = {}
    for pair in pairs or []:
        key, sep, value = pair.partition("=")
        if not sep:
            raise pipeline.PipelineConfigError(f"--set expects KEY=VALUE, got {pair!r}")
        try:
            out[key] = json.loads(value)
        except json.JSONDecodeError:
            out[key] = value
    return out


def _config(args):
    overrides = _overrides(args.set)
    if args.seed is not None:
        overrides["seed"] = args.seed
    return pipeline.load_config(args.config, args.profile, overrides)


def _read_all(named):
    return {name: read_conllu(path) for name, path in named.items()}


# --------------------------------------------------------------------------
# Commands


def cmd_convert(args):
    corpus = read_conllu(args.input)
    for issue in corpus.issues:
        logger.warning("%s", issue)
    documents = corpus.documents
    if args.strip_coreference:
        documents = [strip_coreference(d) for d in documents]
    if args.strip_empty_nodes:
        documents = [without_empty_nodes(d) for d in documents]
    write_conllu(Corpus(documents), args.output)
    return 0


def _training_data(args, parser):
    train = _read_all(_named_paths(args.train, "--train"))
    if not train:
        parser.error("at least one --train file is required")
    dev = _read_all(_named_paths(args.dev, "--dev")) or train
    return train, dev


def cmd_train_zeros(args, parser):
    config = _config(args)
    train, dev = _training_data(args, parser)
    tokenizer, deprels = corpus_vocabulary(train.values())
    predictor = pipeline.build_zero_predictor(config, tokenizer, deprels)
    pool = CheckpointPool()
    history = train_zeros(predictor, train, pipeline.train_config(config, "zeros", args.model_id), dev,
                          args.out, pool)
    print(json.dumps(history[-1]))
    return 0


def cmd_train_coref(args, parser):
    config = _config(args)
    train, dev = _training_data(args, parser)
    tokenizer, deprels = corpus_vocabulary(train.values())
    model = pipeline.build_coref_model(config, args.variant, tokenizer, deprels)
    pool = CheckpointPool()
    history = train_coref(model, train, pipeline.train_config(config, "coref", args.model_id), dev,
                          args.out, pool)
    print(json.dumps(history[-1]))
    return 0


def _predict(args, coref_models, zeros_models):
    config = pipeline.PipelineConfig(args.variant, coref_models, zeros_models, args.gold_empty_nodes, args.threshold)
    corpus = read_conllu(args.input)
    predicted = pipeline.run(corpus, config)
    write_conllu(predicted, args.output)
    return 0


def cmd_predict(args, parser):
    if not args.coref_model:
        parser.error(f"--variant {args.variant} needs at least one --coref-model")
    if args.variant == "two-stage" and not args.zeros_model and not args.gold_empty_nodes:
        parser.error("--variant two-stage needs --zeros-model or --gold-empty-nodes")
    if args.variant == "single-stage" and (args.zeros_model or args.gold_empty_nodes):
        parser.error("--variant single-stage takes no --zeros-model or --gold-empty-nodes")
    return _predict(args, args.coref_model, args.zeros_model or [])


def _manifest_paths(path, corpus):
    data = json.loads(Path(path).read_text())
    corpora = data["corpora"]
    if corpus is None:
        if len(corpora) != 1:
            raise SelectionError(f"manifest covers {sorted(corpora)}; pick one with --corpus")
        corpus = next(iter(corpora))
    if corpus not in corpora:
        raise SelectionError(f"corpus {corpus!r} not in manifest ({sorted(corpora)})")
    return [r["path"] for r in corpora[corpus]]


def cmd_ensemble(args, parser):
    coref_models = _manifest_paths(args.manifest, args.corpus)
    zeros_models = _manifest_paths(args.zeros_manifest, args.zeros_corpus or args.corpus) if args.zeros_manifest \
        else (args.zeros_model or [])
    if args.variant == "two-stage" and not zeros_models and not args.gold_empty_nodes:
        parser.error("--variant two-stage needs --zeros-model, --zeros-manifest or --gold-empty-nodes")
    return _predict(args, coref_models, zeros_models)


def cmd_score(args):
    gold, pred = read_conllu(args.gold), read_conllu(args.pred)
    report = score_corpus(gold, pred, args.mode, args.singletons, not args.ignore_zero_order)
    if args.json:
        print(json.dumps(report.as_dict(), indent=1))
    else:
        print(format_report(report))
    print(f"{report.conll:.2f}")
    return 0


def cmd_select(args):
    pool = CheckpointPool.load(args.pool)
    mode = args.mode if args.mode != "ensemble" else f"ensemble({args.k})"
    text = manifest_json(select_checkpoints(pool, mode), mode)
    if args.output:
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


# --------------------------------------------------------------------------
# Parser


def _add_config_flags(p):
    p.add_argument("--config", help="JSON config file (flat keys, optional \"profile\")")
    p.add_argument("--profile", choices=sorted(pipeline.bundled_profiles()), help="base profile (default toy)")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
    p.add_argument("--seed", type=int, help="random seed")


def _add_training_flags(p):
    p.add_argument("--train", action="append", metavar="[NAME=]FILE", help="training corpus (repeatable)")
    p.add_argument("--dev", action="append", metavar="[NAME=]FILE", help="dev corpus (default: the training data)")
    p.add_argument("--out", required=True, help="checkpoint pool directory")
    p.add_argument("--model-id", default="m1", help="model id inside the pool")
    _add_config_flags(p)


def _add_predict_flags(p):
    p.add_argument("--variant", choices=("two-stage", "single-stage"), required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--zeros-model", action="append", help="empty-node checkpoint directory (repeatable)")
    p.add_argument("--gold-empty-nodes", action="store_true", help="two-stage: keep the input's empty nodes")
    p.add_argument("--threshold", type=float, help="empty-node existence threshold")


def build_parser():
    parser = argparse.ArgumentParser(prog="corpipe", description="Coreference resolution with empty nodes.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("convert", help="normalize a CorefUD file, optionally stripping annotations")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--strip-coreference", action="store_true")
    p.add_argument("--strip-empty-nodes", action="store_true")

    _add_training_flags(sub.add_parser("train-zeros", help="train the empty-node predictor"))
    p = sub.add_parser("train-coref", help="train a coreference model")
    p.add_argument("--variant", choices=("two-stage", "single-stage"), default="two-stage")
    _add_training_flags(p)

    p = sub.add_parser("predict", help="predict coreference with one or more checkpoints")
    _add_predict_flags(p)
    p.add_argument("--coref-model", action="append", help="coreference checkpoint directory (repeatable)")

    p = sub.add_parser("ensemble", help="predict with the checkpoints a selection manifest lists")
    _add_predict_flags(p)
    p.add_argument("--manifest", required=True, help="coreference selection manifest")
    p.add_argument("--corpus", help="manifest entry to use")
    p.add_argument("--zeros-manifest", help="empty-node selection manifest")
    p.add_argument("--zeros-corpus", help="entry of the empty-node manifest")

    p = sub.add_parser("score", help="score predictions against gold")
    p.add_argument("--gold", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--mode", choices=MODES, default="head")
    p.add_argument("--singletons", action="store_true", help="keep single-mention entities")
    p.add_argument("--ignore-zero-order", action="store_true",
                   help="match empty nodes on head and deprel only")
    p.add_argument("--json", action="store_true", help="machine-readable report")

    p = sub.add_parser("select-checkpoints", help="pick checkpoints from a pool by dev score")
    p.add_argument("--pool", required=True)
    p.add_argument("--mode", choices=("overall", "per-corpus", "ensemble"), default="overall")
    p.add_argument("-k", type=int, default=3, help="ensemble size")
    p.add_argument("--output")
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    sub = {a.dest: a for a in parser._actions if isinstance(a, argparse._SubParsersAction)}["command"]
    subparser = sub.choices[args.command]
    handlers = {
        "convert": lambda: cmd_convert(args),
        "train-zeros": lambda: cmd_train_zeros(args, subparser),
        "train-coref": lambda: cmd_train_coref(args, subparser),
        "predict": lambda: cmd_predict(args, subparser),
        "ensemble": lambda: cmd_ensemble(args, subparser),
        "score": lambda: cmd_score(args),
        "select-checkpoints": lambda: cmd_select(args),
    }
    try:
        return handlers[args.command]()
    except (ParseError, CorefUDValidationError, ScoringError, SelectionError, TrainingConfigError,
            pipeline.PipelineConfigError, OSError, argparse.ArgumentTypeError) as err:
        print(f"corpipe {args.command}: error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
