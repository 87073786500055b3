"""End-to-end flows and configuration profiles.

Configuration is a flat JSON object.  A ``profile`` key (or an ``inherits``
key inside the bundled profiles) names a base whose values are used for
every key not set explicitly.
"""

import json
import logging
from dataclasses import dataclass, field
from importlib import resources

from . import model as coref
from .corefud import Corpus, Document, insert_empty_nodes, strip_coreference, validate, without_empty_nodes
from .encoder import EncoderConfig, build_adapter
from .training import TrainConfig, ensemble_predict_empty_nodes, load_model
from .zeros import ZeroPredictor

logger = logging.getLogger(__name__)


class PipelineConfigError(ValueError):
    pass


# --------------------------------------------------------------------------
# Configuration profiles


def bundled_profiles():
    return json.loads(resources.files("corpipe").joinpath("data/profiles.json").read_text())


def resolve_profile(name, profiles=None, _seen=()):
    profiles = profiles if profiles is not None else bundled_profiles()
    if name not in profiles:
        raise PipelineConfigError(f"unknown profile {name!r}; known: {sorted(profiles)}")
    if name in _seen:
        raise PipelineConfigError(f"profile inheritance cycle through {name!r}")
    entry = dict(profiles[name])
    base = entry.pop("inherits", None)
    resolved = resolve_profile(base, profiles, _seen + (name,)) if base else {}
    resolved.update(entry)
    return resolved


def load_config(path=None, profile=None, overrides=None):
    """Flat settings: bundled profile, then the file, then ``overrides``."""
    user = {}
    if path:
        with open(path, encoding="utf-8") as f:
            user = json.load(f)
        if not isinstance(user, dict):
            raise PipelineConfigError(f"{path}: config must be a JSON object")
    name = profile or user.pop("profile", None) or "toy"
    user.pop("profile", None)
    config = resolve_profile(name)
    unknown = sorted(set(user) - set(config))
    if unknown:
        raise PipelineConfigError(f"unknown config keys: {unknown}")
    config.update(user)
    for key, value in (overrides or {}).items():
        if key not in config:
            raise PipelineConfigError(f"unknown config key {key!r}")
        config[key] = value
    config["profile"] = name
    return config


def encoder_config(config):
    return EncoderConfig(kind=config["encoder_kind"], hidden=config["encoder_hidden"],
                         layers=config["encoder_layers"], heads=config["encoder_heads"], ff=config["encoder_ff"],
                         dropout=config["encoder_dropout"], max_segment=config["max_segment"],
                         max_right=config["max_right"], model_name=config["encoder_model"])


def train_config(config, stage, model_id="m1"):
    return TrainConfig(epochs=config["epochs"], steps_per_epoch=config["steps_per_epoch"],
                       batch_size=config["batch_size"], peak_lr=config[f"{stage}_lr"],
                       warmup_fraction=config["warmup_fraction"], seed=config["seed"],
                       grad_clip=config["grad_clip"], model_id=model_id)


def build_coref_model(config, variant, tokenizer, deprels):
    adapter = build_adapter(encoder_config(config), tokenizer)
    model_config = coref.ModelConfig(variant=variant, hidden=config["head_hidden"], attention=config["attention"],
                                     dropout=config["dropout"], max_depth=config["max_depth"],
                                     max_opens=config["max_opens"], max_segment=config["max_segment"],
                                     max_right=config["max_right"])
    return coref.CorefModel(adapter, model_config, deprels)


def build_zero_predictor(config, tokenizer, deprels):
    adapter = build_adapter(encoder_config(config), tokenizer)
    return ZeroPredictor(adapter, deprels, cand_dim=config["zeros_cand_dim"], hidden=config["zeros_hidden"],
                         attention=config["zeros_attention"], dropout=config["zeros_dropout"],
                         threshold=config["zeros_threshold"], max_segment=config["max_segment"])


# --------------------------------------------------------------------------
# Flows


@dataclass
class PipelineConfig:
    variant: str
    coref_models: list = field(default_factory=list)
    zeros_models: list = field(default_factory=list)
    gold_empty_nodes: bool = False
    threshold: float = None

    def __post_init__(self):
        if self.variant not in coref.VARIANTS:
            raise PipelineConfigError(f"unknown variant {self.variant!r}")
        if not self.coref_models:
            raise PipelineConfigError("a coreference model is required")
        if self.variant == "two-stage" and not self.zeros_models and not self.gold_empty_nodes:
            raise PipelineConfigError("two-stage prediction requires an empty-node model (or gold empty nodes)")
        if self.variant == "single-stage" and (self.zeros_models or self.gold_empty_nodes):
            raise PipelineConfigError("single-stage prediction predicts empty nodes itself; no empty-node model")


def _load_all(paths):
    try:
        return [load_model(p) for p in paths]
    except FileNotFoundError as err:
        raise PipelineConfigError(str(err)) from err


def _load_coref(paths, variant):
    members = _load_all(paths)
    for path, m in zip(paths, members):
        if not isinstance(m, coref.CorefModel) or m.config.variant != variant:
            raise PipelineConfigError(f"{path} is not a {variant} coreference model")
    return members


def add_empty_nodes(doc: Document, zero_members) -> Document:
    """Stage 1: ``doc`` without coreference, its empty nodes replaced by predicted ones."""
    bare = without_empty_nodes(doc)
    if not bare.sentences:
        return bare
    specs = ensemble_predict_empty_nodes(zero_members, bare.sentences)
    sentences = [insert_empty_nodes(s, sp) for s, sp in zip(bare.sentences, specs)]
    return Document(doc.doc_id, sentences, [], doc.entity_columns)


def two_stage(corpus: Corpus, coref_members, zero_members=None, gold_empty_nodes=False) -> Corpus:
    documents = []
    for doc in corpus.documents:
        staged = strip_coreference(doc) if gold_empty_nodes else add_empty_nodes(doc, zero_members)
        documents.append(coref.predict_document(coref_members, staged, "two-stage"))
    return _checked(Corpus(documents))


def single_stage(corpus: Corpus, coref_members) -> Corpus:
    documents = [coref.predict_document(coref_members, without_empty_nodes(doc), "single-stage")
                 for doc in corpus.documents]
    return _checked(Corpus(documents))


def _checked(corpus):
    problems = validate(corpus)
    for p in problems:
        logger.warning("prediction fails validation: %s", p)
    return corpus


def _apply_threshold(members, threshold):
    if threshold is not None:
        for m in members:
            m.threshold = threshold


def run_two_stage(corpus: Corpus, config: PipelineConfig) -> Corpus:
    if config.variant != "two-stage":
        raise PipelineConfigError("run_two_stage needs a two-stage configuration")
    coref_members = _load_coref(config.coref_models, "two-stage")
    zero_members = None if config.gold_empty_nodes else _load_all(config.zeros_models)
    if zero_members:
        _apply_threshold(zero_members, config.threshold)
    return two_stage(corpus, coref_members, zero_members, config.gold_empty_nodes)


def run_single_stage(corpus: Corpus, config: PipelineConfig) -> Corpus:
    if config.variant != "single-stage":
        raise PipelineConfigError("run_single_stage needs a single-stage configuration")
    return single_stage(corpus, _load_coref(config.coref_models, "single-stage"))


def run(corpus: Corpus, config: PipelineConfig) -> Corpus:
    return run_two_stage(corpus, config) if config.variant == "two-stage" else run_single_stage(corpus, config)
