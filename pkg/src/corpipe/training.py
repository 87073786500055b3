"""Corpus mixing, learning-rate schedule, checkpoints, selection and training loops."""

import json
import logging
import math
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import model as coref
from .corefud import Corpus
from .encoder import EncoderConfig, SubwordTokenizer, build_adapter
from .scorer import score_corpus
from .zeros import ZeroPredictor, evaluate_empty_nodes, gold_empty_nodes, spec_triples

logger = logging.getLogger(__name__)


class TrainingConfigError(ValueError):
    pass


class SelectionError(ValueError):
    pass


# --------------------------------------------------------------------------
# Corpus mixing


@dataclass
class MixSpec:
    names: list
    word_counts: list
    weights: np.ndarray

    @classmethod
    def from_counts(cls, counts: dict):
        if not counts:
            raise TrainingConfigError("no corpora to mix")
        empty = [name for name, c in counts.items() if c <= 0]
        if empty:
            raise TrainingConfigError(f"empty corpora cannot be mixed: {empty}")
        names = list(counts)
        raw = np.sqrt(np.array([counts[n] for n in names], dtype=np.float64))
        return cls(names, [counts[n] for n in names], raw / raw.sum())

    @classmethod
    def from_corpora(cls, corpora: dict):
        return cls.from_counts({name: sum(len(s.words()) for s in c.sentences()) for name, c in corpora.items()})

    def probability(self, name):
        return float(self.weights[self.names.index(name)])


def sample_corpora(mix: MixSpec, rng, size):
    """Indices into ``mix.names`` drawn from the mixing distribution."""
    return rng.choice(len(mix.names), size=size, p=mix.weights)


def sample_batch(mix: MixSpec, rng, items: dict, batch_size):
    """``batch_size`` pairs ``(corpus name, item)``: corpus by mix, item uniform within it."""
    out = []
    for c in sample_corpora(mix, rng, batch_size):
        name = mix.names[int(c)]
        pool = items[name]
        if not pool:
            raise TrainingConfigError(f"corpus {name!r} has no training items")
        out.append((name, pool[int(rng.integers(len(pool)))]))
    return out


# --------------------------------------------------------------------------
# Learning-rate schedule


@dataclass
class Schedule:
    peak_lr: float
    total_steps: int
    warmup_steps: int

    @classmethod
    def with_warmup_fraction(cls, peak_lr, total_steps, fraction=0.1):
        return cls(peak_lr, total_steps, int(round(fraction * total_steps)))

    def __post_init__(self):
        if self.total_steps <= 0 or not 0 <= self.warmup_steps <= self.total_steps or self.peak_lr < 0:
            raise TrainingConfigError(f"invalid schedule {self}")


def lr_at(step, schedule: Schedule):
    """Linear warmup from 0 to the peak, then cosine decay to 0 at ``total_steps``."""
    if not 0 <= step <= schedule.total_steps:
        raise ValueError(f"step {step} outside [0, {schedule.total_steps}]")
    if step < schedule.warmup_steps:
        return schedule.peak_lr * step / schedule.warmup_steps
    remaining = schedule.total_steps - schedule.warmup_steps
    if remaining == 0:
        return schedule.peak_lr
    progress = (step - schedule.warmup_steps) / remaining
    return schedule.peak_lr * 0.5 * (1.0 + math.cos(math.pi * progress))


def torch_scheduler(optimizer, schedule: Schedule):
    peak = schedule.peak_lr or 1.0
    return torch.optim.lr_scheduler.LambdaLR(
        optimizer, lambda step: lr_at(min(step, schedule.total_steps), schedule) / peak)


# --------------------------------------------------------------------------
# Saving and loading models


def _model_config(model):
    if isinstance(model, ZeroPredictor):
        return {"kind": "zeros", "deprels": model.deprels, "hparams": model.hparams,
                "encoder": model.adapter.describe()}
    return {"kind": "coref", "model": asdict(model.config), "deprels": model.deprels,
            "encoder": model.adapter.describe()}


def _adapter_from(desc):
    config = EncoderConfig(**desc["config"])
    tokenizer = SubwordTokenizer.from_dict(desc["tokenizer"]) if "tokenizer" in desc else None
    return build_adapter(config, tokenizer)


def build_from_config(config: dict):
    adapter = _adapter_from(config["encoder"])
    if config["kind"] == "zeros":
        return ZeroPredictor(adapter, config["deprels"], **config["hparams"])
    if config["kind"] == "coref":
        return coref.CorefModel(adapter, coref.ModelConfig(**config["model"]), config["deprels"])
    raise TrainingConfigError(f"unknown model kind {config['kind']!r}")


def save_model(model, directory, scores=None):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    torch.save(model.state_dict(), directory / "params.pt")
    (directory / "config.json").write_text(json.dumps(_model_config(model), indent=1) + "\n")
    if scores is not None:
        (directory / "scores.json").write_text(json.dumps(scores, indent=1, sort_keys=True) + "\n")


def load_model(directory):
    directory = Path(directory)
    config_path = directory / "config.json"
    if not config_path.exists():
        raise FileNotFoundError(f"no model at {directory}")
    model = build_from_config(json.loads(config_path.read_text()))
    model.load_state_dict(torch.load(directory / "params.pt", weights_only=True))
    model.eval()
    return model


# --------------------------------------------------------------------------
# Checkpoint pool and selection


@dataclass
class CheckpointRecord:
    model_id: str
    epoch: int
    scores: dict
    path: str = ""

    @property
    def mean_score(self):
        return sum(self.scores.values()) / len(self.scores) if self.scores else 0.0

    def as_dict(self):
        return {"model_id": self.model_id, "epoch": self.epoch, "path": self.path, "scores": self.scores}


_EPOCH_DIR = re.compile(r"^epoch-(\d+)$")


@dataclass
class CheckpointPool:
    records: list = field(default_factory=list)

    def add(self, record: CheckpointRecord):
        self.records.append(record)
        return record

    def corpora(self):
        return sorted({c for r in self.records for c in r.scores})

    def check_complete(self):
        if not self.records:
            raise SelectionError("checkpoint pool is empty")
        corpora = set(self.corpora())
        for r in self.records:
            missing = corpora - set(r.scores)
            if missing:
                raise SelectionError(f"{r.model_id} epoch {r.epoch} lacks scores for {sorted(missing)}")

    def save(self, root, model_id, epoch, model, scores):
        path = Path(root) / model_id / f"epoch-{epoch}"
        save_model(model, path, scores)
        return self.add(CheckpointRecord(model_id, epoch, dict(scores), str(path)))

    @classmethod
    def load(cls, root):
        pool = cls()
        root = Path(root)
        for model_dir in sorted(p for p in root.iterdir() if p.is_dir()):
            for epoch_dir in sorted(p for p in model_dir.iterdir() if p.is_dir()):
                match = _EPOCH_DIR.match(epoch_dir.name)
                scores_path = epoch_dir / "scores.json"
                if not match or not scores_path.exists():
                    continue
                pool.add(CheckpointRecord(model_dir.name, int(match.group(1)),
                                          json.loads(scores_path.read_text()), str(epoch_dir)))
        return pool


def _rank(records, score):
    """Best first: higher score, then earlier model id, then later epoch."""
    return sorted(records, key=lambda r: (-score(r), r.model_id, -r.epoch))


def parse_mode(mode, k=None):
    """``"overall"``, ``"per-corpus"``, ``"ensemble"`` (with ``k``) or ``"ensemble(k)"``."""
    match = re.fullmatch(r"ensemble[(:](\d+)\)?", mode)
    if match:
        return "ensemble", int(match.group(1))
    if mode == "ensemble":
        if k is None:
            raise SelectionError("ensemble selection needs k")
        return mode, int(k)
    if mode in ("overall", "per-corpus"):
        return mode, None
    raise SelectionError(f"unknown selection mode {mode!r}")


def select_checkpoints(pool: CheckpointPool, mode, k=None) -> dict:
    """Manifest ``{corpus: [CheckpointRecord, ...]}`` for the requested mode.

    ``overall`` maps every corpus to the checkpoint with the best mean dev
    score; ``per-corpus`` to its own best; ``ensemble`` to its top ``k``.
    """
    mode, k = parse_mode(mode, k)
    pool.check_complete()
    corpora = pool.corpora()
    if mode == "overall":
        best = _rank(pool.records, lambda r: r.mean_score)[0]
        return {c: [best] for c in corpora}
    if mode == "per-corpus":
        return {c: _rank(pool.records, lambda r, c=c: r.scores[c])[:1] for c in corpora}
    if k <= 0 or k > len(pool.records):
        raise SelectionError(f"cannot select {k} checkpoints from a pool of {len(pool.records)}")
    return {c: _rank(pool.records, lambda r, c=c: r.scores[c])[:k] for c in corpora}


def manifest_json(selection: dict, mode) -> str:
    data = {"mode": mode, "corpora": {c: [r.as_dict() for r in rs] for c, rs in selection.items()}}
    return json.dumps(data, indent=1, sort_keys=True) + "\n"


# --------------------------------------------------------------------------
# Ensembling


def ensemble_predict(members, doc, variant=None):
    """Predicted document from averaged per-head probabilities of ``members``."""
    return coref.predict_document(list(members), doc, variant)


@torch.no_grad()
def ensemble_predict_empty_nodes(members, sentences):
    """Empty nodes per sentence from averaged existence/order/deprel probabilities."""
    from .zeros import decode_candidates
    members = list(members)
    lead = members[0]
    for m in members[1:]:
        if m.deprels != lead.deprels:
            raise coref.EnsembleError("ensemble members differ in deprel vocabularies")
    for m in members:
        m.eval()
    words = [m.sentence_words(sentences) for m in members]
    results = []
    for i, sentence in enumerate(sentences):
        if len(words[0][i]) == 0:
            results.append([])
            continue
        probs = [m.probabilities(sentence, w[i]) for m, w in zip(members, words)]
        exist, order, deprel = (coref.average_distributions([p[h].numpy() for p in probs]) for h in range(3))
        results.append(decode_candidates(exist, order, deprel, lead.deprels, lead.threshold))
    return results


# --------------------------------------------------------------------------
# Training loops


@dataclass
class TrainConfig:
    epochs: int = 10
    steps_per_epoch: int = 50
    batch_size: int = 4
    peak_lr: float = 1e-3
    warmup_fraction: float = 0.1
    seed: int = 42
    grad_clip: float = 1.0
    model_id: str = "m1"


def _optimizer(model, config: TrainConfig):
    optimizer = torch.optim.AdamW(model.parameters(), lr=config.peak_lr, weight_decay=0.0)
    schedule = Schedule.with_warmup_fraction(config.peak_lr, config.epochs * config.steps_per_epoch,
                                             config.warmup_fraction)
    return optimizer, torch_scheduler(optimizer, schedule)


def _step(model, optimizer, scheduler, loss, config):
    optimizer.zero_grad()
    loss.backward()
    if config.grad_clip:
        torch.nn.utils.clip_grad_norm_(model.parameters(), config.grad_clip)
    optimizer.step()
    scheduler.step()


def evaluate_coref(model_or_members, corpus: Corpus, variant) -> float:
    """CoNLL head-match score of predictions on ``corpus``."""
    members = model_or_members if isinstance(model_or_members, (list, tuple)) else [model_or_members]
    pred = Corpus([coref.predict_document(members, coref.model_input(d, variant), variant) for d in corpus.documents])
    return score_corpus(corpus, pred, "head").conll


def evaluate_zeros(predictor, corpus: Corpus) -> float:
    sentences = list(corpus.sentences())
    predicted = [spec_triples(p) for p in predictor.predict(sentences)]
    return 100.0 * evaluate_empty_nodes([gold_empty_nodes(s) for s in sentences], predicted)[2]


def train_coref(model, train: dict, config: TrainConfig, dev: dict = None, checkpoints=None, pool=None):
    """Train on sentences sampled across ``train`` corpora; returns per-epoch history.

    After every epoch the dev corpora (if any) are scored and, with
    ``checkpoints`` set, the model is saved into the pool.
    """
    torch.manual_seed(config.seed)
    rng = np.random.default_rng(config.seed)
    variant = model.config.variant
    mix = MixSpec.from_corpora(train)
    prepared, items = {}, {}
    for name, corpus in train.items():
        prepared[name] = []
        for doc in corpus.documents:
            inputs = coref.prepare_document(doc, variant)
            prepared[name].append((inputs, model.targets(inputs)))
        items[name] = [(d, s) for d, doc in enumerate(corpus.documents) for s in range(len(doc.sentences))]
    optimizer, scheduler = _optimizer(model, config)
    history = []
    for epoch in range(1, config.epochs + 1):
        model.train()
        running = 0.0
        for _ in range(config.steps_per_epoch):
            batch = sample_batch(mix, rng, items, config.batch_size)
            loss = 0.0
            for name, (d, s) in batch:
                inputs, gold = prepared[name][d]
                loss = loss + model.sentence_loss(inputs, gold, s)[0]
            loss = loss / len(batch)
            _step(model, optimizer, scheduler, loss, config)
            running += float(loss.detach())
        record = {"epoch": epoch, "loss": running / config.steps_per_epoch}
        if dev:
            record["scores"] = {name: evaluate_coref(model, c, variant) for name, c in dev.items()}
            if checkpoints is not None and pool is not None:
                pool.save(checkpoints, config.model_id, epoch, model, record["scores"])
        logger.info("epoch %d %s", epoch, record)
        history.append(record)
    return history


def train_zeros(predictor, train: dict, config: TrainConfig, dev: dict = None, checkpoints=None, pool=None):
    torch.manual_seed(config.seed)
    rng = np.random.default_rng(config.seed)
    mix = MixSpec.from_corpora(train)
    items = {name: list(c.sentences()) for name, c in train.items()}
    optimizer, scheduler = _optimizer(predictor, config)
    history = []
    for epoch in range(1, config.epochs + 1):
        predictor.train()
        running = 0.0
        for _ in range(config.steps_per_epoch):
            batch = [s for _, s in sample_batch(mix, rng, items, config.batch_size)]
            loss, _ = predictor.loss(batch)
            _step(predictor, optimizer, scheduler, loss, config)
            running += float(loss.detach())
        record = {"epoch": epoch, "loss": running / config.steps_per_epoch}
        if dev:
            record["scores"] = {name: evaluate_zeros(predictor, c) for name, c in dev.items()}
            if checkpoints is not None and pool is not None:
                pool.save(checkpoints, config.model_id, epoch, predictor, record["scores"])
        logger.info("epoch %d %s", epoch, record)
        history.append(record)
    return history


def corpus_vocabulary(corpora):
    """Tokenizer and empty-node deprel set built from training corpora."""
    words, deprels = [], set()
    for corpus in corpora:
        for sentence in corpus.sentences():
            words.extend(n.form for n in sentence.words())
            deprels.update(n.dependency()[1] for n in sentence.empty_nodes())
    return SubwordTokenizer.build(words), deprels
