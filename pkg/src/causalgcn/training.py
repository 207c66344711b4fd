"""Optimizer and the two training regimes.

Supervised training minimizes the task loss on labeled sentences. Adversarial
training adds a domain classifier fed through a gradient-reversal node, so a
single descent step trains the domain head to separate the domains while the
encoder receives the negated signal and learns to confuse it.

Randomness comes from named streams keyed by the config seed and the epoch:
``shuffle/<e>`` and ``dropout/<e>`` for source data, ``target_shuffle/<e>``
and ``target_dropout/<e>`` for target data. Keeping the target streams apart
makes an adversarial run with lambda=0 replay the supervised run exactly.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .encoder import GceModel, ModelConfig, Vocab, encode_batch
from .eval import MetricsReport, classification_prf, token_prf
from .heads import classify_logits, crf_nll_batch, decode_batch, domain_logits, emissions
from .rng import stream

log = logging.getLogger(__name__)

TASKS = ("identify", "localise")


class ConfigError(ValueError):
    pass


class TaskDataError(ValueError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 50
    lr: float = 2e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    lr_decay: float = 0.9
    dropout: float = 0.5
    grl_lambda: float = 1.0
    grl_warmup: int = 0
    seed: int = 1
    train_ratio: float = 0.6
    dev_ratio: float = 0.2
    test_ratio: float = 0.2
    patience: int = 0
    d_emb: int = 300
    hidden: int = 100
    gcn_layers: int = 2
    ffnn_hidden: int = 100
    fusion_width: int = 100
    freeze_embeddings: bool = False

    def __post_init__(self):
        self.validate()

    def validate(self):
        if int(self.epochs) < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if int(self.batch_size) < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        for name in ("lr", "lr_decay", "beta1", "beta2", "train_ratio", "dev_ratio", "test_ratio"):
            v = getattr(self, name)
            if not 0.0 < v <= 1.0:
                raise ConfigError(f"{name} must be in (0, 1], got {v}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if not math.isclose(self.train_ratio + self.dev_ratio + self.test_ratio, 1.0, abs_tol=1e-9):
            raise ConfigError("split ratios must sum to 1")
        if self.grl_lambda < 0 or self.grl_warmup < 0 or self.patience < 0:
            raise ConfigError("grl_lambda, grl_warmup and patience must be non-negative")
        if self.gcn_layers < 0 or min(self.d_emb, self.hidden, self.ffnn_hidden, self.fusion_width) < 1:
            raise ConfigError("layer sizes must be positive (gcn_layers may be 0)")

    @property
    def ratios(self):
        return (self.train_ratio, self.dev_ratio, self.test_ratio)

    def model_config(self) -> ModelConfig:
        return ModelConfig(self.d_emb, self.hidden, self.gcn_layers, self.ffnn_hidden,
                           self.fusion_width, self.dropout, self.freeze_embeddings)

    def lambda_at(self, epoch: int) -> float:
        if self.grl_warmup <= 0:
            return self.grl_lambda
        return self.grl_lambda * min(1.0, epoch / self.grl_warmup)

    @classmethod
    def from_mapping(cls, values: dict) -> "TrainConfig":
        known = {f.name: f for f in fields(cls)}
        kwargs = {}
        for key, raw in values.items():
            if key not in known:
                raise ConfigError(f"unknown config key {key!r}")
            default = known[key].default
            try:
                if isinstance(default, bool):
                    kwargs[key] = raw if isinstance(raw, bool) else str(raw).lower() in ("1", "true", "yes")
                else:
                    kwargs[key] = type(default)(raw)
            except (TypeError, ValueError):
                raise ConfigError(f"config key {key!r}: cannot parse {raw!r}") from None
        return cls(**kwargs)


# ---------------------------------------------------------------------------
# optimizer


def adamax_step(params: dict, grads: dict, state: dict, t: int, lr: float,
                beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> bool:
    """In-place Adamax update of numpy arrays; returns False (and skips) on non-finite grads."""
    if t < 1:
        raise ValueError("step counter starts at 1")
    for name, g in grads.items():
        if params[name].shape != g.shape:
            raise ad.ShapeError(f"{name}: gradient {g.shape} vs parameter {params[name].shape}")
        if not np.all(np.isfinite(g)):
            log.warning("non-finite gradient in %s at step %d; update skipped", name, t)
            return False
    step = lr / (1.0 - beta1 ** t)
    for name, g in grads.items():
        m, u = state.get(name, (None, None))
        if m is None:
            m, u = np.zeros_like(g), np.zeros_like(g)
        m = beta1 * m + (1.0 - beta1) * g
        u = np.maximum(beta2 * u, np.abs(g))
        params[name] -= step * m / (u + eps)
        state[name] = (m, u)
    return True


class Adamax:
    def __init__(self, params: dict[str, Tensor], lr=2e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.state: dict = {}
        self.t = 0
        self.skipped = 0

    def step(self) -> bool:
        self.t += 1
        ok = adamax_step(
            {k: p.value for k, p in self.params.items()},
            {k: p.grad for k, p in self.params.items()},
            self.state, self.t, self.lr, self.beta1, self.beta2, self.eps,
        )
        if not ok:
            self.skipped += 1
        return ok


def lr_decay_check(history: Sequence[float], lr: float, rate: float = 0.9) -> float:
    """Decay when the newest dev F1 does not beat every earlier one."""
    if not history:
        raise ValueError("empty dev history")
    if len(history) == 1:
        return lr
    return lr * rate if history[-1] <= max(history[:-1]) else lr


# ---------------------------------------------------------------------------
# losses and prediction


def check_task_data(data, task: str):
    if task not in TASKS:
        raise TaskDataError(f"unknown task {task!r}; expected one of {TASKS}")
    for i, s in enumerate(data):
        if task == "identify" and s.label is None:
            raise TaskDataError(f"sentence {i} has no label; identification needs labels")
        if task == "localise" and s.tags is None:
            raise TaskDataError(f"sentence {i} has no tags; localisation needs tag sequences")


def task_loss(model: GceModel, enc, sentences, task: str) -> Tensor:
    if task == "identify":
        y = np.array([1.0 if s.is_causal else 0.0 for s in sentences])
        return ad.mean_all(ad.bce_with_logits(classify_logits(model, enc), y))
    golds = [model.tagset.encode(s.tags) for s in sentences]
    return crf_nll_batch(emissions(model, enc), model.params["crf.T"], golds, enc.batch.lengths,
                         model.tagset.transition_mask())


def predict_labels(model: GceModel, data, batch_size: int = 256) -> list[str]:
    out = []
    for i in range(0, len(data), batch_size):
        logits = classify_logits(model, encode_batch(model, data[i:i + batch_size])).value
        out += ["causal" if z > 0 else "non-causal" for z in logits]
    return out


def predict_tags(model: GceModel, data, batch_size: int = 256) -> list[list[str]]:
    out = []
    for i in range(0, len(data), batch_size):
        enc = encode_batch(model, data[i:i + batch_size])
        out += [model.tagset.decode(p) for p in decode_batch(model, enc)]
    return out


def evaluate(model: GceModel, data, task: str) -> MetricsReport:
    if task == "identify":
        return classification_prf(predict_labels(model, data), [s.label for s in data])
    return token_prf(predict_tags(model, data), [s.tags for s in data])


# ---------------------------------------------------------------------------
# epochs


@dataclass
class EpochStats:
    epoch: int
    task_loss: float
    dev_p: float
    dev_r: float
    dev_f1: float
    lr: float
    domain_acc: float | None = None
    skipped_steps: int = 0

    def to_json(self) -> str:
        d = asdict(self)
        if d["domain_acc"] is None:
            del d["domain_acc"]
        return json.dumps(d)


def _batches(n: int, size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    return [order[i:i + size] for i in range(0, n, size)]


def _dev_report(model, dev, task):
    if not dev:
        return MetricsReport(0, 0, 0)
    return evaluate(model, dev, task)


def gce_train_epoch(model: GceModel, data, task: str, cfg: TrainConfig, opt: Adamax,
                    epoch: int = 1, dev=None) -> EpochStats:
    check_task_data(data, task)
    if dev:
        check_task_data(dev, task)
    shuffle = stream(cfg.seed, f"shuffle/{epoch}")
    drop = stream(cfg.seed, f"dropout/{epoch}")
    losses, skipped = [], 0
    for idx in _batches(len(data), cfg.batch_size, shuffle):
        sents = [data[i] for i in idx]
        model.zero_grad()
        enc = encode_batch(model, sents, training=True, rng=drop)
        loss = task_loss(model, enc, sents, task)
        ad.backward(loss)
        skipped += not opt.step()
        losses.append(loss.item())
    rep = _dev_report(model, dev, task)
    return EpochStats(epoch, float(np.mean(losses)), rep.precision, rep.recall, rep.f1, opt.lr,
                      skipped_steps=skipped)


@dataclass
class AceBatch:
    source: list
    target: list = field(default_factory=list)


def ace_objective(model: GceModel, batch: AceBatch, task: str, cfg: TrainConfig, lam: float | None = None,
                  rng_source=None, rng_target=None, training: bool = True, parts: dict | None = None,
                  reverse: bool = True) -> Tensor:
    """Task loss on source + domain cross-entropy on source (1) and target (0).

    Encoder features reach the domain head through grad_reverse(lam). With
    ``reverse=False`` the reversal is replaced by identity (for comparisons).
    ``parts`` receives the two terms and the domain accuracy when given.
    """
    if not batch.source:
        raise TaskDataError("adversarial batch has no source sentences")
    check_task_data(batch.source, task)
    lam = cfg.grl_lambda if lam is None else lam
    rev = lam if reverse else None
    enc_s = encode_batch(model, batch.source, training=training, rng=rng_source)
    t_loss = task_loss(model, enc_s, batch.source, task)
    logits = [domain_logits(model, enc_s, reverse=rev)]
    labels = [np.ones(len(batch.source))]
    if batch.target:
        enc_t = encode_batch(model, batch.target, training=training, rng=rng_target)
        logits.append(domain_logits(model, enc_t, reverse=rev))
        labels.append(np.zeros(len(batch.target)))
    z = ad.concat(logits, axis=0)
    y = np.concatenate(labels)
    d_loss = ad.mean_all(ad.bce_with_logits(z, y))
    if parts is not None:
        parts["task"] = t_loss.item()
        parts["domain"] = d_loss.item()
        parts["domain_acc"] = float(np.mean((z.value > 0) == (y > 0.5)))
    return ad.add(t_loss, d_loss)


def ace_train_epoch(model: GceModel, source_data, target_data, task: str, cfg: TrainConfig, opt: Adamax,
                    epoch: int = 1, dev=None) -> EpochStats:
    if not source_data or not target_data:
        raise TaskDataError("adversarial training needs non-empty source and target data")
    check_task_data(source_data, task)
    if dev:
        check_task_data(dev, task)
    shuffle = stream(cfg.seed, f"shuffle/{epoch}")
    drop = stream(cfg.seed, f"dropout/{epoch}")
    t_order = stream(cfg.seed, f"target_shuffle/{epoch}").permutation(len(target_data))
    t_drop = stream(cfg.seed, f"target_dropout/{epoch}")
    lam = cfg.lambda_at(epoch)
    losses, accs, skipped, cursor = [], [], 0, 0
    for idx in _batches(len(source_data), cfg.batch_size, shuffle):
        src = [source_data[i] for i in idx]
        tgt = []
        for _ in range(len(src)):
            tgt.append(target_data[t_order[cursor % len(t_order)]])
            cursor += 1
        model.zero_grad()
        parts = {}
        loss = ace_objective(model, AceBatch(src, tgt), task, cfg, lam, drop, t_drop, parts=parts)
        ad.backward(loss)
        skipped += not opt.step()
        losses.append(parts["task"])
        accs.append(parts["domain_acc"])
    rep = _dev_report(model, dev, task)
    return EpochStats(epoch, float(np.mean(losses)), rep.precision, rep.recall, rep.f1, opt.lr,
                      domain_acc=float(np.mean(accs)), skipped_steps=skipped)


# ---------------------------------------------------------------------------
# full runs


@dataclass
class TrainResult:
    model: GceModel
    history: list
    best_epoch: int


def build_model(vocab: Vocab, cfg: TrainConfig) -> GceModel:
    return GceModel.initialize(vocab, cfg.model_config(), seed=cfg.seed)


def _fit(model, cfg, run_epoch: Callable[[int], EpochStats], log_path=None, on_epoch=None) -> TrainResult:
    opt = Adamax(model.trainable(), cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
    history, f1s = [], []
    best_f1, best_state, best_epoch, since = -1.0, model.snapshot(), 0, 0
    fh = open(log_path, "w", encoding="utf-8", newline="\n") if log_path else None
    try:
        for epoch in range(1, cfg.epochs + 1):
            stats = run_epoch(epoch, opt)
            history.append(stats)
            f1s.append(stats.dev_f1)
            if fh:
                fh.write(stats.to_json() + "\n")
                fh.flush()
            if on_epoch:
                on_epoch(stats)
            if stats.dev_f1 > best_f1:
                best_f1, best_state, best_epoch, since = stats.dev_f1, model.snapshot(), epoch, 0
            else:
                since += 1
            opt.lr = lr_decay_check(f1s, opt.lr, cfg.lr_decay)
            if cfg.patience and since >= cfg.patience:
                break
    finally:
        if fh:
            fh.close()
    model.restore(best_state)
    return TrainResult(model, history, best_epoch)


def train_gce(train, dev, task: str, cfg: TrainConfig, model: GceModel | None = None,
              log_path=None, on_epoch=None) -> TrainResult:
    """Supervised training; keeps the parameters of the best dev-F1 epoch."""
    check_task_data(train, task)
    model = model or build_model(Vocab.build(train), cfg)
    return _fit(model, cfg, lambda e, opt: gce_train_epoch(model, train, task, cfg, opt, e, dev), log_path, on_epoch)


def train_ace(source, target, dev, task: str, cfg: TrainConfig, model: GceModel | None = None,
              log_path=None, on_epoch=None) -> TrainResult:
    """Adversarial training; model selection uses source dev F1 only."""
    check_task_data(source, task)
    model = model or build_model(Vocab.build(list(source) + list(target)), cfg)
    return _fit(model, cfg, lambda e, opt: ace_train_epoch(model, source, target, task, cfg, opt, e, dev),
                log_path, on_epoch)
