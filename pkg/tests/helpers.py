"""Small shared fixtures: a tiny model and a handful of 4-token sentences."""

import numpy as np

from causalgcn.data import Sentence
from causalgcn.encoder import GceModel, ModelConfig, Vocab
from causalgcn.graph import ROOT
from causalgcn.training import TrainConfig

TINY = dict(d_emb=4, hidden=3, gcn_layers=2, ffnn_hidden=5, fusion_width=4)

FOUR = [
    Sentence(["fever", "causes", "rash", "."], [1, ROOT, 1, 1], "causal",
             ["S-C", "O", "S-E", "O"], "medical"),
    Sentence(["cough", "and", "pain", "observed"], [3, 2, 0, ROOT], "non-causal",
             ["O", "O", "O", "O"], "medical"),
    Sentence(["bad", "flu", "causes", "fatigue"], [1, 2, ROOT, 2], "causal",
             ["B-C", "E-C", "O", "S-E"], "medical"),
]
TARGET = [
    Sentence(["bonds", "causes", "yields", "."], [1, ROOT, 1, 1], domain="financial"),
    Sentence(["loans", "and", "tariffs", "observed"], [3, 2, 0, ROOT], domain="financial"),
]


def tiny_vocab():
    return Vocab.build(FOUR + TARGET)


def tiny_model(seed=3, **overrides):
    cfg = ModelConfig(**{**TINY, "dropout": 0.5, **overrides})
    return GceModel.initialize(tiny_vocab(), cfg, seed=seed)


def tiny_train_config(**overrides):
    return TrainConfig(**{**TINY, "batch_size": 2, "epochs": 3, "seed": 5, **overrides})


def perturb(model, scale=0.3, seed=0):
    """Jitter every parameter so no gradient is structurally zero."""
    rng = np.random.default_rng(seed)
    for p in model.params.values():
        p.value += rng.normal(scale=scale, size=p.shape)
    return model
