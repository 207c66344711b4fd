"""Sentence encoder: embeddings -> BiLSTM -> GCN stack -> max pooling -> fusion FFNN.

All sentences in a batch are padded to the longest one. Padding is kept out of
the computation by masks: LSTM states freeze past a sentence's end, padded
columns of the adjacency are zero, and padded rows never win the max pool.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .graph import AdjMatrix, build_adjacency, validate_tree
from .rng import stream
from .tagging import DEFAULT_TAGSET, TagSet

UNK = "<unk>"
FORMAT_VERSION = 1
_PAD_FILL = -1e30


class CheckpointError(ValueError):
    pass


class Vocab:
    """Token to row index; row 0 is the unknown token."""

    def __init__(self, tokens: Iterable[str] = ()):
        self.itos = [UNK]
        self.stoi = {UNK: 0}
        for tok in tokens:
            self.add(tok)

    def add(self, tok: str) -> int:
        if tok not in self.stoi:
            self.stoi[tok] = len(self.itos)
            self.itos.append(tok)
        return self.stoi[tok]

    @classmethod
    def build(cls, sentences, min_count: int = 1) -> "Vocab":
        counts = Counter(tok for s in sentences for tok in s.tokens)
        # first-seen order keeps the vocabulary a pure function of the corpus order
        seen = dict.fromkeys(tok for s in sentences for tok in s.tokens)
        return cls(tok for tok in seen if counts[tok] >= min_count and tok != UNK)

    def __len__(self):
        return len(self.itos)

    def __contains__(self, tok):
        return tok in self.stoi

    def lookup(self, tokens: Sequence[str]) -> np.ndarray:
        return np.array([self.stoi.get(t, 0) for t in tokens], dtype=np.int64)


@dataclass
class ModelConfig:
    d_emb: int = 300
    hidden: int = 100
    gcn_layers: int = 2
    ffnn_hidden: int = 100
    fusion_width: int = 100
    dropout: float = 0.5
    freeze_embeddings: bool = False

    @property
    def gcn_width(self) -> int:
        return 2 * self.hidden


class GceModel:
    """Named parameter collection plus vocabulary and tag inventory."""

    def __init__(self, vocab: Vocab, config: ModelConfig | None = None, tagset: TagSet = DEFAULT_TAGSET):
        self.vocab = vocab
        self.config = config or ModelConfig()
        self.tagset = tagset
        self.params: dict[str, Tensor] = {}
        self.metadata: dict = {}

    # -- construction

    @classmethod
    def initialize(cls, vocab: Vocab, config: ModelConfig | None = None, seed: int = 0,
                   tagset: TagSet = DEFAULT_TAGSET) -> "GceModel":
        model = cls(vocab, config, tagset)
        shapes = model.param_shapes()
        for name, shape in shapes.items():
            model.params[name] = ad.parameter(_init_param(name, shape, _fan_in(name, shapes), seed))
        return model

    def param_shapes(self) -> dict[str, tuple]:
        c = self.config
        h, g, f = c.hidden, c.gcn_width, c.fusion_width
        k = self.tagset.size
        shapes = {"embedding": (len(self.vocab), c.d_emb)}
        for d in ("fw", "bw"):
            shapes[f"lstm_{d}.W_x"] = (c.d_emb, 4 * h)
            shapes[f"lstm_{d}.W_h"] = (h, 4 * h)
            shapes[f"lstm_{d}.b"] = (4 * h,)
        for layer in range(c.gcn_layers):
            shapes[f"gcn.{layer}.W"] = (g, g)
            shapes[f"gcn.{layer}.b"] = (g,)
        shapes["ffnn.W1"] = (g + 2 * h, c.ffnn_hidden)
        shapes["ffnn.b1"] = (c.ffnn_hidden,)
        shapes["ffnn.W2"] = (c.ffnn_hidden, f)
        shapes["ffnn.b2"] = (f,)
        shapes["cls.W"] = (f, 1)
        shapes["cls.b"] = (1,)
        shapes["crf.W"] = (f, k)
        shapes["crf.b"] = (k,)
        shapes["crf.T"] = (k + 2, k + 2)
        shapes["dom.W"] = (f, 1)
        shapes["dom.b"] = (1,)
        return shapes

    # -- parameter groups

    def group(self, name: str) -> dict[str, Tensor]:
        prefixes = {
            "enc": ("embedding", "lstm_", "gcn.", "ffnn."),
            "class": ("cls.",),
            "seq": ("crf.",),
            "dom": ("dom.",),
        }[name]
        return {k: v for k, v in self.params.items() if k.startswith(prefixes)}

    def trainable(self) -> dict[str, Tensor]:
        if self.config.freeze_embeddings:
            return {k: v for k, v in self.params.items() if k != "embedding"}
        return dict(self.params)

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: v.value.copy() for k, v in self.params.items()}

    def restore(self, state: dict[str, np.ndarray]):
        for k, v in state.items():
            self.params[k].value[...] = v

    # -- checkpoint text format

    def to_json(self, extra: dict | None = None) -> str:
        doc = {
            "format_version": FORMAT_VERSION,
            "hyperparameters": asdict(self.config),
            "vocabulary": self.vocab.itos,
            "tags": list(self.tagset.names),
            "parameters": {
                name: {"shape": list(p.shape), "values": p.value.reshape(-1).tolist()}
                for name, p in self.params.items()
            },
        }
        if extra:
            doc["metadata"] = extra
        return json.dumps(doc, indent=None, separators=(",", ":")) + "\n"

    def save(self, path, extra: dict | None = None):
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.to_json(extra))

    @classmethod
    def from_json(cls, text: str) -> "GceModel":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise CheckpointError(f"checkpoint is not valid JSON: {exc}") from None
        if doc.get("format_version") != FORMAT_VERSION:
            raise CheckpointError(f"unsupported checkpoint format_version {doc.get('format_version')!r}")
        vocab = Vocab()
        vocab.itos = list(doc["vocabulary"])
        vocab.stoi = {t: i for i, t in enumerate(vocab.itos)}
        names = tuple(doc["tags"])
        tagset = TagSet(tuple(n for n in names if n not in ("START", "END")))
        model = cls(vocab, ModelConfig(**doc["hyperparameters"]), tagset)
        expected = model.param_shapes()
        for name, shape in expected.items():
            rec = doc["parameters"].get(name)
            if rec is None:
                raise CheckpointError(f"checkpoint lacks parameter {name!r}")
            if tuple(rec["shape"]) != tuple(shape):
                raise CheckpointError(f"{name}: shape {rec['shape']} != expected {list(shape)}")
            model.params[name] = ad.parameter(np.array(rec["values"], dtype=np.float64).reshape(shape))
        model.metadata = doc.get("metadata", {})
        return model

    @classmethod
    def load(cls, path) -> "GceModel":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(fh.read())


def _fan_in(name: str, shapes: dict) -> int:
    if name == "embedding":
        return 1  # a lookup is a product with a one-hot row
    if len(shapes[name]) == 2:
        return shapes[name][0]
    prefix, _, leaf = name.rpartition(".")
    weight = {"b": "W", "b1": "W1", "b2": "W2"}[leaf]
    key = f"{prefix}.{weight}" if f"{prefix}.{weight}" in shapes else f"{prefix}.W_x"
    return shapes[key][0]


def _init_param(name: str, shape: tuple, fan_in: int, seed: int) -> np.ndarray:
    rng = stream(seed, f"init/{name}")
    if name == "crf.T":
        return np.zeros(shape)
    bound = 1.0 / np.sqrt(fan_in)
    value = rng.uniform(-bound, bound, size=shape)
    if name.startswith("lstm_") and name.endswith(".b"):
        h = shape[0] // 4
        value[h:2 * h] = 1.0  # forget gate
    return value


# ---------------------------------------------------------------------------
# forward pass


@lru_cache(maxsize=65536)
def _adjacency(heads: tuple) -> AdjMatrix:
    return build_adjacency(validate_tree(heads))


@dataclass
class Batch:
    """Padded integer/constant arrays for a list of sentences."""

    ids: np.ndarray  # (B, N)
    lengths: np.ndarray  # (B,)
    adj: np.ndarray  # (B, N, N) row-normalized, zero padded
    mask: np.ndarray  # (B, N) 1.0 on real tokens

    @property
    def size(self):
        return self.ids.shape[0]

    @property
    def width(self):
        return self.ids.shape[1]


def prepare_batch(vocab: Vocab, sentences: Sequence) -> Batch:
    if not sentences:
        raise ValueError("empty batch")
    lengths = np.array([len(s.tokens) for s in sentences], dtype=np.int64)
    if lengths.min() < 1:
        raise ValueError("cannot encode an empty sentence")
    b, n = len(sentences), int(lengths.max())
    ids = np.zeros((b, n), dtype=np.int64)
    adj = np.zeros((b, n, n))
    mask = np.zeros((b, n))
    for i, s in enumerate(sentences):
        m = lengths[i]
        ids[i, :m] = vocab.lookup(s.tokens)
        adj[i, :m, :m] = _adjacency(tuple(s.heads)).normalized()
        mask[i, :m] = 1.0
    return Batch(ids, lengths, adj, mask)


@dataclass
class Encoded:
    """Batch encoding. ``token_states`` (B,N,D) are final GCN outputs."""

    token_states: Tensor
    pooled: Tensor  # (B, D) max over real tokens
    bilstm_state: Tensor  # (B, 2H) [forward last ; backward first]
    sentence_vec: Tensor  # (B, F)
    batch: Batch
    fused_tokens: Tensor | None = field(default=None, repr=False)


@dataclass
class EncodedSentence:
    token_states: Tensor  # (n, D)
    sentence_vec: Tensor  # (F,)


def embed_lookup(model: GceModel, tokens: Sequence[str]) -> Tensor:
    if len(tokens) == 0:
        raise ValueError("cannot embed an empty sentence")
    return ad.embedding_lookup(model.params["embedding"], model.vocab.lookup(tokens))


def _lstm_direction(model, prefix, x, mask, reverse):
    """Run one LSTM direction over (B,N,d) inputs; returns per-position states and the final state."""
    p = model.params
    h_size = model.config.hidden
    b, n, d = x.shape
    xw = ad.reshape(ad.add(ad.matmul(ad.reshape(x, (b * n, d)), p[f"{prefix}.W_x"]), p[f"{prefix}.b"]), (b, n, 4 * h_size))
    w_h = p[f"{prefix}.W_h"]
    h = Tensor(np.zeros((b, h_size)))
    c = Tensor(np.zeros((b, h_size)))
    states = [None] * n
    steps = range(n - 1, -1, -1) if reverse else range(n)
    for t in steps:
        z = ad.add(ad.getitem(xw, (slice(None), t)), ad.matmul(h, w_h))
        gates = ad.sigmoid(z)
        i_g = ad.getitem(gates, (slice(None), slice(0, h_size)))
        f_g = ad.getitem(gates, (slice(None), slice(h_size, 2 * h_size)))
        o_g = ad.getitem(gates, (slice(None), slice(3 * h_size, 4 * h_size)))
        cand = ad.tanh(ad.getitem(z, (slice(None), slice(2 * h_size, 3 * h_size))))
        c_new = ad.add(ad.mul(f_g, c), ad.mul(i_g, cand))
        h_new = ad.mul(o_g, ad.tanh(c_new))
        m = mask[:, t]
        if m.all():
            h, c = h_new, c_new
        else:
            keep = np.repeat(m[:, None], h_size, axis=1)
            h = ad.add(ad.mul(h_new, keep), ad.mul(h, 1.0 - keep))
            c = ad.add(ad.mul(c_new, keep), ad.mul(c, 1.0 - keep))
        states[t] = h
    return ad.stack(states, axis=1), h


def bilstm_forward(model: GceModel, emb: Tensor, mask: np.ndarray | None = None):
    """Batched or single-sentence BiLSTM.

    ``emb`` is (n, d) or (B, N, d). Returns ``(token_states, sentence_state)``
    with widths 2H; the sentence state joins the forward state at the last
    real token and the backward state at the first.
    """
    single = emb.value.ndim == 2
    if single:
        if emb.shape[0] < 1:
            raise ValueError("cannot run the BiLSTM on an empty sentence")
        emb = ad.reshape(emb, (1,) + emb.shape)
    if mask is None:
        mask = np.ones(emb.shape[:2])
    fw, fw_last = _lstm_direction(model, "lstm_fw", emb, mask, reverse=False)
    bw, bw_first = _lstm_direction(model, "lstm_bw", emb, mask, reverse=True)
    tokens = ad.concat([fw, bw], axis=-1)
    sent = ad.concat([fw_last, bw_first], axis=-1)
    if single:
        tokens = ad.getitem(tokens, 0)
        sent = ad.getitem(sent, 0)
    return tokens, sent


def gcn_layer(weight, bias, adj, h_prev: Tensor) -> Tensor:
    """relu(sum_j A~_ij (h_j W) / d_i + b) for one sentence (n,d) or a batch (B,N,d).

    ``adj`` is an :class:`AdjMatrix` or an already row-normalized array.
    """
    norm = adj.normalized() if isinstance(adj, AdjMatrix) else np.asarray(adj)
    hv = h_prev.value if isinstance(h_prev, Tensor) else np.asarray(h_prev)
    if norm.shape[-1] != hv.shape[-2] or norm.ndim != hv.ndim:
        raise ad.ShapeError(f"gcn_layer: adjacency {norm.shape} does not match states {hv.shape}")
    messages = ad.matmul(h_prev, weight)
    return ad.relu(ad.add(ad.matmul(Tensor(norm), messages), bias))


def ffnn(model: GceModel, x: Tensor) -> Tensor:
    p = model.params
    return ad.add(ad.matmul(ad.tanh(ad.add(ad.matmul(x, p["ffnn.W1"]), p["ffnn.b1"])), p["ffnn.W2"]), p["ffnn.b2"])


def encode_batch(model: GceModel, sentences: Sequence, training: bool = False,
                 rng: np.random.Generator | None = None, batch: Batch | None = None) -> Encoded:
    batch = batch or prepare_batch(model.vocab, sentences)
    p = model.params
    rate = model.config.dropout if training else 0.0
    x = ad.embedding_lookup(p["embedding"], batch.ids)
    x = ad.dropout(x, rate, rng, training)
    tokens, sent_state = bilstm_forward(model, x, batch.mask)
    h = ad.dropout(tokens, rate, rng, training)
    layers = model.config.gcn_layers
    for layer in range(layers):
        h = gcn_layer(p[f"gcn.{layer}.W"], p[f"gcn.{layer}.b"], batch.adj, h)
        if layer < layers - 1:
            h = ad.dropout(h, rate, rng, training)
    pad = np.where(batch.mask[:, :, None] > 0, 0.0, _PAD_FILL) * np.ones((1, 1, h.shape[2]))
    pooled = ad.max_pool(ad.add(h, pad), axis=1)
    sentence_vec = ffnn(model, ad.concat([pooled, sent_state], axis=-1))
    return Encoded(h, pooled, sent_state, sentence_vec, batch)


def fused_tokens(model: GceModel, enc: Encoded) -> Tensor:
    """Token-wise fusion: FFNN([token state ; sentence BiLSTM state]) -> (B,N,F)."""
    if enc.fused_tokens is None:
        b, n, d = enc.token_states.shape
        rows = np.repeat(np.arange(b), n)
        tiled = ad.reshape(ad.getitem(enc.bilstm_state, rows), (b, n, -1))
        joined = ad.concat([enc.token_states, tiled], axis=-1)
        flat = ffnn(model, ad.reshape(joined, (b * n, joined.shape[2])))
        enc.fused_tokens = ad.reshape(flat, (b, n, model.config.fusion_width))
    return enc.fused_tokens


def encode_sentence(model: GceModel, sentence, mode: str = "infer",
                    rng: np.random.Generator | None = None) -> EncodedSentence:
    if mode not in ("train", "infer"):
        raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")
    if len(sentence.tokens) == 0:
        raise ValueError("cannot encode an empty sentence")
    enc = encode_batch(model, [sentence], training=(mode == "train"), rng=rng)
    return EncodedSentence(ad.getitem(enc.token_states, 0), ad.getitem(enc.sentence_vec, 0))
