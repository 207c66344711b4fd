"""Task heads: sentence classifier, linear-chain CRF tagger, domain classifier.

CRF transition matrices are (K+2)x(K+2): rows/columns K and K+1 are the START
and END sentinels. A (K, K) matrix is accepted too and padded with zero
sentinel scores. ``allowed`` masks illegal moves; ``None`` allows everything.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from . import autodiff as ad
from . import kernels
from .autodiff import Tensor
from .encoder import Encoded, EncodedSentence, GceModel, fused_tokens


class CrfError(ValueError):
    pass


def _sentence_vec(enc) -> Tensor:
    v = enc.sentence_vec
    return ad.reshape(v, (1, v.shape[0])) if v.value.ndim == 1 else v


def _logit(features: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    out = ad.add(ad.matmul(features, weight), bias)
    return ad.reshape(out, (out.shape[0],))


def classify_logits(model: GceModel, enc: Encoded | EncodedSentence) -> Tensor:
    return _logit(_sentence_vec(enc), model.params["cls.W"], model.params["cls.b"])


def classify(model: GceModel, enc: Encoded | EncodedSentence):
    """P(causal | X); a float for a single sentence, an array for a batch."""
    probs = ad.sigmoid(classify_logits(model, enc)).value
    return float(probs[0]) if isinstance(enc, EncodedSentence) else probs


def domain_logits(model: GceModel, enc: Encoded | EncodedSentence, reverse: float | None = None) -> Tensor:
    """Domain logits; with ``reverse`` set, features pass through grad_reverse(reverse)."""
    feats = _sentence_vec(enc)
    if reverse is not None:
        feats = ad.grad_reverse(feats, reverse)
    return _logit(feats, model.params["dom.W"], model.params["dom.b"])


def domain_classify(model: GceModel, enc: Encoded | EncodedSentence):
    """P(source | X)."""
    probs = ad.sigmoid(domain_logits(model, enc)).value
    return float(probs[0]) if isinstance(enc, EncodedSentence) else probs


def emissions(model: GceModel, enc: Encoded) -> Tensor:
    """Per-token tag scores (B, N, K) from the token-wise fused states."""
    fused = fused_tokens(model, enc)
    return ad.add(ad.matmul(fused, model.params["crf.W"]), model.params["crf.b"])


# ---------------------------------------------------------------------------
# CRF


def _full_transitions(trans, k: int) -> Tensor:
    trans = ad.as_tensor(trans)
    if trans.shape == (k + 2, k + 2):
        return trans
    if trans.shape != (k, k):
        raise CrfError(f"transition matrix {trans.shape} fits neither {k}x{k} nor {k + 2}x{k + 2}")
    wide = ad.concat([trans, Tensor(np.zeros((k, 2)))], axis=1)
    return ad.concat([wide, Tensor(np.zeros((2, k + 2)))], axis=0)


def _allowed(allowed, k: int) -> np.ndarray:
    if allowed is None:
        return np.ones((k + 2, k + 2), dtype=bool)
    return np.asarray(allowed, dtype=bool)


def crf_log_partition(emissions, trans, lengths=None, allowed=None) -> Tensor:
    """log of the summed exp-scores of every legal tag path (forward algorithm).

    ``emissions`` is (n, K) for one sentence, giving a scalar, or (B, N, K)
    with ``lengths``, giving (B,). Differentiable in both inputs: the gradient
    is the posterior marginals computed by forward-backward.
    """
    em = ad.as_tensor(emissions)
    single = em.value.ndim == 2
    ev = em.value[None] if single else em.value
    b, n, k = ev.shape
    if n < 1:
        raise CrfError("CRF needs at least one token")
    lens = np.full(b, n, dtype=np.int64) if lengths is None else np.asarray(lengths, dtype=np.int64)
    tr = _full_transitions(trans, k)
    mask = _allowed(allowed, k)
    logz, unary, pair = kernels.crf_forward_backward(ev, lens, tr.value, mask)

    def back(g):
        g = np.atleast_1d(g)
        g_em = g[:, None, None] * unary
        g_tr = np.tensordot(g, pair, axes=(0, 0))
        return (g_em[0] if single else g_em), g_tr

    out = logz[0] if single else logz
    return ad.make_node(np.asarray(out), (em, tr), back, "crf_log_partition")


def _check_path(y: Sequence[int], k: int, allowed: np.ndarray | None):
    if any(not 0 <= t < k for t in y):
        raise CrfError(f"tag index out of range in {list(y)}")
    if allowed is not None:
        path = [k, *y, k + 1]
        for pos, (a, b) in enumerate(zip(path, path[1:])):
            if not allowed[a, b]:
                raise CrfError(f"illegal transition at position {min(pos, len(y) - 1)} in {list(y)}")


def crf_gold_scores(emissions, trans, tag_seqs: Sequence[Sequence[int]]) -> Tensor:
    """Summed path scores of a batch of gold sequences (scalar Tensor)."""
    em = ad.as_tensor(emissions)
    k = em.shape[-1]
    tr = _full_transitions(trans, k)
    b_idx, t_idx, y_idx, prev, nxt = [], [], [], [], []
    for b, y in enumerate(tag_seqs):
        y = list(y)
        b_idx += [b] * len(y)
        t_idx += range(len(y))
        y_idx += y
        path = [k, *y, k + 1]
        prev += path[:-1]
        nxt += path[1:]
    em_terms = ad.getitem(em, (np.array(b_idx), np.array(t_idx), np.array(y_idx)))
    tr_terms = ad.getitem(tr, (np.array(prev), np.array(nxt)))
    return ad.add(ad.sum_all(em_terms), ad.sum_all(tr_terms))


def crf_score(emissions, trans, y: Sequence[int]) -> Tensor:
    """Path score: emissions along ``y`` plus START, inner and END transitions."""
    em = ad.as_tensor(emissions)
    if em.value.ndim != 2 or em.shape[0] != len(y):
        raise CrfError(f"emissions {em.shape} do not match a tag sequence of length {len(y)}")
    _check_path(y, em.shape[1], None)
    return crf_gold_scores(ad.reshape(em, (1,) + em.shape), trans, [y])


def crf_nll(emissions, trans, gold: Sequence[int], allowed=None) -> Tensor:
    """-(score(gold) - log Z) for one sentence."""
    em = ad.as_tensor(emissions)
    if em.value.ndim != 2 or em.shape[0] != len(gold):
        raise CrfError(f"emissions {em.shape} do not match a tag sequence of length {len(gold)}")
    k = em.shape[1]
    _check_path(gold, k, None if allowed is None else _allowed(allowed, k))
    return ad.add(crf_log_partition(em, trans, allowed=allowed), ad.scale(crf_score(em, trans, gold), -1.0))


def crf_nll_batch(emissions: Tensor, trans, golds: Sequence[Sequence[int]], lengths, allowed=None) -> Tensor:
    """Mean negative log-likelihood over a padded batch."""
    k = emissions.shape[-1]
    mask = None if allowed is None else _allowed(allowed, k)
    for y in golds:
        _check_path(y, k, mask)
    logz = crf_log_partition(emissions, trans, lengths, allowed)
    total = ad.add(ad.sum_all(logz), ad.scale(crf_gold_scores(emissions, trans, golds), -1.0))
    return ad.scale(total, 1.0 / len(golds))


def viterbi_decode(emissions, trans, allowed=None) -> tuple[list[int], float]:
    """Highest-scoring legal path and its score; ties resolve to lower tag indices."""
    em = emissions.value if isinstance(emissions, Tensor) else np.asarray(emissions, dtype=np.float64)
    if em.ndim != 2 or em.shape[0] < 1:
        raise CrfError(f"viterbi needs (n, K) emissions with n >= 1, got {em.shape}")
    k = em.shape[1]
    tr = _full_transitions(trans.value if isinstance(trans, Tensor) else trans, k).value
    path, score = kernels.viterbi(em, tr, _allowed(allowed, k))
    return [int(t) for t in path], score


def decode_batch(model: GceModel, enc: Encoded) -> list[list[int]]:
    em = emissions(model, enc).value
    trans = model.params["crf.T"].value
    mask = model.tagset.transition_mask()
    return [viterbi_decode(em[b, :n], trans, mask)[0] for b, n in enumerate(enc.batch.lengths)]
