"""Micro-averaged precision/recall/F1 and feature export."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .encoder import GceModel, encode_batch
from .tagging import Span


@dataclass(frozen=True)
class MetricsReport:
    tp: int
    fp: int
    fn: int

    @property
    def precision(self) -> float:
        return self.tp / (self.tp + self.fp) if self.tp + self.fp else 0.0

    @property
    def recall(self) -> float:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else 0.0

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r else 0.0

    def __add__(self, other: "MetricsReport") -> "MetricsReport":
        return MetricsReport(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn)

    def row(self, name: str = "") -> str:
        return f"{name:<16}{self.precision:>8.4f}{self.recall:>8.4f}{self.f1:>8.4f}"


def format_table(reports: dict[str, MetricsReport]) -> str:
    lines = [f"{'':<16}{'P':>8}{'R':>8}{'F1':>8}"]
    lines += [rep.row(name) for name, rep in reports.items()]
    return "\n".join(lines)


def _positive(x) -> bool:
    if isinstance(x, str):
        if x not in ("causal", "non-causal"):
            raise ValueError(f"unknown label {x!r}")
        return x == "causal"
    return bool(x)


def classification_prf(preds: Sequence, golds: Sequence) -> MetricsReport:
    """Counts with "causal" (or truthy) as the positive class."""
    if len(preds) != len(golds):
        raise ValueError(f"{len(preds)} predictions vs {len(golds)} gold labels")
    tp = fp = fn = 0
    for p, g in zip(preds, golds):
        p, g = _positive(p), _positive(g)
        tp += p and g
        fp += p and not g
        fn += g and not p
    return MetricsReport(tp, fp, fn)


def token_prf(pred_tags: Sequence[Sequence[str]], gold_tags: Sequence[Sequence[str]]) -> MetricsReport:
    """Token-level counts over non-O tags, pooled across sentences."""
    if len(pred_tags) != len(gold_tags):
        raise ValueError(f"{len(pred_tags)} predicted sequences vs {len(gold_tags)} gold")
    tp = fp = fn = 0
    for k, (ps, gs) in enumerate(zip(pred_tags, gold_tags)):
        if len(ps) != len(gs):
            raise ValueError(f"sentence {k}: {len(ps)} predicted tags vs {len(gs)} gold")
        for p, g in zip(ps, gs):
            if p == g:
                tp += p != "O"
            else:
                fp += p != "O"
                fn += g != "O"
    return MetricsReport(tp, fp, fn)


def span_prf(pred_spans: Sequence[Sequence[Span]], gold_spans: Sequence[Sequence[Span]]) -> MetricsReport:
    """Exact (role, start, end) matches, one span list per sentence."""
    if len(pred_spans) != len(gold_spans):
        raise ValueError(f"{len(pred_spans)} predicted span lists vs {len(gold_spans)} gold")
    tp = fp = fn = 0
    for ps, gs in zip(pred_spans, gold_spans):
        p, g = set(map(tuple, ps)), set(map(tuple, gs))
        tp += len(p & g)
        fp += len(p - g)
        fn += len(g - p)
    return MetricsReport(tp, fp, fn)


def sentence_features(model: GceModel, data, batch_size: int = 256) -> np.ndarray:
    rows = []
    for i in range(0, len(data), batch_size):
        rows.append(encode_batch(model, data[i:i + batch_size]).sentence_vec.value)
    return np.concatenate(rows, axis=0) if rows else np.zeros((0, model.config.fusion_width))


def export_features(model: GceModel, data, path) -> None:
    """One line per sentence: domain marker, tab, space-separated feature values."""
    feats = sentence_features(model, data)
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for s, row in zip(data, feats):
                fh.write(f"{s.domain or '_'}\t{' '.join(repr(float(v)) for v in row)}\n")
    except OSError as exc:
        raise OSError(f"cannot write features to {path}: {exc.strerror}") from exc
