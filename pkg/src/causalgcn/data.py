"""Corpus I/O, pretrained vectors, splits and the synthetic causality corpus.

Corpus files hold one sentence per block, blocks separated by a blank line.
Token lines carry four whitespace-separated columns ``index form head tag``
with 1-based indices, head 0 for the root and ``_`` for a missing tag.
Block comments ``# key=value`` carry the label, the domain and any extras.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .graph import ROOT, TreeError, validate_tree
from .rng import stream
from .tagging import DEFAULT_TAGSET, Span, TagError, iobes_to_spans, spans_to_iobes

LABELS = ("causal", "non-causal")


class CorpusError(ValueError):
    pass


@dataclass(frozen=True)
class Sentence:
    tokens: tuple
    heads: tuple  # 0-based, ROOT for the root token
    label: str | None = None
    tags: tuple | None = None
    domain: str | None = None
    meta: tuple = field(default=(), compare=False)

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        object.__setattr__(self, "heads", tuple(int(h) for h in self.heads))
        if self.tags is not None:
            object.__setattr__(self, "tags", tuple(self.tags))
        if len(self.heads) != len(self.tokens):
            raise CorpusError(f"{len(self.tokens)} tokens but {len(self.heads)} heads")
        validate_tree(self.heads)
        if self.label is not None and self.label not in LABELS:
            raise CorpusError(f"unknown label {self.label!r}")
        if self.tags is not None:
            if len(self.tags) != len(self.tokens):
                raise CorpusError(f"{len(self.tokens)} tokens but {len(self.tags)} tags")
            for t in self.tags:
                DEFAULT_TAGSET.index(t)
            bad = DEFAULT_TAGSET.first_illegal(self.tags)
            if bad is not None:
                raise TagError(f"illegal tag transition at token {bad + 1}: {' '.join(self.tags)}")

    def __len__(self):
        return len(self.tokens)

    @property
    def is_causal(self) -> bool:
        return self.label == "causal"

    def spans(self) -> list[Span]:
        return iobes_to_spans(self.tags) if self.tags is not None else []


# ---------------------------------------------------------------------------
# corpus format


def _parse_block(lines: list[tuple[int, str]]) -> Sentence:
    tokens, heads, tags, meta = [], [], [], {}
    for lineno, line in lines:
        if line.startswith("#"):
            key, sep, value = line[1:].strip().partition("=")
            if not sep:
                raise CorpusError(f"line {lineno}: comment must be '# key=value'")
            meta[key.strip()] = value.strip()
            continue
        cols = line.split()
        if len(cols) != 4:
            raise CorpusError(f"line {lineno}, column {len(cols) + 1 if len(cols) < 4 else 5}: "
                              f"expected 4 columns (index form head tag), found {len(cols)}")
        idx, form, head, tag = cols
        if idx != str(len(tokens) + 1):
            raise CorpusError(f"line {lineno}, column 1: expected index {len(tokens) + 1}, found {idx!r}")
        try:
            h = int(head)
        except ValueError:
            raise CorpusError(f"line {lineno}, column 3: head {head!r} is not an integer") from None
        tokens.append(form)
        heads.append(h - 1 if h > 0 else (ROOT if h == 0 else h - 1))
        tags.append(tag)
    first = lines[0][0]
    if not tokens:
        raise CorpusError(f"line {first}: block has no token lines")
    if all(t == "_" for t in tags):
        tag_seq = None
    elif any(t == "_" for t in tags):
        raise CorpusError(f"line {first}: block mixes tags and '_'")
    else:
        tag_seq = tuple(tags)
    label = meta.pop("label", None)
    domain = meta.pop("domain", None)
    try:
        return Sentence(tokens, heads, label, tag_seq, domain, tuple(meta.items()))
    except TreeError as exc:
        raise CorpusError(f"block at line {first}: invalid tree: {exc}") from None
    except TagError as exc:
        raise CorpusError(f"block at line {first}: {exc}") from None
    except CorpusError as exc:
        raise CorpusError(f"block at line {first}: {exc}") from None


def parse_corpus_text(text: str) -> list[Sentence]:
    sentences, block = [], []
    for lineno, raw in enumerate(text.split("\n"), start=1):
        line = raw.rstrip("\r").strip()
        if line:
            block.append((lineno, line))
        elif block:
            sentences.append(_parse_block(block))
            block = []
    if block:
        sentences.append(_parse_block(block))
    return sentences


def parse_corpus(path) -> list[Sentence]:
    return parse_corpus_text(Path(path).read_text(encoding="utf-8"))


def format_sentence(s: Sentence) -> str:
    lines = []
    if s.label is not None:
        lines.append(f"# label={s.label}")
    if s.domain is not None:
        lines.append(f"# domain={s.domain}")
    lines.extend(f"# {k}={v}" for k, v in s.meta)
    tags = s.tags or ("_",) * len(s)
    for i, (tok, h, tag) in enumerate(zip(s.tokens, s.heads, tags), start=1):
        lines.append(f"{i}\t{tok}\t{0 if h == ROOT else h + 1}\t{tag}")
    return "\n".join(lines) + "\n"


def write_corpus(sentences: Iterable[Sentence], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(format_sentence(s) for s in sentences))


# ---------------------------------------------------------------------------
# pretrained vectors


@dataclass
class EmbeddingTable:
    dim: int
    vectors: dict
    mean: np.ndarray

    def apply_to(self, model) -> int:
        """Overwrite embedding rows of words found in the table; UNK gets the mean."""
        table = model.params["embedding"].value
        if table.shape[1] != self.dim:
            raise ValueError(f"embedding width {table.shape[1]} != vector dimension {self.dim}")
        hits = 0
        for word, row in model.vocab.stoi.items():
            if row == 0:
                continue
            vec = self.vectors.get(word)
            if vec is not None:
                table[row] = vec
                hits += 1
        table[0] = self.mean
        return hits


def load_embeddings(path, vocab=None) -> EmbeddingTable:
    """Read ``word v1 ... vd`` lines (optional ``count d`` header)."""
    dim, vectors, total, count = None, {}, None, 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.rstrip("\n").split(" ")
            parts = [p for p in parts if p]
            if not parts:
                continue
            if lineno == 1 and len(parts) == 2 and parts[0].isdigit() and parts[1].isdigit():
                dim = int(parts[1])
                continue
            word, nums = parts[0], parts[1:]
            if dim is None:
                dim = len(nums)
            if len(nums) != dim or dim < 1:
                raise ValueError(f"{path}:{lineno}: expected {dim} numbers, found {len(nums)}")
            try:
                vec = np.array([float(x) for x in nums])
            except ValueError:
                raise ValueError(f"{path}:{lineno}: non-numeric vector entry") from None
            total = vec.copy() if total is None else total + vec
            count += 1
            if vocab is None or word in vocab:
                vectors[word] = vec
    if dim is None or count == 0:
        raise ValueError(f"{path}: no vectors found")
    return EmbeddingTable(dim, vectors, total / count)


# ---------------------------------------------------------------------------
# splits


def split_dataset(data: Sequence, ratios=(0.6, 0.2, 0.2), seed: int = 0):
    """Seeded shuffle, then contiguous train/dev/test parts (largest-remainder sizes)."""
    if len(ratios) != 3 or any(r <= 0 for r in ratios) or not math.isclose(sum(ratios), 1.0, abs_tol=1e-9):
        raise ValueError(f"ratios must be three positive numbers summing to 1, got {ratios}")
    n = len(data)
    if n < 3:
        raise ValueError(f"need at least 3 items to split, got {n}")
    exact = [r * n for r in ratios]
    sizes = [int(math.floor(x)) for x in exact]
    order = sorted(range(3), key=lambda i: -(exact[i] - sizes[i]))
    for i in order[: n - sum(sizes)]:
        sizes[i] += 1
    perm = stream(seed, "split").permutation(n)
    items = [data[i] for i in perm]
    a, b = sizes[0], sizes[0] + sizes[1]
    return items[:a], items[a:b], items[b:]


# ---------------------------------------------------------------------------
# synthetic corpus

FUNCTION_WORDS = frozenset({
    "the", "a", "of", "and", "is", "to", ",", ".", "causes", "because", "due",
    "occurred", "were", "observed", "related",
})

LEXICONS = {
    "medical": {
        "noun": [
            # symptoms
            "fever", "cough", "fatigue", "nausea", "headache", "rash", "insomnia", "dizziness",
            "pain", "swelling", "vomiting", "seizures", "bleeding", "itching", "cramps",
            # drugs
            "aspirin", "ibuprofen", "insulin", "penicillin", "morphine", "steroids", "warfarin",
            "chemotherapy", "antibiotics", "statins", "opioids", "vaccines",
            # conditions
            "diabetes", "asthma", "infection", "anemia", "hypertension", "cancer", "influenza",
            "arthritis", "pneumonia", "obesity", "dehydration", "allergy", "stroke", "sepsis",
        ],
        "adj": ["chronic", "acute", "severe", "mild", "viral", "bacterial", "persistent",
                "renal", "cardiac", "pulmonary", "neonatal", "intravenous"],
    },
    "financial": {
        "noun": [
            # instruments
            "bonds", "equities", "futures", "derivatives", "swaps", "options", "mortgages",
            "treasuries", "dividends", "loans", "debentures", "warrants",
            # firms
            "bank", "insurer", "fund", "broker", "lender", "exchange", "conglomerate",
            "startup", "regulator", "underwriter", "custodian", "utility",
            # indicators
            "inflation", "unemployment", "yields", "volatility", "deficit", "earnings", "revenue",
            "liquidity", "leverage", "tariffs", "recession", "devaluation", "default", "layoffs",
        ],
        "adj": ["quarterly", "sovereign", "corporate", "fiscal", "bearish", "bullish",
                "offshore", "municipal", "speculative", "subprime", "annual", "monetary"],
    },
}

# Template items: ("np", role, head) or (word, head); heads index template items, None = ROOT.
CAUSAL_TEMPLATES = (
    (("np", "Cause", 1), ("causes", None), ("np", "Effect", 1), (".", 1)),
    (("np", "Effect", 1), ("is", None), ("because", 4), ("of", 2), ("np", "Cause", 1), (".", 1)),
    (("due", 2), ("to", 0), ("np", "Cause", 5), (",", 5), ("np", "Effect", 5), ("occurred", None), (".", 5)),
)
NONCAUSAL_TEMPLATES = (
    (("np", None, 4), ("and", 2), ("np", None, 0), ("were", 4), ("observed", None), (".", 4)),
    (("np", None, 2), ("is", 2), ("related", None), ("to", 4), ("np", None, 2), (".", 2)),
)
CAUSAL_SHARE = (9092 + 616 + 1356) / 15000


def _noun_phrase(rng, lex) -> list[tuple[str, int | None]]:
    """Tokens with heads relative to the phrase; the noun (last token) is the phrase head."""
    words = []
    if rng.random() < 0.5:
        words.append(str(rng.choice(["the", "a"])))
    if rng.random() < 0.5:
        words.append(str(rng.choice(lex["adj"])))
    words.append(str(rng.choice(lex["noun"])))
    last = len(words) - 1
    return [(w, last if i < last else None) for i, w in enumerate(words)]


def _realize(template, rng, lex, domain, causal) -> Sentence:
    pieces, anchors = [], []
    pos = 0
    for item in template:
        if item[0] == "np":
            phrase = _noun_phrase(rng, lex)
            pieces.append((item, phrase, pos))
            anchors.append(pos + len(phrase) - 1)
            pos += len(phrase)
        else:
            pieces.append((item, [(item[0], None)], pos))
            anchors.append(pos)
            pos += 1
    tokens, heads, spans = [], [], []
    for item, phrase, start in pieces:
        target = item[-1]
        for i, (word, local_head) in enumerate(phrase):
            tokens.append(word)
            if local_head is not None:
                heads.append(start + local_head)
            else:
                heads.append(ROOT if target is None else anchors[target])
        if item[0] == "np" and item[1] is not None:
            spans.append(Span(item[1], start, start + len(phrase) - 1))
    tags = spans_to_iobes(spans, len(tokens))
    return Sentence(tokens, heads, "causal" if causal else "non-causal", tags, domain)


def generate_synthetic(domain: str, n: int, seed: int, causal_share: float = CAUSAL_SHARE) -> list[Sentence]:
    """``n`` templated sentences from ``domain``; a pure function of its arguments."""
    if domain not in LEXICONS:
        raise ValueError(f"unknown domain {domain!r}; expected one of {sorted(LEXICONS)}")
    if n < 1:
        raise ValueError("n must be at least 1")
    rng = stream(seed, f"synth/{domain}")
    lex = LEXICONS[domain]
    out = []
    for _ in range(n):
        causal = rng.random() < causal_share
        pool = CAUSAL_TEMPLATES if causal else NONCAUSAL_TEMPLATES
        template = pool[int(rng.integers(len(pool)))]
        out.append(_realize(template, rng, lex, domain, causal))
    return out


def content_words(domain: str) -> set[str]:
    lex = LEXICONS[domain]
    return set(lex["noun"]) | set(lex["adj"])
