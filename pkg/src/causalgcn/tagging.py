"""IOBES cause/effect tag inventory and the span codec."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, NamedTuple, Sequence

import numpy as np

ROLES = {"C": "Cause", "E": "Effect"}
ROLE_CODES = {v: k for k, v in ROLES.items()}

TAGS = ("O", "B-C", "I-C", "E-C", "S-C", "B-E", "I-E", "E-E", "S-E")
START, END = "START", "END"


class TagError(ValueError):
    pass


class Span(NamedTuple):
    role: str  # "Cause" | "Effect"
    start: int
    end: int  # inclusive


def _allowed(prev: str, nxt: str) -> bool:
    if prev == END or nxt == START:
        return False
    if prev == START:
        return nxt == END or nxt == "O" or nxt[0] in "BS"
    if nxt == END:
        return prev == "O" or prev[0] in "ES"
    if prev == "O" or prev[0] in "ES":
        return nxt == "O" or nxt[0] in "BS"
    # prev is B-x or I-x: the span must continue
    return nxt[0] in "IE" and nxt[2:] == prev[2:]


@dataclass(frozen=True)
class TagSet:
    """Tags in index order followed by the START and END sentinels."""

    tags: tuple = TAGS

    @property
    def size(self) -> int:
        return len(self.tags)

    @property
    def start(self) -> int:
        return len(self.tags)

    @property
    def end(self) -> int:
        return len(self.tags) + 1

    @property
    def names(self) -> tuple:
        return self.tags + (START, END)

    def index(self, tag: str) -> int:
        try:
            return self.tags.index(tag)
        except ValueError:
            raise TagError(f"unknown tag {tag!r}") from None

    def encode(self, tags: Sequence[str]) -> list[int]:
        return [self.index(t) for t in tags]

    def decode(self, idx: Sequence[int]) -> list[str]:
        return [self.tags[i] for i in idx]

    def transition_mask(self) -> np.ndarray:
        """Boolean (K+2)x(K+2) matrix; ``mask[i, j]`` allows tag i -> tag j.

        START -> END is left illegal so that only non-empty paths are scored.
        """
        return _mask_for(self.names).copy()

    def is_legal(self, idx: Sequence[int]) -> bool:
        if not idx:
            return False
        mask = _mask_for(self.names)
        path = [self.start, *idx, self.end]
        return all(mask[a, b] for a, b in zip(path, path[1:]))

    def first_illegal(self, tags: Sequence[str]) -> int | None:
        """Position of the first token whose incoming (or, at the end, outgoing) move is illegal."""
        seq = [START, *tags, END]
        for i, (a, b) in enumerate(zip(seq, seq[1:])):
            if not _allowed(a, b):
                return min(i, len(tags) - 1)
        return None


@lru_cache(maxsize=None)
def _mask_for(names: tuple) -> np.ndarray:
    k = len(names)
    mask = np.zeros((k, k), dtype=bool)
    for i, a in enumerate(names):
        for j, b in enumerate(names):
            mask[i, j] = _allowed(a, b) and not (a == START and b == END)
    return mask


DEFAULT_TAGSET = TagSet()


def _check_spans(spans: Iterable[Span], n: int) -> list[Span]:
    spans = sorted((Span(*s) for s in spans), key=lambda s: (s.start, s.end))
    covered = -1
    for s in spans:
        if s.role not in ROLE_CODES:
            raise TagError(f"unknown role {s.role!r}")
        if not 0 <= s.start <= s.end < n:
            raise TagError(f"span {tuple(s)} out of range for length {n}")
        if s.start <= covered:
            raise TagError(f"span {tuple(s)} overlaps a previous span")
        covered = s.end
    return spans


def spans_to_iobes(spans: Iterable[Span], n: int) -> list[str]:
    tags = ["O"] * n
    for s in _check_spans(spans, n):
        code = ROLE_CODES[s.role]
        if s.start == s.end:
            tags[s.start] = f"S-{code}"
            continue
        tags[s.start] = f"B-{code}"
        for i in range(s.start + 1, s.end):
            tags[i] = f"I-{code}"
        tags[s.end] = f"E-{code}"
    return tags


def iobes_to_spans(tags: Sequence[str]) -> list[Span]:
    """Read spans from a possibly ill-formed tag sequence.

    B/I runs that never see their E are closed at the last contiguous token of
    the same role; an I or E with no open span starts one at its own position.
    """
    spans = []
    open_role, open_start = None, 0

    def close(end):
        nonlocal open_role
        if open_role is not None:
            spans.append(Span(ROLES[open_role], open_start, end))
            open_role = None

    for i, tag in enumerate(tags):
        if tag == "O" or len(tag) < 3 or tag[1] != "-" or tag[2:] not in ROLES:
            close(i - 1)
            continue
        kind, code = tag[0], tag[2:]
        if open_role is not None and code != open_role:
            close(i - 1)
        if kind == "S":
            close(i - 1)
            spans.append(Span(ROLES[code], i, i))
        elif kind == "B":
            close(i - 1)
            open_role, open_start = code, i
        elif kind == "I":
            if open_role is None:
                open_role, open_start = code, i
        elif kind == "E":
            if open_role is None:
                open_start = i
            open_role = code
            close(i)
        else:
            close(i - 1)
    close(len(tags) - 1)
    return spans


def iob_to_iobes(tags: Sequence[str]) -> list[str]:
    out = []
    for i, tag in enumerate(tags):
        if tag == "O":
            out.append("O")
            continue
        if len(tag) < 3 or tag[0] not in "BI" or tag[1] != "-" or tag[2:] not in ROLES:
            raise TagError(f"position {i}: {tag!r} is not an IOB tag")
        code = tag[2:]
        if tag[0] == "I" and (i == 0 or tags[i - 1] == "O" or tags[i - 1][2:] != code):
            raise TagError(f"position {i}: I-{code} does not continue a span")
        continues = i + 1 < len(tags) and tags[i + 1] == f"I-{code}"
        if tag[0] == "B":
            out.append(f"B-{code}" if continues else f"S-{code}")
        else:
            out.append(f"I-{code}" if continues else f"E-{code}")
    return out


def iob_spans(tags: Sequence[str]) -> list[Span]:
    """Direct span reading of a well-formed IOB sequence."""
    spans, start, code = [], None, None
    for i, tag in enumerate(list(tags) + ["O"]):
        if start is not None and tag != f"I-{code}":
            spans.append(Span(ROLES[code], start, i - 1))
            start = None
        if tag.startswith("B-"):
            start, code = i, tag[2:]
    return spans
