import random

import pytest
from hypothesis import given, settings, strategies as st

from causalgcn.tagging import (
    DEFAULT_TAGSET,
    TAGS,
    Span,
    TagError,
    iob_spans,
    iob_to_iobes,
    iobes_to_spans,
    spans_to_iobes,
)


@st.composite
def span_sets(draw, max_n=15):
    n = draw(st.integers(1, max_n))
    spans, pos = [], 0
    while pos < n:
        gap = draw(st.integers(0, 3))
        start = pos + gap
        if start >= n:
            break
        end = draw(st.integers(start, min(n - 1, start + 4)))
        if draw(st.booleans()):
            spans.append(Span(draw(st.sampled_from(["Cause", "Effect"])), start, end))
        pos = end + 1
    return spans, n


def test_singleton_rule():
    assert spans_to_iobes([Span("Cause", 2, 2)], 4) == ["O", "O", "S-C", "O"]


def test_three_token_effect():
    assert spans_to_iobes([Span("Effect", 0, 2)], 3) == ["B-E", "I-E", "E-E"]


def test_empty_spanset():
    assert spans_to_iobes([], 2) == ["O", "O"]


def test_overlap_rejected():
    with pytest.raises(TagError):
        spans_to_iobes([Span("Cause", 0, 2), Span("Effect", 2, 3)], 5)


def test_out_of_range_rejected():
    with pytest.raises(TagError):
        spans_to_iobes([Span("Cause", 3, 4)], 4)


def test_inverse_simple():
    assert iobes_to_spans(["B-C", "E-C", "O"]) == [Span("Cause", 0, 1)]


def test_repair_orphan_inside():
    assert iobes_to_spans(["I-C", "O"]) == [Span("Cause", 0, 0)]


def test_repair_dangling_begin():
    assert iobes_to_spans(["B-E", "I-E", "I-E", "O", "S-C"]) == [Span("Effect", 0, 2), Span("Cause", 4, 4)]


def test_repair_role_switch():
    assert iobes_to_spans(["B-C", "I-E", "E-E"]) == [Span("Cause", 0, 0), Span("Effect", 1, 2)]


def test_repair_orphan_end():
    assert iobes_to_spans(["O", "E-C"]) == [Span("Cause", 1, 1)]


@settings(max_examples=1000, deadline=None)
@given(span_sets())
def test_round_trip(case):
    spans, n = case
    tags = spans_to_iobes(spans, n)
    assert iobes_to_spans(tags) == sorted(spans, key=lambda s: s.start)
    assert DEFAULT_TAGSET.is_legal(DEFAULT_TAGSET.encode(tags))
    assert spans_to_iobes(iobes_to_spans(tags), n) == tags


@settings(max_examples=500, deadline=None)
@given(st.lists(st.sampled_from(TAGS + ("junk",)), min_size=1, max_size=20))
def test_repair_is_total(tags):
    spans = iobes_to_spans(tags)
    # valid: in range, non-overlapping, re-encodable
    assert spans_to_iobes(spans, len(tags))
    for s in spans:
        assert 0 <= s.start <= s.end < len(tags)


def test_iob_conversion_examples():
    assert iob_to_iobes(["B-C", "O"]) == ["S-C", "O"]
    assert iob_to_iobes(["B-C", "I-C", "I-C"]) == ["B-C", "I-C", "E-C"]


def test_iob_conversion_rejects_with_position():
    with pytest.raises(TagError, match="position 1"):
        iob_to_iobes(["O", "I-C"])


def _random_iob(rng, n):
    tags, prev = [], "O"
    for _ in range(n):
        choice = rng.random()
        if prev != "O" and choice < 0.4:
            tags.append("I-" + prev[2:])
        elif choice < 0.7:
            tags.append("B-" + rng.choice("CE"))
        else:
            tags.append("O")
        prev = tags[-1]
    return tags


def test_iob_conversion_equivalence_on_random_corpora():
    rng = random.Random(0)
    for _ in range(1000):
        tags = _random_iob(rng, rng.randint(1, 12))
        converted = iob_to_iobes(tags)
        assert iobes_to_spans(converted) == iob_spans(tags)
        assert DEFAULT_TAGSET.is_legal(DEFAULT_TAGSET.encode(converted))


def test_mask_sentinels():
    mask = DEFAULT_TAGSET.transition_mask()
    start, end = DEFAULT_TAGSET.start, DEFAULT_TAGSET.end
    assert not mask[:, start].any()
    assert not mask[end, :].any()


@pytest.mark.parametrize(
    "prev,allowed",
    [("B-C", {"I-C", "E-C"}), ("I-E", {"I-E", "E-E"}), ("O", {"O", "B-C", "S-C", "B-E", "S-E"})],
)
def test_mask_successors(prev, allowed):
    mask = DEFAULT_TAGSET.transition_mask()
    i = DEFAULT_TAGSET.index(prev)
    got = {DEFAULT_TAGSET.tags[j] for j in range(DEFAULT_TAGSET.size) if mask[i, j]}
    assert got == allowed
