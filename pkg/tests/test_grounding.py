from __future__ import annotations

import itertools

from hypothesis import given, settings
from hypothesis import strategies as st

from pnb.corpus import Document, EntityType, Span
from pnb.grounding import GroundingPolicy, NormalizedText, Prediction, ground, normalize_query

RD = EntityType.RareDisease


def spans(preds: list[Prediction]) -> list[Span | None]:
    return [p.span for p in preds]


def test_single_occurrence():
    doc = Document("d", "Patients with Cystic Fibrosis cough.")
    (p,) = ground(["cystic fibrosis"], doc, RD)
    assert p.span == Span(14, 29) and doc.text[14:29] == "Cystic Fibrosis"
    assert p.extracted == "cystic fibrosis" and p.etype is RD


def test_absent_string_stays_ungrounded():
    (p,) = ground(["Marfan syndrome"], Document("d", "no such thing"), RD)
    assert p.span is None and not p.grounded
    assert p.to_record() == {"doc_id": "d", "etype": "RareDisease", "extracted": "Marfan syndrome",
                             "start": None, "end": None}


def test_whitespace_is_normalized():
    doc = Document("d", "a heart\n   defect here")
    (p,) = ground(["heart defect"], doc, EntityType.Sign)
    assert doc.text[p.span.start:p.span.end] == "heart\n   defect"


def test_repeated_string_claims_successive_occurrences():
    doc = Document("d", "fever, then fever again, then fever")
    got = spans(ground(["fever", "fever", "fever", "fever"], doc, EntityType.Sign))
    assert got == [Span(0, 5), Span(12, 17), Span(30, 35), None]


def test_anthrax_fixture():
    doc = Document("d", "Anthrax differs from cutaneous anthrax.")
    got = ground(["anthrax", "cutaneous anthrax"], doc, RD)
    assert [doc.text[p.span.start:p.span.end] for p in got] == ["Anthrax", "cutaneous anthrax"]
    # Input order is preserved even though the longer string is grounded first.
    assert [p.extracted for p in got] == ["anthrax", "cutaneous anthrax"]


def test_longest_first_protects_superstring():
    # Claims are per identical span, so claim order never changes this result.
    doc = Document("d", "x y")
    for order in itertools.permutations(["x y", "x"]):
        got = {p.extracted: p.span for p in ground(list(order), doc, RD)}
        assert got == {"x y": Span(0, 3), "x": Span(0, 1)}


def test_whole_token_rule():
    doc = Document("d", "CFTR mutations cause CF.")
    (p,) = ground(["CF"], doc, RD)
    assert p.span == Span(21, 23)
    (p,) = ground(["CF"], Document("d", "CFTR only"), RD)
    assert p.span is None
    (p,) = ground(["CF"], Document("d", "CFTR only"), RD, GroundingPolicy(whole_token=False))
    assert p.span == Span(0, 2)


def test_punctuation_boundaries_allowed():
    doc = Document("d", "(Dravet syndrome) and Dravet-like")
    got = spans(ground(["Dravet syndrome", "Dravet"], doc, RD))
    assert got == [Span(1, 16), Span(1, 7)]


def test_normalized_text_offsets():
    n = NormalizedText("  A\tB  c ")
    assert n.text == "a b c "
    assert list(n.find_all("b c")) == [Span(4, 8)]
    assert normalize_query("  Heart   DEFECT ") == "heart defect"


def test_empty_string_never_grounds():
    (p,) = ground([""], Document("d", "text"), RD)
    assert p.span is None


# --- properties ---------------------------------------------------------------

WORDS = ["fever", "rash", "cf", "cftr", "anthrax", "cutaneous", "of", "the"]
texts = st.lists(st.sampled_from(WORDS), min_size=1, max_size=20).map(" ".join)
queries = st.lists(
    st.lists(st.sampled_from(WORDS), min_size=1, max_size=3).map(" ".join), max_size=8
)


@settings(max_examples=300, deadline=None)
@given(text=texts, strings=queries, whole=st.booleans(), longest=st.booleans())
def test_grounding_invariants(text, strings, whole, longest):
    doc = Document("d", text)
    out = ground(strings, doc, RD, GroundingPolicy(whole_token=whole, longest_first=longest))
    assert [p.extracted for p in out] == strings
    grounded = [p.span for p in out if p.span is not None]
    assert len(grounded) == len(set(grounded))
    for p in out:
        if p.span is not None:
            assert normalize_query(text[p.span.start:p.span.end]) == normalize_query(p.extracted)


@settings(max_examples=200, deadline=None)
@given(text=texts, strings=queries)
def test_string_present_as_token_sequence_is_grounded_when_unique(text, strings):
    # Each distinct string that occurs at least as many times as it is requested gets grounded.
    doc = Document("d", text)
    out = ground(strings, doc, RD)
    tokens = text.split()
    for p in out:
        q = p.extracted.split()
        occurrences = sum(tokens[i:i + len(q)] == q for i in range(len(tokens)))
        if strings.count(p.extracted) <= occurrences:
            assert p.grounded
