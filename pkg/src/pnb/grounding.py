"""Map extracted entity strings back to character spans of the source document."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

from pnb.corpus import Document, EntityType, Span


@dataclass(frozen=True)
class Prediction:
    doc_id: str
    etype: EntityType
    extracted: str
    span: Span | None = None

    @property
    def grounded(self) -> bool:
        return self.span is not None

    def to_record(self) -> dict:
        return {
            "doc_id": self.doc_id,
            "etype": self.etype.value,
            "extracted": self.extracted,
            "start": self.span.start if self.span else None,
            "end": self.span.end if self.span else None,
        }


@dataclass(frozen=True)
class GroundingPolicy:
    whole_token: bool = True
    longest_first: bool = True


def _lower1(c: str) -> str:
    lc = c.lower()
    return lc if len(lc) == 1 else c


class NormalizedText:
    """Lower-cased, whitespace-collapsed view of a text with offsets back into the original."""

    def __init__(self, text: str):
        self.original = text
        chars: list[str] = []
        offsets: list[int] = []
        prev_space = True
        for i, c in enumerate(text):
            if c.isspace():
                if not prev_space:
                    chars.append(" ")
                    offsets.append(i)
                prev_space = True
            else:
                chars.append(_lower1(c))
                offsets.append(i)
                prev_space = False
        self.text = "".join(chars)
        self.offsets = offsets

    def find_all(self, needle: str) -> Iterable[Span]:
        if not needle:
            return
        pos = self.text.find(needle)
        while pos != -1:
            start = self.offsets[pos]
            end = self.offsets[pos + len(needle) - 1] + 1
            yield Span(start, end)
            pos = self.text.find(needle, pos + 1)


def normalize_query(s: str) -> str:
    return " ".join("".join(_lower1(c) for c in s).split())


def _token_aligned(text: str, span: Span) -> bool:
    s, e = span.start, span.end
    if s > 0 and text[s - 1].isalnum() and text[s].isalnum():
        return False
    if e < len(text) and text[e - 1].isalnum() and text[e].isalnum():
        return False
    return True


def ground(
    extracted_strings: Iterable[str],
    doc: Document,
    etype: EntityType,
    policy: GroundingPolicy = GroundingPolicy(),
    _norm: NormalizedText | None = None,
) -> list[Prediction]:
    """Ground each string to the leftmost unclaimed occurrence in ``doc.text``.

    Matching is case-insensitive over whitespace-normalized text and, by
    default, must not start or end inside an alphanumeric run. Strings are
    processed longest first so a short name cannot take the span its
    superstring needs; an occurrence (identical span) is claimed at most once.
    Results are returned in input order; strings with no free occurrence are
    kept as ungrounded predictions.
    """
    strings = list(extracted_strings)
    norm = _norm or NormalizedText(doc.text)
    queries = [normalize_query(s) for s in strings]
    order = list(range(len(strings)))
    if policy.longest_first:
        order.sort(key=lambda i: (-len(queries[i]), i))

    claimed: set[Span] = set()
    spans: list[Span | None] = [None] * len(strings)
    for i in order:
        for span in norm.find_all(queries[i]):
            if span in claimed:
                continue
            if policy.whole_token and not _token_aligned(doc.text, span):
                continue
            claimed.add(span)
            spans[i] = span
            break
    return [Prediction(doc.doc_id, etype, s, sp) for s, sp in zip(strings, spans)]
