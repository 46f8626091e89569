"""Span-level precision/recall/F1 under exact and relaxed matching.

Spans on both sides are first stripped of leading and trailing stop words.
Predictions are then paired one-to-one with gold entities of the same type,
per document, by a greedy pass over candidate pairs: exact-span pairs first,
then by larger character overlap, then by leftmost gold start.
"""

from __future__ import annotations

import enum
import re
from collections import Counter, defaultdict
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from pnb.corpus import ENTITY_TYPES, Document, EntityType, GoldEntity, Span
from pnb.errors import DocMismatch
from pnb.grounding import Prediction

_TOKEN = re.compile(r"[^\W_]+")


class MatchRegime(str, enum.Enum):
    Exact = "exact"
    Relaxed = "relaxed"


def load_stopwords(path: str | Path | None = None) -> frozenset[str]:
    """One word per line; ``#`` starts a comment. Defaults to the bundled English list."""
    if path is None:
        raw = resources.files("pnb").joinpath("data/stopwords.txt").read_text(encoding="utf-8")
    else:
        raw = Path(path).read_text(encoding="utf-8")
    words = set()
    for line in raw.splitlines():
        line = line.split("#", 1)[0].strip().lower()
        if line:
            words.add(line)
    return frozenset(words)


def _trim_bounds(text: str, span: Span, stopwords: frozenset[str]) -> tuple[Span, bool]:
    tokens = list(_TOKEN.finditer(text, span.start, span.end))
    if not tokens:
        return span, False
    is_stop = [t.group().lower() in stopwords for t in tokens]
    if all(is_stop):
        return span, True
    lead = is_stop.index(False)
    trail = is_stop[::-1].index(False)
    start = tokens[lead].start() if lead else span.start
    end = tokens[len(tokens) - 1 - trail].end() if trail else span.end
    return Span(start, end), False


def trim_stopwords(span: Span, doc: Document | str, stopwords: frozenset[str] | None = None) -> Span:
    """Drop leading/trailing stop-word tokens; a span made only of stop words is returned unchanged."""
    text = doc if isinstance(doc, str) else doc.text
    return _trim_bounds(text, span, stopwords if stopwords is not None else load_stopwords())[0]


def is_all_stopwords(span: Span, doc: Document | str, stopwords: frozenset[str] | None = None) -> bool:
    text = doc if isinstance(doc, str) else doc.text
    return _trim_bounds(text, span, stopwords if stopwords is not None else load_stopwords())[1]


def trim_gold(ent: GoldEntity, text: str, stopwords: frozenset[str]) -> GoldEntity:
    frags = list(ent.fragments)
    first, _ = _trim_bounds(text, frags[0], stopwords)
    frags[0] = Span(first.start, frags[0].end)
    last, _ = _trim_bounds(text, frags[-1], stopwords)
    frags[-1] = Span(frags[-1].start, last.end)
    surface = " ".join(text[f.start:f.end] for f in frags)
    return replace(ent, fragments=tuple(frags), surface=surface)


def trim_prediction(pred: Prediction, text: str, stopwords: frozenset[str]) -> Prediction:
    if pred.span is None:
        return pred
    return replace(pred, span=_trim_bounds(text, pred.span, stopwords)[0])


def overlap(pred: Prediction, gold: GoldEntity) -> int:
    if pred.span is None:
        return 0
    return sum(pred.span.overlap(f) for f in gold.fragments)


def same_span(pred: Prediction, gold: GoldEntity) -> bool:
    return pred.span is not None and (pred.span,) == gold.fragments


def is_match(pred: Prediction, gold: GoldEntity, regime: MatchRegime) -> bool:
    """Inputs are expected to be stop-word trimmed already."""
    if pred.etype is not gold.etype or pred.span is None:
        return False
    if regime is MatchRegime.Exact:
        return same_span(pred, gold)
    return overlap(pred, gold) > 0


def greedy_pairs(
    preds: Sequence[Prediction],
    golds: Sequence[GoldEntity],
    regime: MatchRegime,
) -> list[tuple[int, int]]:
    """One-to-one greedy assignment between same-document predictions and golds."""
    cands = []
    for pi, p in enumerate(preds):
        for gi, g in enumerate(golds):
            if is_match(p, g, regime):
                cands.append((not same_span(p, g), -overlap(p, g), g.start, p.span.start, pi, gi))
    cands.sort()
    used_p: set[int] = set()
    used_g: set[int] = set()
    pairs = []
    for *_, pi, gi in cands:
        if pi in used_p or gi in used_g:
            continue
        used_p.add(pi)
        used_g.add(gi)
        pairs.append((pi, gi))
    return pairs


@dataclass(frozen=True)
class Counts:
    tp: int = 0
    fp: int = 0
    fn: int = 0

    def __add__(self, other: Counts) -> Counts:
        return Counts(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn)

    @property
    def precision(self) -> float:
        return self.tp / (self.tp + self.fp) if self.tp + self.fp else 0.0

    @property
    def recall(self) -> float:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else 0.0

    @property
    def f1(self) -> float:
        return f1_score(self.precision, self.recall)

    def to_dict(self) -> dict:
        return {
            "tp": self.tp, "fp": self.fp, "fn": self.fn,
            "precision": round(self.precision, 6),
            "recall": round(self.recall, 6),
            "f1": round(self.f1, 6),
        }


def f1_score(precision: float, recall: float) -> float:
    return 2 * precision * recall / (precision + recall) if precision + recall else 0.0


@dataclass
class PreparedDoc:
    doc: Document
    golds: list[GoldEntity]
    preds: list[Prediction] = field(default_factory=list)


def prepare(
    preds: Iterable[Prediction],
    docs: Iterable[Document],
    stopwords: frozenset[str] | None = None,
) -> dict[str, PreparedDoc]:
    """Group predictions by document and stop-word trim both sides."""
    sw = stopwords if stopwords is not None else load_stopwords()
    out = {d.doc_id: PreparedDoc(d, [trim_gold(g, d.text, sw) for g in d.entities]) for d in docs}
    for p in preds:
        if p.doc_id not in out:
            raise DocMismatch(f"prediction references unknown document {p.doc_id!r}")
        out[p.doc_id].preds.append(trim_prediction(p, out[p.doc_id].doc.text, sw))
    return out


def score_prepared(prepared: Mapping[str, PreparedDoc], regime: MatchRegime) -> dict[EntityType, Counts]:
    per_type = {t: Counts() for t in ENTITY_TYPES}
    for pd in prepared.values():
        for t in ENTITY_TYPES:
            ps = [p for p in pd.preds if p.etype is t]
            gs = [g for g in pd.golds if g.etype is t]
            tp = len(greedy_pairs(ps, gs, regime))
            per_type[t] = per_type[t] + Counts(tp, len(ps) - tp, len(gs) - tp)
    return per_type


@dataclass(frozen=True)
class RegimeScores:
    per_type: Mapping[EntityType, Counts]

    @property
    def overall(self) -> Counts:
        total = Counts()
        for c in self.per_type.values():
            total = total + c
        return total

    @property
    def macro(self) -> dict[str, float]:
        n = len(ENTITY_TYPES)
        p = sum(self.per_type[t].precision for t in ENTITY_TYPES) / n
        r = sum(self.per_type[t].recall for t in ENTITY_TYPES) / n
        f = sum(self.per_type[t].f1 for t in ENTITY_TYPES) / n
        return {"precision": round(p, 6), "recall": round(r, 6), "f1": round(f, 6)}

    def to_dict(self) -> dict:
        d = {t.value: self.per_type[t].to_dict() for t in ENTITY_TYPES}
        d["Overall"] = self.overall.to_dict()
        d["Macro"] = self.macro
        return d


def match_and_score(
    preds: Iterable[Prediction],
    docs: Iterable[Document],
    regime: MatchRegime,
    stopwords: frozenset[str] | None = None,
) -> RegimeScores:
    return RegimeScores(score_prepared(prepare(preds, docs, stopwords), regime))


@dataclass(frozen=True)
class MatchReport:
    exact: RegimeScores
    relaxed: RegimeScores

    def regime(self, regime: MatchRegime) -> RegimeScores:
        return self.exact if regime is MatchRegime.Exact else self.relaxed

    def to_dict(self) -> dict:
        return {"exact": self.exact.to_dict(), "relaxed": self.relaxed.to_dict()}

    def to_markdown(self) -> str:
        return render_table(
            ["Entity", "Exact P", "Exact R", "Exact F1", "Relaxed P", "Relaxed R", "Relaxed F1"],
            [
                [label, *_prf(self.exact, key), *_prf(self.relaxed, key)]
                for label, key in [(t.display, t) for t in ENTITY_TYPES] + [("Overall", None)]
            ],
        )


def _prf(scores: RegimeScores, key: EntityType | None) -> list[str]:
    c = scores.overall if key is None else scores.per_type[key]
    return [f"{c.precision:.3f}", f"{c.recall:.3f}", f"{c.f1:.3f}"]


def evaluate(
    preds: Iterable[Prediction],
    docs: Iterable[Document],
    stopwords: frozenset[str] | None = None,
) -> MatchReport:
    prepared = prepare(preds, docs, stopwords)
    return MatchReport(
        exact=RegimeScores(score_prepared(prepared, MatchRegime.Exact)),
        relaxed=RegimeScores(score_prepared(prepared, MatchRegime.Relaxed)),
    )


def render_table(header: list[str], rows: list[list[str]]) -> str:
    """Markdown table with space-padded columns."""
    widths = [max(len(str(r[i])) for r in [header, *rows]) for i in range(len(header))]

    def fmt(r: list[str]) -> str:
        cells = [str(c).ljust(w) if i == 0 else str(c).rjust(w) for i, (c, w) in enumerate(zip(r, widths))]
        return "| " + " | ".join(cells) + " |"

    sep = "|" + "|".join(("-" * (w + 2)) if i == 0 else ("-" * (w + 1) + ":") for i, w in enumerate(widths)) + "|"
    return "\n".join([fmt(header), sep, *(fmt(r) for r in rows)]) + "\n"


# ---------------------------------------------------------------------------
# String-level fallback

def normalize_entity_string(s: str, stopwords: frozenset[str]) -> str:
    tokens = [t.lower() for t in _TOKEN.findall(s)]
    while tokens and tokens[0] in stopwords:
        tokens.pop(0)
    while tokens and tokens[-1] in stopwords:
        tokens.pop()
    return " ".join(tokens)


def score_strings(
    preds: Iterable[Prediction],
    docs: Iterable[Document],
    stopwords: frozenset[str] | None = None,
) -> RegimeScores:
    """Multiset match of normalized strings per document and type, ignoring offsets."""
    sw = stopwords if stopwords is not None else load_stopwords()
    docs = list(docs)
    known = {d.doc_id for d in docs}
    pred_bags: dict[tuple[str, EntityType], Counter] = defaultdict(Counter)
    for p in preds:
        if p.doc_id not in known:
            raise DocMismatch(f"prediction references unknown document {p.doc_id!r}")
        pred_bags[(p.doc_id, p.etype)][normalize_entity_string(p.extracted, sw)] += 1
    per_type = {t: Counts() for t in ENTITY_TYPES}
    for d in docs:
        for t in ENTITY_TYPES:
            gold = Counter(normalize_entity_string(g.surface, sw) for g in d.entities_of(t))
            pred = pred_bags.get((d.doc_id, t), Counter())
            tp = sum((gold & pred).values())
            per_type[t] = per_type[t] + Counts(tp, sum(pred.values()) - tp, sum(gold.values()) - tp)
    return RegimeScores(per_type)
