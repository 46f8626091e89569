"""Five-way classification of prediction errors and per-type tabulation.

Predictions from all four entity-type prompts are pooled per document, since
a type confusion can only show up across prompts. Pairing runs in stages,
each consuming the predictions and gold entities it pairs:

1. exact span, same type      -> correct, no record
2. exact span, different type -> TypeOnly
3. overlap, same type         -> BoundaryOnly
4. overlap, different type    -> BoundaryAndType
5. leftovers                  -> Spurious (predictions) / Missed (gold)
"""

from __future__ import annotations

import csv
import enum
import io
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from pnb.corpus import ENTITY_TYPES, Document, EntityType, GoldEntity
from pnb.evaluation import PreparedDoc, overlap, prepare, render_table, same_span
from pnb.grounding import Prediction


class ErrorCategory(str, enum.Enum):
    BoundaryOnly = "boundary"
    TypeOnly = "type"
    BoundaryAndType = "boundary_and_type"
    Spurious = "spurious"
    Missed = "missed"

    @property
    def heading(self) -> str:
        return _HEADINGS[self]


_HEADINGS = {
    ErrorCategory.BoundaryOnly: "Boundary wrong, type right",
    ErrorCategory.TypeOnly: "Boundary right, type wrong",
    ErrorCategory.BoundaryAndType: "Boundary and type wrong",
    ErrorCategory.Spurious: "Spurious (FP)",
    ErrorCategory.Missed: "Missed (FN)",
}

# Column order of the error table.
CATEGORIES: tuple[ErrorCategory, ...] = (
    ErrorCategory.BoundaryOnly,
    ErrorCategory.TypeOnly,
    ErrorCategory.BoundaryAndType,
    ErrorCategory.Spurious,
    ErrorCategory.Missed,
)


@dataclass(frozen=True)
class ErrorRecord:
    category: ErrorCategory
    doc_id: str
    attributed_type: EntityType
    pred: Prediction | None = None
    gold: GoldEntity | None = None

    def __post_init__(self) -> None:
        if self.category is ErrorCategory.Spurious:
            ok = self.pred is not None and self.gold is None
        elif self.category is ErrorCategory.Missed:
            ok = self.pred is None and self.gold is not None
        else:
            ok = self.pred is not None and self.gold is not None
        if not ok:
            raise ValueError(f"{self.category.name} record has the wrong pred/gold combination")

    def to_record(self) -> dict:
        rec: dict = {
            "category": self.category.value,
            "doc_id": self.doc_id,
            "attributed_type": self.attributed_type.value,
        }
        if self.pred is not None:
            rec["pred"] = self.pred.to_record()
        if self.gold is not None:
            rec["gold"] = {
                "id": self.gold.id,
                "etype": self.gold.etype.value,
                "fragments": [[f.start, f.end] for f in self.gold.fragments],
                "surface": self.gold.surface,
            }
        return rec


_STAGES: tuple[tuple[bool, bool, ErrorCategory | None], ...] = (
    # (needs exact span, needs same type, category)
    (True, True, None),
    (True, False, ErrorCategory.TypeOnly),
    (False, True, ErrorCategory.BoundaryOnly),
    (False, False, ErrorCategory.BoundaryAndType),
)


def _stage_edge(p: Prediction, g: GoldEntity, exact: bool, same_type: bool) -> bool:
    if p.span is None or (p.etype is g.etype) != same_type:
        return False
    return same_span(p, g) if exact else overlap(p, g) > 0


def classify_document(
    doc_id: str,
    preds: Sequence[Prediction],
    golds: Sequence[GoldEntity],
) -> tuple[list[ErrorRecord], int]:
    """Classify one document's (trimmed) predictions; returns the records and the TP count."""
    free_p = set(range(len(preds)))
    free_g = set(range(len(golds)))
    records: list[ErrorRecord] = []
    tp = 0
    for exact, same_type, category in _STAGES:
        cands = sorted(
            (-overlap(preds[pi], golds[gi]), golds[gi].start, preds[pi].span.start, pi, gi)
            for pi in free_p
            for gi in free_g
            if _stage_edge(preds[pi], golds[gi], exact, same_type)
        )
        for *_, pi, gi in cands:
            if pi not in free_p or gi not in free_g:
                continue
            free_p.discard(pi)
            free_g.discard(gi)
            if category is None:
                tp += 1
            else:
                records.append(ErrorRecord(category, doc_id, golds[gi].etype, preds[pi], golds[gi]))
    for pi in sorted(free_p):
        records.append(ErrorRecord(ErrorCategory.Spurious, doc_id, preds[pi].etype, pred=preds[pi]))
    for gi in sorted(free_g):
        records.append(ErrorRecord(ErrorCategory.Missed, doc_id, golds[gi].etype, gold=golds[gi]))
    return records, tp


def classify_prepared(prepared: Mapping[str, PreparedDoc]) -> list[ErrorRecord]:
    records: list[ErrorRecord] = []
    for doc_id in sorted(prepared):
        pd = prepared[doc_id]
        records.extend(classify_document(doc_id, pd.preds, pd.golds)[0])
    return records


def classify_errors(
    preds: Iterable[Prediction],
    docs: Iterable[Document],
    stopwords: frozenset[str] | None = None,
) -> list[ErrorRecord]:
    return classify_prepared(prepare(preds, docs, stopwords))


# ---------------------------------------------------------------------------
# Tabulation

def row_percentages(counts: Sequence[int]) -> list[int]:
    """Whole-number row percentages that sum to exactly 100.

    Each share is rounded to the nearest integer; any residual left by
    rounding is absorbed by the category with the largest count (first such
    category on ties). An all-zero row stays all zero.
    """
    total = sum(counts)
    if total == 0:
        return [0] * len(counts)
    pcts = [int(100 * c / total + 0.5) for c in counts]
    residual = 100 - sum(pcts)
    if residual:
        biggest = max(range(len(counts)), key=lambda i: (counts[i], -i))
        pcts[biggest] += residual
    return pcts


@dataclass(frozen=True)
class ErrorTable:
    counts: Mapping[EntityType, tuple[int, ...]]

    def total(self, etype: EntityType) -> int:
        return sum(self.counts[etype])

    def percentages(self, etype: EntityType) -> list[int]:
        return row_percentages(self.counts[etype])

    def to_dict(self) -> dict:
        out = {}
        for t in ENTITY_TYPES:
            pcts = self.percentages(t)
            out[t.value] = {
                "total": self.total(t),
                **{c.value: {"count": n, "percent": p} for c, n, p in zip(CATEGORIES, self.counts[t], pcts)},
            }
        return out

    def _cells(self, t: EntityType) -> list[str]:
        pcts = self.percentages(t)
        cells = [f"{n} ({p}%)" for n, p in zip(self.counts[t], pcts)]
        total = self.total(t)
        cells.append(f"{total} (100%)" if total else "0 (0%)")
        return cells

    def to_markdown(self) -> str:
        header = ["Entity", *(c.heading for c in CATEGORIES), "Total errors"]
        return render_table(header, [[t.display, *self._cells(t)] for t in ENTITY_TYPES])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["entity", *(f"{c.value}_{k}" for c in CATEGORIES for k in ("count", "percent")), "total"])
        for t in ENTITY_TYPES:
            row: list = [t.value]
            for n, p in zip(self.counts[t], self.percentages(t)):
                row += [n, p]
            w.writerow(row + [self.total(t)])
        return buf.getvalue()


def error_table(records: Iterable[ErrorRecord]) -> ErrorTable:
    tally = {t: [0] * len(CATEGORIES) for t in ENTITY_TYPES}
    col = {c: i for i, c in enumerate(CATEGORIES)}
    for r in records:
        tally[r.attributed_type][col[r.category]] += 1
    return ErrorTable({t: tuple(v) for t, v in tally.items()})
