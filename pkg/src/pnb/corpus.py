"""Brat standoff corpus loading, corpus statistics and train/validation/test splits.

A corpus directory holds paired ``<stem>.txt`` / ``<stem>.ann`` files. Only
text-bound (``T``) annotations enter the data model; attribute, relation,
event and note lines are skipped and tallied.
"""

from __future__ import annotations

import enum
import json
import random
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

from pnb.errors import CorpusError, EmptyCorpus, MalformedLine, SpanOutOfBounds, SurfaceMismatch


class EntityType(str, enum.Enum):
    RareDisease = "RareDisease"
    Disease = "Disease"
    Sign = "Sign"
    Symptom = "Symptom"

    @property
    def display(self) -> str:
        return _DISPLAY[self]

    @property
    def noun(self) -> str:
        """Lower-case singular noun used inside prompts ("rare disease")."""
        return _DISPLAY[self].lower()

    @classmethod
    def parse(cls, value: str | EntityType) -> EntityType:
        if isinstance(value, EntityType):
            return value
        key = re.sub(r"[\s_-]", "", str(value)).lower()
        for member in cls:
            if member.value.lower() == key:
                return member
        raise ValueError(f"unknown entity type: {value!r}")


_DISPLAY = {
    EntityType.RareDisease: "Rare disease",
    EntityType.Disease: "Disease",
    EntityType.Sign: "Sign",
    EntityType.Symptom: "Symptom",
}

# Table order used by every report.
ENTITY_TYPES: tuple[EntityType, ...] = tuple(EntityType)

DEFAULT_LABEL_MAP: dict[str, EntityType] = {
    "RAREDISEASE": EntityType.RareDisease,
    "DISEASE": EntityType.Disease,
    "SIGN": EntityType.Sign,
    "SYMPTOM": EntityType.Symptom,
}


@dataclass(frozen=True, order=True)
class Span:
    """Half-open character interval ``[start, end)`` in Unicode code points."""

    start: int
    end: int

    def __post_init__(self) -> None:
        if not (0 <= self.start < self.end):
            raise ValueError(f"invalid span [{self.start}, {self.end})")

    def __len__(self) -> int:
        return self.end - self.start

    def overlap(self, other: Span) -> int:
        return max(0, min(self.end, other.end) - max(self.start, other.start))


@dataclass(frozen=True)
class GoldEntity:
    id: str
    etype: EntityType
    fragments: tuple[Span, ...]
    surface: str

    @property
    def start(self) -> int:
        return self.fragments[0].start

    @property
    def end(self) -> int:
        return self.fragments[-1].end


@dataclass(frozen=True)
class Document:
    doc_id: str
    text: str
    entities: tuple[GoldEntity, ...] = ()
    # Non-T lines and unmapped labels, e.g. {"A": 3, "label:ANAPHOR": 2}.
    skipped: Mapping[str, int] = field(default_factory=dict, compare=False, hash=False)

    def entities_of(self, etype: EntityType) -> list[GoldEntity]:
        return [e for e in self.entities if e.etype is etype]


@dataclass(frozen=True)
class CorpusStats:
    n_docs: int
    n_sentences: int
    counts: Mapping[EntityType, int]
    per_document: tuple[dict, ...] = ()

    @property
    def n_entities(self) -> int:
        return sum(self.counts.values())

    def to_dict(self) -> dict:
        return {
            "n_docs": self.n_docs,
            "n_sentences": self.n_sentences,
            "n_entities": self.n_entities,
            "counts": {t.value: self.counts.get(t, 0) for t in ENTITY_TYPES},
        }

    def histogram_csv(self) -> str:
        header = ["doc_id", "n_sentences", *(t.value for t in ENTITY_TYPES)]
        rows = [",".join(header)]
        for rec in self.per_document:
            rows.append(",".join(str(rec[h]) for h in header))
        return "\n".join(rows) + "\n"


@dataclass(frozen=True)
class SplitAssignment:
    seed: int
    train: tuple[str, ...]
    validation: tuple[str, ...]
    test: tuple[str, ...]

    @property
    def sizes(self) -> tuple[int, int, int]:
        return len(self.train), len(self.validation), len(self.test)

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "train": sorted(self.train),
            "validation": sorted(self.validation),
            "test": sorted(self.test),
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> SplitAssignment:
        parts = {k: tuple(data[k]) for k in ("train", "validation", "test")}
        seen: set[str] = set()
        for ids in parts.values():
            if seen.intersection(ids) or len(set(ids)) != len(ids):
                raise CorpusError("split sets overlap or contain duplicates")
            seen.update(ids)
        return cls(seed=int(data["seed"]), **parts)


# ---------------------------------------------------------------------------
# Brat parsing

_T_LINE = re.compile(r"^(T\S*)\t(\S+) (\d+ \d+(?:;\d+ \d+)*)\t(.*)$", re.DOTALL)
_WS = re.compile(r"\s+")


def normalize_ws(s: str) -> str:
    return _WS.sub(" ", s).strip()


def build_label_map(overrides: Mapping[str, str | EntityType] | None = None) -> dict[str, EntityType]:
    """Return an upper-cased raw-label lookup, merging user overrides over the defaults."""
    mapping = dict(DEFAULT_LABEL_MAP)
    for raw, etype in (overrides or {}).items():
        mapping[raw.upper()] = EntityType.parse(etype)
    return mapping


def parse_brat_document(
    text_content: str,
    ann_content: str,
    label_map: Mapping[str, str | EntityType] | None = None,
    doc_id: str = "",
) -> Document:
    """Parse one ``.txt``/``.ann`` pair.

    Raises:
        MalformedLine: a ``T`` line that does not follow the standoff grammar,
            or whose fragments are empty or overlap.
        SpanOutOfBounds: an offset beyond the end of ``text_content``.
        SurfaceMismatch: the annotated surface disagrees with the text slice
            after whitespace normalization.
    """
    lookup = build_label_map(label_map)
    entities: list[GoldEntity] = []
    skipped: Counter[str] = Counter()
    n = len(text_content)

    for lineno, line in enumerate(ann_content.splitlines(), start=1):
        if not line.strip():
            continue
        if not line.startswith("T"):
            skipped[line[0]] += 1
            continue
        m = _T_LINE.match(line)
        if m is None:
            raise MalformedLine(line, lineno)
        ann_id, label, offsets, surface = m.groups()
        etype = lookup.get(label.upper())
        if etype is None:
            skipped[f"label:{label}"] += 1
            continue

        frags = []
        for pair in offsets.split(";"):
            a, b = (int(x) for x in pair.split())
            if a >= b:
                raise MalformedLine(line, lineno, "empty fragment")
            if b > n:
                raise SpanOutOfBounds(f"{doc_id or '<doc>'} {ann_id}: [{a}, {b}) exceeds text length {n}")
            frags.append(Span(a, b))
        frags.sort()
        for left, right in zip(frags, frags[1:]):
            if left.end > right.start:
                raise MalformedLine(line, lineno, "overlapping fragments")

        joined = " ".join(text_content[f.start:f.end] for f in frags)
        if normalize_ws(joined) != normalize_ws(surface):
            raise SurfaceMismatch(
                f"{doc_id or '<doc>'} {ann_id}: annotation says {surface!r}, text has {joined!r}"
            )
        entities.append(GoldEntity(ann_id, etype, tuple(frags), joined))

    return Document(doc_id, text_content, tuple(entities), dict(skipped))


def to_brat(doc: Document, labels: Mapping[EntityType, str] | None = None) -> str:
    """Serialize a document's entities back to standoff ``T`` lines."""
    names = labels or {v: k for k, v in DEFAULT_LABEL_MAP.items()}
    lines = []
    for ent in doc.entities:
        offsets = ";".join(f"{f.start} {f.end}" for f in ent.fragments)
        # Surfaces that span a line break must stay on one line.
        lines.append(f"{ent.id}\t{names[ent.etype]} {offsets}\t{normalize_ws(ent.surface)}")
    return "".join(line + "\n" for line in lines)


def _read(path: Path) -> str:
    # newline="" keeps \r\n intact; Brat offsets count every character.
    with open(path, encoding="utf-8", newline="") as fh:
        return fh.read()


def load_corpus(
    directory: str | Path,
    label_map: Mapping[str, str | EntityType] | None = None,
) -> list[Document]:
    """Load every ``*.txt`` under ``directory`` (recursively) with its sibling ``.ann``.

    Documents come back sorted by ``doc_id``.
    """
    root = Path(directory)
    if not root.is_dir():
        raise CorpusError(f"corpus directory not found: {root}")
    docs: dict[str, Document] = {}
    for txt in sorted(root.rglob("*.txt")):
        ann = txt.with_suffix(".ann")
        if not ann.exists():
            raise CorpusError(f"missing annotation file for {txt}")
        if txt.stem in docs:
            raise CorpusError(f"duplicate doc_id {txt.stem!r}")
        docs[txt.stem] = parse_brat_document(_read(txt), _read(ann), label_map, doc_id=txt.stem)
    return [docs[k] for k in sorted(docs)]


# ---------------------------------------------------------------------------
# Statistics and splits

_SENT_BOUNDARY = re.compile(r"(?<=[.!?])\s+(?=[A-Z])")


def count_sentences(text: str) -> int:
    """Count sentences: a boundary is ``.``/``!``/``?`` followed by whitespace and an upper-case letter."""
    stripped = text.strip()
    if not stripped:
        return 0
    return sum(1 for part in _SENT_BOUNDARY.split(stripped) if part.strip())


def corpus_stats(corpus: Iterable[Document]) -> CorpusStats:
    counts: Counter[EntityType] = Counter({t: 0 for t in ENTITY_TYPES})
    per_doc = []
    n_docs = n_sents = 0
    for doc in corpus:
        n_docs += 1
        sents = count_sentences(doc.text)
        n_sents += sents
        doc_counts = Counter(e.etype for e in doc.entities)
        counts.update(doc_counts)
        rec = {"doc_id": doc.doc_id, "n_sentences": sents}
        rec.update({t.value: doc_counts.get(t, 0) for t in ENTITY_TYPES})
        per_doc.append(rec)
    return CorpusStats(n_docs, n_sents, dict(counts), tuple(per_doc))


def split_corpus(corpus: Iterable[Document], seed: int) -> SplitAssignment:
    """Shuffle doc ids with ``seed`` and cut them 8:1:1 (floors for train and validation)."""
    ids = [d.doc_id for d in corpus]
    if not ids:
        raise EmptyCorpus("cannot split an empty corpus")
    random.Random(seed).shuffle(ids)
    n = len(ids)
    n_train = n * 8 // 10
    n_val = n // 10
    return SplitAssignment(
        seed=seed,
        train=tuple(ids[:n_train]),
        validation=tuple(ids[n_train:n_train + n_val]),
        test=tuple(ids[n_train + n_val:]),
    )


def dump_json(obj: object, path: str | Path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8")
