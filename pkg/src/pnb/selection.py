"""Few-shot example selection: seeded random draw or most-similar training text."""

from __future__ import annotations

import logging
import math
import random
import re
from collections import Counter
from pathlib import Path
from typing import Mapping, Sequence, Union

from pnb.corpus import Document
from pnb.errors import EmptyTrainingSet, SchemaError

log = logging.getLogger(__name__)

SparseVector = Mapping[str, float]
DenseVector = Sequence[float]
DocVector = Union[SparseVector, DenseVector]

_TOKEN = re.compile(r"[^\W_]+")
# Cosines closer than this are treated as ties and resolved by doc_id.
TIE_EPS = 1e-12


def tokenize(text: str) -> list[str]:
    return _TOKEN.findall(text.lower())


def _tfidf(tfs: Mapping[str, Counter], df: Mapping[str, int], n: int) -> dict[str, dict[str, float]]:
    idf = {term: math.log((1 + n) / (1 + d)) + 1.0 for term, d in df.items()}
    return {doc_id: {t: c * idf[t] for t, c in tf.items()} for doc_id, tf in tfs.items()}


def vectorize(corpus: Sequence[Document]) -> dict[str, dict[str, float]]:
    """TF-IDF vectors with raw term counts and smoothed idf ``ln((1+N)/(1+df)) + 1``."""
    tfs = {doc.doc_id: Counter(tokenize(doc.text)) for doc in corpus}
    df: Counter[str] = Counter()
    for tf in tfs.values():
        df.update(tf.keys())
    return _tfidf(tfs, df, len(tfs))


def cosine(u: DocVector, v: DocVector) -> float:
    if isinstance(u, Mapping):
        if not isinstance(v, Mapping):
            raise TypeError("cannot compare sparse and dense vectors")
        if len(u) > len(v):
            u, v = v, u
        dot = sum(w * v.get(t, 0.0) for t, w in u.items())
        nu = math.sqrt(sum(w * w for w in u.values()))
        nv = math.sqrt(sum(w * w for w in v.values()))
    else:
        if len(u) != len(v):
            raise ValueError("dense vectors differ in dimension")
        dot = math.fsum(a * b for a, b in zip(u, v))
        nu = math.sqrt(math.fsum(a * a for a in u))
        nv = math.sqrt(math.fsum(b * b for b in v))
    if nu == 0.0 or nv == 0.0:
        return 0.0
    return max(-1.0, min(1.0, dot / (nu * nv)))


def select_random(train: Sequence[Document], seed: int, test_doc_id: str = "") -> Document:
    """Uniform draw, reproducible per ``(seed, test_doc_id)``."""
    if not train:
        raise EmptyTrainingSet("no training documents to draw from")
    pool = sorted(train, key=lambda d: d.doc_id)
    rng = random.Random(f"{seed}:{test_doc_id}")
    return pool[rng.randrange(len(pool))]


def select_similar(
    train: Sequence[Document],
    test_doc: Document,
    vectors: Mapping[str, DocVector],
    seed: int = 0,
) -> Document:
    """Training document with the highest cosine to ``test_doc``; ties go to the smallest doc_id.

    When nothing in ``train`` shares any similarity with the test document the
    choice falls back to :func:`select_random` with ``seed``.
    """
    if not train:
        raise EmptyTrainingSet("no training documents to select from")
    if len(train) == 1:
        return train[0]
    query = vectors[test_doc.doc_id]
    scored = [(cosine(vectors[d.doc_id], query), d) for d in train]
    if all(s == 0.0 for s, _ in scored):
        log.warning("no similarity basis for %s; falling back to random selection", test_doc.doc_id)
        return select_random(train, seed, test_doc.doc_id)
    best = max(s for s, _ in scored)
    tied = [d for s, d in scored if best - s <= TIE_EPS]
    return min(tied, key=lambda d: d.doc_id)


def load_embeddings(path: str | Path) -> dict[str, tuple[float, ...]]:
    """Read ``doc_id<TAB>v1,v2,...`` lines; every vector must have the same dimension."""
    out: dict[str, tuple[float, ...]] = {}
    dim = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            try:
                doc_id, values = line.split("\t")
                vec = tuple(float(x) for x in values.split(","))
            except ValueError as exc:
                raise SchemaError(f"bad embedding record: {exc}", lineno) from exc
            if not all(math.isfinite(x) for x in vec):
                raise SchemaError("non-finite embedding value", lineno)
            if dim is None:
                dim = len(vec)
            elif len(vec) != dim:
                raise SchemaError(f"expected {dim} dimensions, got {len(vec)}", lineno)
            out[doc_id] = vec
    return out


class SimilarityIndex:
    """Most-similar lookup over a fixed training set.

    With ``embeddings`` the cosine is taken over those dense vectors; otherwise
    TF-IDF is recomputed for every query over the training set plus that one
    test document, exactly as :func:`vectorize` would on ``train + [test_doc]``.
    """

    def __init__(self, train: Sequence[Document], embeddings: Mapping[str, DenseVector] | None = None):
        if not train:
            raise EmptyTrainingSet("no training documents to select from")
        self.train = list(train)
        self.embeddings = embeddings
        if embeddings is None:
            self._tfs = {d.doc_id: Counter(tokenize(d.text)) for d in self.train}
            self._df: Counter[str] = Counter()
            for tf in self._tfs.values():
                self._df.update(tf.keys())

    def vectors_for(self, test_doc: Document) -> Mapping[str, DocVector]:
        if self.embeddings is not None:
            missing = [d.doc_id for d in [*self.train, test_doc] if d.doc_id not in self.embeddings]
            if missing:
                raise KeyError(f"no embedding for {missing[0]!r}")
            return self.embeddings
        tf = Counter(tokenize(test_doc.text))
        df = self._df + Counter(tf.keys())
        return _tfidf({**self._tfs, test_doc.doc_id: tf}, df, len(self._tfs) + 1)

    def select(self, test_doc: Document, seed: int = 0) -> Document:
        return select_similar(self.train, test_doc, self.vectors_for(test_doc), seed)
