"""Unigram+bigram tf-idf features.

tf is the raw count, idf is ``ln((1 + N) / (1 + df)) + 1`` and every
document vector is L2-normalized. idf values are held at 9 significant
digits so a vocabulary written to disk reloads bit-identically.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .data import Dataset, Example, SparseVector, write_atomic


def tokenize(text: str) -> list[str]:
    """Lowercased whitespace unigrams followed by underscore-joined bigrams."""
    words = text.lower().split()
    return words + [f"{a}_{b}" for a, b in zip(words, words[1:])]


def count_terms(text: str) -> dict[str, float]:
    return {t: float(c) for t, c in Counter(tokenize(text)).items()}


def _round9(x: float) -> float:
    return float(f"{x:.9g}")


@dataclass(frozen=True, eq=False)
class Vocabulary:
    terms: tuple[str, ...]
    idf: np.ndarray
    max_features: int = 5000
    ngram_range: tuple[int, int] = (1, 2)
    term_to_index: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        idf = np.asarray(self.idf, dtype=np.float64)
        if idf.shape != (len(self.terms),):
            raise ValueError("idf must have one entry per term")
        if not np.all(np.isfinite(idf)) or np.any(idf < 0):
            raise ValueError("idf values must be finite and >= 0")
        if len(self.terms) > self.max_features:
            raise ValueError("more terms than max_features")
        index = {t: i for i, t in enumerate(self.terms)}
        if len(index) != len(self.terms):
            raise ValueError("duplicate terms")
        idf.setflags(write=False)
        object.__setattr__(self, "idf", idf)
        object.__setattr__(self, "term_to_index", index)

    def __len__(self) -> int:
        return len(self.terms)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, Vocabulary)
            and self.terms == other.terms
            and np.array_equal(self.idf, other.idf)
        )


def build_vocab(corpus: Sequence[Mapping[str, float]], max_features: int = 5000) -> Vocabulary:
    """Keep the ``max_features`` terms with the highest document frequency.

    Ties are broken by lexicographic term order, which also fixes the index
    assignment.
    """
    if not corpus:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    df: Counter[str] = Counter()
    for doc in corpus:
        df.update(t for t, c in doc.items() if c)
    ranked = sorted(df.items(), key=lambda kv: (-kv[1], kv[0]))[:max_features]
    n = len(corpus)
    terms = tuple(t for t, _ in ranked)
    idf = np.array([_round9(math.log((1 + n) / (1 + d)) + 1.0) for _, d in ranked])
    return Vocabulary(terms, idf, max_features)


def vectorize(doc: Mapping[str, float], vocab: Vocabulary) -> SparseVector:
    pairs = []
    for term, count in doc.items():
        j = vocab.term_to_index.get(term)
        if j is not None and count:
            pairs.append((j, count * vocab.idf[j]))
    if not pairs:
        return SparseVector()
    pairs.sort()
    norm = math.sqrt(sum(w * w for _, w in pairs))
    return SparseVector(tuple(j for j, _ in pairs), tuple(float(w / norm) for _, w in pairs))


def vectorize_documents(
    docs: Sequence[Mapping[str, float]],
    vocab: Vocabulary,
    labels: Sequence[int] | None = None,
    num_classes: int = 2,
    domain: str = "",
    label_names: tuple[str, ...] | None = None,
) -> Dataset:
    if labels is None:
        labels = [None] * len(docs)
    examples = [Example(vectorize(d, vocab), y) for d, y in zip(docs, labels)]
    return Dataset.from_examples(examples, num_classes, max(len(vocab), 1), domain, label_names)


def dumps_vocab(vocab: Vocabulary) -> str:
    return "".join(f"{t}\t{i}\t{vocab.idf[i]:.9g}\n" for i, t in enumerate(vocab.terms))


def loads_vocab(text: str, max_features: int | None = None) -> Vocabulary:
    rows = []
    for lineno, line in enumerate(text.splitlines(), 1):
        parts = line.split("\t")
        if len(parts) != 3:
            raise ValueError(f"line {lineno}: expected term<TAB>index<TAB>idf")
        rows.append((int(parts[1]), parts[0], float(parts[2])))
    rows.sort()
    if [r[0] for r in rows] != list(range(len(rows))):
        raise ValueError("vocabulary indices are not 0..n-1")
    return Vocabulary(
        tuple(r[1] for r in rows),
        np.array([r[2] for r in rows]),
        max_features if max_features is not None else max(len(rows), 1),
    )


def save_vocab(vocab: Vocabulary, path) -> None:
    for t in vocab.terms:
        if "\t" in t or "\n" in t:
            raise ValueError(f"term {t!r} cannot be written to a tab-separated file")
    write_atomic(path, dumps_vocab(vocab))


def load_vocab(path) -> Vocabulary:
    return loads_vocab(Path(path).read_text(encoding="utf-8"))
