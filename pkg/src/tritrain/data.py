"""Datasets, splits and sampling for domain-adaptation experiments.

A :class:`Dataset` is stored as a CSR feature matrix plus an optional label
vector; :class:`Example` and :class:`SparseVector` are the per-row views.
Labeled and unlabeled datasets are distinct: a dataset either carries a
label for every row or for none.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp

BLITZER_LABELS = ("negative", "positive")
_LABEL_TOKEN = "#label#"


class DataError(ValueError):
    """Malformed input data or an infeasible sampling request."""


class ParseError(DataError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


@dataclass(frozen=True)
class SparseVector:
    """Sorted (index, weight) pairs with no stored zeros."""

    indices: tuple[int, ...] = ()
    weights: tuple[float, ...] = ()

    def __post_init__(self):
        if len(self.indices) != len(self.weights):
            raise ValueError("indices and weights differ in length")
        prev = -1
        for i, w in zip(self.indices, self.weights):
            if i < 0 or i <= prev:
                raise ValueError("indices must be nonnegative and strictly increasing")
            if w == 0.0:
                raise ValueError(f"zero weight stored at index {i}")
            prev = i

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[int, float]]) -> "SparseVector":
        items = sorted((int(i), float(w)) for i, w in pairs if w != 0.0)
        return cls(tuple(i for i, _ in items), tuple(w for _, w in items))

    @classmethod
    def from_dense(cls, values: Sequence[float]) -> "SparseVector":
        return cls.from_pairs(enumerate(values))

    def __len__(self) -> int:
        return len(self.indices)

    def norm(self) -> float:
        return math.sqrt(sum(w * w for w in self.weights))

    def to_dense(self, dim: int) -> np.ndarray:
        out = np.zeros(dim)
        out[list(self.indices)] = self.weights
        return out


@dataclass(frozen=True)
class Example:
    features: SparseVector
    label: int | None = None
    source_text: str | None = None


@dataclass(frozen=True)
class SplitSpec:
    n_labeled_source: int = 2000
    n_unlabeled_target: int = 2000
    n_validation_target: int = 200
    seed: int = 0

    def __post_init__(self):
        for name in ("n_labeled_source", "n_unlabeled_target", "n_validation_target"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")


@dataclass(frozen=True, eq=False)
class Dataset:
    """Immutable collection of examples sharing a feature space.

    ``y`` is ``None`` for an unlabeled dataset. ``feature_names`` is only
    set for raw-count datasets whose columns are verbatim corpus tokens.
    """

    X: sp.csr_matrix
    y: np.ndarray | None
    num_classes: int
    domain: str = ""
    label_names: tuple[str, ...] | None = None
    texts: tuple[str | None, ...] | None = None
    feature_names: tuple[str, ...] | None = field(default=None, repr=False)

    def __post_init__(self):
        X = sp.csr_matrix(self.X, dtype=np.float64)
        X.sum_duplicates()
        X.eliminate_zeros()
        X.sort_indices()
        object.__setattr__(self, "X", X)
        if self.num_classes < 1:
            raise ValueError("num_classes must be positive")
        if X.shape[1] < 1:
            raise ValueError("dimensionality must be positive")
        if self.y is not None:
            y = np.asarray(self.y, dtype=np.int64).reshape(-1)
            if len(y) != X.shape[0]:
                raise ValueError("label count does not match row count")
            if len(y) and (y.min() < 0 or y.max() >= self.num_classes):
                raise ValueError("label outside [0, num_classes)")
            y.setflags(write=False)
            object.__setattr__(self, "y", y)
        if self.texts is not None and len(self.texts) != X.shape[0]:
            raise ValueError("texts do not match row count")
        if self.feature_names is not None and len(self.feature_names) != X.shape[1]:
            raise ValueError("feature_names do not match dimensionality")

    @classmethod
    def from_examples(
        cls,
        examples: Sequence[Example],
        num_classes: int,
        dimensionality: int,
        domain: str = "",
        label_names: tuple[str, ...] | None = None,
    ) -> "Dataset":
        labels = [ex.label for ex in examples]
        n_labeled = sum(lab is not None for lab in labels)
        if 0 < n_labeled < len(labels):
            raise DataError("mixed labeled/unlabeled examples")
        rows, cols, vals = [], [], []
        for r, ex in enumerate(examples):
            if ex.features.indices and ex.features.indices[-1] >= dimensionality:
                raise DataError(f"example {r} has index >= dimensionality {dimensionality}")
            rows.extend([r] * len(ex.features))
            cols.extend(ex.features.indices)
            vals.extend(ex.features.weights)
        X = sp.csr_matrix((vals, (rows, cols)), shape=(len(examples), dimensionality))
        y = np.array(labels, dtype=np.int64) if n_labeled or not examples else None
        texts = tuple(ex.source_text for ex in examples)
        if all(t is None for t in texts):
            texts = None
        return cls(X, y, num_classes, domain, label_names, texts)

    def __len__(self) -> int:
        return self.X.shape[0]

    @property
    def dimensionality(self) -> int:
        return self.X.shape[1]

    @property
    def is_labeled(self) -> bool:
        return self.y is not None

    def row(self, i: int) -> SparseVector:
        start, end = self.X.indptr[i], self.X.indptr[i + 1]
        return SparseVector(
            tuple(int(j) for j in self.X.indices[start:end]),
            tuple(float(w) for w in self.X.data[start:end]),
        )

    @cached_property
    def examples(self) -> tuple[Example, ...]:
        return tuple(
            Example(
                self.row(i),
                None if self.y is None else int(self.y[i]),
                None if self.texts is None else self.texts[i],
            )
            for i in range(len(self))
        )

    def _replace(self, **kw) -> "Dataset":
        fields = dict(
            X=self.X, y=self.y, num_classes=self.num_classes, domain=self.domain,
            label_names=self.label_names, texts=self.texts, feature_names=self.feature_names,
        )
        fields.update(kw)
        return Dataset(**fields)

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64).reshape(-1)
        return self._replace(
            X=self.X[idx],
            y=None if self.y is None else self.y[idx],
            texts=None if self.texts is None else tuple(self.texts[i] for i in idx),
        )

    def without_labels(self) -> "Dataset":
        return self._replace(y=None)

    def with_labels(self, labels) -> "Dataset":
        return self._replace(y=np.asarray(labels, dtype=np.int64))


def concat(datasets: Sequence[Dataset]) -> Dataset:
    """Stack datasets that share feature space, class count and labeled-ness."""
    if not datasets:
        raise DataError("nothing to concatenate")
    first = datasets[0]
    for ds in datasets[1:]:
        if ds.dimensionality != first.dimensionality or ds.num_classes != first.num_classes:
            raise DataError("datasets do not share dimensionality/num_classes")
        if ds.is_labeled != first.is_labeled:
            raise DataError("cannot mix labeled and unlabeled datasets")
    y = np.concatenate([ds.y for ds in datasets]) if first.is_labeled else None
    texts = None
    if all(ds.texts is not None for ds in datasets):
        texts = tuple(t for ds in datasets for t in ds.texts)
    return first._replace(X=sp.vstack([ds.X for ds in datasets], format="csr"), y=y, texts=texts)


def empty_like(ds: Dataset, labeled: bool = True) -> Dataset:
    return ds._replace(
        X=sp.csr_matrix((0, ds.dimensionality)),
        y=np.zeros(0, dtype=np.int64) if labeled else None,
        texts=None,
    )


# -- Blitzer processed reviews ---------------------------------------------


def parse_blitzer_line(line: str, lineno: int | None = None) -> tuple[dict[str, float], int]:
    """Parse one ``token:count ... #label#:positive`` line.

    Returns the token-count mapping and the class id (0 negative, 1 positive).
    """
    tokens = line.split()
    if not tokens:
        raise ParseError("empty line", lineno)
    *body, last = tokens
    key, sep, value = last.partition(":")
    if key != _LABEL_TOKEN or not sep:
        raise ParseError("missing trailing #label# token", lineno)
    if value not in BLITZER_LABELS:
        raise ParseError(f"unknown label {value!r}", lineno)
    counts: dict[str, float] = {}
    for tok in body:
        if tok.count(":") != 1:
            raise ParseError(f"token {tok!r} must contain exactly one ':'", lineno)
        term, _, raw = tok.partition(":")
        if not term or term == _LABEL_TOKEN:
            raise ParseError(f"bad term in token {tok!r}", lineno)
        try:
            count = float(raw)
        except ValueError:
            raise ParseError(f"non-numeric count in token {tok!r}", lineno) from None
        if not math.isfinite(count) or count < 0:
            raise ParseError(f"invalid count in token {tok!r}", lineno)
        if count:
            counts[term] = counts.get(term, 0.0) + count
    return counts, BLITZER_LABELS.index(value)


def read_blitzer_documents(path: str | os.PathLike) -> list[tuple[dict[str, float], int, str]]:
    """Return (token counts, label, raw line) for every nonblank line."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if line:
                counts, label = parse_blitzer_line(line, lineno)
                out.append((counts, label, line))
    if not out:
        raise ParseError(f"no examples in {path}")
    return out


def load_blitzer_processed(path, vocab=None, domain: str | None = None) -> Dataset:
    """Load a preprocessed Amazon reviews file (one review per line).

    Without ``vocab`` the columns are the file's tokens in first-seen order
    with raw counts, and ``feature_names`` records them. With a
    :class:`~tritrain.features.Vocabulary` the rows are tf-idf vectors in
    that vocabulary.
    """
    paths = [path] if isinstance(path, (str, os.PathLike)) else list(path)
    docs = [d for p in paths for d in read_blitzer_documents(p)]
    if domain is None:
        domain = Path(paths[0]).parent.name or Path(paths[0]).stem
    labels = [lab for _, lab, _ in docs]
    texts = tuple(line for _, _, line in docs)
    if vocab is not None:
        from .features import vectorize

        rows = [vectorize(counts, vocab) for counts, _, _ in docs]
        examples = [Example(v, lab, t) for v, lab, t in zip(rows, labels, texts)]
        return Dataset.from_examples(examples, 2, len(vocab), domain, BLITZER_LABELS)
    index: dict[str, int] = {}
    rows, cols, vals = [], [], []
    for r, (counts, _, _) in enumerate(docs):
        for term, c in counts.items():
            rows.append(r)
            cols.append(index.setdefault(term, len(index)))
            vals.append(c)
    X = sp.csr_matrix((vals, (rows, cols)), shape=(len(docs), max(len(index), 1)))
    names = tuple(index) if index else ("",)
    return Dataset(X, np.array(labels), 2, domain, BLITZER_LABELS, texts, names)


def documents(ds: Dataset) -> list[dict[str, float]]:
    """Recover token-count mappings from a raw-count dataset."""
    if ds.feature_names is None:
        raise DataError("dataset has no feature names; load it without a vocabulary")
    names = ds.feature_names
    X = ds.X
    return [
        {names[j]: float(w) for j, w in zip(X.indices[X.indptr[i]:X.indptr[i + 1]],
                                            X.data[X.indptr[i]:X.indptr[i + 1]])}
        for i in range(len(ds))
    ]


# -- sampling ---------------------------------------------------------------


def make_splits(source: Dataset, target: Dataset, spec: SplitSpec):
    """Sample labeled source, unlabeled target, validation and test splits.

    Target splits are disjoint; everything not drawn for the unlabeled or
    validation split becomes the test split.
    """
    if not source.is_labeled or not target.is_labeled:
        raise DataError("make_splits needs fully labeled source and target")
    if spec.n_labeled_source > len(source):
        raise DataError(
            f"labeled source: required {spec.n_labeled_source}, available {len(source)}"
        )
    need = spec.n_unlabeled_target + spec.n_validation_target + 1
    if need > len(target):
        raise DataError(
            f"target: required {need} (unlabeled + validation + at least one test), "
            f"available {len(target)}"
        )
    rng = np.random.default_rng([spec.seed, 1])
    src_idx = np.sort(rng.choice(len(source), spec.n_labeled_source, replace=False))
    perm = np.random.default_rng([spec.seed, 2]).permutation(len(target))
    a = spec.n_unlabeled_target
    b = a + spec.n_validation_target
    return (
        source.subset(src_idx),
        target.subset(np.sort(perm[:a])).without_labels(),
        target.subset(np.sort(perm[a:b])),
        target.subset(np.sort(perm[b:])),
    )


def bootstrap_indices(n: int, seed: int) -> np.ndarray:
    # PCG64 via numpy Generator.integers; test oracles rely on this exact call.
    return np.random.Generator(np.random.PCG64(seed)).integers(0, n, size=n)


def bootstrap_sample(labeled: Dataset, seed: int) -> Dataset:
    if len(labeled) == 0:
        raise DataError("cannot bootstrap an empty dataset")
    return labeled.subset(bootstrap_indices(len(labeled), seed))


def rotation_matrix(degrees: float) -> np.ndarray:
    t = math.radians(degrees)
    return np.array([[math.cos(t), -math.sin(t)], [math.sin(t), math.cos(t)]])


def synth_class_means(rotation_degrees: float = 0.0) -> np.ndarray:
    """Class means (rows) for class 0 at (-1, 0) and class 1 at (+1, 0), rotated."""
    base = np.array([[-1.0, 0.0], [1.0, 0.0]])
    return base @ rotation_matrix(rotation_degrees).T


def _gaussian_blobs(n, means, sigma, rng, domain):
    y = rng.integers(0, 2, size=n)
    pts = means[y] + sigma * rng.standard_normal((n, 2))
    return Dataset(sp.csr_matrix(pts), y, 2, domain)


def synth_domain_shift(
    n_source: int,
    n_target: int,
    rotation_degrees: float,
    noise_sigma: float,
    seed: int,
) -> tuple[Dataset, Dataset]:
    """Two-class 2-D Gaussian source and a rotated copy as target."""
    if n_source < 2 or n_target < 2:
        raise ValueError("counts must be >= 2")
    if noise_sigma < 0:
        raise ValueError("noise_sigma must be >= 0")
    src = _gaussian_blobs(n_source, synth_class_means(0.0), noise_sigma,
                          np.random.default_rng([seed, 11]), "source")
    tgt = _gaussian_blobs(n_target, synth_class_means(rotation_degrees), noise_sigma,
                          np.random.default_rng([seed, 12]), "target")
    return src, tgt


# -- records file -----------------------------------------------------------


def _fmt_entries(X: sp.csr_matrix, i: int) -> str:
    s, e = X.indptr[i], X.indptr[i + 1]
    return " ".join(f"{j}:{float(w)!r}" for j, w in zip(X.indices[s:e], X.data[s:e]))


def dumps_dataset(ds: Dataset) -> str:
    header = {
        "num_classes": ds.num_classes,
        "dimensionality": ds.dimensionality,
        "domain": ds.domain,
        "label_names": list(ds.label_names) if ds.label_names else None,
        "labeled": ds.is_labeled,
        "n": len(ds),
    }
    lines = [json.dumps(header, sort_keys=True)]
    for i in range(len(ds)):
        rec = {
            "domain": ds.domain,
            "label": None if ds.y is None else int(ds.y[i]),
            "features": _fmt_entries(ds.X, i),
        }
        lines.append(json.dumps(rec, sort_keys=True))
    return "\n".join(lines) + "\n"


def loads_dataset(text: str) -> Dataset:
    lines = text.splitlines()
    if not lines:
        raise ParseError("empty dataset file")
    header = json.loads(lines[0])
    dim = int(header["dimensionality"])
    examples = []
    for lineno, line in enumerate(lines[1:], 2):
        rec = json.loads(line)
        pairs = []
        for item in rec["features"].split():
            j, _, w = item.partition(":")
            pairs.append((int(j), float(w)))
        try:
            vec = SparseVector(tuple(j for j, _ in pairs), tuple(w for _, w in pairs))
        except ValueError as exc:
            raise ParseError(str(exc), lineno) from None
        examples.append(Example(vec, rec["label"]))
    names = header.get("label_names")
    if len(examples) != header["n"]:
        raise ParseError(f"header declares {header['n']} records, found {len(examples)}")
    if len(examples) == 0:
        y = np.zeros(0, dtype=np.int64) if header["labeled"] else None
        return Dataset(sp.csr_matrix((0, dim)), y, header["num_classes"], header["domain"],
                       tuple(names) if names else None)
    return Dataset.from_examples(examples, header["num_classes"], dim, header["domain"],
                                 tuple(names) if names else None)


def save_dataset(ds: Dataset, path) -> None:
    write_atomic(path, dumps_dataset(ds))


def load_dataset(path) -> Dataset:
    return loads_dataset(Path(path).read_text(encoding="utf-8"))


def write_atomic(path, text: str | bytes) -> None:
    """Write via a temp file in the same directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.{os.getpid()}.tmp")
    mode = "wb" if isinstance(text, bytes) else "w"
    with open(tmp, mode, **({} if mode == "wb" else {"encoding": "utf-8"})) as fh:
        fh.write(text)
    os.replace(tmp, path)


def label_counts(ds: Dataset) -> Mapping[int, int]:
    if ds.y is None:
        return {}
    vals, counts = np.unique(ds.y, return_counts=True)
    return dict(zip(vals.tolist(), counts.tolist()))
