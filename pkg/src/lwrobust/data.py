"""Corpus representation, split strategies and label statistics."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

FEATURE = "feature"
TOKEN = "token"


class CorpusFormatError(ValueError):
    """A corpus file could not be parsed."""


@dataclass(frozen=True)
class Document:
    id: str
    time: float
    labels: tuple[int, ...]
    features: np.ndarray | None = None
    tokens: np.ndarray | None = None

    def __post_init__(self):
        if not self.labels:
            raise ValueError(f"document {self.id!r} has no labels")
        if (self.features is None) == (self.tokens is None):
            raise ValueError(f"document {self.id!r} needs exactly one of features/tokens")


@dataclass
class Corpus:
    documents: list[Document]
    num_labels: int
    mode: str
    label_names: list[str] | None = None
    _cache: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self):
        if not self.documents:
            raise ValueError("corpus has no documents")
        if self.num_labels < 1:
            raise ValueError("num_labels must be positive")
        if self.mode not in (FEATURE, TOKEN):
            raise ValueError(f"unknown corpus mode {self.mode!r}")
        attr = "features" if self.mode == FEATURE else "tokens"
        for doc in self.documents:
            if getattr(doc, attr) is None:
                raise ValueError(f"document {doc.id!r} lacks {attr} in a {self.mode} corpus")
            if max(doc.labels) >= self.num_labels or min(doc.labels) < 0:
                raise ValueError(f"document {doc.id!r} has a label outside [0, {self.num_labels})")
        if self.label_names is not None and len(self.label_names) != self.num_labels:
            raise ValueError("label_names length does not match num_labels")

    def __len__(self) -> int:
        return len(self.documents)

    @property
    def L(self) -> int:
        return self.num_labels

    def _all_targets(self) -> np.ndarray:
        if "Y" not in self._cache:
            y = np.zeros((len(self.documents), self.num_labels))
            for row, doc in enumerate(self.documents):
                y[row, list(doc.labels)] = 1.0
            self._cache["Y"] = y
        return self._cache["Y"]

    def targets(self, indices: Sequence[int] | None = None) -> np.ndarray:
        """Multi-hot matrix for the given documents (all when ``indices`` is None)."""
        y = self._all_targets()
        return y.copy() if indices is None else y[np.asarray(indices, dtype=np.int64)]

    def features(self, indices: Sequence[int]) -> np.ndarray:
        if "X" not in self._cache:
            self._cache["X"] = np.stack([d.features for d in self.documents]).astype(np.float64)
        return self._cache["X"][np.asarray(indices, dtype=np.int64)]

    def tokens(self, indices: Sequence[int]) -> tuple[np.ndarray, np.ndarray]:
        """Right-padded token matrix and per-row lengths."""
        seqs = [self.documents[i].tokens for i in indices]
        lengths = np.array([len(s) for s in seqs], dtype=np.int64)
        out = np.zeros((len(seqs), int(lengths.max())), dtype=np.int64)
        for row, s in enumerate(seqs):
            out[row, : len(s)] = s
        return out, lengths

    def inputs(self, indices: Sequence[int]):
        if self.mode == FEATURE:
            return self.features(indices)
        return self.tokens(indices)

    @property
    def feature_dim(self) -> int:
        return int(self.documents[0].features.shape[0])

    @property
    def vocab_size(self) -> int:
        return int(max(int(d.tokens.max()) for d in self.documents)) + 1


@dataclass(frozen=True)
class SplitSet:
    train: tuple[int, ...]
    dev: tuple[int, ...]
    test: tuple[int, ...]

    def __post_init__(self):
        for name in ("train", "dev", "test"):
            if not getattr(self, name):
                raise ValueError(f"{name} split is empty")
        seen = set(self.train)
        for part in (self.dev, self.test):
            if seen.intersection(part):
                raise ValueError("splits overlap")
            seen.update(part)

    def to_json(self) -> dict:
        return {"train": list(self.train), "dev": list(self.dev), "test": list(self.test)}

    @classmethod
    def from_json(cls, obj: dict) -> "SplitSet":
        return cls(tuple(obj["train"]), tuple(obj["dev"]), tuple(obj["test"]))


@dataclass(frozen=True)
class LabelDistribution:
    counts: np.ndarray
    probs: np.ndarray = field(repr=False)

    @property
    def L(self) -> int:
        return len(self.counts)

    def rank_order(self) -> np.ndarray:
        """Labels by descending count, ties by ascending index."""
        return np.lexsort((np.arange(self.L), -self.counts))


def _split_sizes(n: int, fractions: Sequence[float]) -> tuple[int, int, int]:
    if n == 0:
        raise ValueError("corpus is empty")
    if len(fractions) != 3:
        raise ValueError("fractions must be (train, dev, test)")
    if any(f < 0 for f in fractions) or abs(math.fsum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"fractions must be nonnegative and sum to 1, got {tuple(fractions)}")
    n_dev = int(round(fractions[1] * n))
    n_test = int(round(fractions[2] * n))
    n_train = n - n_dev - n_test
    if min(n_train, n_dev, n_test) <= 0:
        raise ValueError(f"fractions {tuple(fractions)} leave an empty split for N={n}")
    return n_train, n_dev, n_test


def _partition(order: Sequence[int], sizes: tuple[int, int, int]) -> SplitSet:
    a, b, _ = sizes
    order = [int(i) for i in order]
    return SplitSet(tuple(order[:a]), tuple(order[a:a + b]), tuple(order[a + b:]))


def chronological_split(corpus: Corpus, fractions: Sequence[float]) -> SplitSet:
    """Oldest documents to train, newest to test; ties ordered by document id."""
    sizes = _split_sizes(len(corpus.documents), fractions)
    order = sorted(range(len(corpus.documents)),
                   key=lambda i: (corpus.documents[i].time, corpus.documents[i].id))
    return _partition(order, sizes)


def random_split(corpus: Corpus, fractions: Sequence[float], seed: int) -> SplitSet:
    sizes = _split_sizes(len(corpus.documents), fractions)
    order = np.random.default_rng(seed).permutation(len(corpus.documents))
    return _partition(order, sizes)


def label_distribution(corpus: Corpus, indices: Iterable[int]) -> LabelDistribution:
    indices = list(indices)
    if not indices:
        raise ValueError("label_distribution needs at least one document")
    counts = corpus.targets(indices).sum(axis=0).astype(np.int64)
    return LabelDistribution(counts, counts / counts.sum())


def head_tail_partition(train_dist: LabelDistribution) -> tuple[list[int], list[int]]:
    """Most frequent ceil(L/2) labels form the head, the rest the tail."""
    if train_dist.L < 2:
        raise ValueError("head/tail partition needs at least two labels")
    order = [int(i) for i in train_dist.rank_order()]
    cut = math.ceil(train_dist.L / 2)
    return order[:cut], order[cut:]


# -- line-delimited corpus files ---------------------------------------------

def write_corpus(corpus: Corpus, path: str | Path) -> None:
    header = {"L": corpus.num_labels, "mode": corpus.mode}
    if corpus.label_names is not None:
        header["label_names"] = list(corpus.label_names)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(header) + "\n")
        for doc in corpus.documents:
            rec = {"id": doc.id, "time": doc.time, "labels": list(doc.labels)}
            if corpus.mode == FEATURE:
                rec["features"] = [float(v) for v in doc.features]
            else:
                rec["tokens"] = [int(v) for v in doc.tokens]
            fh.write(json.dumps(rec) + "\n")


def read_corpus(path: str | Path) -> Corpus:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"corpus file not found: {path}")
    docs: list[Document] = []
    header = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                if header is None:
                    header = _parse_header(rec)
                    continue
                docs.append(_parse_document(rec, header))
            except (ValueError, KeyError, TypeError) as exc:
                raise CorpusFormatError(f"{path}:{lineno}: {exc}") from exc
    if header is None:
        raise CorpusFormatError(f"{path}: missing header record")
    try:
        return Corpus(docs, header["L"], header["mode"], header.get("label_names"))
    except ValueError as exc:
        raise CorpusFormatError(f"{path}: {exc}") from exc


def _parse_header(rec: dict) -> dict:
    if not isinstance(rec, dict) or "L" not in rec or "mode" not in rec:
        raise ValueError("header must declare 'L' and 'mode'")
    if not isinstance(rec["L"], int) or rec["L"] < 1:
        raise ValueError("header 'L' must be a positive integer")
    if rec["mode"] not in (FEATURE, TOKEN):
        raise ValueError(f"header 'mode' must be {FEATURE!r} or {TOKEN!r}")
    return rec


def _parse_document(rec: dict, header: dict) -> Document:
    labels = rec["labels"]
    if not isinstance(labels, list) or not all(isinstance(v, int) for v in labels):
        raise ValueError("'labels' must be an array of integers")
    if any(v < 0 or v >= header["L"] for v in labels):
        raise ValueError(f"label index outside [0, {header['L']})")
    time = rec["time"]
    if isinstance(time, bool) or not isinstance(time, (int, float)):
        raise ValueError("'time' must be a number")
    ident = rec["id"]
    if not isinstance(ident, str):
        raise ValueError("'id' must be a string")
    if header["mode"] == FEATURE:
        if "tokens" in rec:
            raise ValueError("feature-mode record carries 'tokens'")
        return Document(ident, float(time), tuple(sorted(set(labels))),
                        features=np.asarray(rec["features"], dtype=np.float64))
    if "features" in rec:
        raise ValueError("token-mode record carries 'features'")
    tokens = rec["tokens"]
    if not tokens or not all(isinstance(v, int) and v >= 0 for v in tokens):
        raise ValueError("'tokens' must be a nonempty array of nonnegative integers")
    return Document(ident, float(time), tuple(sorted(set(labels))),
                    tokens=np.asarray(tokens, dtype=np.int64))
