"""Label catalog, description composition, and label vectors."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .text import UNK, Vocab, tokenize


class LabelFileError(ValueError):
    """A label catalog or vector file failed to parse."""


@dataclass
class LabelCatalog:
    """Ordered label codes; position in ``codes`` is the label id."""

    codes: list
    titles: list
    vectors: Optional[np.ndarray] = None
    train_counts: Optional[np.ndarray] = None
    _index: dict = field(init=False, repr=False)

    def __post_init__(self):
        if len(self.codes) != len(self.titles):
            raise ValueError("codes and titles differ in length")
        self._index = {}
        for i, code in enumerate(self.codes):
            if code in self._index:
                raise ValueError(f"duplicate label code {code!r}")
            self._index[code] = i
        if self.train_counts is None:
            self.train_counts = np.zeros(len(self.codes), dtype=np.int64)

    def __len__(self) -> int:
        return len(self.codes)

    def index(self, code: str) -> int:
        return self._index[code]

    def __contains__(self, code) -> bool:
        return code in self._index

    def descriptions(self) -> list:
        return [compose_description(c, t) for c, t in zip(self.codes, self.titles)]

    def count_training_labels(self, label_sets: Sequence) -> None:
        """Set ``train_counts`` from an iterable of per-document code collections."""
        counts = np.zeros(len(self), dtype=np.int64)
        for codes in label_sets:
            for code in set(codes):
                counts[self._index[code]] += 1
        self.train_counts = counts

    def multi_hot(self, label_sets: Sequence) -> np.ndarray:
        y = np.zeros((len(label_sets), len(self)), dtype=np.float64)
        for row, codes in enumerate(label_sets):
            for code in codes:
                y[row, self._index[code]] = 1.0
        return y

    @classmethod
    def from_tsv(cls, path) -> "LabelCatalog":
        codes, titles = [], []
        for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
            if not line.strip():
                continue
            code, sep, title = line.partition("\t")
            if not sep or not code:
                raise LabelFileError(f"{path}:{lineno}: expected 'code<TAB>title'")
            codes.append(code)
            titles.append(title)
        try:
            return cls(codes, titles)
        except ValueError as exc:
            raise LabelFileError(f"{path}: {exc}") from None

    def to_tsv(self, path) -> None:
        Path(path).write_text("".join(f"{c}\t{t}\n" for c, t in zip(self.codes, self.titles)), encoding="utf-8")


def compose_description(code: str, title: str) -> str:
    if not code:
        raise ValueError("label code must be non-empty")
    return f"{code}: {title}"


def description_tokens(description: str, tokenizer: str = "whitespace") -> list:
    """Code characters followed by title tokens.

    Splitting the code into characters lets codes with a shared prefix share
    tokens.
    """
    code, sep, title = description.partition(": ")
    if not sep:
        code, title = description, ""
    return [ch for ch in code if not ch.isspace()] + tokenize(title, tokenizer)


def code_characters(codes: Sequence[str]) -> list:
    return sorted({ch for code in codes for ch in code if not ch.isspace()})


def embed_description(description: str, token_vectors: np.ndarray, vocab: Vocab, tokenizer: str = "whitespace") -> np.ndarray:
    """Mean of the description's token vectors, shape (1, d).

    Tokens missing from ``vocab`` use the UNK row.
    """
    tokens = description_tokens(description, tokenizer)
    if not tokens:
        raise ValueError(f"description {description!r} has no tokens")
    ids = [vocab.stoi.get(t, UNK) for t in tokens]
    return token_vectors[ids].mean(axis=0, keepdims=True)


def embed_catalog(catalog: LabelCatalog, token_vectors: np.ndarray, vocab: Vocab, tokenizer: str = "whitespace") -> np.ndarray:
    return np.concatenate([embed_description(d, token_vectors, vocab, tokenizer) for d in catalog.descriptions()])


def save_label_vectors(path, codes: Sequence[str], vectors: np.ndarray) -> None:
    vectors = np.asarray(vectors, dtype=np.float64)
    lines = [f"{len(codes)} {vectors.shape[1]}"]
    for code, row in zip(codes, vectors):
        lines.append(" ".join([code, *(repr(float(v)) for v in row)]))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_label_vectors(path, catalog: LabelCatalog) -> np.ndarray:
    """Read the ``n d_t`` vector file into ``catalog.vectors`` (catalog order)."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines:
        raise LabelFileError(f"{path}: empty vector file")
    try:
        n, dim = (int(tok) for tok in lines[0].split())
    except ValueError:
        raise LabelFileError(f"{path}:1: header must be 'n d_t'") from None
    vectors = np.zeros((len(catalog), dim))
    seen = set()
    rows = [(no, line) for no, line in enumerate(lines[1:], 2) if line.strip()]
    for lineno, line in rows:
        parts = line.split()
        code = parts[0]
        if code not in catalog:
            raise LabelFileError(f"{path}:{lineno}: unknown label code {code!r}")
        if code in seen:
            raise LabelFileError(f"{path}:{lineno}: duplicate label code {code!r}")
        if len(parts) - 1 != dim:
            raise LabelFileError(f"{path}:{lineno}: expected {dim} values for {code!r}, got {len(parts) - 1}")
        try:
            vectors[catalog.index(code)] = [float(v) for v in parts[1:]]
        except ValueError:
            raise LabelFileError(f"{path}:{lineno}: non-numeric value in row for {code!r}") from None
        seen.add(code)
    if len(rows) != n:
        raise LabelFileError(f"{path}: header announces {n} rows but file has {len(rows)}")
    missing = [c for c in catalog.codes if c not in seen]
    if missing:
        raise LabelFileError(f"{path}: missing vectors for codes {missing[:5]}")
    catalog.vectors = vectors
    return vectors


def sibling_groups(catalog, prefix_len: int) -> list:
    """Partition label ids by the first ``prefix_len`` characters of their dot-free codes."""
    if prefix_len < 1:
        raise ValueError("prefix_len must be >= 1")
    codes = catalog.codes if isinstance(catalog, LabelCatalog) else list(catalog)
    groups: dict = {}
    for i, code in enumerate(codes):
        groups.setdefault(code.replace(".", "")[:prefix_len], []).append(i)
    return list(groups.values())
