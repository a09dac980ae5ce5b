"""Tokenisation, vocabulary, and TF-IDF importance truncation."""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

PAD, UNK = 0, 1
PAD_TOKEN, UNK_TOKEN = "<pad>", "<unk>"
TOKENIZER_MODES = ("whitespace", "char")


def tokenize(text: str, mode: str = "whitespace") -> list:
    """Split text into tokens; ``char`` mode keeps every non-space character."""
    if mode == "whitespace":
        return text.split()
    if mode == "char":
        return [ch for ch in text if not ch.isspace()]
    raise ValueError(f"unknown tokenizer mode {mode!r}; expected one of {TOKENIZER_MODES}")


@dataclass
class Vocab:
    """Token/id maps with per-token document frequency.

    Ids 0 and 1 are reserved for PAD and UNK. ``n_docs`` is the number of
    documents the frequencies were counted over.
    """

    itos: list = field(default_factory=lambda: [PAD_TOKEN, UNK_TOKEN])
    df: list = field(default_factory=lambda: [0, 0])
    n_docs: int = 0

    def __post_init__(self):
        self.stoi = {tok: i for i, tok in enumerate(self.itos)}

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, token) -> bool:
        return token in self.stoi

    def id(self, token: str) -> int:
        return self.stoi.get(token, UNK)

    def encode(self, tokens: Iterable[str]) -> list:
        return [self.stoi.get(t, UNK) for t in tokens]

    def decode(self, ids: Iterable[int]) -> list:
        return [self.itos[i] for i in ids]

    def add_tokens(self, tokens: Iterable[str]) -> None:
        """Append unseen tokens with document frequency 0."""
        for tok in tokens:
            if tok not in self.stoi:
                self.stoi[tok] = len(self.itos)
                self.itos.append(tok)
                self.df.append(0)

    def save(self, path) -> None:
        lines = [f"{tok}\t{i}\t{self.df[i]}" for i, tok in enumerate(self.itos)]
        Path(path).write_text(f"#n_docs\t{self.n_docs}\n" + "\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocab":
        itos, df, n_docs = [], [], 0
        for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
            if not line:
                continue
            parts = line.split("\t")
            if parts[0] == "#n_docs":
                n_docs = int(parts[1])
                continue
            if len(parts) != 3 or int(parts[1]) != len(itos):
                raise ValueError(f"{path}:{lineno}: malformed vocab row {line!r}")
            itos.append(parts[0])
            df.append(int(parts[2]))
        return cls(itos=itos, df=df, n_docs=n_docs)


def build_vocab(raw_docs: Sequence[Sequence[str]], min_count: int = 1) -> Vocab:
    """Assign ids by (count desc, token asc); rarer tokens than ``min_count`` map to UNK."""
    if len(raw_docs) == 0:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    counts: Counter = Counter()
    doc_freq: Counter = Counter()
    for tokens in raw_docs:
        counts.update(tokens)
        doc_freq.update(set(tokens))
    for reserved in (PAD_TOKEN, UNK_TOKEN):
        counts.pop(reserved, None)
    kept = sorted((tok for tok, c in counts.items() if c >= min_count), key=lambda t: (-counts[t], t))
    return Vocab(
        itos=[PAD_TOKEN, UNK_TOKEN, *kept],
        df=[0, 0, *(doc_freq[t] for t in kept)],
        n_docs=len(raw_docs),
    )


def idf(vocab: Vocab, token_id: int) -> float:
    df = vocab.df[token_id] if token_id != UNK else 0
    return math.log((vocab.n_docs + 1) / (df + 1)) + 1.0


def tfidf_scores(doc_tokens: Sequence[int], vocab: Vocab) -> np.ndarray:
    """Per-position score ``tf(token, doc) * idf(token)``.

    ``tf`` is the raw in-document count; ``idf = ln((N+1)/(df+1)) + 1``.
    Ids outside the vocabulary are scored as UNK (df = 0).
    """
    ids = [t if 0 <= t < len(vocab) else UNK for t in doc_tokens]
    tf = Counter(ids)
    cache = {t: tf[t] * idf(vocab, t) for t in tf}
    return np.array([cache[t] for t in ids], dtype=np.float64)


@dataclass
class Document:
    id: str
    tokens: np.ndarray  # int ids, length l_r, PAD-filled tail
    mask: np.ndarray  # True on real tokens
    labels: frozenset = frozenset()

    @property
    def length(self) -> int:
        return int(self.mask.sum())


def truncate_by_tfidf(doc_tokens: Sequence[int], max_length: int, vocab: Vocab, doc_id: str = "", labels=()) -> Document:
    """Fit a token sequence into ``max_length`` positions.

    Short documents are PAD-filled. Long ones lose their lowest-scoring
    occurrences (later position first among equal scores); survivors keep
    their original order.
    """
    if max_length <= 0:
        raise ValueError("max_length must be positive")
    ids = np.asarray(doc_tokens, dtype=np.int64)
    if len(ids) > max_length:
        scores = tfidf_scores(ids, vocab)
        positions = np.arange(len(ids))
        # lexsort: last key primary -> score asc, then position desc
        order = np.lexsort((-positions, scores))
        drop = order[: len(ids) - max_length]
        keep = np.ones(len(ids), dtype=bool)
        keep[drop] = False
        ids = ids[keep]
    tokens = np.full(max_length, PAD, dtype=np.int64)
    tokens[: len(ids)] = ids
    mask = np.zeros(max_length, dtype=bool)
    mask[: len(ids)] = True
    return Document(id=doc_id, tokens=tokens, mask=mask, labels=frozenset(labels))


def read_corpus(path) -> list:
    """Read JSON-lines records ``{"id", "text", "labels"}`` (extra keys kept)."""
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
            missing = {"id", "text", "labels"} - rec.keys()
            if missing:
                raise ValueError(f"{path}:{lineno}: record missing keys {sorted(missing)}")
            records.append(rec)
    return records


def write_corpus(records: Iterable[dict], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


class TfidfTruncator(TransformerMixin, BaseEstimator):
    """Map raw texts to fixed-length token-id matrices.

    ``fit`` builds the vocabulary and document frequencies from the training
    texts; ``transform`` returns an int array of shape (n_docs, max_length)
    where PAD (0) marks unused positions, so ``X != 0`` is the mask.

    Parameters
    ----------
    max_length : int
        Retained sequence length.
    tokenizer : {"whitespace", "char"}
    min_count : int
        Tokens seen fewer times in training map to UNK.
    extra_tokens : sequence of str, optional
        Tokens to reserve ids for even if absent from training texts (for
        instance label-code characters).
    """

    def __init__(self, max_length=128, tokenizer="whitespace", min_count=1, extra_tokens=None):
        self.max_length = max_length
        self.tokenizer = tokenizer
        self.min_count = min_count
        self.extra_tokens = extra_tokens

    def fit(self, X, y=None):
        if self.max_length <= 0:
            raise ValueError("max_length must be positive")
        self.vocab_ = build_vocab([tokenize(t, self.tokenizer) for t in X], self.min_count)
        if self.extra_tokens:
            self.vocab_.add_tokens(self.extra_tokens)
        return self

    def encode(self, texts) -> list:
        check_is_fitted(self, "vocab_")
        return [self.vocab_.encode(tokenize(t, self.tokenizer)) for t in texts]

    def transform(self, X):
        return np.stack([truncate_by_tfidf(ids, self.max_length, self.vocab_).tokens for ids in self.encode(X)])
