"""Run configuration and the end-to-end training pipeline."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Optional

import numpy as np

from .autodiff import make_rng
from .labels import LabelCatalog, code_characters, description_tokens, embed_catalog, load_label_vectors
from .model import PseudoLabelAttentionClassifier
from .skipgram import skipgram_pretrain
from .text import TOKENIZER_MODES, TfidfTruncator, Vocab, read_corpus, tokenize


class ConfigError(ValueError):
    """Invalid RunConfig file or field value."""


@dataclass
class RunConfig:
    """Training configuration. Field names double as ``key = value`` config keys."""

    tokenizer: str = "whitespace"
    l_r: int = 128
    d_e: int = 32
    d_c: int = 32
    m: tuple = (8,)
    K: int = 1
    d_t: int = 0  # 0: take the label-vector width
    dropout: float = 0.2
    threshold: float = 0.5
    batch_size: int = 16
    learning_rate: float = 0.005
    optimizer: str = "lamb"
    patience: int = 64
    seed: int = 0
    corpus: str = ""
    catalog: str = ""
    vectors: str = ""
    output_dir: str = ""
    head: str = "pseudo"
    max_epochs: int = 200
    min_count: int = 1
    skipgram_epochs: int = 5
    skipgram_window: int = 5
    skipgram_negatives: int = 5

    def __post_init__(self):
        if isinstance(self.m, int):
            self.m = (self.m,)
        self.m = tuple(int(v) for v in self.m)
        if len(self.m) == 1 and self.K > 1:
            self.m = self.m * self.K
        self.validate()

    def validate(self) -> None:
        if self.tokenizer not in TOKENIZER_MODES:
            raise ConfigError(f"tokenizer must be one of {TOKENIZER_MODES}")
        if self.head not in ("pseudo", "labelwise"):
            raise ConfigError("head must be 'pseudo' or 'labelwise'")
        if self.optimizer not in ("lamb", "adam"):
            raise ConfigError("optimizer must be 'lamb' or 'adam'")
        positive = ("l_r", "d_e", "d_c", "K", "batch_size", "max_epochs", "min_count", "skipgram_window", "skipgram_negatives")
        for name in positive:
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.d_c % 2:
            raise ConfigError("d_c must be even")
        if len(self.m) != self.K or min(self.m) < 1:
            raise ConfigError(f"m must list K={self.K} positive mode counts, got {self.m}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")
        if not 0.0 < self.threshold < 1.0 or self.learning_rate <= 0:
            raise ConfigError("threshold must lie in (0, 1) and learning_rate must be positive")
        if self.patience < 0 or self.skipgram_epochs < 0 or self.d_t < 0:
            raise ConfigError("patience, skipgram_epochs, d_t must be non-negative")

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        types = {f.name: f.type for f in fields(cls)}
        values = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = (part.strip() for part in line.partition("="))
            if not sep:
                raise ConfigError(f"line {lineno}: expected 'key = value'")
            if key not in types:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
            try:
                if key == "m":
                    values[key] = tuple(int(v) for v in value.split(","))
                elif types[key] == "int":
                    values[key] = int(value)
                elif types[key] == "float":
                    values[key] = float(value)
                else:
                    values[key] = value
            except ValueError:
                raise ConfigError(f"line {lineno}: bad value {value!r} for {key}") from None
        return cls(**values)

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.from_text(Path(path).read_text(encoding="utf-8"))

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            if f.name == "m":
                value = ",".join(str(v) for v in value)
            lines.append(f"{f.name} = {value}")
        return "\n".join(lines) + "\n"

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)


def split_records(records: list, seed: int = 0) -> dict:
    """Group by the ``split`` field; records without one get a seeded 80/10/10 split."""
    out = {"train": [], "valid": [], "test": []}
    unassigned = []
    for rec in records:
        split = rec.get("split")
        if split is None:
            unassigned.append(rec)
        elif split in out:
            out[split].append(rec)
        else:
            raise ValueError(f"record {rec['id']!r} has unknown split {split!r}")
    if unassigned:
        order = make_rng(seed).permutation(len(unassigned))
        n_train = int(0.8 * len(unassigned))
        n_valid = int(0.1 * len(unassigned))
        for rank, idx in enumerate(order):
            name = "train" if rank < n_train else ("valid" if rank < n_train + n_valid else "test")
            out[name].append(unassigned[idx])
    ids = [r["id"] for recs in out.values() for r in recs]
    if len(ids) != len(set(ids)):
        raise ValueError("document ids must be unique across splits")
    return out


@dataclass
class Prepared:
    """Everything derived from the corpus before model fitting."""

    config: RunConfig
    catalog: LabelCatalog
    truncator: TfidfTruncator
    embeddings: np.ndarray
    label_vectors: np.ndarray
    splits: dict  # name -> records
    X: dict  # name -> token matrix
    Y: dict  # name -> multi-hot matrix

    @property
    def vocab(self) -> Vocab:
        return self.truncator.vocab_


def fit_truncator(config: RunConfig, train_records: list, catalog: LabelCatalog) -> TfidfTruncator:
    extra = code_characters(catalog.codes)
    for title in catalog.titles:
        extra.extend(tokenize(title, config.tokenizer))
    return TfidfTruncator(config.l_r, config.tokenizer, config.min_count, extra).fit([r["text"] for r in train_records])


def pretrain_embeddings(config: RunConfig, truncator: TfidfTruncator, train_records: list, catalog: LabelCatalog) -> np.ndarray:
    """Skip-gram over training documents plus label descriptions."""
    vocab = truncator.vocab_
    sequences = truncator.encode([r["text"] for r in train_records])
    sequences += [vocab.encode(description_tokens(d, config.tokenizer)) for d in catalog.descriptions()]
    return skipgram_pretrain(
        sequences,
        len(vocab),
        config.d_e,
        window=config.skipgram_window,
        negatives=config.skipgram_negatives,
        epochs=config.skipgram_epochs,
        seed=config.seed,
    )


def whiten_label_vectors(vectors: np.ndarray) -> np.ndarray:
    """Center, whiten, and scale each row to norm sqrt(d).

    Averaged description embeddings share a few dominant directions, which
    makes sibling labels nearly parallel. Whitening gives every direction of
    the label cloud equal variance so the similarity softmax can tell them
    apart. Width is kept at d; unused directions are zero.
    """
    n, d = vectors.shape
    centered = vectors - vectors.mean(axis=0, keepdims=True)
    u, s, _ = np.linalg.svd(centered, full_matrices=False)
    keep = s > 1e-10 * max(s[0], 1e-300) if len(s) else s > 0
    out = np.zeros((n, d))
    out[:, : int(keep.sum())] = u[:, keep]
    norms = np.linalg.norm(out, axis=1, keepdims=True)
    return out / np.where(norms > 0, norms, 1.0) * np.sqrt(d)


def prepare(config: RunConfig, records: list, catalog: LabelCatalog) -> Prepared:
    splits = split_records(records, config.seed)
    for name in ("train", "valid"):
        if not splits[name]:
            raise ValueError(f"{name} split is empty")
    unknown = {c for r in records for c in r["labels"] if c not in catalog}
    if unknown:
        raise ValueError(f"corpus uses label codes missing from the catalog: {sorted(unknown)[:5]}")
    catalog.count_training_labels([r["labels"] for r in splits["train"]])
    truncator = fit_truncator(config, splits["train"], catalog)
    embeddings = pretrain_embeddings(config, truncator, splits["train"], catalog)
    if config.vectors:
        label_vectors = load_label_vectors(config.vectors, catalog)
    else:
        label_vectors = whiten_label_vectors(embed_catalog(catalog, embeddings, truncator.vocab_, config.tokenizer))
        catalog.vectors = label_vectors
    if config.d_t and config.head == "pseudo" and label_vectors.shape[1] != config.d_t:
        raise ConfigError(f"d_t = {config.d_t} but label vectors have width {label_vectors.shape[1]}")
    X = {k: truncator.transform([r["text"] for r in v]) if v else None for k, v in splits.items()}
    Y = {k: catalog.multi_hot([r["labels"] for r in v]) if v else None for k, v in splits.items()}
    return Prepared(config, catalog, truncator, embeddings, label_vectors, splits, X, Y)


def make_estimator(config: RunConfig, prepared: Prepared) -> PseudoLabelAttentionClassifier:
    return PseudoLabelAttentionClassifier(
        head=config.head,
        n_pseudo=config.m,
        n_layers=config.K,
        vocab_size=len(prepared.vocab),
        embedding_dim=config.d_e,
        hidden_size=config.d_c,
        embeddings=prepared.embeddings,
        label_vectors=prepared.label_vectors if config.head == "pseudo" else None,
        dropout=config.dropout,
        threshold=config.threshold,
        batch_size=config.batch_size,
        learning_rate=config.learning_rate,
        optimizer=config.optimizer,
        patience=config.patience,
        max_epochs=config.max_epochs,
        random_state=config.seed,
    )


def train(config: RunConfig, records: list, catalog: LabelCatalog, log_path: Optional[str] = None) -> tuple:
    """Prepare data, fit the configured model, and return (estimator, prepared, log)."""
    prepared = prepare(config, records, catalog)
    log = [{"header": {"patience_unit": "epoch", "validation_metric": "micro_f1", "head": config.head}}]
    est = make_estimator(config, prepared)
    est.fit(prepared.X["train"], prepared.Y["train"], prepared.X["valid"], prepared.Y["valid"], callback=log.append)
    if log_path:
        Path(log_path).write_text("".join(json.dumps(r, sort_keys=True) + "\n" for r in log), encoding="utf-8")
    return est, prepared, log


def label_prior_scores(train_counts, n_train_docs: int, n_rows: int) -> np.ndarray:
    """Every label scored by its training frequency."""
    return np.tile(np.asarray(train_counts, dtype=np.float64) / n_train_docs, (n_rows, 1))
