"""Estimator tying encoder, attention head, and similarity scorer together."""

from __future__ import annotations

import json
import logging
import struct
from pathlib import Path
from typing import Callable, Optional

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from . import autodiff as ad
from ._validation import check_label_vectors, check_targets, check_tokens
from .attention import (
    AttentionLayer,
    AttentionTrace,
    ScorerParams,
    bce_loss_with_logits,
    explain_gamma,
    init_layer,
    init_pseudo_layers,
    init_scorer,
    labelwise_attention,
    labelwise_logits,
    similarity_logits,
    stack_attention,
)
from .autodiff import Tensor, make_rng
from .encoder import EncoderParams, encode, init_encoder
from .metrics import micro_f1
from .optim import OPTIMIZERS
from .text import PAD

logger = logging.getLogger(__name__)

HEADS = ("pseudo", "labelwise")
CHECKPOINT_MAGIC = b"LDPLAMCK1\n"


def _mode_sizes(n_pseudo, n_layers) -> list:
    if np.isscalar(n_pseudo):
        return [int(n_pseudo)] * int(n_layers)
    return [int(m) for m in n_pseudo]


class PseudoLabelAttentionClassifier(ClassifierMixin, BaseEstimator):
    """Multi-label text classifier with pseudo label-wise attention.

    Documents are rows of token ids (PAD = 0 fills the tail). A BiLSTM with
    layer norm encodes each document, ``n_pseudo`` shared attention modes
    pool it into pseudo-label vectors, and each label is scored by attending
    over those vectors with its label vector. ``head="labelwise"`` swaps in
    one attention mode per label (no label vectors needed, no zero-shot).

    Parameters
    ----------
    head : {"pseudo", "labelwise"}
    n_pseudo : int or sequence of int
        Modes per attention layer; an int is repeated ``n_layers`` times.
    n_layers : int
    vocab_size : int, optional
        Required unless ``embeddings`` is given.
    embedding_dim, hidden_size : int
        Word vector width and concatenated BiLSTM width (even).
    embeddings : array (vocab_size, embedding_dim), optional
        Initial embedding table, e.g. skip-gram vectors.
    label_vectors : array (n_labels, d_t), optional
        Frozen label vectors; required for the pseudo head.
    dropout, threshold, batch_size, learning_rate : float/int
    optimizer : {"lamb", "adam"}
    patience : int
        Stop once validation MiF has not improved for more than this many epochs.
    max_epochs : int
    validation_fraction : float
        Held out from the training rows when no validation set is passed.
    random_state : int
    fit_unseen_labels : bool
        Pseudo head only. When False, labels with no positive training row
        stay out of the loss and are scored purely through their label
        vectors; when True they are trained as constant negatives.
    """

    def __init__(
        self,
        head="pseudo",
        n_pseudo=8,
        n_layers=1,
        vocab_size=None,
        embedding_dim=32,
        hidden_size=32,
        embeddings=None,
        label_vectors=None,
        dropout=0.2,
        threshold=0.5,
        batch_size=16,
        learning_rate=0.005,
        optimizer="lamb",
        patience=10,
        max_epochs=50,
        validation_fraction=0.1,
        random_state=0,
        fit_unseen_labels=False,
    ):
        self.head = head
        self.n_pseudo = n_pseudo
        self.n_layers = n_layers
        self.vocab_size = vocab_size
        self.embedding_dim = embedding_dim
        self.hidden_size = hidden_size
        self.embeddings = embeddings
        self.label_vectors = label_vectors
        self.dropout = dropout
        self.threshold = threshold
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.optimizer = optimizer
        self.patience = patience
        self.max_epochs = max_epochs
        self.validation_fraction = validation_fraction
        self.random_state = random_state
        self.fit_unseen_labels = fit_unseen_labels

    # -- parameter plumbing -------------------------------------------------

    def _init_params(self, n_labels: int) -> None:
        if self.head not in HEADS:
            raise ValueError(f"head must be one of {HEADS}, got {self.head!r}")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {sorted(OPTIMIZERS)}, got {self.optimizer!r}")
        seeds = np.random.SeedSequence(self.random_state).generate_state(4)
        vocab_size = self.vocab_size
        if self.embeddings is not None:
            vocab_size = vocab_size or np.shape(self.embeddings)[0]
        if vocab_size is None:
            raise ValueError("vocab_size is required when no embedding table is given")
        self.vocab_size_ = int(vocab_size)
        self.n_labels_ = n_labels
        self.encoder_ = init_encoder(self.vocab_size_, self.embedding_dim, self.hidden_size, int(seeds[0]), self.embeddings)
        if self.head == "pseudo":
            if self.label_vectors is None:
                raise ValueError("the pseudo head needs label_vectors")
            self.label_vectors_ = check_label_vectors(self.label_vectors, n_labels)
            d_t = self.label_vectors_.shape[1]
            self.layers_ = init_pseudo_layers(self.hidden_size, _mode_sizes(self.n_pseudo, self.n_layers), d_t, int(seeds[1]))
        else:
            self.label_vectors_ = None
            d_t = self.hidden_size
            self.layers_ = [init_layer(make_rng(int(seeds[1])), self.hidden_size, n_labels, d_t)]
        self.scorer_ = init_scorer(d_t, int(seeds[2]))
        self.train_seed_ = int(seeds[3])
        self.loss_labels_ = np.arange(n_labels)
        # keeps counting across refits so traces from an earlier fit go stale
        self.version_ = getattr(self, "version_", -1) + 1

    def named_parameters(self) -> dict:
        check_is_fitted(self, "encoder_")
        named = self.encoder_.named()
        for k, layer in enumerate(self.layers_):
            for field in ("w", "b", "h_w", "h_b"):
                named[f"attention.{k}.{field}"] = getattr(layer, field)
        named["scorer.w"] = self.scorer_.w
        named["scorer.b"] = self.scorer_.b
        return named

    # -- forward ------------------------------------------------------------

    def _forward(self, tokens: np.ndarray, train: bool = False, seed: int = 0, label_vectors=None) -> tuple:
        x = encode(tokens, self.encoder_, train, seed, self.dropout)
        mask = tokens != PAD
        if self.head == "pseudo":
            u, alphas = stack_attention(x, mask, self.layers_)
            V = self.label_vectors_ if label_vectors is None else label_vectors
            logits, beta = similarity_logits(u, V, self.scorer_)
            trace = AttentionTrace([a.data for a in alphas], beta.data, self.version_, mask)
        else:
            vectors, alpha = labelwise_attention(x, mask, self.layers_[0])
            logits = labelwise_logits(vectors, self.scorer_)
            trace = AttentionTrace([alpha.data], None, self.version_, mask)
        return logits, trace

    def _batches(self, n_rows: int, size: Optional[int] = None):
        size = size or self.batch_size
        for start in range(0, n_rows, size):
            yield slice(start, start + size)

    def decision_function(self, X, label_vectors=None) -> np.ndarray:
        """Pre-sigmoid label scores (n_docs, n_labels).

        ``label_vectors`` may replace the fitted ones (pseudo head only),
        which is how labels unseen at fit time get scored.
        """
        check_is_fitted(self, "encoder_")
        X = check_tokens(X, self.vocab_size_)
        if label_vectors is not None:
            if self.head != "pseudo":
                raise ValueError("only the pseudo head can score new label vectors")
            label_vectors = check_label_vectors(label_vectors)
        out = []
        with ad.no_grad():
            for sl in self._batches(len(X), 64):
                logits, _ = self._forward(X[sl], label_vectors=label_vectors)
                out.append(logits.data)
        return np.concatenate(out)

    def predict_proba(self, X, label_vectors=None) -> np.ndarray:
        return ad.stable_sigmoid(self.decision_function(X, label_vectors))

    def predict(self, X, label_vectors=None) -> np.ndarray:
        return (self.predict_proba(X, label_vectors) >= self.threshold).astype(np.int64)

    def score(self, X, Y, sample_weight=None) -> float:
        """Micro F1 at ``threshold``."""
        return micro_f1(self.predict_proba(X), Y, self.threshold)

    def attention_trace(self, X, label_vectors=None) -> AttentionTrace:
        """Attention matrices for every row of ``X`` from one eval-mode pass."""
        check_is_fitted(self, "encoder_")
        X = check_tokens(X, self.vocab_size_)
        parts = []
        with ad.no_grad():
            for sl in self._batches(len(X), 64):
                parts.append(self._forward(X[sl], label_vectors=label_vectors)[1])
        return AttentionTrace(
            [np.concatenate([p.alphas[k] for p in parts]) for k in range(len(parts[0].alphas))],
            None if parts[0].beta is None else np.concatenate([p.beta for p in parts]),
            self.version_,
            np.concatenate([p.masks for p in parts]),
        )

    def explain(self, X, label_ids, label_vectors=None) -> np.ndarray:
        """gamma vectors, shape (n_docs, len(label_ids), l_r)."""
        trace = self.attention_trace(X, label_vectors)
        return np.array(
            [[explain_gamma(trace, int(lab), doc, self.version_) for lab in label_ids] for doc in range(len(trace.alphas[0]))]
        )

    # -- training -----------------------------------------------------------

    def _loss(self, X, Y, train: bool, seed: int) -> Tensor:
        keep = self.loss_labels_
        if self.head == "pseudo" and len(keep) < self.n_labels_:
            logits, _ = self._forward(X, train, seed, label_vectors=self.label_vectors_[keep])
        else:
            logits, _ = self._forward(X, train, seed)
            keep = slice(None)
        return bce_loss_with_logits(logits, Y[:, keep])

    def _validation_loss(self, X, Y) -> float:
        total = 0.0
        with ad.no_grad():
            for sl in self._batches(len(X), 64):
                total += float(self._loss(X[sl], Y[sl], False, 0).data) * len(X[sl])
        return total / len(X)

    def fit(self, X, Y, X_val=None, Y_val=None, callback: Optional[Callable[[dict], None]] = None):
        """Train with mini-batch LAMB (or Adam) and early stopping on validation MiF.

        Ties in MiF are broken by lower validation loss. The best epoch's
        parameters are restored at the end; ``history_`` holds one record per
        epoch.
        """
        X = check_tokens(X)
        Y = check_targets(Y, len(X))
        if X_val is None:
            n_val = max(1, int(round(self.validation_fraction * len(X))))
            if n_val >= len(X):
                raise ValueError("not enough rows to hold out a validation split")
            perm = make_rng(self.random_state).permutation(len(X))
            X, Y, X_val, Y_val = X[perm[n_val:]], Y[perm[n_val:]], X[perm[:n_val]], Y[perm[:n_val]]
        else:
            X_val = check_tokens(X_val)
            Y_val = check_targets(Y_val, len(X_val), Y.shape[1])
        if len(X) == 0 or len(X_val) == 0:
            raise ValueError("training and validation splits must be non-empty")
        self._init_params(Y.shape[1])
        if self.head == "pseudo" and not self.fit_unseen_labels:
            self.loss_labels_ = np.flatnonzero(Y.sum(axis=0) > 0)
            if len(self.loss_labels_) == 0:
                raise ValueError("no label has a positive training row")
        check_tokens(X, self.vocab_size_)
        check_tokens(X_val, self.vocab_size_)

        step_fn = OPTIMIZERS[self.optimizer]
        self.optimizer_state_ = {}
        rng = make_rng(self.train_seed_)
        best = (-1.0, np.inf)
        best_params = None
        since = 0
        self.history_ = []
        for epoch in range(1, self.max_epochs + 1):
            order = rng.permutation(len(X))
            train_loss = 0.0
            for sl in self._batches(len(X)):
                idx = order[sl]
                named = self.named_parameters()
                for t in named.values():
                    t.grad = None
                loss = self._loss(X[idx], Y[idx], True, int(rng.integers(2**62)))
                ad.backward(loss)
                train_loss += float(loss.data) * len(idx)
                step_fn(
                    {k: t.data for k, t in named.items()},
                    {k: t.grad for k, t in named.items() if t.grad is not None},
                    self.optimizer_state_,
                    self.learning_rate,
                )
                self.version_ += 1
            val_scores = self.predict_proba(X_val)
            val_f1 = micro_f1(val_scores, Y_val, self.threshold)
            val_loss = self._validation_loss(X_val, Y_val)
            improved = val_f1 > best[0] or (val_f1 == best[0] and val_loss < best[1])
            if improved:
                best = (val_f1, val_loss)
                best_params = {k: t.data.copy() for k, t in self.named_parameters().items()}
                self.best_epoch_ = epoch
                since = 0
            else:
                since += 1
            record = {
                "epoch": epoch,
                "train_loss": train_loss / len(X),
                "val_loss": val_loss,
                "val_micro_f1": val_f1,
                "improved": bool(improved),
            }
            self.history_.append(record)
            logger.info("epoch %d loss %.4f val_loss %.4f val_MiF %.4f", epoch, record["train_loss"], val_loss, val_f1)
            if callback is not None:
                callback(record)
            if since > self.patience:
                break
        for k, t in self.named_parameters().items():
            t.data[...] = best_params[k]
        self.version_ += 1
        self.best_score_ = best[0]
        self.n_epochs_ = len(self.history_)
        self.rng_state_ = rng.bit_generator.state
        return self

    # -- checkpoints --------------------------------------------------------

    def save(self, path) -> None:
        """Write parameters, optimizer state, and metadata to a deterministic binary file."""
        check_is_fitted(self, "encoder_")
        arrays = {f"param/{k}": t.data for k, t in self.named_parameters().items()}
        if self.label_vectors_ is not None:
            arrays["label_vectors"] = self.label_vectors_
        opt = getattr(self, "optimizer_state_", {})
        for name, slot in opt.items():
            if name != "step":
                arrays[f"opt/m/{name}"] = slot["m"]
                arrays[f"opt/v/{name}"] = slot["v"]
        params = {k: v for k, v in self.get_params().items() if k not in ("embeddings", "label_vectors")}
        params["n_pseudo"] = _mode_sizes(self.n_pseudo, self.n_layers)
        meta = {
            "estimator": params,
            "vocab_size": self.vocab_size_,
            "n_labels": self.n_labels_,
            "train_seed": self.train_seed_,
            "version": self.version_,
            "optimizer_step": opt.get("step", 0),
            "epoch": getattr(self, "n_epochs_", 0),
            "best_epoch": getattr(self, "best_epoch_", 0),
            "best_validation_micro_f1": getattr(self, "best_score_", None),
            "rng_state": _jsonable(getattr(self, "rng_state_", None)),
            "arrays": [[k, list(arrays[k].shape)] for k in sorted(arrays)],
        }
        header = json.dumps(meta, sort_keys=True).encode("utf-8")
        with open(path, "wb") as fh:
            fh.write(CHECKPOINT_MAGIC)
            fh.write(struct.pack("<Q", len(header)))
            fh.write(header)
            for k in sorted(arrays):
                fh.write(np.ascontiguousarray(arrays[k], dtype="<f8").tobytes())

    @classmethod
    def load(cls, path) -> "PseudoLabelAttentionClassifier":
        raw = Path(path).read_bytes()
        if not raw.startswith(CHECKPOINT_MAGIC):
            raise ValueError(f"{path}: not a checkpoint file")
        offset = len(CHECKPOINT_MAGIC)
        (hlen,) = struct.unpack_from("<Q", raw, offset)
        offset += 8
        meta = json.loads(raw[offset : offset + hlen].decode("utf-8"))
        offset += hlen
        arrays = {}
        for name, shape in meta["arrays"]:
            count = int(np.prod(shape)) if shape else 1
            arrays[name] = np.frombuffer(raw, dtype="<f8", count=count, offset=offset).reshape(shape).astype(np.float64)
            offset += 8 * count
        est = cls(**meta["estimator"], label_vectors=arrays.get("label_vectors"))
        est.vocab_size = meta["vocab_size"]
        est._init_params(meta["n_labels"])
        for k, t in est.named_parameters().items():
            t.data[...] = arrays[f"param/{k}"]
        est.train_seed_ = meta["train_seed"]
        est.version_ = meta["version"]
        est.optimizer_state_ = {"step": meta["optimizer_step"]} if meta["optimizer_step"] else {}
        for name in est.named_parameters():
            if f"opt/m/{name}" in arrays:
                est.optimizer_state_[name] = {"m": arrays[f"opt/m/{name}"], "v": arrays[f"opt/v/{name}"]}
        est.n_epochs_ = meta["epoch"]
        est.best_epoch_ = meta["best_epoch"]
        est.best_score_ = meta["best_validation_micro_f1"]
        est.rng_state_ = meta["rng_state"]
        return est


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.integer):
        return int(obj)
    return obj
