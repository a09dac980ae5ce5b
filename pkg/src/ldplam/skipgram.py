"""Skip-gram with negative sampling, used to initialise the word embedding table."""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .autodiff import stable_sigmoid, make_rng
from .text import PAD, UNK


def _pairs(corpus: Sequence[Sequence[int]], window: int) -> tuple:
    centers, contexts = [], []
    for seq in corpus:
        ids = np.asarray(seq, dtype=np.int64)
        ids = ids[(ids != PAD) & (ids != UNK)]
        n = len(ids)
        for offset in range(1, window + 1):
            if offset >= n:
                break
            centers.append(ids[:-offset])
            contexts.append(ids[offset:])
            centers.append(ids[offset:])
            contexts.append(ids[:-offset])
    if not centers:
        return np.zeros(0, np.int64), np.zeros(0, np.int64)
    return np.concatenate(centers), np.concatenate(contexts)


def skipgram_pretrain(
    corpus: Sequence[Sequence[int]],
    vocab_size: int,
    dim: int,
    window: int = 5,
    negatives: int = 5,
    epochs: int = 5,
    seed: int = 0,
    learning_rate: float = 0.025,
    batch_size: int = 128,
    history: Optional[list] = None,
) -> np.ndarray:
    """Train input-side word vectors of shape (vocab_size, dim).

    Every (center, context) pair within ``window`` contributes
    ``-log s(e.c) - sum_neg log s(-e.c')`` with negatives drawn from the
    unigram distribution raised to 0.75. PAD and UNK never take part in a
    pair. The learning rate decays linearly to zero over all updates.
    When ``history`` is given, the mean per-pair loss of each epoch is
    appended to it.
    """
    if window < 1:
        raise ValueError(f"window must be >= 1, got {window}")
    if negatives < 1:
        raise ValueError(f"negatives must be >= 1, got {negatives}")
    rng = make_rng(seed)
    emb_in = rng.uniform(-0.5 / dim, 0.5 / dim, size=(vocab_size, dim))
    if epochs == 0:
        return emb_in
    emb_out = np.zeros((vocab_size, dim))

    centers, contexts = _pairs(corpus, window)
    if len(centers) == 0:
        return emb_in
    counts = np.bincount(np.concatenate([np.asarray(s, np.int64) for s in corpus]), minlength=vocab_size).astype(float)
    counts[[PAD, UNK]] = 0.0
    noise = counts ** 0.75
    noise /= noise.sum()
    noise_cdf = np.cumsum(noise)

    n_pairs = len(centers)
    total_steps = epochs * ((n_pairs + batch_size - 1) // batch_size)
    step = 0
    for _ in range(epochs):
        order = rng.permutation(n_pairs)
        epoch_loss = 0.0
        for start in range(0, n_pairs, batch_size):
            idx = order[start : start + batch_size]
            c, o = centers[idx], contexts[idx]
            neg = np.searchsorted(noise_cdf, rng.random((len(idx), negatives)) * noise_cdf[-1], side="right")
            neg = np.minimum(neg, vocab_size - 1)
            lr = learning_rate * max(1e-4, 1.0 - step / total_steps)
            step += 1

            e, pos, negv = emb_in[c], emb_out[o], emb_out[neg]
            sp = stable_sigmoid(np.einsum("bd,bd->b", e, pos))
            sn = stable_sigmoid(np.einsum("bd,bkd->bk", e, negv))  # sigma(e.c'), so 1 - sn = sigma(-e.c')
            epoch_loss -= np.log(np.maximum(sp, 1e-300)).sum() + np.log(np.maximum(1.0 - sn, 1e-300)).sum()

            g_pos = sp - 1.0
            grad_e = g_pos[:, None] * pos + np.einsum("bk,bkd->bd", sn, negv)
            np.add.at(emb_out, o, -lr * g_pos[:, None] * e)
            np.add.at(emb_out, neg, -lr * sn[..., None] * e[:, None, :])
            np.add.at(emb_in, c, -lr * grad_e)
        if history is not None:
            history.append(epoch_loss / n_pairs)
    return emb_in


class SkipGramEmbedder(TransformerMixin, BaseEstimator):
    """Estimator wrapper: ``fit`` on id sequences, ``transform`` looks rows up."""

    def __init__(self, vocab_size=None, dim=32, window=5, negatives=5, epochs=5, learning_rate=0.025, random_state=0):
        self.vocab_size = vocab_size
        self.dim = dim
        self.window = window
        self.negatives = negatives
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.random_state = random_state

    def fit(self, X, y=None):
        vocab_size = self.vocab_size or int(max(max(s, default=0) for s in X)) + 1
        self.loss_history_ = []
        self.embeddings_ = skipgram_pretrain(
            X,
            vocab_size,
            self.dim,
            window=self.window,
            negatives=self.negatives,
            epochs=self.epochs,
            seed=self.random_state,
            learning_rate=self.learning_rate,
            history=self.loss_history_,
        )
        return self

    def transform(self, X):
        return self.embeddings_[np.asarray(X, dtype=np.int64)]
