"""Pseudo label-wise attention, the label-wise baseline head, and similarity scoring.

Shapes use a leading batch axis: ``x`` is (B, l_r, d_c) and ``mask`` is
(B, l_r) with True on real tokens. Attention scores for ``m`` modes are
``x @ W + b`` with a shared ``W`` of shape (d_c, m), normalised over the
sequence axis, so ``alpha`` has shape (B, l_r, m) and every column sums to 1.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import GraphError, Tensor, make_rng

# matmul tags; the cost model counts ATTENTION_TAG and RECOMBINE_TAG only
SCORE_TAG = "attention-score"
ATTENTION_TAG = "attention-pool"
DENSE_TAG = "dense"
BETA_TAG = "similarity-logits"
RECOMBINE_TAG = "similarity-mix"


@dataclass
class AttentionLayer:
    """Score weights ``w`` (d_in, m), ``b`` (m,) and the ReLU dense map ``h``."""

    w: Tensor
    b: Tensor
    h_w: Tensor  # (d_in, d_out)
    h_b: Tensor  # (d_out,)

    @property
    def n_modes(self) -> int:
        return self.w.shape[1]


@dataclass
class ScorerParams:
    """Shared dense + sigmoid output ``f``."""

    w: Tensor  # (d_t, 1)
    b: Tensor  # (1,)


@dataclass
class AttentionTrace:
    """Attention matrices from one forward pass.

    ``alphas[k]`` has shape (B, positions_k, m_k); ``beta`` is (B, m, n) for
    the pseudo head and None for the label-wise head.
    """

    alphas: list
    beta: Optional[np.ndarray] = None
    version: int = 0
    masks: Optional[np.ndarray] = None
    extra: dict = field(default_factory=dict)


def init_layer(rng, d_in: int, m: int, d_out: int) -> AttentionLayer:
    limit = np.sqrt(6.0 / (d_in + m))
    h_limit = np.sqrt(6.0 / (d_in + d_out))
    return AttentionLayer(
        Tensor(rng.uniform(-limit, limit, size=(d_in, m)), True),
        Tensor(np.zeros(m), True),
        Tensor(rng.uniform(-h_limit, h_limit, size=(d_in, d_out)), True),
        Tensor(np.zeros(d_out), True),
    )


def init_pseudo_layers(d_c: int, modes: Sequence[int], d_t: int, seed: int) -> list:
    """K stacked layers; all but the last keep width d_c, the last maps to d_t."""
    rng = make_rng(seed)
    modes = list(modes)
    return [init_layer(rng, d_c, m, d_t if k == len(modes) - 1 else d_c) for k, m in enumerate(modes)]


def init_scorer(d_t: int, seed: int) -> ScorerParams:
    rng = make_rng(seed)
    limit = np.sqrt(6.0 / (d_t + 1))
    return ScorerParams(Tensor(rng.uniform(-limit, limit, size=(d_t, 1)), True), Tensor(np.zeros(1), True))


def pseudo_attention(x: Tensor, mask, layer: AttentionLayer) -> tuple:
    """One attention layer: returns ``u`` (B, m, d_out) and ``alpha`` (B, positions, m)."""
    x = x if isinstance(x, Tensor) else Tensor(x)
    if x.ndim == 2:
        x = ad.reshape(x, (1, *x.shape))
    scores = ad.add(ad.matmul(x, layer.w, tag=SCORE_TAG), layer.b)
    keep = None if mask is None else np.asarray(mask, dtype=bool).reshape(x.shape[0], x.shape[1], 1)
    alpha = ad.softmax_axis(scores, axis=1, mask=keep)
    pooled = ad.matmul(ad.transpose(alpha), x, tag=ATTENTION_TAG)
    u = ad.relu(ad.add(ad.matmul(pooled, layer.h_w, tag=DENSE_TAG), layer.h_b))
    return u, alpha


def stack_attention(x: Tensor, mask, layers: Sequence[AttentionLayer]) -> tuple:
    """Apply K layers; layer k attends over the m_{k-1} outputs of layer k-1."""
    if not layers:
        raise ValueError("stack_attention needs at least one layer")
    alphas = []
    u = x
    for k, layer in enumerate(layers):
        u, alpha = pseudo_attention(u, mask if k == 0 else None, layer)
        alphas.append(alpha)
    return u, alphas


def labelwise_attention(x: Tensor, mask, layer: AttentionLayer) -> tuple:
    """One attention mode per real label: ``layer.w`` has n columns.

    Identical arithmetic to :func:`pseudo_attention` with m = n; returns the
    per-label vectors (B, n, d_t) and alpha (B, l_r, n).
    """
    return pseudo_attention(x, mask, layer)


def labelwise_logits(vectors: Tensor, scorer: ScorerParams) -> Tensor:
    """``f`` applied to each per-label vector, pre-sigmoid: (B, n)."""
    z = ad.matmul(vectors, scorer.w, tag=DENSE_TAG)
    return ad.add(ad.reshape(z, z.shape[:-1]), scorer.b)


def similarity_logits(u: Tensor, label_vectors, scorer: ScorerParams) -> tuple:
    """Pre-sigmoid similarity ``f(sum_j beta_ij u_j)`` for every label.

    ``beta[:, :, i] = softmax_j(u_j . v_i)`` over the m pseudo labels.
    Returns logits (B, n) and beta (B, m, n).
    """
    v = label_vectors if isinstance(label_vectors, Tensor) else Tensor(label_vectors)
    if u.shape[-1] != v.shape[-1]:
        raise ValueError(f"pseudo-label vectors have dim {u.shape[-1]} but label vectors have dim {v.shape[-1]}")
    z = ad.matmul(u, ad.transpose(v), tag=BETA_TAG)
    beta = ad.softmax_axis(z, axis=-2)
    mix = ad.matmul(ad.transpose(beta), u, tag=RECOMBINE_TAG)
    return labelwise_logits(mix, scorer), beta


def similarity_scores(u: Tensor, label_vectors, scorer: ScorerParams) -> Tensor:
    logits, _ = similarity_logits(u, label_vectors, scorer)
    return ad.sigmoid(logits)


def _check_binary(y: np.ndarray) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    if not np.isin(y, (0.0, 1.0)).all():
        raise ValueError("targets must be 0/1")
    return y


def bce_loss(s: Tensor, y) -> Tensor:
    """``-sum_i [y log s + (1-y) log(1-s)]``, averaged over rows for 2-D input."""
    y = _check_binary(y)
    rows = s.shape[0] if s.ndim > 1 else 1
    terms = ad.add(ad.mul(ad.log(s), y), ad.mul(ad.log(ad.sub(1.0, s)), 1.0 - y))
    return ad.mul(ad.sum(terms), -1.0 / rows)


def bce_loss_with_logits(logits: Tensor, y) -> Tensor:
    return ad.bce_with_logits(logits, _check_binary(y))


def explain_gamma(trace: AttentionTrace, label_id: int, doc: int = 0, version: Optional[int] = None) -> np.ndarray:
    """Composed attention ``alpha^1 ... alpha^K beta_i`` over input positions.

    For a label-wise trace this is alpha's column for the label. Passing the
    model's current ``version`` guards against traces from older parameters.
    """
    if version is not None and trace.version != version:
        raise GraphError(f"stale attention trace (version {trace.version}, model at {version})")
    gamma = trace.alphas[0][doc]
    for alpha in trace.alphas[1:]:
        gamma = gamma @ alpha[doc]
    if trace.beta is None:
        return gamma[:, label_id].copy()
    return gamma @ trace.beta[doc][:, label_id]


def composed_modes(trace: AttentionTrace, doc: int = 0) -> np.ndarray:
    """Position-by-mode matrix ``alpha^1 ... alpha^K`` for one document."""
    out = trace.alphas[0][doc]
    for alpha in trace.alphas[1:]:
        out = out @ alpha[doc]
    return out


def top_k_words(gamma, tokens, k: int, vocab=None) -> list:
    """(token, position, weight) for the k largest weights; ties keep earlier positions."""
    if k < 1:
        raise ValueError("k must be >= 1")
    gamma = np.asarray(gamma, dtype=np.float64)
    positions = np.arange(len(gamma))
    order = np.lexsort((positions, -gamma))[:k]
    out = []
    for p in order:
        tok = int(tokens[p])
        out.append((vocab.itos[tok] if vocab is not None else tok, int(p), float(gamma[p])))
    return out
