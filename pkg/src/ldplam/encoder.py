"""Word embedding, bidirectional LSTM, and layer normalisation."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, make_rng
from .text import PAD


@dataclass
class EncoderParams:
    embedding: Tensor  # (V, d_e)
    fwd_wx: Tensor  # (d_e, 2*d_c)  gates i, f, g, o of d_c/2 units each
    fwd_wh: Tensor
    fwd_b: Tensor
    bwd_wx: Tensor
    bwd_wh: Tensor
    bwd_b: Tensor
    ln_gain: Tensor  # (d_c,)
    ln_bias: Tensor

    @property
    def output_dim(self) -> int:
        return self.ln_gain.shape[0]

    def named(self) -> dict:
        return {f"encoder.{k}": v for k, v in vars(self).items()}


def _orthogonal(rng, n: int) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    return q * np.sign(np.diag(r))


def init_encoder(vocab_size: int, d_e: int, d_c: int, seed: int, embeddings: Optional[np.ndarray] = None) -> EncoderParams:
    """Seeded initialisation.

    Input weights are Glorot-uniform, recurrent weights orthogonal per gate,
    biases zero except the forget gate (1.0). ``embeddings`` (e.g. skip-gram
    vectors) replaces the random embedding table when given.
    """
    if d_c % 2:
        raise ValueError(f"d_c must be even (two concatenated directions), got {d_c}")
    rng = make_rng(seed)
    hidden = d_c // 2
    if embeddings is None:
        table = rng.uniform(-0.5 / d_e, 0.5 / d_e, size=(vocab_size, d_e))
    else:
        table = np.array(embeddings, dtype=np.float64)
        if table.shape != (vocab_size, d_e):
            raise ValueError(f"embedding table shape {table.shape} != ({vocab_size}, {d_e})")

    def direction():
        limit = np.sqrt(6.0 / (d_e + 4 * hidden))
        wx = rng.uniform(-limit, limit, size=(d_e, 4 * hidden))
        wh = np.concatenate([_orthogonal(rng, hidden) for _ in range(4)], axis=1)
        b = np.zeros(4 * hidden)
        b[hidden : 2 * hidden] = 1.0
        return Tensor(wx, True), Tensor(wh, True), Tensor(b, True)

    fwd = direction()
    bwd = direction()
    return EncoderParams(
        Tensor(table, True),
        *fwd,
        *bwd,
        Tensor(np.ones(d_c), True),
        Tensor(np.zeros(d_c), True),
    )


def embed_tokens(tokens, params: EncoderParams, train: bool = False, seed: int = 0, dropout: float = 0.2) -> Tensor:
    """Look up (batch, l_r) token ids; PAD rows come out as zeros."""
    tokens = np.atleast_2d(np.asarray(tokens, dtype=np.int64))
    emb = ad.gather_rows(params.embedding, tokens)
    emb = ad.dropout(emb, dropout, seed, train)
    return ad.mul(emb, (tokens != PAD)[..., None].astype(np.float64))


def bilstm_forward(emb: Tensor, mask, params: EncoderParams) -> Tensor:
    """Concatenate forward and backward hidden states: (batch, l_r, d_c)."""
    fwd = ad.lstm(emb, mask, params.fwd_wx, params.fwd_wh, params.fwd_b, reverse=False)
    bwd = ad.lstm(emb, mask, params.bwd_wx, params.bwd_wh, params.bwd_b, reverse=True)
    return ad.concat([fwd, bwd], axis=-1)


def encode(tokens, params: EncoderParams, train: bool = False, seed: int = 0, dropout: float = 0.2) -> Tensor:
    tokens = np.atleast_2d(np.asarray(tokens, dtype=np.int64))
    emb = embed_tokens(tokens, params, train, seed, dropout)
    hidden = bilstm_forward(emb, tokens != PAD, params)
    return ad.layer_norm(hidden, params.ln_gain, params.ln_bias)
