"""Closed-form multiplication and storage counts for both attention heads.

Counts cover the attention products only: ``x^T alpha`` for the label-wise
head and ``x^T alpha`` followed by the ``beta`` recombination for the
pseudo head. Activations, score projections, and dense layers are excluded
on both sides. Element counts are analytic stand-ins for device memory.
"""

from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass
from fractions import Fraction
from typing import Iterable, Optional

import numpy as np

from . import autodiff as ad
from .attention import (
    ATTENTION_TAG,
    RECOMBINE_TAG,
    init_layer,
    init_scorer,
    labelwise_attention,
    labelwise_logits,
    pseudo_attention,
    similarity_logits,
)
from .autodiff import GraphError, MultiplicationCounter, make_rng

CSV_HEADER = ("n", "labelwise_mults", "pseudo_mults", "labelwise_elems", "pseudo_elems")


@dataclass(frozen=True)
class CostReport:
    l_r: int
    n: int
    m: int
    d_c: int
    multiplications_labelwise: int
    multiplications_pseudo: int
    stored_elements_labelwise: int
    stored_elements_pseudo: int

    @property
    def multiplication_ratio(self) -> Fraction:
        return Fraction(self.multiplications_pseudo, self.multiplications_labelwise)

    @property
    def storage_ratio(self) -> Fraction:
        return Fraction(self.stored_elements_pseudo, self.stored_elements_labelwise)

    def as_dict(self) -> dict:
        out = asdict(self)
        out["multiplication_ratio"] = str(self.multiplication_ratio)
        out["storage_ratio"] = str(self.storage_ratio)
        return out


def analytic_cost(l_r: int, n: int, m: int, d_c: int) -> CostReport:
    for name, value in (("l_r", l_r), ("n", n), ("m", m), ("d_c", d_c)):
        if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
            raise TypeError(f"{name} must be an integer, got {value!r}")
        if value < 1:
            raise ValueError(f"{name} must be >= 1, got {value}")
    l_r, n, m, d_c = int(l_r), int(n), int(m), int(d_c)
    return CostReport(
        l_r=l_r,
        n=n,
        m=m,
        d_c=d_c,
        multiplications_labelwise=d_c * l_r * n,
        multiplications_pseudo=d_c * l_r * m + d_c * m * n,
        stored_elements_labelwise=l_r * n,
        stored_elements_pseudo=l_r * m + m * n,
    )


def measured_cost(head: str, l_r: int, n: int, m: int, d_c: int, seed: int = 0, counter: Optional[MultiplicationCounter] = None) -> int:
    """Run one single-document forward pass of a head and count its attention products.

    Uses random inputs and weights; ``d_t`` is taken equal to ``d_c``. A
    caller-supplied ``counter`` must start at zero.
    """
    if counter is None:
        counter = MultiplicationCounter()
    if counter.total != 0:
        raise GraphError("multiplication counter was not reset before measurement")
    rng = make_rng(seed)
    x = ad.Tensor(rng.standard_normal((1, l_r, d_c)))
    mask = np.ones((1, l_r), dtype=bool)
    scorer = init_scorer(d_c, seed)
    with ad.no_grad(), counter:
        if head == "pseudo":
            u, _ = pseudo_attention(x, mask, init_layer(rng, d_c, m, d_c))
            similarity_logits(u, rng.standard_normal((n, d_c)), scorer)
        elif head == "labelwise":
            vectors, _ = labelwise_attention(x, mask, init_layer(rng, d_c, n, d_c))
            labelwise_logits(vectors, scorer)
        else:
            raise ValueError(f"unknown head {head!r}")
    return counter.by_tag.get(ATTENTION_TAG, 0) + counter.by_tag.get(RECOMBINE_TAG, 0)


def memory_curve(l_r: int, d_c: int, m: int, n_values: Iterable[int]) -> list:
    """One row per label count with both heads' multiplication and element counts."""
    n_values = list(n_values)
    if not n_values:
        raise ValueError("n_values must be non-empty")
    if any(b <= a for a, b in zip(n_values, n_values[1:])):
        raise ValueError("n_values must be strictly ascending")
    rows = []
    for n in n_values:
        rep = analytic_cost(l_r, n, m, d_c)
        rows.append(
            {
                "n": n,
                "labelwise_mults": rep.multiplications_labelwise,
                "pseudo_mults": rep.multiplications_pseudo,
                "labelwise_elems": rep.stored_elements_labelwise,
                "pseudo_elems": rep.stored_elements_pseudo,
            }
        )
    return rows


def rows_to_csv(rows: Iterable[dict]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_HEADER, lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return buf.getvalue()
