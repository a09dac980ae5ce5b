"""Multi-label evaluation: micro F1/AUC, P@k/R@k, AUPR, label slices, mode matching."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np
from scipy.stats import rankdata


def _pair(scores, truths) -> tuple:
    scores = np.asarray(scores, dtype=np.float64)
    truths = np.asarray(truths).astype(bool)
    if scores.shape != truths.shape:
        raise ValueError(f"scores {scores.shape} and truths {truths.shape} differ in shape")
    return scores, truths


def micro_f1(scores, truths, threshold: float = 0.5) -> float:
    """Global F1 over all (doc, label) pairs; a score >= threshold is a positive prediction."""
    scores, truths = _pair(scores, truths)
    pred = scores >= threshold
    tp = int(np.sum(pred & truths))
    fp = int(np.sum(pred & ~truths))
    fn = int(np.sum(~pred & truths))
    denom = 2 * tp + fp + fn
    return 2 * tp / denom if denom else 0.0


def micro_auc(scores, truths) -> float:
    """Mann-Whitney AUC over flattened pairs; ties count one half."""
    scores, truths = _pair(scores, truths)
    s, t = scores.ravel(), truths.ravel()
    n_pos = int(t.sum())
    n_neg = t.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC undefined: need at least one positive and one negative pair")
    ranks = rankdata(s)
    return float((ranks[t].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def top_k_indices(scores, k: int) -> np.ndarray:
    """Per-row indices of the k best scores; ties go to the lower label id."""
    scores = np.atleast_2d(np.asarray(scores, dtype=np.float64))
    if not 1 <= k <= scores.shape[1]:
        raise ValueError(f"k={k} must lie in [1, {scores.shape[1]}]")
    return np.argsort(-scores, axis=1, kind="stable")[:, :k]


def precision_at_k(scores, truths, k: int) -> float:
    scores, truths = _pair(np.atleast_2d(scores), np.atleast_2d(truths))
    top = top_k_indices(scores, k)
    hits = np.take_along_axis(truths, top, axis=1).sum(axis=1)
    return float(np.mean(hits / k))


def recall_at_k(scores, truths, k: int, label_subset: Optional[Sequence[int]] = None) -> float:
    """Mean over documents of |top-k ∩ truths| / |truths|.

    With ``label_subset`` the truths are first restricted to that subset;
    ranking still runs over every label. Documents left with no truths are
    skipped; returns NaN if none remain.
    """
    scores, truths = _pair(np.atleast_2d(scores), np.atleast_2d(truths))
    if label_subset is not None:
        keep = np.zeros(truths.shape[1], dtype=bool)
        keep[np.asarray(label_subset, dtype=np.int64)] = True
        truths = truths & keep
    sizes = truths.sum(axis=1)
    rows = sizes > 0
    if not rows.any():
        return float("nan")
    top = top_k_indices(scores, k)
    hits = np.take_along_axis(truths, top, axis=1).sum(axis=1)
    return float(np.mean(hits[rows] / sizes[rows]))


def aupr(scores, truths, label_subset: Optional[Sequence[int]] = None) -> float:
    """Average precision ``sum (R_i - R_{i-1}) P_i`` over distinct score thresholds."""
    scores, truths = _pair(np.atleast_2d(scores), np.atleast_2d(truths))
    if label_subset is not None:
        cols = np.asarray(label_subset, dtype=np.int64)
        scores, truths = scores[:, cols], truths[:, cols]
    s, t = scores.ravel(), truths.ravel()
    n_pos = int(t.sum())
    if n_pos == 0:
        raise ValueError("AUPR undefined: no positive pairs in the subset")
    order = np.argsort(-s, kind="stable")
    s, t = s[order], t[order]
    tp = np.cumsum(t)
    # last index of each run of equal scores is a threshold
    ends = np.r_[np.nonzero(np.diff(s))[0], s.size - 1]
    tp_at = tp[ends]
    precision = tp_at / (ends + 1)
    recall = tp_at / n_pos
    return float(np.sum(np.diff(np.r_[0.0, recall]) * precision))


N_BUCKETS = 11


def frequency_bucket(count: int) -> int:
    """1-based bucket: [0,10) -> 1, [10,20) -> 2, ..., [100, inf) -> 11."""
    return min(int(count) // 10, N_BUCKETS - 1) + 1


def frequency_buckets(train_counts) -> dict:
    """Map bucket number to the label ids it contains (every bucket present)."""
    buckets = {b: [] for b in range(1, N_BUCKETS + 1)}
    for label, count in enumerate(np.asarray(train_counts)):
        buckets[frequency_bucket(count)].append(label)
    return buckets


def bucket_name(bucket: int) -> str:
    lo = (bucket - 1) * 10
    return f"[{lo},inf)" if bucket == N_BUCKETS else f"[{lo},{lo + 10})"


def group_split_sfz(train_counts, test_labels) -> dict:
    """Seen (>5), few-shot (1..5), zero-shot (0 in train, present in test) label ids."""
    test_labels = set(int(i) for i in test_labels)
    groups = {"S": [], "F": [], "Z": []}
    for label, count in enumerate(np.asarray(train_counts)):
        if count > 5:
            groups["S"].append(label)
        elif count >= 1:
            groups["F"].append(label)
        elif label in test_labels:
            groups["Z"].append(label)
    return groups


def attention_mode_match(pseudo_modes: Mapping, labelwise_modes: Mapping) -> np.ndarray:
    """Nearest pseudo mode for every real label, by majority vote over documents.

    Both mappings go from document id to an attention matrix over positions:
    (l_r, m) for the pseudo model, (l_r, n) for the label-wise model. For
    each document and label the pseudo column with the smallest Euclidean
    distance wins that document's vote; vote ties go to the lower index.
    """
    if set(pseudo_modes) != set(labelwise_modes):
        raise ValueError("pseudo and label-wise traces cover different documents")
    if not pseudo_modes:
        raise ValueError("no documents to match")
    votes = None
    for doc in sorted(pseudo_modes):
        p = np.asarray(pseudo_modes[doc], dtype=np.float64)
        q = np.asarray(labelwise_modes[doc], dtype=np.float64)
        if p.shape[0] != q.shape[0]:
            raise ValueError(f"document {doc!r}: position counts differ ({p.shape[0]} vs {q.shape[0]})")
        # (n, m) squared distances
        d2 = (q * q).sum(0)[:, None] - 2.0 * q.T @ p + (p * p).sum(0)[None, :]
        nearest = np.argmin(d2, axis=1)
        if votes is None:
            votes = np.zeros((q.shape[1], p.shape[1]), dtype=np.int64)
        votes[np.arange(q.shape[1]), nearest] += 1
    return np.argmax(votes, axis=1)


def sibling_agreement(mapping: np.ndarray, groups: Sequence[Sequence[int]]) -> tuple:
    """Fraction of sibling pairs and of non-sibling pairs that share a pseudo mode."""
    group_of = {}
    for g, members in enumerate(groups):
        for label in members:
            group_of[label] = g
    labels = sorted(group_of)
    same_sib = total_sib = same_non = total_non = 0
    for a in range(len(labels)):
        for b in range(a + 1, len(labels)):
            la, lb = labels[a], labels[b]
            shared = mapping[la] == mapping[lb]
            if group_of[la] == group_of[lb]:
                total_sib += 1
                same_sib += shared
            else:
                total_non += 1
                same_non += shared
    return (same_sib / total_sib if total_sib else math.nan, same_non / total_non if total_non else math.nan)


def _clean(value):
    return None if value is None or (isinstance(value, float) and math.isnan(value)) else value


@dataclass
class MetricsReport:
    micro_f1: float
    micro_auc: Optional[float]
    p_at_k: dict
    r_at_k: dict
    aupr: Optional[float]
    bucket_aupr: dict = field(default_factory=dict)
    group_r_at_k: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        out = asdict(self)
        out["micro_auc"] = _clean(out["micro_auc"])
        out["aupr"] = _clean(out["aupr"])
        out["r_at_k"] = {k: _clean(v) for k, v in out["r_at_k"].items()}
        out["bucket_aupr"] = {k: _clean(v) for k, v in out["bucket_aupr"].items()}
        out["group_r_at_k"] = {g: {k: _clean(v) for k, v in d.items()} for g, d in out["group_r_at_k"].items()}
        return out


def _maybe(fn, *args):
    try:
        return fn(*args)
    except ValueError:
        return None


def evaluate(scores, truths, train_counts=None, threshold: float = 0.5, ks=(5, 8), recall_ks=(5, 10), test_labels=None) -> MetricsReport:
    """Compute the full report; undefined entries come back as None."""
    scores, truths = _pair(np.atleast_2d(scores), np.atleast_2d(truths))
    n = scores.shape[1]
    report = MetricsReport(
        micro_f1=micro_f1(scores, truths, threshold),
        micro_auc=_maybe(micro_auc, scores, truths),
        p_at_k={str(k): precision_at_k(scores, truths, k) for k in ks if k <= n},
        r_at_k={str(k): recall_at_k(scores, truths, k) for k in recall_ks if k <= n},
        aupr=_maybe(aupr, scores, truths),
        metadata={"p_at_k_averaging": "all documents", "threshold": threshold, "n_docs": int(scores.shape[0]), "n_labels": n},
    )
    if train_counts is not None:
        for bucket, members in frequency_buckets(train_counts).items():
            report.bucket_aupr[bucket_name(bucket)] = _maybe(aupr, scores, truths, members) if members else None
        if test_labels is None:
            test_labels = np.nonzero(truths.any(axis=0))[0]
        for name, members in group_split_sfz(train_counts, test_labels).items():
            report.group_r_at_k[name] = {
                str(k): (recall_at_k(scores, truths, k, members) if members else None) for k in recall_ks if k <= n
            }
    return report
