"""Seeded synthetic corpus with prefix-coded hierarchical labels.

Codes follow an ICD-like shape: a letter, then two digits, then one digit
per further level after a dot (``C18.1``, ``C18.12``). Every tree node owns
a block of tokens; a node's token distribution puts 70% of its mass on its
parent's distribution and the rest on its own block, so siblings overlap
heavily. Documents mix background tokens with tokens drawn from their labels.
"""

from __future__ import annotations

import string
from dataclasses import dataclass, field

import numpy as np

from .autodiff import make_rng
from .labels import LabelCatalog

PARENT_SHARE = 0.7
BACKGROUND_SHARE = 0.4
BACKGROUND_FRACTION = 0.2
LABEL_COUNT_PROBS = (0.3, 0.3, 0.2, 0.1, 0.1)  # 1..5 labels per document
SIBLING_BIAS = 0.6
TITLE_LEN = 3
SPLIT_FRACTIONS = (2 / 3, 1 / 6, 1 / 6)


@dataclass
class SynthCorpus:
    records: list  # {"id", "text", "labels", "split"}
    catalog: LabelCatalog
    zero_shot: list = field(default_factory=list)  # codes kept out of train/valid
    parents: dict = field(default_factory=dict)  # leaf code -> parent code

    def split(self, name: str) -> list:
        return [r for r in self.records if r["split"] == name]


def _child_code(parent: str, index: int, level: int) -> str:
    if level == 1:
        return string.ascii_uppercase[index]
    if level == 2:
        return f"{parent}{index:02d}"
    if level == 3:
        return f"{parent}.{index}"
    return f"{parent}{index}"


def _max_branching(level: int) -> int:
    return {1: 26, 2: 100}.get(level, 10)


def synth_generate(
    n_labels: int = 50,
    depth: int = 3,
    branching: int = 4,
    n_docs: int = 300,
    doc_len: int = 160,
    vocab_size: int = 800,
    zero_shot_fraction: float = 0.0,
    seed: int = 0,
) -> SynthCorpus:
    """Build the label tree, catalog, and documents.

    The first ``2/3`` of documents are training, then validation, then test.
    Training and validation documents only use non-zero-shot labels; each
    zero-shot label leads at least one test document.
    """
    if depth < 1 or branching < 1 or n_labels < 1 or n_docs < 3 or doc_len < 1:
        raise ValueError("n_labels, depth, branching, doc_len must be >= 1 and n_docs >= 3")
    if branching**depth < n_labels:
        raise ValueError(f"tree with branching {branching} and depth {depth} has fewer than {n_labels} leaves")
    if any(branching > _max_branching(level) for level in range(1, depth + 1)):
        raise ValueError(f"branching {branching} exceeds the code alphabet at some level")
    if not 0.0 <= zero_shot_fraction < 1.0:
        raise ValueError("zero_shot_fraction must lie in [0, 1)")
    rng = make_rng(seed)

    # tree: internal levels complete, leaves spread round-robin over parents
    parent_of = {}
    levels = [[""]]
    for level in range(1, depth):
        row = []
        for p in levels[-1]:
            for i in range(branching):
                code = _child_code(p, i, level)
                parent_of[code] = p or None
                row.append(code)
        levels.append(row)
    leaves, leaf_parent = [], {}
    for i in range(branching):
        for p in levels[-1]:
            if len(leaves) == n_labels:
                break
            code = _child_code(p, i, depth)
            leaves.append(code)
            leaf_parent[code] = p
            parent_of[code] = p or None
    leaves.sort()
    internal = [c for lvl in levels[1:] for c in lvl]
    nodes = internal + leaves

    n_background = max(1, int(BACKGROUND_FRACTION * vocab_size))
    block = (vocab_size - n_background) // len(nodes)
    if block < 1:
        raise ValueError(f"vocab_size {vocab_size} too small for {len(nodes)} tree nodes")
    vocab = [f"w{i:05d}" for i in range(vocab_size)]
    background_p = 1.0 / np.arange(1, n_background + 1)
    background_p /= background_p.sum()

    dist = {}
    for k, code in enumerate(nodes):
        own = np.zeros(vocab_size)
        start = n_background + k * block
        own[start : start + block] = 1.0 / block
        parent = parent_of[code]
        dist[code] = own if not parent else PARENT_SHARE * dist[parent] + (1 - PARENT_SHARE) * own
    cdf = {code: np.cumsum(p) for code, p in dist.items()}

    def draw(code, size):
        c = cdf[code]
        return np.minimum(np.searchsorted(c, rng.random(size) * c[-1], side="right"), vocab_size - 1)

    titles = [" ".join(vocab[t] for t in draw(code, TITLE_LEN)) for code in leaves]
    catalog = LabelCatalog(list(leaves), titles)

    n_zero = int(round(zero_shot_fraction * n_labels))
    zero_shot = sorted(rng.choice(leaves, size=n_zero, replace=False).tolist()) if n_zero else []
    zs_set = set(zero_shot)
    popularity = 1.0 / np.sqrt(1.0 + rng.permutation(n_labels))
    siblings = {}
    for code in leaves:
        siblings.setdefault(leaf_parent[code], []).append(code)

    n_train = int(round(SPLIT_FRACTIONS[0] * n_docs))
    n_valid = int(round(SPLIT_FRACTIONS[1] * n_docs))
    records = []
    for d in range(n_docs):
        split = "train" if d < n_train else ("valid" if d < n_train + n_valid else "test")
        allowed = [c for c in leaves if split == "test" or c not in zs_set]
        weights = np.array([popularity[catalog.index(c)] for c in allowed])
        weights /= weights.sum()
        k = int(rng.choice(len(LABEL_COUNT_PROBS), p=LABEL_COUNT_PROBS)) + 1
        k = min(k, len(allowed))
        test_pos = d - n_train - n_valid
        if split == "test" and test_pos < len(zero_shot):
            chosen = [zero_shot[test_pos]]
        else:
            chosen = [allowed[int(rng.choice(len(allowed), p=weights))]]
        while len(chosen) < k:
            pool = [s for s in siblings[leaf_parent[chosen[-1]]] if s in allowed and s not in chosen]
            if pool and rng.random() < SIBLING_BIAS:
                chosen.append(pool[int(rng.integers(len(pool)))])
                continue
            rest = [i for i, c in enumerate(allowed) if c not in chosen]
            w = weights[rest] / weights[rest].sum()
            chosen.append(allowed[rest[int(rng.choice(len(rest), p=w))]])
        from_labels = rng.random(doc_len) >= BACKGROUND_SHARE
        owners = rng.integers(len(chosen), size=doc_len)
        tokens = np.empty(doc_len, dtype=np.int64)
        bg = ~from_labels
        tokens[bg] = np.minimum(
            np.searchsorted(np.cumsum(background_p), rng.random(int(bg.sum())), side="right"), n_background - 1
        )
        for j, code in enumerate(chosen):
            sel = from_labels & (owners == j)
            tokens[sel] = draw(code, int(sel.sum()))
        records.append(
            {
                "id": f"doc{d:05d}",
                "text": " ".join(vocab[t] for t in tokens),
                "labels": sorted(chosen),
                "split": split,
            }
        )
    return SynthCorpus(records, catalog, zero_shot, dict(leaf_parent))
