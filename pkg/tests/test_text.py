import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ldplam.skipgram import SkipGramEmbedder, skipgram_pretrain
from ldplam.text import (
    PAD,
    UNK,
    TfidfTruncator,
    Vocab,
    build_vocab,
    idf,
    read_corpus,
    tfidf_scores,
    tokenize,
    truncate_by_tfidf,
    write_corpus,
)


def hand_vocab(docs):
    """Vocab with df counted by hand over ``docs`` (lists of tokens)."""
    vocab = build_vocab(docs)
    for i, tok in enumerate(vocab.itos[2:], 2):
        assert vocab.df[i] == sum(1 for d in docs if tok in d)
    return vocab


class TestTokenize:
    def test_whitespace(self):
        assert tokenize("a  b\tc\n") == ["a", "b", "c"]

    def test_char(self):
        assert tokenize("ab c", "char") == ["a", "b", "c"]

    def test_unknown_mode(self):
        with pytest.raises(ValueError, match="mode"):
            tokenize("x", "bpe")


class TestBuildVocab:
    def test_min_count_one(self):
        v = build_vocab([["a", "a", "b"]])
        assert v.itos == ["<pad>", "<unk>", "a", "b"]

    def test_min_count_threshold(self):
        v = build_vocab([["a", "a", "b"]], min_count=2)
        assert "b" not in v
        assert v.encode(["a", "b"]) == [2, UNK]

    def test_document_frequencies_by_hand(self):
        v = hand_vocab([["x", "y", "x"], ["y", "z"]])
        assert dict(zip(v.itos, v.df)) == {"<pad>": 0, "<unk>": 0, "y": 2, "x": 1, "z": 1}
        assert v.n_docs == 2

    def test_ordering_count_then_lexicographic(self):
        v = build_vocab([["b", "c", "a", "c"]])
        assert v.itos[2:] == ["c", "a", "b"]

    def test_reserved_tokens_never_counted(self):
        v = build_vocab([["<pad>", "<unk>", "a"]])
        assert v.itos == ["<pad>", "<unk>", "a"]
        assert v.df[:2] == [0, 0]

    def test_empty_corpus(self):
        with pytest.raises(ValueError):
            build_vocab([])

    def test_save_load_round_trip(self, tmp_path):
        v = build_vocab([["a", "b"], ["b", "c", "c"]])
        v.add_tokens(["Z"])
        v.save(tmp_path / "v.tsv")
        w = Vocab.load(tmp_path / "v.tsv")
        assert (w.itos, w.df, w.n_docs) == (v.itos, v.df, v.n_docs)
        assert all(w.stoi[t] == i for i, t in enumerate(w.itos))

    def test_malformed_file(self, tmp_path):
        (tmp_path / "v.tsv").write_text("a\t5\t1\n")
        with pytest.raises(ValueError, match="malformed"):
            Vocab.load(tmp_path / "v.tsv")


class TestTfidf:
    def test_saturating_idf(self):
        v = build_vocab([["a", "b"], ["a"], ["a", "c"]])
        assert tfidf_scores([v.id("a")], v)[0] == 1.0

    def test_linear_in_tf(self):
        v = build_vocab([["a", "b"], ["b"]])
        one = tfidf_scores([v.id("a"), v.id("b")], v)[0]
        two = tfidf_scores([v.id("a"), v.id("a"), v.id("b")], v)[0]
        assert two == pytest.approx(2 * one, abs=1e-15)

    def test_hand_evaluation(self):
        docs = [["p", "q", "q"], ["q", "r"], ["r", "s", "p"]]
        v = hand_vocab(docs)
        doc = ["p", "p", "q", "s", "t"]  # t unseen -> UNK, df 0
        expected = [
            2 * (math.log(4 / 3) + 1),
            2 * (math.log(4 / 3) + 1),
            1 * (math.log(4 / 3) + 1),
            1 * (math.log(4 / 2) + 1),
            1 * (math.log(4 / 1) + 1),
        ]
        np.testing.assert_allclose(tfidf_scores(v.encode(doc), v), expected, rtol=0, atol=1e-12)

    def test_identical_tokens_identical_scores(self):
        v = build_vocab([["a", "b", "a"]])
        s = tfidf_scores([2, 3, 2, 2], v)
        assert s[0] == s[2] == s[3]

    def test_out_of_range_treated_as_unk(self):
        v = build_vocab([["a"]])
        assert tfidf_scores([99], v)[0] == idf(v, UNK)


def sort_oracle(ids, scores, max_length):
    """Drop the bottom-scored occurrences by full sort (later position first on ties)."""
    ranked = sorted(range(len(ids)), key=lambda p: (scores[p], -p))
    drop = set(ranked[: len(ids) - max_length])
    return [t for p, t in enumerate(ids) if p not in drop]


class TestTruncate:
    def test_short_document_padded(self):
        v = build_vocab([["a", "b"]])
        doc = truncate_by_tfidf([2, 3], 5, v, "d1", {4})
        np.testing.assert_array_equal(doc.tokens, [2, 3, PAD, PAD, PAD])
        np.testing.assert_array_equal(doc.mask, [1, 1, 0, 0, 0])
        assert doc.length == 2 and doc.labels == {4} and doc.id == "d1"

    def test_all_identical_tokens(self):
        v = build_vocab([["a"]])
        doc = truncate_by_tfidf([2] * 6, 4, v)
        np.testing.assert_array_equal(doc.tokens, [2] * 4)

    def test_drops_lowest_scores(self):
        docs = [["a", "b", "c", "d"], ["a", "b", "c"], ["a", "b"], ["a"]]
        v = build_vocab(docs)
        ids = v.encode(["d", "a", "c", "b", "d", "e"])
        scores = tfidf_scores(ids, v)
        out = truncate_by_tfidf(ids, 3, v).tokens
        assert out.tolist() == sort_oracle(ids, scores, 3)

    def test_equal_scores_drop_later_first(self):
        v = build_vocab([["a", "b"], ["c"]])
        ids = v.encode(["a", "b", "c", "c"])  # a and b tie below c
        out = truncate_by_tfidf(ids, 3, v).tokens.tolist()
        assert out == v.encode(["a", "c", "c"])

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.integers(2, 9), min_size=1, max_size=30), st.integers(1, 20))
    def test_sort_oracle_property(self, ids, max_length):
        v = build_vocab([[str(t) for t in range(8) if (t * k) % 3] for k in range(1, 6)])
        ids = [min(t, len(v) - 1) for t in ids]
        doc = truncate_by_tfidf(ids, max_length, v)
        assert len(doc.tokens) == max_length
        assert doc.length == min(len(ids), max_length)
        expected = sort_oracle(ids, tfidf_scores(ids, v), max_length) if len(ids) > max_length else ids
        assert doc.tokens[: doc.length].tolist() == expected

    def test_bad_length(self):
        with pytest.raises(ValueError):
            truncate_by_tfidf([2], 0, build_vocab([["a"]]))


class TestTfidfTruncator:
    def test_transform_shape_and_mask(self):
        tr = TfidfTruncator(max_length=4).fit(["a b c", "a b", "d"])
        X = tr.transform(["a b c d e", "b"])
        assert X.shape == (2, 4) and X.dtype == np.int64
        assert (X[1] != PAD).sum() == 1

    def test_extra_tokens_reserved(self):
        tr = TfidfTruncator(extra_tokens=["Q"]).fit(["a b"])
        assert "Q" in tr.vocab_ and tr.vocab_.df[tr.vocab_.id("Q")] == 0

    def test_get_params(self):
        assert TfidfTruncator(max_length=7).get_params()["max_length"] == 7

    def test_unfitted(self):
        from sklearn.exceptions import NotFittedError

        with pytest.raises(NotFittedError):
            TfidfTruncator().transform(["a"])


class TestCorpusIO:
    def test_round_trip(self, tmp_path):
        recs = [{"id": "d1", "text": "a b", "labels": ["X1"], "split": "train"}]
        write_corpus(recs, tmp_path / "c.jsonl")
        assert read_corpus(tmp_path / "c.jsonl") == recs

    def test_missing_key(self, tmp_path):
        (tmp_path / "c.jsonl").write_text(json.dumps({"id": "d", "text": "x"}) + "\n")
        with pytest.raises(ValueError, match="labels"):
            read_corpus(tmp_path / "c.jsonl")

    def test_bad_json_names_line(self, tmp_path):
        (tmp_path / "c.jsonl").write_text('{"id": "a", "text": "", "labels": []}\n{oops\n')
        with pytest.raises(ValueError, match=":2:"):
            read_corpus(tmp_path / "c.jsonl")


class TestSkipGram:
    def test_zero_epochs_returns_initialisation(self):
        table = skipgram_pretrain([[2, 3, 4]], 5, 8, epochs=0, seed=3)
        rng = np.random.Generator(np.random.Philox(3))
        np.testing.assert_array_equal(table, rng.uniform(-0.5 / 8, 0.5 / 8, size=(5, 8)))

    def test_deterministic(self):
        corpus = [[2, 3, 4, 5], [5, 4, 3, 2, 6]]
        a = skipgram_pretrain(corpus, 7, 6, epochs=3, seed=1)
        b = skipgram_pretrain(corpus, 7, 6, epochs=3, seed=1)
        assert a.tobytes() == b.tobytes()

    def test_cliques_separate(self):
        rng = np.random.default_rng(0)
        a_ids, b_ids = list(range(2, 8)), list(range(8, 14))
        corpus = [rng.choice(a_ids if i % 2 else b_ids, size=12).tolist() for i in range(200)]
        table = skipgram_pretrain(corpus, 14, 16, window=3, negatives=4, epochs=5, seed=0)
        unit = table / np.linalg.norm(table, axis=1, keepdims=True)
        cos = unit @ unit.T

        def mean_cos(xs, ys):
            return np.mean([cos[i, j] for i in xs for j in ys if i != j])

        intra = (mean_cos(a_ids, a_ids) + mean_cos(b_ids, b_ids)) / 2
        assert intra > mean_cos(a_ids, b_ids)

    def test_loss_non_increasing(self):
        rng = np.random.default_rng(1)
        corpus = [rng.integers(2, 30, size=20).tolist() for _ in range(60)]
        history = []
        skipgram_pretrain(corpus, 30, 8, epochs=4, seed=0, history=history)
        assert len(history) == 4
        for prev, cur in zip(history, history[1:]):
            assert cur <= prev * 1.05

    def test_reserved_ids_never_trained(self):
        init = skipgram_pretrain([[0, 1, 2, 3, 1, 0]], 4, 4, epochs=0, seed=2)
        table = skipgram_pretrain([[0, 1, 2, 3, 1, 0]], 4, 4, epochs=2, seed=2)
        np.testing.assert_array_equal(table[:2], init[:2])

    @pytest.mark.parametrize("kw", [{"window": 0}, {"negatives": 0}])
    def test_bad_parameters(self, kw):
        with pytest.raises(ValueError):
            skipgram_pretrain([[2, 3]], 4, 4, **kw)

    def test_estimator_wrapper(self):
        corpus = [[2, 3, 4], [4, 3, 2]]
        emb = SkipGramEmbedder(vocab_size=5, dim=4, epochs=1).fit(corpus)
        assert emb.embeddings_.shape == (5, 4) and len(emb.loss_history_) == 1
        np.testing.assert_array_equal(emb.transform([[2, 4]])[0], emb.embeddings_[[2, 4]])
