"""ROUGE-N / ROUGE-L scoring against brute-force oracles."""

import itertools
import random
from collections import Counter

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from citationsum.corpus import tokenize
from citationsum.rouge import RougeScore, lcs_length, mean_rouge_12, ngram_counts, rouge_l, rouge_n

from oracles import manual_rouge_n
from paper_texts import REFERENCE_1, REFERENCE_2, SOURCE_ABSTRACT, TABLE1_ROUGE1

tokens = st.lists(st.sampled_from("abcdef"), max_size=12)


def brute_lcs(a, b):
    """Longest common subsequence by enumerating every subsequence of the shorter text."""
    if len(a) > len(b):
        a, b = b, a
    for size in range(len(a), 0, -1):
        for idx in itertools.combinations(range(len(a)), size):
            sub = [a[i] for i in idx]
            it = iter(b)
            if all(any(x == y for y in it) for x in sub):
                return size
    return 0




class TestRougeN:
    def test_identical(self):
        t = "a b c d".split()
        assert rouge_n(t, t, 1).f1 == 1.0
        assert rouge_n(t, t, 2).f1 == 1.0

    def test_disjoint(self):
        assert rouge_n(["a", "b"], ["c", "d"], 1).f1 == 0.0

    def test_empty(self):
        s = rouge_n([], ["a"], 1)
        assert (s.precision, s.recall, s.f1) == (0.0, 0.0, 0.0)
        assert rouge_n(["a"], ["a"], 2).f1 == 0.0

    def test_clipping(self):
        # "the" appears 3x in candidate but once in reference
        s = rouge_n("the the the cat".split(), "the cat sat".split(), 1)
        assert s.precision == pytest.approx(2 / 4)
        assert s.recall == pytest.approx(2 / 3)

    def test_distinct_counts_each_ngram_once(self):
        s = rouge_n("the the the cat".split(), "the cat sat".split(), 1, distinct=True)
        assert s.precision == pytest.approx(2 / 2)
        assert s.recall == pytest.approx(2 / 3)

    def test_bad_order(self):
        with pytest.raises(ValueError):
            rouge_n(["a"], ["a"], 0)

    def test_table1_distinct_within_tolerance(self):
        src = tokenize(SOURCE_ABSTRACT)
        for ref, expected in zip((REFERENCE_1, REFERENCE_2), TABLE1_ROUGE1):
            assert abs(rouge_n(src, tokenize(ref), 1, distinct=True).f1 - expected) <= 0.02

    def test_table1_frozen_values(self):
        src = tokenize(SOURCE_ABSTRACT)
        r1, r2 = tokenize(REFERENCE_1), tokenize(REFERENCE_2)
        assert rouge_n(src, r1, 1, distinct=True).f1 == pytest.approx(14 / 93)
        assert rouge_n(src, r2, 1, distinct=True).f1 == pytest.approx(2 / 11)
        assert rouge_n(src, r1, 1).f1 == pytest.approx(0.23076923076923075)
        assert rouge_n(src, r2, 1).f1 == pytest.approx(0.22695035460992904)

    @given(tokens, tokens, st.integers(1, 3))
    def test_matches_manual_oracle(self, a, b, n):
        assert rouge_n(a, b, n).f1 == pytest.approx(manual_rouge_n(a, b, n))

    @given(tokens, tokens, st.integers(1, 3))
    def test_f1_symmetry(self, a, b, n):
        assert rouge_n(a, b, n).f1 == pytest.approx(rouge_n(b, a, n).f1)

    @given(tokens, tokens, st.integers(1, 3), st.booleans())
    def test_bounds_and_f1_formula(self, a, b, n, distinct):
        s = rouge_n(a, b, n, distinct)
        for v in (s.precision, s.recall, s.f1):
            assert 0.0 <= v <= 1.0
        if s.precision + s.recall > 0:
            assert s.f1 == pytest.approx(2 * s.precision * s.recall / (s.precision + s.recall))
        else:
            assert s.f1 == 0.0

    @given(tokens, tokens.filter(bool))
    def test_recall_monotone_when_appending_matched_token(self, a, b):
        ref_counts = Counter(b)
        for tok in set(b):
            if Counter(a)[tok] < ref_counts[tok]:
                assert rouge_n(a + [tok], b, 1).recall >= rouge_n(a, b, 1).recall


class TestNGramCounts:
    @given(tokens, st.integers(1, 4))
    def test_total(self, t, n):
        assert ngram_counts(t, n).total == max(0, len(t) - n + 1)


class TestRougeL:
    def test_identical(self):
        t = "x y z".split()
        assert rouge_l(t, t).f1 == 1.0

    def test_subsequence(self):
        ref = "a b c d e".split()
        s = rouge_l(["a", "c", "e"], ref)
        assert s.precision == 1.0
        assert s.recall == pytest.approx(3 / 5)

    def test_random_8_token_pairs_match_brute_force(self):
        rng = random.Random(11)
        for _ in range(40):
            a = [rng.choice("abcd") for _ in range(8)]
            b = [rng.choice("abcd") for _ in range(8)]
            assert lcs_length(a, b) == brute_lcs(a, b)

    @given(tokens, tokens)
    def test_lcs_bounds(self, a, b):
        L = lcs_length(a, b)
        assert 0 <= L <= min(len(a), len(b))
        assert L == lcs_length(b, a)
        s = rouge_l(a, b)
        assert 0.0 <= s.f1 <= 1.0


class TestMeanRouge12:
    def test_identical(self):
        assert mean_rouge_12(["a", "b"], ["a", "b"]) == 1.0

    def test_disjoint(self):
        assert mean_rouge_12(["a", "b"], ["c", "d"]) == 0.0

    def test_hand_computed_12_token_pair(self):
        a = "the model reads the paper and the model writes a short summary".split()
        b = "a model reads every paper then writes the short summary of it".split()
        # unigram overlap (clipped): the:1 model:1 reads:1 paper:1 writes:1 a:1 short:1 summary:1 -> 8 of 12 / 12
        # bigram overlap: (model,reads) (short,summary) -> 2 of 11 / 11
        expected = (8 / 12 + 2 / 11) / 2
        assert mean_rouge_12(a, b) == pytest.approx(expected)

    def test_score_dataclass(self):
        s = RougeScore.from_counts(0, 0, 0)
        assert s == RougeScore(0.0, 0.0, 0.0)
