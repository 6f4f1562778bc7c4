"""ROUGE-1/2/L scoring on token lists.

No stemming and no stopword removal. Scores are exact rationals computed
in floating point, so results are reproducible across platforms.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Sequence


@dataclass(frozen=True)
class RougeScore:
    precision: float
    recall: float
    f1: float

    @classmethod
    def from_counts(cls, matched: int, cand_total: int, ref_total: int) -> "RougeScore":
        p = matched / cand_total if cand_total else 0.0
        r = matched / ref_total if ref_total else 0.0
        f = 2 * p * r / (p + r) if p + r > 0 else 0.0
        return cls(p, r, f)


@dataclass(frozen=True)
class NGramCounts:
    order: int
    counts: Counter

    @property
    def total(self) -> int:
        return sum(self.counts.values())


def ngram_counts(tokens: Sequence[str], n: int) -> NGramCounts:
    if n < 1:
        raise ValueError("n-gram order must be >= 1")
    grams = Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))
    return NGramCounts(n, grams)


def rouge_n(candidate: Sequence[str], reference: Sequence[str], n: int = 1, distinct: bool = False) -> RougeScore:
    """Clipped n-gram overlap.

    With ``distinct=True`` every n-gram is counted once per text (set
    overlap) instead of with multiplicity.
    """
    cand = ngram_counts(candidate, n).counts
    ref = ngram_counts(reference, n).counts
    if distinct:
        matched = len(cand.keys() & ref.keys())
        return RougeScore.from_counts(matched, len(cand), len(ref))
    matched = sum((cand & ref).values())
    return RougeScore.from_counts(matched, sum(cand.values()), sum(ref.values()))


def lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    if len(a) < len(b):
        a, b = b, a
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l(candidate: Sequence[str], reference: Sequence[str]) -> RougeScore:
    return RougeScore.from_counts(lcs_length(candidate, reference), len(candidate), len(reference))


def mean_rouge_12(a: Sequence[str], b: Sequence[str]) -> float:
    """Mean of ROUGE-1 and ROUGE-2 F1; the similarity used for edge weights and selection."""
    return (rouge_n(a, b, 1).f1 + rouge_n(a, b, 2).f1) / 2
