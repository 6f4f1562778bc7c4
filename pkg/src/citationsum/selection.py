"""Oracle content selection from references and ROUGE-ranked neighbour sampling."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .corpus import Document, tokenize
from .rouge import mean_rouge_12

GOLD_ABSTRACT = "gold_abstract"
INTRODUCTION = "introduction"


class SelectionError(ValueError):
    pass


@dataclass(frozen=True)
class SelectionTarget:
    text: tuple[str, ...]
    role: str = GOLD_ABSTRACT


@dataclass(frozen=True)
class SelectionResult:
    source_id: str
    ref_id: str
    sentence_indices: tuple[int, ...]
    achieved_score: float
    # score after each accepted step; empty when nothing was selected
    step_scores: tuple[float, ...] = field(default=(), compare=False)

    def content_tokens(self, ref: Document) -> list[str]:
        return selected_tokens([tokenize(s) for s in ref.body_sentences], self.sentence_indices)


def selected_tokens(sentences: Sequence[Sequence[str]], indices: Iterable[int]) -> list[str]:
    out: list[str] = []
    for i in sorted(indices):
        out.extend(sentences[i])
    return out


def greedy_select(
    sentences: Sequence[Sequence[str]],
    target: SelectionTarget,
    max_sentences: int = 7,
    source_id: str = "",
    ref_id: str = "",
) -> SelectionResult:
    """Add the sentence that most improves mean ROUGE-1/2 until nothing improves.

    Candidates are scored as the concatenation of the chosen sentences in
    document order; ties go to the lowest sentence index.
    """
    if max_sentences < 1:
        raise SelectionError("max_sentences must be >= 1")
    chosen: list[int] = []
    best = 0.0
    steps: list[float] = []
    target_tokens = list(target.text)
    while len(chosen) < max_sentences:
        pick, pick_score = -1, best
        for i in range(len(sentences)):
            if i in chosen:
                continue
            score = mean_rouge_12(selected_tokens(sentences, chosen + [i]), target_tokens)
            if score > pick_score:
                pick, pick_score = i, score
        if pick < 0:
            break
        chosen.append(pick)
        best = pick_score
        steps.append(best)
    return SelectionResult(source_id, ref_id, tuple(sorted(chosen)), best, tuple(steps))


def selection_target(doc: Document, split_role: str) -> SelectionTarget:
    """Abstract for train/val documents; the introduction stands in at test time."""
    if split_role == "test":
        tokens = tokenize(doc.introduction)
        if not tokens:
            raise SelectionError(f"test document {doc.id!r} has no introduction")
        return SelectionTarget(tuple(tokens), INTRODUCTION)
    if split_role not in ("train", "val"):
        raise SelectionError(f"unknown split role {split_role!r}")
    tokens = tokenize(doc.abstract)
    if not tokens:
        raise SelectionError(f"document {doc.id!r} has an empty abstract")
    return SelectionTarget(tuple(tokens), GOLD_ABSTRACT)


def neighbor_scores(
    target: SelectionTarget, candidates: Sequence[tuple[Document, SelectionResult]]
) -> list[tuple[str, float]]:
    return [(doc.id, mean_rouge_12(list(target.text), sel.content_tokens(doc))) for doc, sel in candidates]


def select_neighbors(
    source: Document,
    candidates: Sequence[tuple[Document, SelectionResult]],
    k: int,
    target: SelectionTarget | None = None,
) -> list[str]:
    """Ids of the ``k`` candidates whose selected content best matches the source target.

    ``target`` defaults to the source abstract.
    """
    if k < 1:
        raise SelectionError("k must be >= 1")
    if target is None:
        target = SelectionTarget(tuple(tokenize(source.abstract)), GOLD_ABSTRACT)
    ranked = sorted(neighbor_scores(target, candidates), key=lambda t: (-t[1], t[0]))
    return [doc_id for doc_id, _ in ranked[:k]]


# ---------------------------------------------------------------------------
# cache


def save_selection_cache(results: Iterable[SelectionResult], path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for r in results:
            rec = {
                "source_id": r.source_id,
                "ref_id": r.ref_id,
                "sentence_indices": list(r.sentence_indices),
                "score": r.achieved_score,
            }
            fh.write(json.dumps(rec) + "\n")


def load_selection_cache(path) -> dict[tuple[str, str], SelectionResult]:
    cache = {}
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                r = SelectionResult(
                    rec["source_id"], rec["ref_id"], tuple(int(i) for i in rec["sentence_indices"]), float(rec["score"])
                )
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise SelectionError(f"selection cache line {lineno}: {exc}") from None
            cache[(r.source_id, r.ref_id)] = r
    return cache
