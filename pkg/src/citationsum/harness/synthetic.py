"""Synthetic citation corpus with planted abstract content.

Each document's abstract sentences appear verbatim in its own body and as
noisy copies in the bodies of its citation neighbours, so oracle selection
on a neighbour recovers most of the source abstract.
"""

from __future__ import annotations

import random
from pathlib import Path

from ..corpus import CitationGraph, Document, graph_from_documents, save_corpus, save_edge_list

_SYLLABLES = ("ka", "lo", "mi", "ne", "ru", "ta", "so", "vi", "pe", "du", "ga", "zo", "fi", "be", "xu", "ha")


def _make_vocabulary(size: int, rng: random.Random) -> list[str]:
    words: list[str] = []
    seen = set()
    while len(words) < size:
        w = "".join(rng.choice(_SYLLABLES) for _ in range(rng.randint(2, 4)))
        if w not in seen:
            seen.add(w)
            words.append(w)
    return words


def _sentence(words, rng, lo=7, hi=11) -> list[str]:
    return [rng.choice(words) for _ in range(rng.randint(lo, hi))]


def _noisy(sentence: list[str], rate: float, words, rng) -> list[str]:
    return [rng.choice(words) if rng.random() < rate else w for w in sentence]


def _text(sentence: list[str]) -> str:
    return " ".join(sentence) + "."


def generate_synthetic_corpus(
    num_docs: int,
    vocab_size: int = 400,
    avg_edges: float = 2.0,
    rng_seed: int = 0,
    abstract_sentences: int = 3,
    filler_sentences: int = 4,
    max_noise: float = 0.3,
) -> tuple[list[Document], CitationGraph]:
    """Documents plus their citation graph; deterministic in ``rng_seed``.

    Every document after the first cites one earlier document, so the graph
    is connected; further edges are added at random until the mean number
    of references per document reaches ``avg_edges``.
    """
    if num_docs < 2:
        raise ValueError("num_docs must be >= 2")
    rng = random.Random(rng_seed)
    words = _make_vocabulary(vocab_size, rng)
    ids = [f"doc{i:04d}" for i in range(num_docs)]

    refs: dict[int, set[int]] = {i: set() for i in range(num_docs)}
    for i in range(1, num_docs):
        refs[i].add(rng.randrange(i))
    target_edges = int(round(avg_edges * num_docs))
    attempts = 0
    while sum(len(r) for r in refs.values()) < target_edges and attempts < 50 * num_docs:
        attempts += 1
        a, b = rng.sample(range(num_docs), 2)
        if b in refs[a] or a in refs[b]:
            continue
        refs[a].add(b)
    neighbors = {i: set(refs[i]) for i in range(num_docs)}
    for a, rs in refs.items():
        for b in rs:
            neighbors[b].add(a)

    abstracts = [[_sentence(words, rng) for _ in range(abstract_sentences)] for _ in range(num_docs)]
    bodies: list[list[list[str]]] = []
    intros = []
    for i in range(num_docs):
        body = [_sentence(words, rng) for _ in range(filler_sentences)]
        body.extend(abstracts[i])
        for j in sorted(neighbors[i]):
            rate = rng.uniform(0.0, max_noise)
            body.extend(_noisy(s, rate, words, rng) for s in abstracts[j])
        rng.shuffle(body)
        bodies.append(body)
        intros.append([_noisy(s, 0.2, words, rng) for s in abstracts[i]] + [_sentence(words, rng)])

    docs = [
        Document(
            id=ids[i],
            title=" ".join(abstracts[i][0][:5]),
            abstract=" ".join(_text(s) for s in abstracts[i]),
            introduction=" ".join(_text(s) for s in intros[i]),
            body_sentences=tuple(_text(s) for s in bodies[i]),
            reference_ids=tuple(ids[j] for j in sorted(refs[i])),
        )
        for i in range(num_docs)
    ]
    graph, _ = graph_from_documents(docs)
    return docs, graph


def write_synthetic_corpus(out_dir, num_docs: int, vocab_size: int = 400, avg_edges: float = 2.0, rng_seed: int = 0):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    docs, graph = generate_synthetic_corpus(num_docs, vocab_size, avg_edges, rng_seed)
    save_corpus(docs, out / "corpus.jsonl")
    save_edge_list(graph, out / "edges.tsv")
    return out / "corpus.jsonl", out / "edges.tsv"
