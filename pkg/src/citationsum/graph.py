"""Per-instance hierarchical graphs: weighted citation graph and document-token bipartite graph."""

from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .corpus import CitationGraph, Document, tokenize
from .rouge import mean_rouge_12
from .selection import SelectionResult, SelectionTarget


class GraphError(ValueError):
    pass


class DegenerateGraphError(GraphError):
    """Every source-neighbour edge fell below the threshold."""


@dataclass(frozen=True)
class WeightedCitationGraph:
    node_ids: tuple[str, ...]  # source, positive neighbours, negative documents
    weights: np.ndarray
    rho: float
    num_neighbors: int
    num_negatives: int

    @property
    def size(self) -> int:
        return len(self.node_ids)

    def source_weights(self) -> dict[str, float]:
        return {nid: float(self.weights[0, i]) for i, nid in enumerate(self.node_ids[1 : 1 + self.num_neighbors], 1)}

    def to_record(self) -> dict:
        return {
            "node_ids": list(self.node_ids),
            "weights": self.weights.ravel().tolist(),
            "rho": self.rho,
            "negative_ids": list(self.node_ids[1 + self.num_neighbors :]),
        }


@dataclass(frozen=True)
class BipartiteDocTokenGraph:
    doc_index: int
    token_ids: tuple  # positives in first-occurrence order, then negatives
    adjacency: np.ndarray  # shape (1, len(token_ids))

    @property
    def num_positive(self) -> int:
        return int(self.adjacency.sum())

    def square(self) -> np.ndarray:
        t = len(self.token_ids)
        a = np.zeros((t + 1, t + 1))
        a[0, 1:] = self.adjacency[0]
        a[1:, 0] = self.adjacency[0]
        return a


@dataclass(frozen=True)
class NormalizedLaplacian:
    matrix: np.ndarray
    degree: np.ndarray


def normalized_laplacian(adjacency, degree=None) -> NormalizedLaplacian:
    """I - D^{-1/2} A D^{-1/2} with D the row sums of A (or an explicit degree vector)."""
    a = np.asarray(adjacency, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise GraphError(f"adjacency must be square, got shape {a.shape}")
    deg = a.sum(axis=1) if degree is None else np.asarray(degree, dtype=float)
    if np.any(deg <= 0):
        raise GraphError("degenerate degree: every node needs a positive degree")
    inv_sqrt = 1.0 / np.sqrt(deg)
    # scaling by the outer product keeps a symmetric input exactly symmetric
    lap = np.eye(len(a)) - a * np.outer(inv_sqrt, inv_sqrt)
    return NormalizedLaplacian(lap, deg)


def bipartite_laplacian(graph: BipartiteDocTokenGraph, token_doc_counts=None) -> NormalizedLaplacian:
    """Laplacian of the square document+token graph.

    Token degrees default to the column sums of the document row; any
    degree below one (negative tokens) is raised to one.
    """
    square = graph.square()
    deg = square.sum(axis=1)
    if token_doc_counts is not None:
        deg[1:] = np.asarray(token_doc_counts, dtype=float)
    deg[1:] = np.maximum(deg[1:], 1.0)
    return normalized_laplacian(square, deg)


def build_weighted_citation_graph(
    source: Document,
    neighbors: Sequence[tuple[Document, SelectionResult]],
    negatives: Sequence[Document],
    target: SelectionTarget,
    rho: float = 0.7,
) -> WeightedCitationGraph:
    if not neighbors:
        raise GraphError("at least one neighbour is required")
    if not 0.0 <= rho <= 1.0:
        raise GraphError(f"rho must lie in [0, 1], got {rho}")
    contents = [sel.content_tokens(doc) for doc, sel in neighbors]
    k = len(neighbors)
    n = 1 + k + len(negatives)
    w = np.zeros((n, n))
    tgt = list(target.text)
    for j, c in enumerate(contents, start=1):
        w[0, j] = w[j, 0] = mean_rouge_12(tgt, c)
    for i in range(1, k + 1):
        for j in range(i + 1, k + 1):
            w[i, j] = w[j, i] = mean_rouge_12(contents[i - 1], contents[j - 1])
    w[w < rho] = 0.0
    np.fill_diagonal(w, 1.0)
    if not np.any(w[0, 1 : k + 1] > 0):
        raise DegenerateGraphError(f"all neighbours of {source.id!r} fall below rho={rho}")
    node_ids = (source.id,) + tuple(d.id for d, _ in neighbors) + tuple(d.id for d in negatives)
    return WeightedCitationGraph(node_ids, w, rho, k, len(negatives))


def _tokens_of(doc) -> list:
    if isinstance(doc, Document):
        return tokenize(doc.body)
    return list(doc)


def build_bipartite_graph(doc, negative_tokens: Sequence = ()) -> BipartiteDocTokenGraph:
    """One document row: 1 for every distinct token of the document, 0 for each negative.

    ``doc`` is a ``Document`` (its body is tokenized) or a token sequence.
    """
    doc_tokens = _tokens_of(doc)
    positives = list(dict.fromkeys(doc_tokens))
    if not positives:
        raise GraphError("document has no tokens")
    pos_set = set(positives)
    clash = [t for t in negative_tokens if t in pos_set]
    if clash:
        raise GraphError(f"negative tokens occur in the document: {clash[:5]}")
    negatives = list(dict.fromkeys(negative_tokens))
    row = np.array([[1.0] * len(positives) + [0.0] * len(negatives)])
    return BipartiteDocTokenGraph(0, tuple(positives + negatives), row)


def sample_negative_documents(graph: CitationGraph, source_id: str, count: int, rng_seed: int = 0, pool=None) -> list[str]:
    """Uniform sample of documents with no citation link to the source.

    ``pool`` optionally restricts the candidates (e.g. to one split).
    """
    nodes = graph.nodes if pool is None else frozenset(pool) & graph.nodes
    candidates = sorted(nodes - graph.neighbors(source_id) - {source_id})
    if count > len(candidates):
        raise GraphError(f"requested {count} negative documents, only {len(candidates)} available")
    return random.Random(rng_seed).sample(candidates, count)


def sample_negative_tokens(vocabulary, doc, count: int, rng_seed: int = 0) -> list:
    present = set(_tokens_of(doc))
    candidates = sorted(t for t in set(vocabulary) if t not in present)
    if count > len(candidates):
        raise GraphError(f"requested {count} negative tokens, only {len(candidates)} available")
    return random.Random(rng_seed).sample(candidates, count)
