"""Corpus records, citation graph storage, BFS sub-sampling and splits."""

from __future__ import annotations

import json
import logging
import random
import unicodedata
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

logger = logging.getLogger(__name__)

INDUCTIVE = "inductive"
TRANSDUCTIVE = "transductive"
SPLIT_MODES = (INDUCTIVE, TRANSDUCTIVE)


class CorpusFormatError(ValueError):
    """A corpus line could not be parsed."""


class CorpusValidationError(ValueError):
    """Corpus content violates an invariant (duplicate ids, bad sizes, ...)."""


@dataclass(frozen=True)
class Document:
    id: str
    title: str = ""
    abstract: str = ""
    introduction: str = ""
    body_sentences: tuple[str, ...] = ()
    reference_ids: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.id:
            raise CorpusValidationError("document id must be non-empty")
        object.__setattr__(self, "body_sentences", tuple(self.body_sentences))
        refs = tuple(self.reference_ids)
        if self.id in refs:
            raise CorpusValidationError(f"document {self.id!r} references itself")
        if len(set(refs)) != len(refs):
            raise CorpusValidationError(f"document {self.id!r} has duplicate references")
        object.__setattr__(self, "reference_ids", refs)

    @property
    def body(self) -> str:
        return " ".join(self.body_sentences)

    def to_record(self) -> dict:
        return {
            "id": self.id,
            "title": self.title,
            "abstract": self.abstract,
            "introduction": self.introduction,
            "body_sentences": list(self.body_sentences),
            "reference_ids": list(self.reference_ids),
        }


@dataclass(frozen=True)
class CitationGraph:
    """Directed citation edges over document ids.

    Edges keep their citing -> cited direction, but neighbourhoods are
    symmetric: two documents are adjacent when either cites the other.
    """

    nodes: frozenset[str]
    edges: frozenset[tuple[str, str]]
    _adj: dict = field(default=None, repr=False, compare=False, hash=False)

    def __post_init__(self):
        nodes = frozenset(self.nodes)
        edges = frozenset((a, b) for a, b in self.edges if a != b)
        for a, b in edges:
            if a not in nodes or b not in nodes:
                raise CorpusValidationError(f"edge ({a}, {b}) has an endpoint outside the node set")
        adj: dict[str, set[str]] = {n: set() for n in nodes}
        for a, b in edges:
            adj[a].add(b)
            adj[b].add(a)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "_adj", {n: frozenset(v) for n, v in adj.items()})

    def neighbors(self, node: str) -> frozenset[str]:
        return self._adj[node]

    def adjacent(self, a: str, b: str) -> bool:
        return a != b and b in self._adj.get(a, ())

    def subgraph(self, keep: Iterable[str]) -> "CitationGraph":
        keep = frozenset(keep)
        return CitationGraph(keep, frozenset(e for e in self.edges if e[0] in keep and e[1] in keep))

    def component_size(self, node: str) -> int:
        seen = {node}
        stack = [node]
        while stack:
            for nb in self._adj[stack.pop()]:
                if nb not in seen:
                    seen.add(nb)
                    stack.append(nb)
        return len(seen)


@dataclass(frozen=True)
class CorpusSplit:
    train_ids: frozenset[str]
    val_ids: frozenset[str]
    test_ids: frozenset[str]
    mode: str
    retained_edges: frozenset[tuple[str, str]]

    def __post_init__(self):
        if self.mode not in SPLIT_MODES:
            raise CorpusValidationError(f"unknown split mode {self.mode!r}")
        for name in ("train_ids", "val_ids", "test_ids", "retained_edges"):
            object.__setattr__(self, name, frozenset(getattr(self, name)))
        if (self.train_ids & self.val_ids) or (self.train_ids & self.test_ids) or (self.val_ids & self.test_ids):
            raise CorpusValidationError("split id sets overlap")

    @property
    def all_ids(self) -> frozenset[str]:
        return self.train_ids | self.val_ids | self.test_ids

    def role_of(self, doc_id: str) -> str:
        if doc_id in self.train_ids:
            return "train"
        if doc_id in self.val_ids:
            return "val"
        if doc_id in self.test_ids:
            return "test"
        raise KeyError(doc_id)

    def ids_for(self, role: str) -> frozenset[str]:
        return {"train": self.train_ids, "val": self.val_ids, "test": self.test_ids}[role]

    def graph(self) -> CitationGraph:
        return CitationGraph(self.all_ids, self.retained_edges)


# ---------------------------------------------------------------------------
# text utilities


def _is_punct(ch: str) -> bool:
    return unicodedata.category(ch).startswith("P")


def tokenize(text: str) -> list[str]:
    """Lowercase, split on whitespace, strip punctuation at token edges."""
    tokens = []
    for raw in text.lower().split():
        i, j = 0, len(raw)
        while i < j and _is_punct(raw[i]):
            i += 1
        while j > i and _is_punct(raw[j - 1]):
            j -= 1
        if i < j:
            tokens.append(raw[i:j])
    return tokens


_TERMINATORS = ".!?"


def sentence_split(text: str) -> list[str]:
    """Split after '.', '!' or '?' when followed by whitespace or end of text."""
    sentences = []
    start = 0
    n = len(text)
    for i, ch in enumerate(text):
        if ch in _TERMINATORS and (i + 1 == n or text[i + 1].isspace()):
            piece = text[start : i + 1].strip()
            if piece:
                sentences.append(piece)
            start = i + 1
    tail = text[start:].strip()
    if tail:
        sentences.append(tail)
    return sentences


# ---------------------------------------------------------------------------
# IO


def _parse_record(line: str, lineno: int) -> Document:
    try:
        rec = json.loads(line)
    except json.JSONDecodeError as exc:
        raise CorpusFormatError(f"line {lineno}: invalid JSON ({exc.msg})") from exc
    if not isinstance(rec, dict):
        raise CorpusFormatError(f"line {lineno}: record is not an object")
    try:
        for key in ("id", "title", "abstract", "introduction"):
            if not isinstance(rec[key], str):
                raise CorpusFormatError(f"line {lineno}: field {key!r} must be a string")
        for key in ("body_sentences", "reference_ids"):
            if not isinstance(rec[key], list) or not all(isinstance(x, str) for x in rec[key]):
                raise CorpusFormatError(f"line {lineno}: field {key!r} must be an array of strings")
    except KeyError as exc:
        raise CorpusFormatError(f"line {lineno}: missing field {exc.args[0]!r}") from None
    try:
        return Document(
            id=rec["id"],
            title=rec["title"],
            abstract=rec["abstract"],
            introduction=rec["introduction"],
            body_sentences=tuple(rec["body_sentences"]),
            reference_ids=tuple(rec["reference_ids"]),
        )
    except CorpusValidationError as exc:
        raise CorpusValidationError(f"line {lineno}: {exc}") from None


def graph_from_documents(docs: Sequence[Document]) -> tuple[CitationGraph, int]:
    """Build the citation graph; returns it with the number of dangling references dropped."""
    ids = {d.id for d in docs}
    edges = set()
    dropped = 0
    for d in docs:
        for ref in d.reference_ids:
            if ref in ids:
                edges.add((d.id, ref))
            else:
                dropped += 1
    return CitationGraph(frozenset(ids), frozenset(edges)), dropped


def load_corpus(path) -> tuple[list[Document], CitationGraph]:
    path = Path(path)
    docs: list[Document] = []
    seen: set[str] = set()
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            doc = _parse_record(line, lineno)
            if doc.id in seen:
                raise CorpusValidationError(f"line {lineno}: duplicate document id {doc.id!r}")
            seen.add(doc.id)
            docs.append(doc)
    graph, dropped = graph_from_documents(docs)
    if dropped:
        logger.warning("dropped %d dangling reference(s) while loading %s", dropped, path)
    return docs, graph


def save_corpus(docs: Sequence[Document], path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for d in docs:
            fh.write(json.dumps(d.to_record(), ensure_ascii=False, sort_keys=True) + "\n")


def save_edge_list(graph: CitationGraph, path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for a, b in sorted(graph.edges):
            fh.write(f"{a}\t{b}\n")


def load_edge_list(path) -> list[tuple[str, str]]:
    edges = []
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise CorpusFormatError(f"line {lineno}: expected two tab-separated ids")
            edges.append((parts[0], parts[1]))
    return edges


# ---------------------------------------------------------------------------
# sampling


def _bfs_order(graph: CitationGraph, seed_id: str, limit: int, allowed=None) -> list[str]:
    order = [seed_id]
    seen = {seed_id}
    queue = deque([seed_id])
    while queue and len(order) < limit:
        node = queue.popleft()
        for nb in sorted(graph.neighbors(node)):
            if nb in seen or (allowed is not None and nb not in allowed):
                continue
            seen.add(nb)
            order.append(nb)
            queue.append(nb)
            if len(order) >= limit:
                break
    return order


def bfs_sample_subgraph(graph: CitationGraph, seed_id: str, node_limit: int, rng_seed: int = 0) -> CitationGraph:
    """Induced subgraph over the first ``node_limit`` nodes reached by BFS.

    Neighbours are visited in ascending id order, so the result does not
    depend on ``rng_seed``; it is accepted for call-site symmetry with
    the seed-choosing code.
    """
    if seed_id not in graph.nodes:
        raise KeyError(seed_id)
    if node_limit < 1:
        raise CorpusValidationError("node_limit must be >= 1")
    return graph.subgraph(_bfs_order(graph, seed_id, node_limit))


def _grow(graph: CitationGraph, pool: set[str], size: int, rng: random.Random) -> list[str]:
    # BFS restricted to `pool`, reseeding from a fresh random node whenever a component runs dry.
    picked: list[str] = []
    while len(picked) < size:
        seed = rng.choice(sorted(pool))
        sub = graph.subgraph(pool)
        order = _bfs_order(sub, seed, size - len(picked))
        picked.extend(order)
        pool.difference_update(order)
    return picked


def make_splits(graph: CitationGraph, sizes: tuple[int, int, int], mode: str = INDUCTIVE, rng_seed: int = 0) -> CorpusSplit:
    """Sample validation and test sub-graphs by BFS, then train from the remainder.

    The id partition depends only on ``rng_seed``; ``mode`` decides whether
    edges crossing two splits survive.
    """
    if mode not in SPLIT_MODES:
        raise CorpusValidationError(f"unknown split mode {mode!r}")
    n_train, n_val, n_test = sizes
    if min(sizes) < 0 or n_train < 1:
        raise CorpusValidationError(f"invalid split sizes {sizes}")
    if sum(sizes) > len(graph.nodes):
        raise CorpusValidationError(f"split sizes {sizes} exceed node count {len(graph.nodes)}")
    rng = random.Random(rng_seed)
    pool = set(graph.nodes)
    val = _grow(graph, pool, n_val, rng)
    test = _grow(graph, pool, n_test, rng)
    train = _grow(graph, pool, n_train, rng)
    part = {i: "train" for i in train} | {i: "val" for i in val} | {i: "test" for i in test}
    edges = [e for e in graph.edges if e[0] in part and e[1] in part]
    if mode == INDUCTIVE:
        edges = [e for e in edges if part[e[0]] == part[e[1]]]
    return CorpusSplit(frozenset(train), frozenset(val), frozenset(test), mode, frozenset(edges))


def cross_split_edges(graph: CitationGraph, split: CorpusSplit) -> int:
    """Number of sampled-node edges whose endpoints fall in different splits."""
    return sum(
        1
        for a, b in graph.edges
        if a in split.all_ids and b in split.all_ids and split.role_of(a) != split.role_of(b)
    )


def save_split(split: CorpusSplit, path) -> None:
    rec = {
        "mode": split.mode,
        "train_ids": sorted(split.train_ids),
        "val_ids": sorted(split.val_ids),
        "test_ids": sorted(split.test_ids),
        "retained_edges": sorted(list(e) for e in split.retained_edges),
    }
    Path(path).write_text(json.dumps(rec, indent=1) + "\n", encoding="utf-8")


def load_split(path) -> CorpusSplit:
    rec = json.loads(Path(path).read_text(encoding="utf-8"))
    return CorpusSplit(
        frozenset(rec["train_ids"]),
        frozenset(rec["val_ids"]),
        frozenset(rec["test_ids"]),
        rec["mode"],
        frozenset(tuple(e) for e in rec["retained_edges"]),
    )
