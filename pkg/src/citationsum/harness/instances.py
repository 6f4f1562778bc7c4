"""Turning a source document and its citation neighbourhood into model inputs."""

from __future__ import annotations

import hashlib
import json
import logging
import zlib
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import Tensor

from ..corpus import CitationGraph, CorpusSplit, Document, INDUCTIVE, tokenize
from ..graph import (
    DegenerateGraphError,
    NormalizedLaplacian,
    WeightedCitationGraph,
    bipartite_laplacian,
    build_bipartite_graph,
    build_weighted_citation_graph,
    normalized_laplacian,
    sample_negative_documents,
    sample_negative_tokens,
)
from ..losses import ContrastiveInstance, TokenAlignment
from ..model import (
    BOS, EOS, PAD, REFERENCE_SEGMENT, SOURCE_SEGMENT, SPECIAL_TOKENS, UNK,
    CitationSumModel, DecoderContext, EncoderOutput, build_decoder_memory,
)
from ..selection import SelectionResult, greedy_select, select_neighbors, selection_target
from .config import TrainConfig

logger = logging.getLogger(__name__)


class Vocabulary:
    def __init__(self, tokens: Sequence[str]):
        self.itos = list(SPECIAL_TOKENS) + [t for t in tokens if t not in SPECIAL_TOKENS]
        self.stoi = {t: i for i, t in enumerate(self.itos)}

    @classmethod
    def from_documents(cls, docs: Sequence[Document]) -> "Vocabulary":
        counts = Counter()
        for d in docs:
            for text in (d.abstract, d.introduction, d.title, *d.body_sentences):
                counts.update(tokenize(text))
        return cls([t for t, _ in sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))])

    def __len__(self):
        return len(self.itos)

    def encode(self, tokens: Sequence[str]) -> list[int]:
        return [self.stoi.get(t, UNK) for t in tokens]

    def decode(self, ids: Sequence[int]) -> list[str]:
        return [self.itos[i] for i in ids if i not in (PAD, BOS, EOS)]

    def digest(self) -> str:
        return hashlib.sha256("\n".join(self.itos).encode("utf-8")).hexdigest()[:16]

    def save(self, path):
        Path(path).write_text("\n".join(self.itos[len(SPECIAL_TOKENS):]) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        return cls([t for t in Path(path).read_text(encoding="utf-8").split("\n") if t])


def instance_seed(rng_seed: int, source_id: str, salt: str = "") -> int:
    return zlib.crc32(f"{rng_seed}:{salt}:{source_id}".encode("utf-8"))


# ---------------------------------------------------------------------------
# selection cache


def populate_selection_cache(
    docs: Mapping[str, Document], split: CorpusSplit, max_sentences: int = 7
) -> dict[tuple[str, str], SelectionResult]:
    """Greedy oracle selection for every (document, neighbour) pair of the split graph."""
    graph = split.graph()
    cache = {}
    sentence_tokens = {}
    for src_id in sorted(split.all_ids):
        try:
            target = selection_target(docs[src_id], split.role_of(src_id))
        except ValueError as exc:
            logger.warning("no selection target for %s: %s", src_id, exc)
            continue
        for ref_id in sorted(graph.neighbors(src_id)):
            if ref_id not in sentence_tokens:
                sentence_tokens[ref_id] = [tokenize(s) for s in docs[ref_id].body_sentences]
            cache[(src_id, ref_id)] = greedy_select(sentence_tokens[ref_id], target, max_sentences, src_id, ref_id)
    return cache


# ---------------------------------------------------------------------------
# instance plans (model independent)


@dataclass
class InstancePlan:
    source_id: str
    role: str
    neighbor_ids: list[str]  # selected neighbours, citation graph order
    negative_ids: list[str]
    graph: WeightedCitationGraph | None  # None when every neighbour edge was pruned
    sequences: list[list[int]]  # encoder inputs: source, neighbours, negatives
    segments: list[int]
    alignments: list[tuple[int, list[int], np.ndarray, NormalizedLaplacian]] = field(default_factory=list)
    target_ids: list[int] = field(default_factory=list)  # abstract ids followed by EOS
    memory_weights: list[float] = field(default_factory=list)  # source edge weight per neighbour

    @property
    def trainable(self) -> bool:
        return self.graph is not None


def _split_pool(split: CorpusSplit, role: str):
    return split.ids_for(role) if split.mode == INDUCTIVE else split.all_ids


def prepare_instance(
    source_id: str,
    docs: Mapping[str, Document],
    split: CorpusSplit,
    cache: Mapping[tuple[str, str], SelectionResult],
    vocab: Vocabulary,
    config: TrainConfig,
    graph: CitationGraph | None = None,
) -> InstancePlan:
    """Neighbour selection, both graphs and token layouts for one source document.

    A source whose surviving neighbour edges are all pruned gets
    ``graph=None``; training skips it, evaluation still decodes it.
    """
    graph = graph or split.graph()
    role = split.role_of(source_id)
    source = docs[source_id]
    target = selection_target(source, role)
    candidates = [(docs[r], cache[(source_id, r)]) for r in sorted(graph.neighbors(source_id)) if (source_id, r) in cache]
    neighbor_ids = select_neighbors(source, candidates, config.max_neighbors, target) if candidates else []
    by_id = {d.id: (d, s) for d, s in candidates}
    neighbors = [by_id[i] for i in neighbor_ids]

    pool = _split_pool(split, role)
    available = len(pool - graph.neighbors(source_id) - {source_id})
    negative_ids = sample_negative_documents(
        graph, source_id, min(config.negative_documents, available), instance_seed(config.rng_seed, source_id, "docs"), pool
    )
    negatives = [docs[i] for i in negative_ids]

    wgraph = None
    weights = []
    if neighbors:
        try:
            wgraph = build_weighted_citation_graph(source, neighbors, negatives, target, config.rho)
            weights = [float(wgraph.weights[0, i]) for i in range(1, 1 + len(neighbors))]
        except DegenerateGraphError:
            # memory order still follows the unthresholded weights
            try:
                raw = build_weighted_citation_graph(source, neighbors, [], target, 0.0)
                weights = [float(raw.weights[0, i]) for i in range(1, 1 + len(neighbors))]
            except DegenerateGraphError:
                weights = [0.0] * len(neighbors)
        if wgraph is not None and not np.any((wgraph.weights == 0)):
            wgraph = None  # no zero-weight pair, the alignment denominator would be empty

    src_tokens = tokenize(source.body)[: config.source_token_budget] or tokenize(source.abstract)[: config.source_token_budget]
    sequences = [vocab.encode(src_tokens)]
    for doc, sel in neighbors:
        toks = sel.content_tokens(doc) or tokenize(doc.body)
        sequences.append(vocab.encode(toks[: config.per_ref_token_budget]))
    for doc in negatives:
        sequences.append(vocab.encode(tokenize(doc.body)[: config.per_ref_token_budget]))
    sequences = [s if s else [UNK] for s in sequences]
    segments = [SOURCE_SEGMENT] + [REFERENCE_SEGMENT] * (len(sequences) - 1)

    alignments = []
    if wgraph is not None:
        vocab_all = set().union(*map(set, sequences))
        for idx in range(1 + len(neighbors)):
            own = set(sequences[idx])
            count = min(config.negative_tokens, len(vocab_all - own))
            if count == 0:
                continue
            neg = sample_negative_tokens(vocab_all, sequences[idx], count, instance_seed(config.rng_seed, source_id, f"tok{idx}"))
            bg = build_bipartite_graph(sequences[idx], neg)
            alignments.append((idx, list(bg.token_ids), bg.adjacency[0], bipartite_laplacian(bg)))

    abstract_ids = vocab.encode(tokenize(source.abstract))[: config.max_summary_length]
    return InstancePlan(
        source_id, role, neighbor_ids, negative_ids, wgraph, sequences, segments, alignments,
        abstract_ids + [EOS], weights,
    )


def prepare_instances(source_ids, docs, split, cache, vocab, config) -> tuple[list[InstancePlan], list[str]]:
    """Plans for every source; returns (plans, skipped ids) where skipped sources have no trainable graph."""
    graph = split.graph()
    plans, skipped = [], []
    for sid in sorted(source_ids):
        plan = prepare_instance(sid, docs, split, cache, vocab, config, graph)
        plans.append(plan)
        if not plan.trainable:
            skipped.append(sid)
    return plans, skipped


# ---------------------------------------------------------------------------
# forward assembly


def _pad(seqs: Sequence[Sequence[int]]) -> tuple[Tensor, Tensor]:
    width = max(len(s) for s in seqs)
    ids = torch.full((len(seqs), width), PAD, dtype=torch.long)
    for i, s in enumerate(seqs):
        ids[i, : len(s)] = torch.tensor(s, dtype=torch.long)
    return ids, ids != PAD


def _token_average(sequences: Sequence[Sequence[int]], widths: int, doc_index: int, token_ids: Sequence[int], dtype) -> Tensor:
    """Averaging matrix (tokens x flattened rows): own occurrences for positives, other documents otherwise."""
    n_rows = len(sequences) * widths
    mat = torch.zeros(len(token_ids), n_rows, dtype=dtype)
    own = {}
    for p, t in enumerate(sequences[doc_index]):
        own.setdefault(t, []).append(doc_index * widths + p)
    for r, t in enumerate(token_ids):
        rows = own.get(t)
        if rows is None:
            rows = [s * widths + p for s, seq in enumerate(sequences) if s != doc_index for p, x in enumerate(seq) if x == t]
        mat[r, rows] = 1.0 / len(rows)
    return mat


@dataclass
class ForwardBatch:
    contrastive: list[ContrastiveInstance]
    contexts: list[DecoderContext]
    targets: list[list[int]]


def encode_plan(model: CitationSumModel, plan: InstancePlan) -> tuple[Tensor, Tensor, Tensor]:
    ids, mask = _pad(plan.sequences)
    reps, pooled = model.encode_documents(ids, mask, torch.tensor(plan.segments))
    return reps, pooled, mask


def decoder_context(plan: InstancePlan, reps: Tensor, mask: Tensor, config: TrainConfig) -> DecoderContext:
    source = EncoderOutput(reps[0], None, mask[0])
    refs = [(EncoderOutput(reps[i], None, mask[i]), plan.memory_weights[i - 1]) for i in range(1, 1 + len(plan.neighbor_ids))]
    return build_decoder_memory(source, refs, config.per_ref_token_budget, config.source_token_budget, plan.neighbor_ids)


def _averaging_matrices(plan: InstancePlan, dtype) -> list[Tensor]:
    key = ("avg", dtype)
    cached = getattr(plan, "_cache", {})
    if key not in cached:
        width = max(len(s) for s in plan.sequences)
        cached[key] = [_token_average(plan.sequences, width, idx, tok, dtype) for idx, tok, _, _ in plan.alignments]
        plan._cache = cached
    return cached[key]


def contrastive_instance(plan: InstancePlan, reps: Tensor, pooled: Tensor, normalize: bool = True) -> ContrastiveInstance:
    """Contrastive inputs for one plan; ``reps`` must be padded to the plan's own longest sequence.

    With ``normalize`` the document and token vectors are scaled to unit
    length, which keeps both alignment losses bounded below.
    """
    flat = reps.reshape(-1, reps.shape[-1])
    doc_reps = F.normalize(pooled, dim=-1) if normalize else pooled
    aligns = []
    for (idx, _, row, lap), avg in zip(plan.alignments, _averaging_matrices(plan, reps.dtype)):
        tok = avg @ flat
        aligns.append(TokenAlignment(idx, F.normalize(tok, dim=-1) if normalize else tok, row, lap))
    w = plan.graph.weights
    return ContrastiveInstance(doc_reps, w, normalized_laplacian(w), aligns)


def _encode_grouped(model: CitationSumModel, seqs, segs) -> tuple[list[Tensor], list[Tensor]]:
    """Encode source-segment and reference-segment sequences as two padded batches."""
    reps: list = [None] * len(seqs)
    pooled: list = [None] * len(seqs)
    for seg in (SOURCE_SEGMENT, REFERENCE_SEGMENT):
        idx = [i for i, g in enumerate(segs) if g == seg]
        if not idx:
            continue
        ids, mask = _pad([seqs[i] for i in idx])
        r, p = model.encode_documents(ids, mask, torch.full((len(idx),), seg, dtype=torch.long))
        for k, i in enumerate(idx):
            reps[i] = r[k]
            pooled[i] = p[k]
    return reps, pooled


def forward_plans(model: CitationSumModel, plans: Sequence[InstancePlan], config: TrainConfig, with_contrastive: bool = True) -> ForwardBatch:
    """Encode every sequence of every plan in one pass per segment, then split per plan."""
    seqs = [s for p in plans for s in p.sequences]
    segs = [g for p in plans for g in p.segments]
    reps, pooled = _encode_grouped(model, seqs, segs)
    contrastive, contexts, targets = [], [], []
    offset = 0
    for plan in plans:
        n = len(plan.sequences)
        width = max(len(s) for s in plan.sequences)
        p_reps = torch.stack([F.pad(r[:width], (0, 0, 0, width - min(width, r.shape[0]))) for r in reps[offset : offset + n]])
        p_mask = _pad(plan.sequences)[1]
        p_pooled = torch.stack(pooled[offset : offset + n])
        offset += n
        contexts.append(decoder_context(plan, p_reps, p_mask, config))
        targets.append(plan.target_ids)
        if with_contrastive and plan.trainable:
            contrastive.append(contrastive_instance(plan, p_reps, p_pooled))
    return ForwardBatch(contrastive, contexts, targets)


def collate_decoder(contexts: Sequence[DecoderContext], targets: Sequence[Sequence[int]]):
    """Pad memories and teacher-forced prefixes; returns (memory, memory_mask, prefix, gold, gold_mask)."""
    m = max(c.memory.shape[0] for c in contexts)
    d = contexts[0].memory.shape[1]
    memory = contexts[0].memory.new_zeros(len(contexts), m, d)
    mmask = torch.zeros(len(contexts), m, dtype=torch.bool)
    for i, c in enumerate(contexts):
        memory[i, : c.memory.shape[0]] = c.memory
        mmask[i, : c.memory.shape[0]] = c.memory_mask
    gold, gmask = _pad(targets)
    prefix = torch.cat([torch.full((len(targets), 1), BOS, dtype=torch.long), gold[:, :-1]], dim=1)
    return memory, mmask, prefix, gold, gmask


def build_training_instance(model, source_id, split, docs, cache, vocab, config):
    """One source's (ContrastiveInstance, DecoderContext, target ids); raises on a degenerate graph."""
    plan = prepare_instance(source_id, docs, split, cache, vocab, config)
    if not plan.trainable:
        raise DegenerateGraphError(f"instance {source_id!r} has no usable citation graph")
    reps, pooled, mask = encode_plan(model, plan)
    return contrastive_instance(plan, reps, pooled), decoder_context(plan, reps, mask, config), plan.target_ids


def dump_plan(plan: InstancePlan) -> str:
    rec = {"source_id": plan.source_id, "neighbors": plan.neighbor_ids, "negatives": plan.negative_ids}
    if plan.graph is not None:
        rec["graph"] = plan.graph.to_record()
    return json.dumps(rec)
