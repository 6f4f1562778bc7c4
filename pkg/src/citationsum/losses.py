"""Contrastive alignment losses, the generation NLL and the combined objective."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import torch
from torch import Tensor

from .graph import NormalizedLaplacian


class LossError(ValueError):
    pass


@dataclass
class TokenAlignment:
    """Bipartite document-token graph of one document, with its token vectors."""

    doc_index: int  # row of ContrastiveInstance.doc_reps
    token_reps: Tensor  # (T, D), aligned with the graph's token columns
    adjacency: np.ndarray  # (T,) 0/1 document row
    laplacian: NormalizedLaplacian  # square (T + 1) laplacian, document node first


@dataclass
class ContrastiveInstance:
    doc_reps: Tensor  # (N, D), citation-graph node order
    citation_weights: np.ndarray  # (N, N) thresholded edge weights
    citation_laplacian: NormalizedLaplacian
    alignments: list[TokenAlignment] = field(default_factory=list)

    def __post_init__(self):
        n = self.doc_reps.shape[0]
        if self.citation_weights.shape != (n, n) or self.citation_laplacian.matrix.shape != (n, n):
            raise LossError("citation graph size does not match the number of document vectors")
        for a in self.alignments:
            if a.token_reps.shape[-1] != self.doc_reps.shape[-1]:
                raise LossError("token and document vectors live in different dimensions")


def _pair_masks(weights: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    off = ~np.eye(len(weights), dtype=bool)
    return (weights > 0) & off, (weights == 0) & off


def _lse(x: Tensor) -> Tensor:
    return torch.logsumexp(x, dim=0)


def dra_instance_term(inst: ContrastiveInstance) -> Tensor:
    pos, neg = _pair_masks(inst.citation_weights)
    if not pos.any():
        raise LossError("no positive document pairs (empty numerator)")
    if not neg.any():
        raise LossError("no zero-weight document pairs (empty denominator)")
    h = inst.doc_reps
    sim = h @ h.T
    coef = torch.as_tensor(-inst.citation_laplacian.matrix[pos], dtype=h.dtype, device=h.device)
    pos_t = torch.as_tensor(pos, device=h.device)
    neg_t = torch.as_tensor(neg, device=h.device)
    numer = _lse(sim[pos_t] + torch.log(coef))
    return _lse(sim[neg_t]) - numer


def tra_document_term(doc_rep: Tensor, align: TokenAlignment) -> Tensor:
    pos = align.adjacency > 0
    if not pos.any():
        raise LossError("no positive tokens (empty numerator)")
    if pos.all():
        raise LossError("no negative tokens (empty denominator)")
    x = align.token_reps @ doc_rep
    coef = torch.as_tensor(-align.laplacian.matrix[0, 1:][pos], dtype=x.dtype, device=x.device)
    pos_t = torch.as_tensor(pos, device=x.device)
    return _lse(x[~pos_t]) - _lse(x[pos_t] + torch.log(coef))


def tra_instance_term(inst: ContrastiveInstance) -> Tensor:
    if not inst.alignments:
        raise LossError("instance has no document-token graphs")
    terms = [tra_document_term(inst.doc_reps[a.doc_index], a) for a in inst.alignments]
    return torch.stack(terms).mean()


def dra_loss(instances: ContrastiveInstance | Sequence[ContrastiveInstance]) -> Tensor:
    """Document alignment loss averaged over instances (one source document each).

    Numerator: ordered pairs i != j with positive weight, weighted by the
    negated normalized-Laplacian entry. Denominator: zero-weight pairs.
    """
    if isinstance(instances, ContrastiveInstance):
        instances = [instances]
    return torch.stack([dra_instance_term(i) for i in instances]).mean()


def tra_loss(instances: ContrastiveInstance | Sequence[ContrastiveInstance]) -> Tensor:
    """Token alignment loss: per document, positives weighted by -B_hat against sampled negatives."""
    if isinstance(instances, ContrastiveInstance):
        instances = [instances]
    return torch.stack([tra_instance_term(i) for i in instances]).mean()


def nll_loss(logits: Tensor, target_ids: Tensor, mask: Tensor | None = None) -> Tensor:
    """Mean token negative log-likelihood over unmasked positions."""
    if logits.shape[:-1] != target_ids.shape:
        raise LossError(f"logits {tuple(logits.shape)} do not match targets {tuple(target_ids.shape)}")
    nll = -torch.log_softmax(logits, dim=-1).gather(-1, target_ids[..., None])[..., 0]
    if mask is None:
        return nll.mean()
    if mask.shape != target_ids.shape:
        raise LossError("mask shape does not match targets")
    m = mask.to(nll.dtype)
    return (nll * m).sum() / m.sum()


def total_loss(nll, dra, tra, alpha: float = 1.0, beta: float = 1.0):
    """nll + alpha*dra + beta*tra; a zero weight drops its term entirely."""
    total = nll
    if alpha:
        total = total + alpha * dra
    if beta:
        total = total + beta * tra
    return total


# ---------------------------------------------------------------------------
# upper bounds on the contrastive losses


def tra_upper_bound(instances, keep_constant: bool = True) -> Tensor:
    """Softmax-over-all-tokens bound on the token alignment loss.

    The Laplacian coefficient is pulled out of the log at its minimum over
    the positive tokens; ``keep_constant=False`` drops the resulting
    ``-log c`` term, which no longer bounds the loss in general.
    """
    if isinstance(instances, ContrastiveInstance):
        instances = [instances]
    per_inst = []
    for inst in instances:
        terms = []
        for a in inst.alignments:
            pos = a.adjacency > 0
            x = a.token_reps @ inst.doc_reps[a.doc_index]
            t = _lse(x) - _lse(x[torch.as_tensor(pos)])
            if keep_constant:
                t = t - float(np.log(np.min(-a.laplacian.matrix[0, 1:][pos])))
            terms.append(t)
        per_inst.append(torch.stack(terms).mean())
    return torch.stack(per_inst).mean()


def dra_upper_bound(instances) -> Tensor:
    """Document alignment bound with every ordered node pair in the denominator."""
    if isinstance(instances, ContrastiveInstance):
        instances = [instances]
    terms = []
    for inst in instances:
        pos, _ = _pair_masks(inst.citation_weights)
        h = inst.doc_reps
        sim = h @ h.T
        coef = torch.as_tensor(-inst.citation_laplacian.matrix[pos], dtype=h.dtype)
        terms.append(_lse(sim.flatten()) - _lse(sim[torch.as_tensor(pos)] + torch.log(coef)))
    return torch.stack(terms).mean()


def dra_jensen_bound(instances) -> Tensor:
    """Jensen relaxation of :func:`dra_upper_bound`.

    log sum_p w_p e^{x_p} >= log W + sum_p (w_p / W) x_p with W = sum_p w_p.
    """
    if isinstance(instances, ContrastiveInstance):
        instances = [instances]
    terms = []
    for inst in instances:
        pos, _ = _pair_masks(inst.citation_weights)
        h = inst.doc_reps
        sim = h @ h.T
        w = torch.as_tensor(-inst.citation_laplacian.matrix[pos], dtype=h.dtype)
        total_w = w.sum()
        terms.append(_lse(sim.flatten()) - torch.log(total_w) - (w / total_w * sim[torch.as_tensor(pos)]).sum())
    return torch.stack(terms).mean()
