"""Negative-sampling objectives behind the contrastive losses and their closed-form optima.

Maximising either objective over free embeddings drives each positive
inner product to a shifted log statistic of the graph:

    bipartite:  h_d . h_j = log n_dj + log(N_d / n_j) - log k
    citation:   h_i . h_j = log(-L_ij) + log(N_d / n_d^+) - log k

:func:`verify_factorization` runs the ascent and compares.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit, log_expit

from .graph import NormalizedLaplacian, normalized_laplacian


class FactorizationDomainError(ValueError):
    pass


@dataclass
class FactorizationProblem:
    counts: Optional[np.ndarray] = None  # (docs, tokens) occurrence counts n_dj
    doc_count: Optional[int] = None  # N_d; defaults to the number of count rows
    token_corpus_counts: Optional[np.ndarray] = None  # n_j; defaults to column sums
    negatives_per_positive: int = 1  # k
    citation_weights: Optional[np.ndarray] = None  # thresholded weighted citation graph
    citation_laplacian: Optional[NormalizedLaplacian] = None
    source_neighbors: Optional[int] = None  # n_d^+, neighbours of the source (node 0)

    def __post_init__(self):
        if self.negatives_per_positive < 1:
            raise FactorizationDomainError("k must be >= 1")
        if self.counts is not None:
            self.counts = np.asarray(self.counts, dtype=float)
            if self.doc_count is None:
                self.doc_count = self.counts.shape[0]
            if self.token_corpus_counts is None:
                self.token_corpus_counts = self.counts.sum(axis=0)
            self.token_corpus_counts = np.asarray(self.token_corpus_counts, dtype=float)
            if np.any(self.token_corpus_counts < self.counts.sum(axis=0)):
                raise FactorizationDomainError("corpus token counts smaller than document counts")
        if self.citation_weights is not None:
            self.citation_weights = np.asarray(self.citation_weights, dtype=float)
            if self.citation_laplacian is None:
                self.citation_laplacian = normalized_laplacian(self.citation_weights)
            if self.source_neighbors is None:
                w = self.citation_weights
                self.source_neighbors = int(np.sum(w[0, 1:] > 0))
            if self.doc_count is None:
                self.doc_count = len(self.citation_weights)


def fixed_point_bipartite(n_dj, N_d, n_j, k) -> float:
    if min(n_dj, N_d, n_j, k) < 1:
        raise FactorizationDomainError("all counts must be >= 1")
    return math.log(n_dj) + math.log(N_d / n_j) - math.log(k)


def fixed_point_citation(laplacian_entry, N_d, n_d_plus, k) -> float:
    if laplacian_entry >= 0:
        raise FactorizationDomainError("laplacian entry must be negative")
    if min(N_d, n_d_plus, k) < 1:
        raise FactorizationDomainError("counts must be >= 1")
    return math.log(-laplacian_entry) + math.log(N_d / n_d_plus) - math.log(k)


# ---------------------------------------------------------------------------
# objectives (to be maximised); each returns value and gradient w.r.t. the inner products


def _bipartite_terms(x: np.ndarray, p: FactorizationProblem):
    n = p.counts
    N = float(p.doc_count)
    k = p.negatives_per_positive
    nj = p.token_corpus_counts[None, :]
    pos = n > 0
    # negative-side weight: empirical unigram share of each token, scaled by k
    w_neg = k * nj / N
    val = np.where(pos, n * log_expit(x), 0.0) + w_neg * log_expit(-x)
    grad = np.where(pos, n * expit(-x), 0.0) - w_neg * expit(x)
    return val.sum() / N, grad / N


def ns_objective_bipartite(doc_reps, token_reps, problem: FactorizationProblem) -> float:
    return float(_bipartite_terms(np.asarray(doc_reps) @ np.asarray(token_reps).T, problem)[0])


def _citation_masks(p: FactorizationProblem):
    w = p.citation_weights
    off = ~np.eye(len(w), dtype=bool)
    return (w > 0) & off, (w == 0) & off


def _citation_terms(x: np.ndarray, p: FactorizationProblem):
    pos, zero = _citation_masks(p)
    k = p.negatives_per_positive
    coef = np.where(pos, -p.citation_laplacian.matrix, 0.0)
    share = p.source_neighbors / float(p.doc_count)
    n_zero = max(int(zero.sum()), 1)
    w_neg = np.where(pos, k * share, 0.0) + np.where(zero, k / n_zero, 0.0)
    val = coef * log_expit(x) + w_neg * log_expit(-x)
    grad = coef * expit(-x) - w_neg * expit(x)
    return val.sum(), grad


def ns_objective_citation(doc_reps, problem: FactorizationProblem) -> float:
    h = np.asarray(doc_reps)
    return float(_citation_terms(h @ h.T, problem)[0])


# ---------------------------------------------------------------------------
# verification


@dataclass
class PairResult:
    pair: tuple
    achieved: float
    target: float

    @property
    def deviation(self) -> float:
        return abs(self.achieved - self.target)


@dataclass
class VerificationReport:
    kind: str
    pairs: list[PairResult]
    tolerance: float
    iterations: int
    notes: list[str] = field(default_factory=list)

    @property
    def max_deviation(self) -> float:
        return max((p.deviation for p in self.pairs), default=0.0)

    @property
    def passed(self) -> bool:
        return bool(self.pairs) and self.max_deviation < self.tolerance

    def to_text(self) -> str:
        lines = [f"[{self.kind}]", f"{'pair':<14}{'achieved':>12}{'target':>12}{'|delta|':>12}"]
        for p in self.pairs:
            lines.append(f"{str(p.pair):<14}{p.achieved:>12.6f}{p.target:>12.6f}{p.deviation:>12.2e}")
        lines.extend(f"note: {n}" for n in self.notes)
        verdict = "PASS" if self.passed else "FAIL"
        lines.append(f"{verdict} max|delta|={self.max_deviation:.3e} tol={self.tolerance:g} iterations={self.iterations}")
        return "\n".join(lines)

    def to_records(self) -> list[str]:
        recs = [json.dumps({"kind": self.kind, "pair": list(p.pair), "achieved": p.achieved,
                            "target": p.target, "deviation": p.deviation}) for p in self.pairs]
        recs.append(json.dumps({"kind": self.kind, "verdict": "PASS" if self.passed else "FAIL",
                                "max_deviation": self.max_deviation, "tolerance": self.tolerance}))
        return recs


def _ascend(fun, x0: np.ndarray, steps: int):
    res = minimize(fun, x0, jac=True, method="L-BFGS-B",
                   options={"maxiter": steps, "maxfun": 4 * steps, "gtol": 1e-12, "ftol": 1e-15})
    return res.x, int(res.nit)


def _verify_bipartite(p: FactorizationProblem, dim: int, steps: int, rng, tol: float) -> VerificationReport:
    n_docs, n_tok = p.counts.shape
    shape_d, shape_t = (n_docs, dim), (n_tok, dim)

    def fun(theta):
        hd = theta[: n_docs * dim].reshape(shape_d)
        ht = theta[n_docs * dim :].reshape(shape_t)
        val, g = _bipartite_terms(hd @ ht.T, p)
        return -val, -np.concatenate([(g @ ht).ravel(), (g.T @ hd).ravel()])

    theta, nit = _ascend(fun, rng.normal(scale=0.1, size=(n_docs + n_tok) * dim), steps)
    hd = theta[: n_docs * dim].reshape(shape_d)
    ht = theta[n_docs * dim :].reshape(shape_t)
    x = hd @ ht.T
    pairs = [
        PairResult((d, j), float(x[d, j]),
                   fixed_point_bipartite(p.counts[d, j], p.doc_count, p.token_corpus_counts[j], p.negatives_per_positive))
        for d in range(n_docs) for j in range(n_tok) if p.counts[d, j] > 0
    ]
    notes = []
    if np.any(p.counts > 1):
        notes.append("counts n_dj > 1 present; the instance graph keeps binary edges with unit token degree, "
                     "so -B_hat = 1/sqrt(#positive tokens) regardless of n_dj")
    return VerificationReport("bipartite", pairs, tol, nit, notes)


def _verify_citation(p: FactorizationProblem, dim: int, steps: int, rng, tol: float) -> VerificationReport:
    n = len(p.citation_weights)

    def fun(theta):
        h = theta.reshape(n, dim)
        val, g = _citation_terms(h @ h.T, p)
        return -val, -((g + g.T) @ h).ravel()

    theta, nit = _ascend(fun, rng.normal(scale=0.1, size=n * dim), steps)
    h = theta.reshape(n, dim)
    x = h @ h.T
    pos, _ = _citation_masks(p)
    lap = p.citation_laplacian.matrix
    pairs = [
        PairResult((i, j), float(x[i, j]),
                   fixed_point_citation(lap[i, j], p.doc_count, p.source_neighbors, p.negatives_per_positive))
        for i in range(n) for j in range(i + 1, n) if pos[i, j]
    ]
    return VerificationReport("citation", pairs, tol, nit)


def verify_factorization(
    problem: FactorizationProblem,
    embedding_dim: int,
    steps: int = 5000,
    rng_seed: int = 0,
    tolerance: float = 1e-2,
) -> list[VerificationReport]:
    """Ascend free embeddings on each objective the problem defines; one report per objective.

    Non-convergence shows up as a FAIL verdict, never as an exception.
    """
    rng = np.random.default_rng(rng_seed)
    reports = []
    if problem.counts is not None:
        nodes = sum(problem.counts.shape)
        if embedding_dim < min(problem.counts.shape):
            raise FactorizationDomainError(f"embedding_dim {embedding_dim} too small for {nodes} nodes")
        reports.append(_verify_bipartite(problem, embedding_dim, steps, rng, tolerance))
    if problem.citation_weights is not None:
        if embedding_dim < len(problem.citation_weights):
            raise FactorizationDomainError("embedding_dim smaller than the number of graph nodes")
        reports.append(_verify_citation(problem, embedding_dim, steps, rng, tolerance))
        if problem.source_neighbors < 1:
            reports[-1].notes.append("source has no surviving neighbours")
    return reports


# ---------------------------------------------------------------------------
# random problems and dumped graphs


def random_bipartite_problem(rng: np.random.Generator, max_docs: int = 5, max_tokens: int = 20) -> FactorizationProblem:
    """Random count matrix where every document holds at least one token and every token occurs somewhere."""
    n_docs = int(rng.integers(1, max_docs + 1))
    n_tok = int(rng.integers(1, max_tokens + 1))
    counts = rng.integers(0, 4, size=(n_docs, n_tok)) * (rng.random((n_docs, n_tok)) < 0.5)
    for j in range(n_tok):
        if counts[:, j].sum() == 0:
            counts[rng.integers(n_docs), j] = 1
    for d in range(n_docs):
        if counts[d].sum() == 0:
            counts[d, rng.integers(n_tok)] = 1
    return FactorizationProblem(counts=counts, negatives_per_positive=int(rng.integers(1, 4)))


def random_citation_problem(rng: np.random.Generator, max_nodes: int = 6, rho: float = 0.3) -> FactorizationProblem:
    """Random thresholded weight matrix with a linked source and at least one zero pair."""
    n = int(rng.integers(3, max_nodes + 1))
    while True:
        w = rng.random((n, n))
        w = np.triu(w, 1)
        w = w + w.T
        w[w < rho] = 0.0
        np.fill_diagonal(w, 1.0)
        off = ~np.eye(n, dtype=bool)
        if np.any(w[0, 1:] > 0) and np.any((w == 0) & off):
            break
    return FactorizationProblem(citation_weights=w, negatives_per_positive=int(rng.integers(1, 4)))


def problem_from_graph_record(rec: dict, negatives_per_positive: int = 1) -> FactorizationProblem:
    """Citation problem from a dumped weighted graph (node ids, row-major weights, rho)."""
    n = len(rec["node_ids"])
    w = np.asarray(rec["weights"], dtype=float).reshape(n, n)
    return FactorizationProblem(citation_weights=w, negatives_per_positive=negatives_per_positive)
