"""Random contrastive instances built through the graph module."""

import numpy as np
import torch

from citationsum.graph import bipartite_laplacian, build_bipartite_graph, normalized_laplacian
from citationsum.losses import ContrastiveInstance, TokenAlignment


def random_weights(rng: np.random.Generator, n: int, rho: float = 0.5) -> np.ndarray:
    """Thresholded symmetric unit-diagonal matrix with a linked source and at least one zero pair."""
    while True:
        w = np.triu(rng.random((n, n)), 1)
        w = w + w.T
        w[w < rho] = 0.0
        np.fill_diagonal(w, 1.0)
        off = ~np.eye(n, dtype=bool)
        if np.any(w[0, 1:] > 0) and np.any((w == 0) & off):
            return w


def random_instance(rng: np.random.Generator, n: int = 5, dim: int = 8, tokens: int = 10,
                    scale: float = 0.5, dtype=torch.float64, requires_grad: bool = False) -> ContrastiveInstance:
    w = random_weights(rng, n)
    h = torch.tensor(rng.normal(scale=scale, size=(n, dim)), dtype=dtype, requires_grad=requires_grad)
    alignments = []
    for d in range(min(n, 3)):
        n_pos = int(rng.integers(1, tokens))
        g = build_bipartite_graph([f"t{i}" for i in range(n_pos)], [f"u{i}" for i in range(tokens - n_pos)])
        reps = torch.tensor(rng.normal(scale=scale, size=(tokens, dim)), dtype=dtype, requires_grad=requires_grad)
        alignments.append(TokenAlignment(d, reps, g.adjacency[0], bipartite_laplacian(g)))
    return ContrastiveInstance(h, w, normalized_laplacian(w), alignments)
