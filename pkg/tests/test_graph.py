"""Weighted citation graph, bipartite graph, Laplacians and negative sampling."""

import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from citationsum.corpus import CitationGraph, Document
from citationsum.graph import (
    DegenerateGraphError,
    GraphError,
    bipartite_laplacian,
    build_bipartite_graph,
    build_weighted_citation_graph,
    normalized_laplacian,
    sample_negative_documents,
    sample_negative_tokens,
)
from citationsum.selection import SelectionResult, SelectionTarget

from oracles import dense_laplacian, manual_mean_rouge, random_unit_diagonal


def ref(doc_id, sentences):
    d = Document(doc_id, "", "", "", tuple(sentences), ())
    return d, SelectionResult("s", doc_id, tuple(range(len(sentences))), 0.0)


SOURCE = Document("s", "", "a b c d e f", "", ("x.",), ())


class TestWeightedCitationGraph:
    def test_identical_content_gives_weight_one(self):
        g = build_weighted_citation_graph(SOURCE, [ref("n1", ["a b c d."])], [], SelectionTarget(tuple("abcd")), 0.5)
        assert g.weights[0, 1] == 1.0 and g.weights[1, 0] == 1.0

    def test_threshold_zeroes_low_weight(self):
        target = SelectionTarget(tuple("abcdefgh"))
        good, weak = ref("n1", ["a b c d e f g h."]), ref("n2", ["a b x y z w v u."])
        g = build_weighted_citation_graph(SOURCE, [good, weak], [], target, 0.7)
        assert manual_mean_rouge(list("abcdefgh"), ["a", "b", "x", "y", "z", "w", "v", "u"]) < 0.7
        assert g.weights[0, 2] == 0.0

    def test_four_node_matrix_against_oracle(self):
        target_tokens = "the weak galerkin method for elliptic problems".split()
        neighbours = [ref("n1", ["the weak galerkin method.", "unrelated words here."]),
                      ref("n2", ["elliptic problems for the method.", "galerkin weak."])]
        negative = Document("neg", "", "", "", ("nothing in common.",), ())
        for rho in (0.0, 0.2, 0.4):
            g = build_weighted_citation_graph(SOURCE, neighbours, [negative], SelectionTarget(tuple(target_tokens)), rho)
            contents = [d.body.replace(".", "").lower().split() for d, _ in neighbours]
            expected = np.zeros((4, 4))
            for i in range(4):
                for j in range(4):
                    if i == j:
                        v = 1.0
                    elif {i, j} <= {0, 1, 2} and 0 in (i, j):
                        v = manual_mean_rouge(target_tokens, contents[max(i, j) - 1])
                    elif {i, j} <= {1, 2}:
                        v = manual_mean_rouge(contents[i - 1], contents[j - 1])
                    else:
                        v = 0.0
                    expected[i, j] = v if (i == j or v >= rho) else 0.0
            if not np.any(expected[0, 1:3] > 0):
                with pytest.raises(DegenerateGraphError):
                    build_weighted_citation_graph(SOURCE, neighbours, [negative], SelectionTarget(tuple(target_tokens)), rho)
                continue
            np.testing.assert_allclose(g.weights, expected, atol=1e-15)
            assert g.node_ids == ("s", "n1", "n2", "neg")

    def test_degenerate(self):
        with pytest.raises(DegenerateGraphError):
            build_weighted_citation_graph(SOURCE, [ref("n1", ["q r s."])], [], SelectionTarget(tuple("abc")), 0.7)

    def test_requires_neighbours(self):
        with pytest.raises(GraphError):
            build_weighted_citation_graph(SOURCE, [], [], SelectionTarget(("a",)), 0.7)

    def test_bad_rho(self):
        with pytest.raises(GraphError):
            build_weighted_citation_graph(SOURCE, [ref("n1", ["a."])], [], SelectionTarget(("a",)), 1.5)

    @settings(max_examples=60)
    @given(
        st.lists(st.lists(st.sampled_from("abcdef"), min_size=1, max_size=8), min_size=1, max_size=5),
        st.lists(st.sampled_from("abcdef"), min_size=1, max_size=8),
        st.floats(0.0, 1.0),
        st.integers(0, 3),
    )
    def test_invariants(self, contents, target, rho, n_neg):
        neighbours = [ref(f"n{i}", [" ".join(c) + "."]) for i, c in enumerate(contents)]
        negatives = [Document(f"z{i}", "", "", "", ("q.",), ()) for i in range(n_neg)]
        try:
            g = build_weighted_citation_graph(SOURCE, neighbours, negatives, SelectionTarget(tuple(target)), rho)
        except DegenerateGraphError:
            return
        w = g.weights
        k = len(contents)
        assert np.array_equal(w, w.T)
        assert np.all(np.diag(w) == 1.0)
        assert np.all(w >= 0)
        off = w[~np.eye(len(w), dtype=bool)]
        assert not np.any((off > 0) & (off < rho))
        assert np.all(w[1 + k :, :][:, :][~np.eye(len(w), dtype=bool)[1 + k :]] == 0)


class TestBipartiteGraph:
    def test_binary_occurrence(self):
        g = build_bipartite_graph(["a", "b", "a"], ["c"])
        assert g.token_ids == ("a", "b", "c")
        assert g.adjacency.tolist() == [[1.0, 1.0, 0.0]]
        assert g.num_positive == 2

    def test_no_negatives(self):
        g = build_bipartite_graph(["x", "y"])
        assert g.adjacency.tolist() == [[1.0, 1.0]]

    def test_document_input(self):
        d = Document("d", "", "", "", ("Hello world.",), ())
        assert build_bipartite_graph(d).token_ids == ("hello", "world")

    def test_clash(self):
        with pytest.raises(GraphError):
            build_bipartite_graph(["a"], ["a"])

    def test_empty(self):
        with pytest.raises(GraphError):
            build_bipartite_graph([])

    def test_membership_oracle(self):
        rng = np.random.default_rng(1)
        vocab = [f"t{i}" for i in range(30)]
        doc = list(rng.choice(vocab[:15], size=10))
        negs = list(rng.choice(vocab[15:], size=5, replace=False))
        g = build_bipartite_graph(doc, negs)
        for tok, v in zip(g.token_ids, g.adjacency[0]):
            assert v == (1.0 if tok in doc else 0.0)
        assert set(g.token_ids) == set(doc) | set(negs)
        assert g.adjacency.sum() == len(set(doc))

    def test_laplacian_entries(self):
        g = build_bipartite_graph(["a", "b", "c", "d"], ["x", "y"])
        lap = bipartite_laplacian(g).matrix
        # document degree 4, positive token degree 1, negative token degree clamped to 1
        np.testing.assert_allclose(-lap[0, 1:5], 1 / np.sqrt(4))
        np.testing.assert_allclose(lap[0, 5:], 0.0)
        assert lap[0, 0] == 1.0

    def test_laplacian_token_counts(self):
        g = build_bipartite_graph(["a", "b"], ["x"])
        lap = bipartite_laplacian(g, token_doc_counts=[2, 1, 0]).matrix
        assert lap[0, 1] == pytest.approx(-1 / np.sqrt(2 * 2))
        assert lap[0, 2] == pytest.approx(-1 / np.sqrt(2 * 1))


class TestNormalizedLaplacian:
    def test_single_node(self):
        assert normalized_laplacian([[1.0]]).matrix.tolist() == [[0.0]]

    def test_two_nodes(self):
        np.testing.assert_allclose(normalized_laplacian([[1, 1], [1, 1]]).matrix, [[0.5, -0.5], [-0.5, 0.5]])

    def test_zero_degree(self):
        with pytest.raises(GraphError):
            normalized_laplacian([[0.0, 0.0], [0.0, 1.0]])

    def test_not_square(self):
        with pytest.raises(GraphError):
            normalized_laplacian(np.ones((2, 3)))

    def test_dense_oracle(self):
        rng = np.random.default_rng(0)
        for n in (1, 2, 5, 20):
            w = random_unit_diagonal(rng, n)
            expected, deg = dense_laplacian(w)
            got = normalized_laplacian(w)
            assert np.max(np.abs(got.matrix - expected)) < 1e-12
            np.testing.assert_allclose(got.degree, deg)

    @given(st.integers(1, 12), st.integers(0, 10**6))
    def test_invariants(self, n, seed):
        w = random_unit_diagonal(np.random.default_rng(seed), n)
        lap = normalized_laplacian(w)
        m = lap.matrix
        assert np.allclose(m, m.T, atol=0)
        np.testing.assert_allclose(np.diag(m), 1 - np.diag(w) / lap.degree, atol=1e-15)
        assert np.all(m[~np.eye(n, dtype=bool)] <= 0)
        assert np.max(np.abs(m @ np.sqrt(lap.degree))) < 1e-10


class TestNegativeSampling:
    graph = CitationGraph(
        frozenset(f"v{i}" for i in range(10)),
        frozenset({("v0", "v1"), ("v0", "v2"), ("v3", "v0"), ("v4", "v5"), ("v6", "v7"), ("v8", "v9"), ("v2", "v5")}),
    )

    def test_zero(self):
        assert sample_negative_documents(self.graph, "v0", 0) == []
        assert sample_negative_tokens(["a", "b"], ["a"], 0) == []

    def test_complete_graph(self):
        ids = ["a", "b", "c"]
        g = CitationGraph(frozenset(ids), frozenset(itertools.combinations(ids, 2)))
        with pytest.raises(GraphError):
            sample_negative_documents(g, "a", 1)

    def test_vocabulary_exhausted(self):
        with pytest.raises(GraphError):
            sample_negative_tokens(["a", "b"], ["a", "b"], 1)

    def test_golden_documents(self):
        assert sample_negative_documents(self.graph, "v0", 3, rng_seed=42) == ["v9", "v4", "v8"]

    def test_golden_tokens(self):
        vocab = [f"w{i:02d}" for i in range(30)]
        got = sample_negative_tokens(vocab, ["w01", "w05", "w07", "w11"], 5, rng_seed=9)
        assert got == ["w18", "w23", "w15", "w12", "w06"]

    @given(st.integers(0, 6), st.integers(0, 1000))
    def test_non_neighbours_only(self, count, seed):
        got = sample_negative_documents(self.graph, "v0", count, seed)
        assert len(set(got)) == count
        assert not set(got) & {"v0", "v1", "v2", "v3"}
        assert got == sample_negative_documents(self.graph, "v0", count, seed)

    def test_pool_restriction(self):
        got = sample_negative_documents(self.graph, "v0", 2, 0, pool={"v4", "v5", "v1"})
        assert sorted(got) == ["v4", "v5"]
