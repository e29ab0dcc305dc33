import numpy as np
import pytest
import scipy.sparse

from carssm.graph import (
    GraphError,
    augment_islands,
    build_graph,
    graph_from_distance_threshold,
    logdet_precision,
    logdet_q,
)

from helpers import dense_q


def grid_coords(ids, spacing=0.5, base=(27.0, -82.0)):
    lat = [base[0] + spacing * (i % 7) for i in range(len(ids))]
    lon = [base[1] + spacing * (i // 7) for i in range(len(ids))]
    return np.asarray(lat), np.asarray(lon)


def toy_graph(edges, ids, lat=None, lon=None):
    if lat is None:
        lat, lon = grid_coords(ids)
    return augment_islands(build_graph(edges, ids), ids, lat, lon)


class TestBuildGraph:
    def test_duplicate_and_reversed_edges_collapse(self):
        adj = build_graph([("A", "B"), ("B", "A")], ["A", "B"])
        assert adj.nnz == 2  # one undirected edge, stored both ways
        assert adj[0, 1] == 1.0 and adj[1, 0] == 1.0

    def test_paper_scale(self):
        ids = [f"Z{i:03d}" for i in range(325)]
        edges = [(ids[i], ids[i + 1]) for i in range(324)]
        adj = build_graph(edges, ids)
        assert adj.shape == (325, 325)

    def test_self_loop_rejected(self):
        with pytest.raises(GraphError, match="self-loop"):
            build_graph([("A", "A")], ["A", "B"])

    def test_unknown_id_rejected(self):
        with pytest.raises(GraphError, match="not in zcta table"):
            build_graph([("A", "X")], ["A", "B"])


class TestAugmentIslands:
    def test_no_islands_unchanged(self):
        ids = ["A", "B", "C"]
        graph = toy_graph([("A", "B"), ("B", "C")], ids)
        assert graph.augmented_edges == ()
        assert graph.degrees.tolist() == [1.0, 2.0, 1.0]

    def test_isolated_node_linked_to_nearest(self):
        ids = ["A", "B", "C"]
        lat = np.array([27.0, 27.0, 27.0])
        lon = np.array([-82.0, -81.5, -81.4])  # C nearest to B
        graph = augment_islands(build_graph([("A", "B")], ids), ids, lat, lon)
        assert graph.augmented_edges == (("C", "B"),)
        assert graph.degrees.tolist() == [1.0, 2.0, 1.0]
        assert graph.adjacency[1, 2] == 1.0 and graph.adjacency[2, 1] == 1.0

    def test_mutually_nearest_pair_shares_one_edge(self):
        # both orders of repair must produce the same single symmetric edge
        for ids in (["A", "B", "C", "D"], ["B", "A", "D", "C"]):
            coords = {
                "A": (27.0, -82.0), "B": (27.5, -82.0),
                "C": (29.0, -80.0), "D": (29.1, -80.0),
            }
            lat = np.array([coords[z][0] for z in ids])
            lon = np.array([coords[z][1] for z in ids])
            graph = augment_islands(build_graph([("A", "B")], ids), ids, lat, lon)
            assert len(graph.augmented_edges) == 1
            assert set(graph.augmented_edges[0]) == {"C", "D"}
            assert graph.adjacency.nnz == 4  # two undirected edges

    def test_tie_breaks_to_smaller_id(self):
        ids = ["A", "B", "C"]
        lat = np.array([27.0, 27.0, 27.0])
        lon = np.array([-82.0, -81.0, -83.0])  # island A equidistant from B and C
        graph = augment_islands(build_graph([("B", "C")], ids), ids, lat, lon)
        assert graph.augmented_edges == (("A", "B"),)

    def test_single_node_rejected(self):
        adj = scipy.sparse.csr_matrix((1, 1))
        with pytest.raises(GraphError, match="single-node"):
            augment_islands(adj, ["A"], np.array([27.0]), np.array([-82.0]))

    def test_minimality_random_graphs(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            k = int(rng.integers(4, 30))
            ids = [f"Z{i:02d}" for i in range(k)]
            lat = rng.uniform(25, 31, size=k)
            lon = rng.uniform(-87, -80, size=k)
            # sparse random edges leave several islands
            n_edges = int(rng.integers(0, k // 2 + 1))
            edges = []
            for _ in range(n_edges):
                i, j = rng.choice(k, size=2, replace=False)
                edges.append((ids[i], ids[j]))
            raw = build_graph(edges, ids)
            islands = np.flatnonzero(np.asarray(raw.sum(axis=1)).ravel() == 0)
            graph = augment_islands(raw, ids, lat, lon)
            assert np.all(graph.degrees >= 1)
            # one added edge per island, except mutually-nearest pairs share one
            assert len(graph.augmented_edges) <= islands.size
            repaired = {a for a, _ in graph.augmented_edges}
            assert repaired <= {ids[i] for i in islands}
            # every island shows up in at least one augmented edge
            for i in islands:
                assert any(ids[i] in e for e in graph.augmented_edges)

    def test_invariants(self):
        ids = [f"Z{i}" for i in range(12)]
        lat, lon = grid_coords(ids)
        adj = graph_from_distance_threshold(ids, lat, lon, 60.0)
        graph = augment_islands(adj, ids, lat, lon)
        w = graph.adjacency.toarray()
        assert np.array_equal(w, w.T)
        assert np.all(np.diag(w) == 0)
        assert np.all(np.isin(w, (0.0, 1.0)))
        assert abs(graph.laplacian_eigenvalues[0]) <= 1e-9
        assert np.all(graph.laplacian_eigenvalues >= -1e-9)


class TestLogDet:
    def path3(self):
        return toy_graph([("A", "B"), ("B", "C")], ["A", "B", "C"])

    def test_rho_zero_identity(self):
        graph = self.path3()
        for tau2 in (0.5, 1.0, 2.0):
            assert logdet_precision(0.0, tau2, graph) == pytest.approx(
                -3 * np.log(tau2), abs=1e-12
            )

    def test_path_graph_dense_oracle(self):
        graph = self.path3()
        q = dense_q(graph, 0.5)
        expected = np.linalg.slogdet(q)[1]
        assert logdet_precision(0.5, 1.0, graph) == pytest.approx(expected, abs=1e-12)

    def test_rho_one_rejected(self):
        with pytest.raises(GraphError, match="intrinsic boundary"):
            logdet_q(self.path3(), 1.0)

    def test_diverges_near_one(self):
        graph = self.path3()
        assert logdet_q(graph, 1 - 1e-12) < logdet_q(graph, 0.5) - 20

    def test_eigenvalue_identity_random_graphs(self):
        rng = np.random.default_rng(1)
        for _ in range(30):
            k = int(rng.integers(2, 50))
            ids = [f"Z{i:02d}" for i in range(k)]
            lat = rng.uniform(25, 31, size=k)
            lon = rng.uniform(-87, -80, size=k)
            adj = graph_from_distance_threshold(ids, lat, lon, float(rng.uniform(50, 400)))
            graph = augment_islands(adj, ids, lat, lon)
            rho = float(rng.uniform(0, 0.99))
            expected = np.linalg.slogdet(dense_q(graph, rho))[1]
            got = logdet_q(graph, rho)
            assert got == pytest.approx(expected, rel=1e-10, abs=1e-10)

    def test_q_positive_definite(self):
        rng = np.random.default_rng(2)
        graph = self.path3()
        for _ in range(20):
            rho = float(rng.uniform(0, 1 - 1e-9))
            eigs = np.linalg.eigvalsh(dense_q(graph, rho))
            assert eigs[0] > 0
            assert eigs[0] == pytest.approx(1 - rho, rel=1e-9)
