"""Augmented neighborhood matrix for areal units and its spectral quantities.

The adjacency is a symmetric 0/1 matrix with zero diagonal over the areas
present in the dataset. Areas left without any neighbor are repaired by
linking them to their nearest-centroid area, so every row ends up with
degree >= 1 (a requirement of the spatial prior's conditionals). Eigenvalues
of the graph Laplacian D - W are precomputed once; they give the
log-determinant of rho*(D - W) + (1 - rho)*I in O(K) per evaluation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse

from .geo import haversine_km


class GraphError(Exception):
    pass


def build_graph(edges, zcta_ids) -> scipy.sparse.csr_matrix:
    """Assemble a symmetric 0/1 adjacency over exactly ``zcta_ids``.

    Duplicate and reversed edges collapse; self-loops and unknown endpoints
    are errors.
    """
    ids = list(zcta_ids)
    pos = {z: i for i, z in enumerate(ids)}
    if len(pos) != len(ids):
        raise GraphError("zcta_ids contains duplicates")
    k = len(ids)
    rows, cols = [], []
    for a, b in edges:
        if a == b:
            raise GraphError(f"self-loop on {a!r}")
        try:
            i, j = pos[a], pos[b]
        except KeyError as exc:
            raise GraphError(f"edge endpoint {exc.args[0]!r} not in zcta table") from None
        rows.extend((i, j))
        cols.extend((j, i))
    adj = scipy.sparse.csr_matrix(
        (np.ones(len(rows)), (rows, cols)), shape=(k, k)
    )
    adj.data[:] = 1.0  # collapse duplicates
    return adj


def graph_from_distance_threshold(zcta_ids, lat, lon, threshold_km: float) -> scipy.sparse.csr_matrix:
    """Adjacency linking areas whose centroids lie within threshold_km.

    Convenience for synthetic experiments where no contiguity file exists.
    """
    lat = np.asarray(lat, dtype=float)
    lon = np.asarray(lon, dtype=float)
    k = len(list(zcta_ids))
    dist = haversine_km(lat[:, None], lon[:, None], lat[None, :], lon[None, :])
    adj = (dist <= threshold_km).astype(float)
    np.fill_diagonal(adj, 0.0)
    return scipy.sparse.csr_matrix(adj)


@dataclass
class ZctaGraph:
    """Immutable augmented neighborhood structure shared by the sampler."""

    zcta_ids: tuple
    adjacency: scipy.sparse.csr_matrix
    degrees: np.ndarray
    laplacian_eigenvalues: np.ndarray
    augmented_edges: tuple
    _neighbor_lists: list = field(default=None, repr=False, compare=False)

    @property
    def n_zctas(self) -> int:
        return len(self.zcta_ids)

    @property
    def neighbor_lists(self) -> list:
        """Per-node arrays of neighbor indices (cached)."""
        if self._neighbor_lists is None:
            indptr, indices = self.adjacency.indptr, self.adjacency.indices
            self._neighbor_lists = [
                indices[indptr[i]:indptr[i + 1]] for i in range(self.n_zctas)
            ]
        return self._neighbor_lists

    def laplacian(self) -> scipy.sparse.csr_matrix:
        return scipy.sparse.diags(self.degrees) - self.adjacency

    def check(self) -> None:
        adj = self.adjacency
        if (adj != adj.T).nnz:
            raise GraphError("adjacency not symmetric")
        if adj.diagonal().any():
            raise GraphError("adjacency has nonzero diagonal")
        if np.any(self.degrees < 1):
            raise GraphError("graph has a degree-0 node after augmentation")
        if abs(self.laplacian_eigenvalues[0]) > 1e-9:
            raise GraphError("smallest Laplacian eigenvalue is not 0")


def augment_islands(adjacency, zcta_ids, centroid_lat, centroid_lon) -> ZctaGraph:
    """Give every isolated area its nearest-centroid neighbor, symmetrically.

    One pass suffices: each repair raises the degree of both endpoints.
    Equidistant candidates resolve to the lexicographically smaller id. Two
    mutually-nearest isolated areas end up sharing a single edge.
    """
    ids = tuple(zcta_ids)
    k = len(ids)
    if k == 1:
        raise GraphError("cannot augment a single-node graph")
    lat = np.asarray(centroid_lat, dtype=float)
    lon = np.asarray(centroid_lon, dtype=float)
    adj = scipy.sparse.lil_matrix(adjacency.astype(float))

    degrees = np.asarray(adj.sum(axis=1)).ravel()
    islands = np.flatnonzero(degrees == 0)
    added = []
    for i in islands:
        dist = haversine_km(lat[i], lon[i], lat, lon)
        dist[i] = np.inf
        best = np.flatnonzero(dist == dist.min())
        j = min(best, key=lambda idx: ids[idx])  # ties: smaller id
        if adj[i, j] == 0:
            adj[i, j] = 1.0
            adj[j, i] = 1.0
            added.append((ids[i], ids[j]))

    adj = adj.tocsr()
    degrees = np.asarray(adj.sum(axis=1)).ravel()
    lap = np.diag(degrees) - adj.toarray()
    eigenvalues = np.sort(scipy.linalg.eigvalsh(lap))
    graph = ZctaGraph(
        zcta_ids=ids,
        adjacency=adj,
        degrees=degrees,
        laplacian_eigenvalues=eigenvalues,
        augmented_edges=tuple(added),
    )
    graph.check()
    return graph


def logdet_q(graph: ZctaGraph, rho: float) -> float:
    """log det of Q(rho) = rho*(D - W) + (1 - rho)*I via the eigenvalue identity."""
    if not 0.0 <= rho < 1.0:
        if rho == 1.0:
            raise GraphError("intrinsic boundary: Q singular at rho = 1")
        raise ValueError("rho must be in [0, 1)")
    return float(np.log((1.0 - rho) + rho * graph.laplacian_eigenvalues).sum())


def logdet_precision(rho: float, tau2: float, graph: ZctaGraph) -> float:
    """log det of the spatial-effect precision Q(rho)/tau2."""
    if not tau2 > 0:
        raise ValueError("tau2 must be positive")
    return logdet_q(graph, rho) - graph.n_zctas * float(np.log(tau2))
