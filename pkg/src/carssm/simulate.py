"""Synthetic data generators for benchmarks, calibration runs and the CLI.

Everything here is deterministic given its seed. Spatial fields for the
covariates follow the same distance-ordered random-walk structure the imputer
assumes; the response follows the two-level spatial model with a centered
Leroux-prior effect (the sampler identifies the field only up to its mean, so
the generator centers it too).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse.csgraph

from .data import (
    COVARIATE_NAMES,
    Dataset,
    FacilityRecord,
    PERCENT_COVARIATES,
    ZctaRecord,
)
from .geo import OrderedSeries, haversine_km, ordered_series
from .graph import ZctaGraph, augment_islands, graph_from_distance_threshold
from .mcmc import Priors

#: Rough bounding box used for synthetic centroids (Florida-like extent).
_LAT_RANGE = (25.0, 31.0)
_LON_RANGE = (-87.5, -80.0)

DEFAULT_TRUE_BETA = (-10.0, 0.003, -0.002, 0.0005, -0.003, 0.02, 0.0003, 0.003)


def simulate_series(
    m: int,
    sigma2_eps: float,
    sigma2_eta: float,
    seed: int,
    gap_range=(0.5, 1.5),
    level0: float = 50.0,
    missing_rate: float = 0.0,
) -> OrderedSeries:
    """Draw a series straight from the local-level model over random gaps."""
    rng = np.random.default_rng(seed)
    gaps = rng.uniform(gap_range[0], gap_range[1], size=m)
    distances = np.cumsum(gaps)
    level = level0 + np.concatenate(
        [[0.0], np.cumsum(rng.normal(scale=np.sqrt(sigma2_eta * gaps[1:])))]
    )
    values = level + rng.normal(scale=np.sqrt(sigma2_eps), size=m)
    if missing_rate > 0.0:
        values[rng.uniform(size=m) < missing_rate] = np.nan
    return OrderedSeries(
        site_ids=[f"S{i:04d}" for i in range(m)],
        distances=distances,
        gaps=np.diff(distances, prepend=0.0),
        values=values,
    )


@dataclass
class CarDesign:
    """Fixed design (graph, covariates, offsets) for repeated simulation."""

    graph: ZctaGraph
    X: np.ndarray
    offset: np.ndarray
    zcta_index: np.ndarray
    laplacian_eigenvectors: np.ndarray

    @property
    def n_rows(self) -> int:
        return self.X.shape[0]


def _connected_threshold_graph(ids, lat, lon, target_degree):
    # grow the threshold until the augmented graph is connected
    k = len(ids)
    pairwise = haversine_km(lat[:, None], lon[:, None], lat[None, :], lon[None, :])
    offdiag = pairwise[np.triu_indices(k, 1)]
    quantile = min(0.95, target_degree / max(k - 1, 1))
    for _ in range(12):
        threshold = float(np.quantile(offdiag, quantile))
        adj = graph_from_distance_threshold(ids, lat, lon, threshold)
        graph = augment_islands(adj, ids, lat, lon)
        n_comp, _ = scipy.sparse.csgraph.connected_components(graph.adjacency, directed=False)
        if n_comp == 1:
            return graph
        quantile = min(0.95, quantile * 1.5)
    raise RuntimeError("could not build a connected synthetic graph")


def simulate_car_design(
    k: int,
    seed: int,
    m_choices=(1, 2, 3),
    n_covariates: int = 2,
    target_degree: float = 4.0,
) -> CarDesign:
    """Random connected areal design with per-area facility counts."""
    rng = np.random.default_rng(seed)
    ids = [f"Z{i:03d}" for i in range(k)]
    lat = rng.uniform(*_LAT_RANGE, size=k)
    lon = rng.uniform(*_LON_RANGE, size=k)
    graph = _connected_threshold_graph(ids, lat, lon, target_degree)
    m_k = rng.choice(np.asarray(m_choices), size=k)
    zcta_index = np.repeat(np.arange(k), m_k)
    n = zcta_index.size
    X = np.column_stack([np.ones(n)] + [rng.standard_normal(n) for _ in range(n_covariates)])
    population = rng.integers(500, 50000, size=k)
    offset = np.log(population).astype(float)[zcta_index]
    eigvec = scipy.linalg.eigh(
        np.diag(graph.degrees) - graph.adjacency.toarray()
    )[1]
    return CarDesign(
        graph=graph,
        X=X,
        offset=offset,
        zcta_index=zcta_index,
        laplacian_eigenvectors=eigvec,
    )


def draw_car_parameters(rng, priors: Priors):
    """One (beta, tau2, nu2, rho) draw from the prior."""
    chol = np.linalg.cholesky(priors.sigma_beta)
    beta = priors.mu_beta + chol @ rng.standard_normal(priors.mu_beta.size)
    tau2 = float(priors.b / rng.gamma(priors.a, 1.0))
    nu2 = float(priors.b / rng.gamma(priors.a, 1.0))
    rho = float(rng.uniform())
    return beta, tau2, nu2, rho


def sample_phi(rng, design: CarDesign, tau2: float, rho: float) -> np.ndarray:
    """Centered draw from the Leroux-type prior N(0, tau2 Q(rho)^-1)."""
    lam = design.graph.laplacian_eigenvalues
    prec_eigs = rho * lam + (1.0 - rho)
    z = rng.standard_normal(lam.size)
    phi = design.laplacian_eigenvectors @ (z * np.sqrt(tau2 / prec_eigs))
    return phi - phi.mean()


def simulate_car_observations(rng, design: CarDesign, beta, tau2, nu2, rho):
    """Responses from the two-level model at the given parameters."""
    phi = sample_phi(rng, design, tau2, rho)
    mu = design.X @ np.asarray(beta, float) + design.offset + phi[design.zcta_index]
    y = mu + np.sqrt(nu2) * rng.standard_normal(design.n_rows)
    return y, phi


def _rescale(path: np.ndarray, lo: float, hi: float) -> np.ndarray:
    span = path.max() - path.min()
    if span == 0:
        return np.full_like(path, (lo + hi) / 2.0)
    return lo + (hi - lo) * (path - path.min()) / span


def simulate_dataset(
    k: int,
    seed: int,
    m_min: int = 1,
    m_max: int = 3,
    beta=DEFAULT_TRUE_BETA,
    rho: float = 0.1,
    tau2: float = 0.2,
    nu2: float = 0.05,
    cov_missing_rate: float = 0.2,
    shr_missing_rate: float = 0.01,
    cov_sigma2_eps: float = 1.0,
    cov_sigma2_eta: float = 10.0,
    target_degree: float = 4.0,
):
    """Full synthetic facility/ZCTA dataset plus its generating truth.

    Returns (dataset, edges, truth) where edges is the raw pre-augmentation
    adjacency list and truth a JSON-ready record of every generating value.
    Facilities share their ZCTA's centroid coordinates, so same-ZCTA
    facilities are exact distance ties, as in the real tables.
    """
    if k < 2:
        raise ValueError("need at least 2 ZCTAs")
    beta = np.asarray(beta, dtype=float)
    if beta.size != len(COVARIATE_NAMES) + 2:
        raise ValueError(f"beta must have {len(COVARIATE_NAMES) + 2} entries "
                         "(intercept, six covariates, fpl_score)")
    rng = np.random.default_rng(seed)

    zcta_ids = [f"Z{i:04d}" for i in range(k)]
    lat = rng.uniform(*_LAT_RANGE, size=k)
    lon = rng.uniform(*_LON_RANGE, size=k)
    population = rng.integers(500, 80000, size=k)
    fpl = np.round(rng.uniform(5.0, 40.0, size=k), 2)

    m_k = rng.integers(m_min, m_max + 1, size=k)
    zcta_index = np.repeat(np.arange(k), m_k)
    n = zcta_index.size
    fac_ids = [f"F{i:04d}" for i in range(n)]
    fac_lat = lat[zcta_index]
    fac_lon = lon[zcta_index]

    # distance-ordered random walks for the facility covariates
    order_probe = ordered_series(fac_ids, fac_lat, fac_lon, np.zeros(n))
    rank = {sid: pos for pos, sid in enumerate(order_probe.site_ids)}
    row_rank = np.array([rank[sid] for sid in fac_ids])
    gaps = order_probe.gaps
    cov_values = {}
    for name in COVARIATE_NAMES:
        walk = np.concatenate(
            [[0.0], np.cumsum(rng.normal(scale=np.sqrt(cov_sigma2_eta * gaps[1:])))]
        )
        noisy = walk + rng.normal(scale=np.sqrt(cov_sigma2_eps), size=n)
        lo, hi = (10.0, 90.0) if name in PERCENT_COVARIATES else (5.0, 200.0)
        cov_values[name] = _rescale(noisy, lo, hi)[row_rank]

    # response from the two-level spatial model
    adj = graph_from_distance_threshold(zcta_ids, lat, lon,
                                        _degree_threshold(lat, lon, target_degree))
    graph = augment_islands(adj, zcta_ids, lat, lon)
    lam = graph.laplacian_eigenvalues
    eigvec = scipy.linalg.eigh(np.diag(graph.degrees) - graph.adjacency.toarray())[1]
    phi = eigvec @ (rng.standard_normal(k) * np.sqrt(tau2 / (rho * lam + (1.0 - rho))))
    phi -= phi.mean()

    X = np.column_stack(
        [np.ones(n)] + [cov_values[name] for name in COVARIATE_NAMES] + [fpl[zcta_index]]
    )
    offset = np.log(population).astype(float)[zcta_index]
    y = X @ beta + offset + phi[zcta_index] + np.sqrt(nu2) * rng.standard_normal(n)
    shr = np.exp(y)

    cov_missing = rng.uniform(size=(n, len(COVARIATE_NAMES))) < cov_missing_rate
    shr_missing = rng.uniform(size=n) < shr_missing_rate

    facilities = []
    for i in range(n):
        covs = tuple(
            None if cov_missing[i, j] else round(float(cov_values[name][i]), 4)
            for j, name in enumerate(COVARIATE_NAMES)
        )
        facilities.append(
            FacilityRecord(
                facility_id=fac_ids[i],
                zcta_id=zcta_ids[zcta_index[i]],
                latitude=round(float(fac_lat[i]), 6),
                longitude=round(float(fac_lon[i]), 6),
                covariates=covs,
                shr=None if shr_missing[i] else round(float(shr[i]), 6),
            )
        )
    zctas = [
        ZctaRecord(
            zcta_id=zcta_ids[i],
            centroid_latitude=round(float(lat[i]), 6),
            centroid_longitude=round(float(lon[i]), 6),
            population=int(population[i]),
            fpl_score=float(fpl[i]),
        )
        for i in range(k)
    ]
    dataset = Dataset(facilities=facilities, zctas=zctas)

    coo = adj.tocoo()
    edges = sorted(
        {(zcta_ids[i], zcta_ids[j]) for i, j in zip(coo.row, coo.col) if i < j}
    )
    truth = {
        "seed": seed,
        "k": k,
        "n_facilities": n,
        "beta": [float(b) for b in beta],
        "rho": rho,
        "tau2": tau2,
        "nu2": nu2,
        "phi": [float(v) for v in phi],
        "cov_missing_rate": cov_missing_rate,
        "shr_missing_rate": shr_missing_rate,
    }
    return dataset, edges, truth


def _degree_threshold(lat, lon, target_degree: float) -> float:
    k = lat.size
    pairwise = haversine_km(lat[:, None], lon[:, None], lat[None, :], lon[None, :])
    quantile = min(0.95, target_degree / max(k - 1, 1))
    return float(np.quantile(pairwise[np.triu_indices(k, 1)], quantile))
