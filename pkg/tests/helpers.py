"""Independent oracles used across the test suite.

Everything here is computed by dense linear algebra straight from the model
definitions, deliberately avoiding the recursions and identities used by the
package itself.
"""

import numpy as np
from scipy.stats import multivariate_normal

from carssm.geo import OrderedSeries


def state_covariance(distances, init_var, sigma2_eta):
    """cov(alpha_i, alpha_j) = P1 + sigma2_eta * (d_min(i,j) - d_1)."""
    d = np.asarray(distances, dtype=float)
    m = d.size
    cum = init_var + sigma2_eta * (d - d[0])
    return np.minimum.outer(cum, cum)


def dense_smoother(series: OrderedSeries, params):
    """Conditional mean/variance of the latent level given observed values."""
    obs = np.flatnonzero(series.observed_mask)
    sa = state_covariance(series.distances, params.init_var, params.sigma2_eta)
    sxx = sa[np.ix_(obs, obs)] + params.sigma2_eps * np.eye(obs.size)
    sax = sa[:, obs]
    resid = series.values[obs] - params.init_mean
    mean = params.init_mean + sax @ np.linalg.solve(sxx, resid)
    var = np.diag(sa) - np.einsum("ij,ij->i", sax @ np.linalg.inv(sxx), sax)
    return mean, var


def dense_filter_steps(series: OrderedSeries, params):
    """Per-step one-step-ahead mean/variance by explicit prefix conditioning."""
    m = series.n_sites
    obs_mask = series.observed_mask
    sa = state_covariance(series.distances, params.init_var, params.sigma2_eta)
    a = np.empty(m)
    p = np.empty(m)
    for i in range(m):
        past = np.flatnonzero(obs_mask[:i])
        if past.size == 0:
            a[i], p[i] = params.init_mean, sa[i, i]
            continue
        sxx = sa[np.ix_(past, past)] + params.sigma2_eps * np.eye(past.size)
        resid = series.values[past] - params.init_mean
        a[i] = params.init_mean + sa[i, past] @ np.linalg.solve(sxx, resid)
        p[i] = sa[i, i] - sa[i, past] @ np.linalg.solve(sxx, sa[past, i])
    return a, p


def dense_loglik(series: OrderedSeries, params):
    """Joint Gaussian log-density of the observed values."""
    obs = np.flatnonzero(series.observed_mask)
    sa = state_covariance(series.distances, params.init_var, params.sigma2_eta)
    sxx = sa[np.ix_(obs, obs)] + params.sigma2_eps * np.eye(obs.size)
    return float(
        multivariate_normal(mean=np.full(obs.size, params.init_mean), cov=sxx)
        .logpdf(series.values[obs])
    )


def random_series(rng, m=None, missing_rate=None, max_m=20):
    """A random valid OrderedSeries for property loops."""
    if m is None:
        m = int(rng.integers(3, max_m + 1))
    gaps = rng.uniform(0.05, 3.0, size=m)
    distances = np.cumsum(gaps)
    values = rng.normal(size=m) * rng.uniform(0.5, 3.0)
    if missing_rate is None:
        missing_rate = rng.uniform(0.0, 0.5)
    mask = rng.uniform(size=m) < missing_rate
    if mask.all():
        mask[int(rng.integers(m))] = False
    values = np.where(mask, np.nan, values)
    return OrderedSeries(
        site_ids=[f"s{i}" for i in range(m)],
        distances=distances,
        gaps=np.diff(distances, prepend=0.0),
        values=values,
    )


def dense_q(graph_or_adj, rho):
    """rho*(D - W) + (1 - rho)*I assembled densely."""
    if hasattr(graph_or_adj, "adjacency"):
        w = graph_or_adj.adjacency.toarray()
    else:
        w = np.asarray(graph_or_adj.todense()) if hasattr(graph_or_adj, "todense") else np.asarray(graph_or_adj)
    deg = w.sum(axis=1)
    lap = np.diag(deg) - w
    return rho * lap + (1.0 - rho) * np.eye(w.shape[0])


def phi_conditional_oracle(k, phi, y, x_beta_offset, zcta_index, rho, tau2, nu2, graph):
    """Conditional of phi_k given (phi_-k, y): dense (K+n) joint Gaussian.

    x_beta_offset is X @ beta + offset. Builds the joint precision of
    (phi, y), conditions component k on everything else.
    """
    kk = graph.n_zctas
    n = y.size
    z = np.zeros((n, kk))
    z[np.arange(n), zcta_index] = 1.0
    q = dense_q(graph, rho)
    prec = np.zeros((kk + n, kk + n))
    prec[:kk, :kk] = q / tau2 + z.T @ z / nu2
    prec[:kk, kk:] = -z.T / nu2
    prec[kk:, :kk] = -z / nu2
    prec[kk:, kk:] = np.eye(n) / nu2
    mean = np.concatenate([np.zeros(kk), x_beta_offset])
    value = np.concatenate([phi, y])
    var = 1.0 / prec[k, k]
    rest = np.delete(np.arange(kk + n), k)
    cond_mean = mean[k] - var * prec[k, rest] @ (value[rest] - mean[rest])
    return cond_mean, var


def nonspatial_gibbs(y, x, offset, zcta_index, k, a, b, mu_beta, sigma_beta,
                     n_burnin, n_keep, seed):
    """Independent Gibbs sampler for the rho = 0 (exchangeable) special case.

    Same model conventions as the production sampler (sum-to-zero centering
    of the area effects, InvGamma(a + K/2, ...) variance update) but written
    with dense block updates instead of single-site sweeps.
    """
    rng = np.random.default_rng(seed)
    n, p1 = x.shape
    z = np.zeros((n, k))
    z[np.arange(n), zcta_index] = 1.0
    m_k = z.sum(axis=0)
    sigma_beta_inv = np.linalg.inv(sigma_beta)

    beta = np.linalg.lstsq(x, y - offset, rcond=None)[0]
    phi = np.zeros(k)
    tau2 = nu2 = 0.01

    keep = {"beta0": [], "tau2": [], "nu2": []}
    for it in range(n_burnin + n_keep):
        # beta block
        prec = x.T @ x / nu2 + sigma_beta_inv
        mean = np.linalg.solve(prec, x.T @ (y - offset - z @ phi) / nu2
                               + sigma_beta_inv @ mu_beta)
        beta = rng.multivariate_normal(mean, np.linalg.inv(prec))
        # phi block: independent sites at rho = 0
        resid_sum = z.T @ (y - x @ beta - offset)
        var = 1.0 / (m_k / nu2 + 1.0 / tau2)
        phi = var * resid_sum / nu2 + np.sqrt(var) * rng.standard_normal(k)
        phi -= phi.mean()
        # variances
        tau2 = (b + phi @ phi / 2.0) / rng.gamma(a + k / 2.0, 1.0)
        sse = float(np.sum((y - x @ beta - offset - z @ phi) ** 2))
        nu2 = (b + sse / 2.0) / rng.gamma(a + n / 2.0, 1.0)
        if it >= n_burnin:
            keep["beta0"].append(beta[0])
            keep["tau2"].append(tau2)
            keep["nu2"].append(nu2)
    return {k_: np.asarray(v) for k_, v in keep.items()}
