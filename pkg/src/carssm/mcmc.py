"""Two-level Gaussian model with a Leroux-type spatial prior, fit by MCMC.

Row j in area k:   y_kj ~ N(mu_kj, nu2),  mu_kj = x_kj' beta + O_kj + phi_k
Spatial effect:    phi  ~ N(0, tau2 * Q(rho)^-1),  Q(rho) = rho*(D-W) + (1-rho)*I
Priors:            beta ~ N(mu_beta, sigma_beta),  tau2, nu2 ~ InvGamma(a, b),
                   rho ~ Uniform(0, 1)

Updates: conjugate Gibbs for beta, phi (single-site sweep), tau2 and nu2;
random-walk Metropolis on logit(rho); posterior-predictive refresh of the
missing responses each iteration. After every phi sweep the field is centered
to sum to zero, which keeps the level identified against the intercept.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import log, sqrt

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import expit, logit

from .data import DesignTable
from .graph import ZctaGraph, logdet_q


class McmcError(Exception):
    pass


@dataclass
class CarModelInput:
    """Design-ready arrays for the sampler.

    y is log(SHR) with NaN at missing responses; X already carries the
    intercept column and must be fully observed; zcta_index maps each row to
    its position in graph.zcta_ids.
    """

    y: np.ndarray
    X: np.ndarray
    offset: np.ndarray
    zcta_index: np.ndarray
    graph: ZctaGraph
    beta_names: tuple = None

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float)
        self.X = np.asarray(self.X, dtype=float)
        self.offset = np.asarray(self.offset, dtype=float)
        self.zcta_index = np.asarray(self.zcta_index, dtype=np.intp)
        n = self.y.size
        if self.X.shape[0] != n or self.offset.size != n or self.zcta_index.size != n:
            raise ValueError("y, X, offset and zcta_index must have matching length")
        if np.isnan(self.X).any():
            raise ValueError("design matrix has missing entries; impute covariates first")
        k = self.graph.n_zctas
        if self.zcta_index.min() < 0 or self.zcta_index.max() >= k:
            raise ValueError("zcta_index out of range for the graph")
        if self.beta_names is None:
            self.beta_names = tuple(
                ["intercept"] + [f"beta_{j}" for j in range(1, self.X.shape[1])]
            )
        self.missing_rows = np.flatnonzero(np.isnan(self.y))
        self.observed_rows = np.flatnonzero(~np.isnan(self.y))
        self.rows_per_zcta = np.bincount(self.zcta_index, minlength=k).astype(float)

    @property
    def n_rows(self) -> int:
        return self.y.size

    @property
    def n_zctas(self) -> int:
        return self.graph.n_zctas


def build_car_input(table: DesignTable, graph: ZctaGraph, standardize: bool = False) -> CarModelInput:
    """Assemble the model input from a joined design table.

    The response is log(SHR). Covariates enter on their raw scale unless
    standardize is set, in which case each is centered and scaled to unit
    variance (the intercept and offset are untouched).
    """
    if tuple(graph.zcta_ids) != tuple(table.zcta_ids):
        raise ValueError("graph and table must cover the same ZCTAs in the same order")
    incomplete = [
        name for name in table.covariate_names if np.isnan(table.columns[name]).any()
    ]
    if incomplete:
        raise ValueError(
            f"covariates with missing values: {incomplete}; run imputation first"
        )
    n = table.n_rows
    p = len(table.covariate_names)
    X = np.empty((n, p + 1))
    X[:, 0] = 1.0
    for j, name in enumerate(table.covariate_names, start=1):
        col = table.columns[name]
        if standardize:
            sd = col.std(ddof=1)
            col = (col - col.mean()) / (sd if sd > 0 else 1.0)
        X[:, j] = col
    shr = table.columns["shr"]
    y = np.full(n, np.nan)
    present = ~np.isnan(shr)
    y[present] = np.log(shr[present])
    return CarModelInput(
        y=y,
        X=X,
        offset=table.offset,
        zcta_index=table.zcta_index,
        graph=graph,
        beta_names=("intercept",) + tuple(table.covariate_names),
    )


@dataclass
class Priors:
    mu_beta: np.ndarray
    sigma_beta: np.ndarray
    a: float = 1.0
    b: float = 0.01

    def __post_init__(self):
        self.mu_beta = np.asarray(self.mu_beta, dtype=float)
        self.sigma_beta = np.asarray(self.sigma_beta, dtype=float)
        p1 = self.mu_beta.size
        if self.sigma_beta.shape != (p1, p1):
            raise ValueError("sigma_beta shape does not match mu_beta")
        if not np.allclose(self.sigma_beta, self.sigma_beta.T):
            raise ValueError("sigma_beta must be symmetric")
        if np.linalg.eigvalsh(self.sigma_beta)[0] <= 0:
            raise ValueError("sigma_beta must be positive definite")
        if self.a <= 0 or self.b <= 0:
            raise ValueError("inverse-gamma hyperparameters must be positive")

    @property
    def sigma_beta_inv(self) -> np.ndarray:
        return np.linalg.inv(self.sigma_beta)


def default_priors(n_coef: int, a: float = 1.0, b: float = 0.01,
                   beta_var: float = 1e5) -> Priors:
    """Weakly informative defaults: beta ~ N(0, beta_var * I), IG(a, b) variances."""
    return Priors(np.zeros(n_coef), beta_var * np.eye(n_coef), a=a, b=b)


@dataclass
class McmcConfig:
    seed: int
    n_burnin: int = 20000
    n_keep: int = 50000
    thin: int = 1
    rho_step: float = 1.0
    fix_rho: float = None
    store_phi: bool = False
    adapt_interval: int = 100
    n_chains: int = 1

    def __post_init__(self):
        if self.seed is None:
            raise ValueError("seed is required (no wall-clock default)")
        if self.n_burnin < 1 or self.n_keep < 1 or self.thin < 1 or self.n_chains < 1:
            raise ValueError("iteration counts must be >= 1")
        if self.fix_rho is not None and not 0.0 <= self.fix_rho < 1.0:
            raise ValueError("fix_rho must be in [0, 1)")


@dataclass
class McmcState:
    beta: np.ndarray
    phi: np.ndarray
    tau2: float
    nu2: float
    rho: float
    y_miss: np.ndarray

    def check_finite(self, iteration: int) -> None:
        for name, value in (("beta", self.beta), ("phi", self.phi),
                            ("y_miss", self.y_miss)):
            if not np.all(np.isfinite(value)):
                raise McmcError(f"non-finite {name} at iteration {iteration}")
        for name, value in (("tau2", self.tau2), ("nu2", self.nu2), ("rho", self.rho)):
            if not np.isfinite(value):
                raise McmcError(f"non-finite {name} at iteration {iteration}")
        if self.tau2 <= 0 or self.nu2 <= 0:
            raise McmcError(f"nonpositive variance at iteration {iteration}")


def filled_response(state: McmcState, model: CarModelInput) -> np.ndarray:
    """y with the current imputations substituted at missing rows."""
    y = model.y.copy()
    if model.missing_rows.size:
        y[model.missing_rows] = state.y_miss
    return y


def car_full_conditional(k: int, phi: np.ndarray, rho: float, tau2: float,
                         graph: ZctaGraph):
    """Prior conditional of phi_k given the other effects (no likelihood).

    mean = rho * sum_j w_kj phi_j / (rho * n_k + 1 - rho)
    var  = tau2 / (rho * n_k + 1 - rho)
    """
    if not 0.0 <= rho < 1.0:
        raise ValueError("rho must be in [0, 1)")
    if not tau2 > 0:
        raise ValueError("tau2 must be positive")
    nbrs = graph.neighbor_lists[k]
    denom = rho * graph.degrees[k] + 1.0 - rho
    mean = rho * float(phi[nbrs].sum()) / denom
    return mean, tau2 / denom


def phi_site_conditional(k: int, phi, resid_sum_k: float, m_k: float,
                         rho: float, tau2: float, nu2: float, graph: ZctaGraph):
    """Full conditional of phi_k given data and the other effects.

    resid_sum_k is sum_j (y_kj - x_kj' beta - O_kj) over the area's rows and
    m_k the number of such rows.
    """
    nbrs = graph.neighbor_lists[k]
    prior_prec = (rho * graph.degrees[k] + 1.0 - rho) / tau2
    var = 1.0 / (m_k / nu2 + prior_prec)
    mean = var * (resid_sum_k / nu2 + rho * float(phi[nbrs].sum()) / tau2)
    return mean, var


def gibbs_beta(rng, state: McmcState, model: CarModelInput, priors: Priors,
               sigma_beta_inv=None) -> np.ndarray:
    """Draw beta from N(V m, V), V = (X'X/nu2 + S^-1)^-1."""
    if sigma_beta_inv is None:
        sigma_beta_inv = priors.sigma_beta_inv
    X = model.X
    resid = filled_response(state, model) - model.offset - state.phi[model.zcta_index]
    prec = X.T @ X / state.nu2 + sigma_beta_inv
    m = X.T @ resid / state.nu2 + sigma_beta_inv @ priors.mu_beta
    try:
        chol = np.linalg.cholesky(prec)
    except np.linalg.LinAlgError:
        raise McmcError(
            f"beta precision not SPD (cond={np.linalg.cond(prec):.3e})"
        ) from None
    mean = np.linalg.solve(prec, m)
    z = rng.standard_normal(mean.size)
    # solving L' u = z gives u ~ N(0, prec^-1)
    return mean + solve_triangular(chol.T, z, lower=False)


def gibbs_phi(rng, state: McmcState, model: CarModelInput) -> np.ndarray:
    """Single-site sweep k = 1..K over the spatial effects, then centering."""
    k_total = model.n_zctas
    resid = filled_response(state, model) - model.X @ state.beta - model.offset
    resid_sums = np.bincount(model.zcta_index, weights=resid, minlength=k_total)
    phi = state.phi.copy()
    z = rng.standard_normal(k_total)
    rho, tau2, nu2 = state.rho, state.tau2, state.nu2
    degrees = model.graph.degrees
    nbr_lists = model.graph.neighbor_lists
    m_k = model.rows_per_zcta
    for k in range(k_total):
        prior_prec = (rho * degrees[k] + 1.0 - rho) / tau2
        var = 1.0 / (m_k[k] / nu2 + prior_prec)
        mean = var * (resid_sums[k] / nu2 + rho * phi[nbr_lists[k]].sum() / tau2)
        phi[k] = mean + sqrt(var) * z[k]
    phi -= phi.mean()
    return phi


def _inv_gamma(rng, shape: float, scale: float) -> float:
    return float(scale / rng.gamma(shape, 1.0))


def quad_form_q(phi: np.ndarray, rho: float, graph: ZctaGraph) -> float:
    """phi' Q(rho) phi with Q = rho*(D - W) + (1 - rho)*I."""
    w_phi = graph.adjacency @ phi
    lap_quad = float(phi @ (graph.degrees * phi) - phi @ w_phi)
    return rho * lap_quad + (1.0 - rho) * float(phi @ phi)


def gibbs_tau2(rng, state: McmcState, graph: ZctaGraph, priors: Priors) -> float:
    """tau2 ~ InvGamma(a + K/2, b + phi' Q(rho) phi / 2)."""
    qf = quad_form_q(state.phi, state.rho, graph)
    return _inv_gamma(rng, priors.a + graph.n_zctas / 2.0, priors.b + qf / 2.0)


def gibbs_nu2(rng, state: McmcState, model: CarModelInput, priors: Priors) -> float:
    """nu2 ~ InvGamma(a + n/2, b + SSE/2) with SSE over all rows (imputed filled)."""
    mu = model.X @ state.beta + model.offset + state.phi[model.zcta_index]
    resid = filled_response(state, model) - mu
    sse = float(resid @ resid)
    return _inv_gamma(rng, priors.a + model.n_rows / 2.0, priors.b + sse / 2.0)


def rho_log_accept(rho_cur: float, rho_prop: float, phi: np.ndarray,
                   tau2: float, graph: ZctaGraph) -> float:
    """Log acceptance ratio of a logit random-walk move on rho.

    0.5 * [logdet Q(rho') - logdet Q(rho)]
      - [phi'Q(rho')phi - phi'Q(rho)phi] / (2 tau2)
      + log Jacobian ratio of the logit transform (flat Uniform(0,1) prior).
    """
    dlogdet = logdet_q(graph, rho_prop) - logdet_q(graph, rho_cur)
    dquad = quad_form_q(phi, rho_prop, graph) - quad_form_q(phi, rho_cur, graph)
    djac = (log(rho_prop) + log(1.0 - rho_prop)) - (log(rho_cur) + log(1.0 - rho_cur))
    return 0.5 * dlogdet - dquad / (2.0 * tau2) + djac


def mh_rho(rng, state: McmcState, graph: ZctaGraph, step: float):
    """One random-walk Metropolis move on logit(rho). Returns (rho, accepted)."""
    z = logit(state.rho) + step * rng.standard_normal()
    rho_prop = float(expit(z))
    if rho_prop <= 0.0 or rho_prop >= 1.0:  # numerically saturated proposal
        return state.rho, False
    log_ratio = rho_log_accept(state.rho, rho_prop, state.phi, state.tau2, graph)
    if log(rng.uniform()) < log_ratio:
        return rho_prop, True
    return state.rho, False


def impute_missing_y(rng, state: McmcState, model: CarModelInput) -> np.ndarray:
    """Posterior-predictive draw N(mu_kj, nu2) at each missing-response row."""
    rows = model.missing_rows
    if rows.size == 0:
        return np.empty(0)
    mu = (model.X[rows] @ state.beta + model.offset[rows]
          + state.phi[model.zcta_index[rows]])
    return mu + sqrt(state.nu2) * rng.standard_normal(rows.size)


@dataclass
class McmcChains:
    """Retained draws plus the run's execution manifest."""

    beta: np.ndarray
    tau2: np.ndarray
    nu2: np.ndarray
    rho: np.ndarray
    y_miss: np.ndarray
    mu_mean: np.ndarray
    beta_names: tuple
    missing_rows: np.ndarray
    phi: np.ndarray = None
    n_burnin: int = 0
    n_keep: int = 0
    thin: int = 1
    seed: int = None
    n_chains: int = 1
    chain_seeds: tuple = ()
    rho_acceptance: float = float("nan")
    rho_step_final: float = float("nan")
    n_iterations: int = 0

    @property
    def n_retained(self) -> int:
        return self.beta.shape[0]

    def manifest(self) -> dict:
        return {
            "n_burnin": self.n_burnin,
            "n_keep": self.n_keep,
            "thin": self.thin,
            "n_chains": self.n_chains,
            "chain_seeds": list(self.chain_seeds),
            "n_iterations": self.n_iterations,
            "n_retained": self.n_retained,
            "seed": self.seed,
            "rho_acceptance": self.rho_acceptance,
            "rho_step_final": self.rho_step_final,
        }


def _run_single_chain(model: CarModelInput, priors: Priors, config: McmcConfig,
                      seed: int) -> dict:
    rng = np.random.default_rng(seed)
    n_miss = model.missing_rows.size
    y_obs_mean = float(np.nanmean(model.y)) if model.observed_rows.size else 0.0

    state = McmcState(
        beta=np.zeros(model.X.shape[1]),
        phi=np.zeros(model.n_zctas),
        tau2=0.01,
        nu2=0.01,
        rho=0.5 if config.fix_rho is None else config.fix_rho,
        y_miss=np.full(n_miss, y_obs_mean),
    )
    y0 = filled_response(state, model)
    state.beta, *_ = np.linalg.lstsq(model.X, y0 - model.offset, rcond=None)

    sigma_beta_inv = priors.sigma_beta_inv
    n_keep, thin = config.n_keep, config.thin
    n_iter = config.n_burnin + n_keep * thin

    beta_draws = np.empty((n_keep, state.beta.size))
    tau2_draws = np.empty(n_keep)
    nu2_draws = np.empty(n_keep)
    rho_draws = np.empty(n_keep)
    y_miss_draws = np.empty((n_keep, n_miss))
    phi_draws = np.empty((n_keep, model.n_zctas)) if config.store_phi else None
    mu_sum = np.zeros(model.n_rows)

    step = config.rho_step
    accepted_window = 0
    proposals_window = 0
    accepted_total = 0
    proposals_total = 0
    kept = 0

    for it in range(n_iter):
        state.beta = gibbs_beta(rng, state, model, priors, sigma_beta_inv)
        state.phi = gibbs_phi(rng, state, model)
        state.tau2 = gibbs_tau2(rng, state, model.graph, priors)
        state.nu2 = gibbs_nu2(rng, state, model, priors)
        if config.fix_rho is None:
            state.rho, acc = mh_rho(rng, state, model.graph, step)
            proposals_window += 1
            accepted_window += acc
            if it < config.n_burnin and proposals_window == config.adapt_interval:
                rate = accepted_window / proposals_window
                if rate < 0.40:
                    step *= 0.8
                elif rate > 0.50:
                    step *= 1.25
                accepted_window = proposals_window = 0
            if it >= config.n_burnin:
                proposals_total += 1
                accepted_total += acc
        if n_miss:
            state.y_miss = impute_missing_y(rng, state, model)
        state.check_finite(it)

        post = it - config.n_burnin
        if post >= 0 and (post + 1) % thin == 0:
            beta_draws[kept] = state.beta
            tau2_draws[kept] = state.tau2
            nu2_draws[kept] = state.nu2
            rho_draws[kept] = state.rho
            if n_miss:
                y_miss_draws[kept] = state.y_miss
            if phi_draws is not None:
                phi_draws[kept] = state.phi
            mu_sum += (model.X @ state.beta + model.offset
                       + state.phi[model.zcta_index])
            kept += 1

    return {
        "beta": beta_draws,
        "tau2": tau2_draws,
        "nu2": nu2_draws,
        "rho": rho_draws,
        "y_miss": y_miss_draws,
        "phi": phi_draws,
        "mu_mean": mu_sum / max(kept, 1),
        "acceptance": (accepted_total / proposals_total) if proposals_total else float("nan"),
        "step": step,
        "n_iterations": n_iter,
    }


def run_mcmc(model: CarModelInput, priors: Priors, config: McmcConfig) -> McmcChains:
    """Run the sampler and return retained draws (chains concatenated in order).

    Initialization: beta from least squares of (y - offset) on X (missing
    responses start at the observed mean), phi = 0, tau2 = nu2 = 0.01,
    rho = 0.5. The rho proposal step adapts during burn-in toward a 40-50%
    acceptance rate and is frozen afterwards. Chain 0 uses config.seed
    directly; any additional chains use seeds derived from it, and their
    retained draws are merged deterministically by chain index.
    """
    from .bench import derive_seed  # shared master-seed splitting rule

    chain_seeds = tuple(
        config.seed if c == 0 else derive_seed(config.seed, c)
        for c in range(config.n_chains)
    )
    runs = [_run_single_chain(model, priors, config, s) for s in chain_seeds]

    def cat(key):
        parts = [r[key] for r in runs]
        return parts[0] if len(parts) == 1 else np.concatenate(parts, axis=0)

    acceptances = np.asarray([r["acceptance"] for r in runs], dtype=float)
    mean_acceptance = (
        float(np.nanmean(acceptances)) if not np.all(np.isnan(acceptances)) else float("nan")
    )
    return McmcChains(
        beta=cat("beta"),
        tau2=cat("tau2"),
        nu2=cat("nu2"),
        rho=cat("rho"),
        y_miss=cat("y_miss"),
        mu_mean=np.mean([r["mu_mean"] for r in runs], axis=0),
        beta_names=model.beta_names,
        missing_rows=model.missing_rows.copy(),
        phi=cat("phi") if config.store_phi else None,
        n_burnin=config.n_burnin,
        n_keep=config.n_keep,
        thin=config.thin,
        seed=config.seed,
        n_chains=config.n_chains,
        chain_seeds=chain_seeds,
        rho_acceptance=mean_acceptance,
        rho_step_final=runs[-1]["step"],
        n_iterations=sum(r["n_iterations"] for r in runs),
    )


@dataclass
class PosteriorSummary:
    """Posterior means and central 95% intervals, Table-style."""

    names: list
    mean: np.ndarray
    q025: np.ndarray
    q975: np.ndarray
    fitted: np.ndarray
    missing_rows: np.ndarray
    missing_mean: np.ndarray
    missing_q025: np.ndarray
    missing_q975: np.ndarray


def summarize_posterior(chains: McmcChains) -> PosteriorSummary:
    """Mean and empirical 2.5%/97.5% quantiles (type-7 interpolation)."""
    if chains.n_retained < 100:
        raise ValueError("need at least 100 retained draws to summarize")
    cols = [chains.beta[:, j] for j in range(chains.beta.shape[1])]
    names = list(chains.beta_names) + ["tau2", "nu2", "rho"]
    cols += [chains.tau2, chains.nu2, chains.rho]
    mean = np.array([c.mean() for c in cols])
    q025 = np.array([np.quantile(c, 0.025) for c in cols])
    q975 = np.array([np.quantile(c, 0.975) for c in cols])
    if chains.missing_rows.size:
        miss_mean = chains.y_miss.mean(axis=0)
        miss_q025 = np.quantile(chains.y_miss, 0.025, axis=0)
        miss_q975 = np.quantile(chains.y_miss, 0.975, axis=0)
    else:
        miss_mean = miss_q025 = miss_q975 = np.empty(0)
    return PosteriorSummary(
        names=names,
        mean=mean,
        q025=q025,
        q975=q975,
        fitted=chains.mu_mean.copy(),
        missing_rows=chains.missing_rows.copy(),
        missing_mean=miss_mean,
        missing_q025=miss_q025,
        missing_q975=miss_q975,
    )
