"""Local-level state-space model over irregular distance gaps.

Observation:  x_i = alpha_i + eps_i,          eps_i ~ N(0, sigma2_eps)
Transition:   alpha_{i+1} = alpha_i + eta_i,  eta_i ~ N(0, g_i * sigma2_eta)

where g_i = d_{i+1} - d_i is the forward distance gap actually traversed
between consecutive sites. Missing observations skip the measurement update;
imputation uses the fixed-interval smoother.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import log

import numpy as np
from scipy.optimize import minimize

from .geo import OrderedSeries

_LOG_2PI = log(2.0 * np.pi)

#: Lower bound applied to both variances during likelihood evaluation.
VARIANCE_FLOOR = 1e-12


@dataclass(frozen=True)
class LocalLevelParams:
    """Variances and initial state of the local-level model.

    sigma2_eta is an innovation variance *per km*: the state increment over a
    forward gap g has variance g * sigma2_eta.
    """

    sigma2_eps: float
    sigma2_eta: float
    init_mean: float
    init_var: float

    def __post_init__(self):
        if self.sigma2_eps < 0 or self.sigma2_eta < 0:
            raise ValueError("variances must be nonnegative")
        if self.sigma2_eps + self.sigma2_eta <= 0:
            raise ValueError("fully degenerate model: sigma2_eps + sigma2_eta must be > 0")
        if not self.init_var > 0:
            raise ValueError("init_var must be positive")


@dataclass
class FilterOutput:
    """One-step-ahead quantities from the forward pass.

    predicted_mean/predicted_var are the a_i, P_i prior to the measurement
    update at step i. innovation, innovation_var and gain are NaN at missing
    steps.
    """

    predicted_mean: np.ndarray
    predicted_var: np.ndarray
    innovation: np.ndarray
    innovation_var: np.ndarray
    gain: np.ndarray
    log_likelihood: float


@dataclass
class SmootherOutput:
    mean: np.ndarray
    variance: np.ndarray


def _check_series(series: OrderedSeries) -> None:
    if series.n_observed == 0:
        raise ValueError("no observations: series is entirely missing")
    vals = series.values
    if np.any(np.isinf(vals)):
        raise ValueError("series contains non-finite (infinite) values")


def kalman_filter(series: OrderedSeries, params: LocalLevelParams) -> FilterOutput:
    """Forward recursion with missing-observation handling.

    At an observed step: v = x - a, F = P + sigma2_eps, K = P/F; the filtered
    state (a + K v, P (1 - K)) carries into the next prediction. At a missing
    step the prediction passes through unchanged. The log-likelihood is the
    sum of the observed innovations' Gaussian log-densities.
    """
    _check_series(series)
    m = series.n_sites
    s2e = params.sigma2_eps
    s2n = params.sigma2_eta
    values = series.values.tolist()
    fwd_gaps = series.gaps[1:].tolist()  # gap g_i between sites i and i+1

    a_pred = np.empty(m)
    p_pred = np.empty(m)
    v_arr = np.full(m, np.nan)
    f_arr = np.full(m, np.nan)
    k_arr = np.full(m, np.nan)

    a = params.init_mean
    p = params.init_var
    loglik = 0.0
    for i in range(m):
        a_pred[i] = a
        p_pred[i] = p
        x = values[i]
        if x == x:  # observed (not NaN)
            f = p + s2e
            v = x - a
            k = p / f
            loglik -= 0.5 * (_LOG_2PI + log(f) + v * v / f)
            v_arr[i] = v
            f_arr[i] = f
            k_arr[i] = k
            a = a + k * v
            p = p * (1.0 - k)
        if i < m - 1:
            p = p + fwd_gaps[i] * s2n
    return FilterOutput(a_pred, p_pred, v_arr, f_arr, k_arr, loglik)


def _loglik_fast(values, fwd_gaps, s2e, s2n, a, p) -> float:
    # Same recursion as kalman_filter but returning only the log-likelihood;
    # operates on plain Python floats for speed inside the optimizer.
    loglik = 0.0
    i = 0
    last = len(values) - 1
    for x in values:
        if x == x:
            f = p + s2e
            v = x - a
            k = p / f
            loglik -= 0.5 * (_LOG_2PI + log(f) + v * v / f)
            a += k * v
            p *= 1.0 - k
        if i < last:
            p += fwd_gaps[i] * s2n
        i += 1
    return loglik


def kalman_smoother(filt: FilterOutput, series: OrderedSeries) -> SmootherOutput:
    """Fixed-interval smoother (backward r/N recursion).

    Returns the conditional mean and variance of the latent level at every
    step, observed or missing, given all observations.
    """
    m = series.n_sites
    if filt.predicted_mean.shape[0] != m:
        raise ValueError("filter output length does not match series length")
    observed = series.observed_mask
    mean = np.empty(m)
    var = np.empty(m)
    r = 0.0
    n = 0.0
    for i in range(m - 1, -1, -1):
        if observed[i]:
            f = filt.innovation_var[i]
            l = 1.0 - filt.gain[i]
            r = filt.innovation[i] / f + l * r
            n = 1.0 / f + l * l * n
        p = filt.predicted_var[i]
        mean[i] = filt.predicted_mean[i] + p * r
        var[i] = p - p * p * n
    return SmootherOutput(mean, var)


@dataclass
class FitResult:
    params: LocalLevelParams
    log_likelihood: float
    improved: bool
    n_evaluations: int


#: Deterministic (eps_share, eta_share) splits of the sample variance used as
#: optimizer starting points.
_START_SHARES = ((0.5, 0.5), (0.9, 0.1), (0.1, 0.9), (0.99, 0.01), (0.01, 0.99))


def fit_mle(series: OrderedSeries, n_restarts: int = 5, seed: int = 0) -> FitResult:
    """Maximize the filter log-likelihood over (log sigma2_eps, log sigma2_eta).

    Nelder-Mead from several spread starting points (the first five are a
    deterministic grid scaling the sample variance; any extras are seeded
    random perturbations), followed by a polish run from the best point. The
    initial state is pinned by the data: init_mean is the first observed
    value and init_var = 1e7 * sample variance, which makes the first-step
    likelihood term insensitive to the parameters.
    """
    _check_series(series)
    obs = series.values[series.observed_mask]
    if obs.size < 3:
        raise ValueError("need at least 3 observed values to fit")

    sample_var = float(np.var(obs, ddof=1))
    scale = sample_var if sample_var > 0 else 1.0
    init_mean = float(obs[0])
    init_var = 1e7 * scale
    mean_gap = float(np.mean(series.gaps[1:])) if series.n_sites > 1 else 1.0

    values = series.values.tolist()
    fwd_gaps = series.gaps[1:].tolist()

    evals = 0

    def objective(z):
        nonlocal evals
        evals += 1
        s2e = max(float(np.exp(z[0])), VARIANCE_FLOOR)
        s2n = max(float(np.exp(z[1])), VARIANCE_FLOOR)
        return -_loglik_fast(values, fwd_gaps, s2e, s2n, init_mean, init_var)

    starts = [
        np.array([log(se * scale), log(sn * scale / mean_gap)])
        for se, sn in _START_SHARES[: max(n_restarts, 1)]
    ]
    if n_restarts > len(_START_SHARES):
        rng = np.random.default_rng(seed)
        center = np.array([log(scale), log(scale / mean_gap)])
        for _ in range(n_restarts - len(_START_SHARES)):
            starts.append(center + rng.normal(scale=2.0, size=2))

    options = {"xatol": 1e-8, "fatol": 1e-12, "maxfev": 2000}
    best_z, best_neg = None, np.inf
    start_best = np.inf
    for z0 in starts:
        start_best = min(start_best, objective(z0))
        res = minimize(objective, z0, method="Nelder-Mead", options=options)
        if res.fun < best_neg:
            best_neg, best_z = res.fun, res.x
    res = minimize(objective, best_z, method="Nelder-Mead", options=options)
    if res.fun < best_neg:
        best_neg, best_z = res.fun, res.x

    params = LocalLevelParams(
        sigma2_eps=float(max(np.exp(best_z[0]), VARIANCE_FLOOR)),
        sigma2_eta=float(max(np.exp(best_z[1]), VARIANCE_FLOOR)),
        init_mean=init_mean,
        init_var=init_var,
    )
    return FitResult(
        params=params,
        log_likelihood=-best_neg,
        improved=best_neg < start_best,
        n_evaluations=evals,
    )


@dataclass
class ImputationResult:
    """Series values with missing entries replaced by smoothed levels."""

    values: np.ndarray
    imputed_index: np.ndarray
    imputed_variance: np.ndarray
    params: LocalLevelParams
    log_likelihood: float

    @property
    def n_imputed(self) -> int:
        return int(self.imputed_index.size)


def impute_series(series: OrderedSeries, n_restarts: int = 5, seed: int = 0) -> ImputationResult:
    """Fit by MLE, then replace missing values with their smoothed means."""
    fit = fit_mle(series, n_restarts=n_restarts, seed=seed)
    filt = kalman_filter(series, fit.params)
    smooth = kalman_smoother(filt, series)
    missing = np.flatnonzero(~series.observed_mask)
    out = series.values.copy()
    out[missing] = smooth.mean[missing]
    return ImputationResult(
        values=out,
        imputed_index=missing,
        imputed_variance=smooth.variance[missing],
        params=fit.params,
        log_likelihood=fit.log_likelihood,
    )
