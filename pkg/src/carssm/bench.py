"""Imputation benchmark: random masking, SMAPE scoring, baseline imputers.

Replicate r of a run draws its RNG seed as hash64(master_seed, r), computed
as the first 8 bytes (little-endian) of blake2b over the ASCII string
"<master_seed>:<r>". Within a replicate every method is scored on the same
held-out set, so comparisons are paired.
"""

from __future__ import annotations

import concurrent.futures
import csv
import hashlib
from dataclasses import dataclass

import numpy as np

from .geo import OrderedSeries
from .ssm import impute_series

BASELINE_METHODS = ("mean", "nearest_distance", "linear_interp")
STATE_SPACE_METHOD = "state_space"
ALL_METHODS = (STATE_SPACE_METHOD,) + BASELINE_METHODS


def derive_seed(master_seed: int, replicate: int) -> int:
    """Stable 64-bit per-replicate seed: blake2b("<master>:<r>")[:8]."""
    digest = hashlib.blake2b(f"{master_seed}:{replicate}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little")


@dataclass(frozen=True)
class MaskPlan:
    seed: int
    test_fraction: float
    heldout_indices: tuple
    heldout_values: tuple


def mask_random(series: OrderedSeries, fraction: float, seed: int):
    """Mask round(fraction * n_observed) observed positions uniformly at random.

    Returns the masked series and the plan needed to score imputations.
    Deterministic given the seed.
    """
    if not 0.0 < fraction < 1.0:
        raise ValueError("fraction must be in (0, 1)")
    observed = np.flatnonzero(series.observed_mask)
    if observed.size < 5:
        raise ValueError("need at least 5 observed values to mask")
    n_mask = int(round(fraction * observed.size))
    if n_mask < 1:
        raise ValueError("fraction masks no observations")
    if observed.size - n_mask < 3:
        raise ValueError("fraction would leave fewer than 3 observed values")
    rng = np.random.default_rng(seed)
    chosen = np.sort(rng.choice(observed, size=n_mask, replace=False))
    masked_values = series.values.copy()
    masked_values[chosen] = np.nan
    plan = MaskPlan(
        seed=seed,
        test_fraction=fraction,
        heldout_indices=tuple(int(i) for i in chosen),
        heldout_values=tuple(float(v) for v in series.values[chosen]),
    )
    return series.with_values(masked_values), plan


def smape(actual, imputed) -> float:
    """Symmetric mean absolute percentage error, on the 0-100 scale.

    (100/N) * sum |xhat - x| / (|xhat| + |x|); a pair where both values are
    exactly zero contributes nothing.
    """
    a = np.asarray(actual, dtype=float)
    b = np.asarray(imputed, dtype=float)
    if a.shape != b.shape:
        raise ValueError("actual and imputed must have equal length")
    if a.size == 0:
        raise ValueError("empty input")
    denom = np.abs(a) + np.abs(b)
    num = np.abs(b - a)
    terms = np.divide(num, denom, out=np.zeros_like(num), where=denom > 0)
    return float(100.0 * terms.mean())


def impute_baseline(series: OrderedSeries, method: str) -> np.ndarray:
    """Fill missing values by a simple comparator rule.

    mean: observed mean everywhere. nearest_distance: value of the observed
    site closest in distance (ties favour the smaller distance).
    linear_interp: linear in distance, constant beyond the observed hull.
    """
    if method not in BASELINE_METHODS:
        raise ValueError(f"unknown baseline method {method!r}")
    observed = series.observed_mask
    n_obs = int(observed.sum())
    if n_obs == 0:
        raise ValueError("no observed values to impute from")
    out = series.values.copy()
    missing = np.flatnonzero(~observed)
    if missing.size == 0:
        return out
    d_obs = series.distances[observed]
    v_obs = series.values[observed]
    if method == "mean":
        out[missing] = v_obs.mean()
    elif method == "nearest_distance":
        for i in missing:
            gaps = np.abs(d_obs - series.distances[i])
            best = np.flatnonzero(gaps == gaps.min())
            out[i] = v_obs[best[0]]  # ties: smaller distance wins (d_obs sorted)
    elif method == "linear_interp":
        if n_obs < 2:
            raise ValueError("linear_interp needs at least 2 observed values")
        out[missing] = np.interp(series.distances[missing], d_obs, v_obs)
    return out


def _impute_with(series: OrderedSeries, method: str) -> np.ndarray:
    if method == STATE_SPACE_METHOD:
        return impute_series(series).values
    return impute_baseline(series, method)


@dataclass
class BenchmarkReport:
    method: str
    split: str
    n_reps: int
    mean_smape: float
    sd_smape: float
    scores: list
    n_failed: int = 0

    @property
    def mean_smape_fraction(self) -> float:
        return self.mean_smape / 100.0


def split_label(test_fraction: float) -> str:
    test = int(round(test_fraction * 100))
    return f"{100 - test}/{test}"


def _mean_sd(scores) -> tuple:
    arr = np.asarray(scores, dtype=float)
    if arr.size == 0:
        return float("nan"), float("nan")
    mean = float(arr.mean())
    sd = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
    return mean, sd


def _run_replicate(series, methods, fractions, master_seed, replicate):
    """One mask/impute/score cycle; all methods share the replicate's masks."""
    seed = derive_seed(master_seed, replicate)
    results = {}
    for fraction in fractions:
        try:
            masked, plan = mask_random(series, fraction, seed)
        except ValueError as exc:
            for method in methods:
                results[(method, fraction)] = ("failed", str(exc))
            continue
        idx = np.array(plan.heldout_indices, dtype=np.intp)
        truth = np.array(plan.heldout_values)
        for method in methods:
            try:
                filled = _impute_with(masked, method)
                score = smape(truth, filled[idx])
            except Exception as exc:  # degenerate replicate: record, don't abort
                results[(method, fraction)] = ("failed", str(exc))
            else:
                results[(method, fraction)] = ("ok", score)
    return results


def run_benchmark(
    series: OrderedSeries,
    methods,
    splits,
    n_reps: int,
    master_seed: int,
    n_jobs: int = 1,
):
    """Repeated paired mask/impute/score cycles for each (method, split).

    splits are test fractions, e.g. (0.4, 0.3, 0.2) for the 60/40, 70/30 and
    80/20 protocols. Reports are deterministic given master_seed regardless
    of schedule: replicate seeds are derived, aggregation is by replicate
    index. Failed replicates are excluded from the summaries and counted.
    """
    if n_reps < 1:
        raise ValueError("n_reps must be >= 1")
    methods = list(methods)
    fractions = [float(f) for f in splits]
    for f in fractions:
        if not 0.0 < f < 1.0:
            raise ValueError(f"invalid split fraction {f}")

    if n_jobs > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=n_jobs) as pool:
            futures = [
                pool.submit(_run_replicate, series, methods, fractions, master_seed, r)
                for r in range(n_reps)
            ]
            per_rep = [f.result() for f in futures]
    else:
        per_rep = [
            _run_replicate(series, methods, fractions, master_seed, r) for r in range(n_reps)
        ]

    reports = []
    for method in methods:
        for fraction in fractions:
            scores, n_failed = [], 0
            for rep in per_rep:
                status, value = rep[(method, fraction)]
                if status == "ok":
                    scores.append(value)
                else:
                    n_failed += 1
            mean, sd = _mean_sd(scores)
            reports.append(
                BenchmarkReport(
                    method=method,
                    split=split_label(fraction),
                    n_reps=n_reps,
                    mean_smape=mean,
                    sd_smape=sd,
                    scores=scores,
                    n_failed=n_failed,
                )
            )
    return reports


BENCHMARK_COLUMNS = ("variable", "method", "split", "n_reps", "mean_smape",
                     "sd_smape", "mean_smape_fraction")


def write_benchmark_csv(rows, path, per_replicate_path=None) -> None:
    """Write (variable, report) pairs as the benchmark summary CSV."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(BENCHMARK_COLUMNS)
        for variable, report in rows:
            writer.writerow(
                [variable, report.method, report.split, report.n_reps,
                 repr(report.mean_smape), repr(report.sd_smape),
                 repr(report.mean_smape_fraction)]
            )
    if per_replicate_path is not None:
        with open(per_replicate_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["variable", "method", "split", "replicate", "smape"])
            for variable, report in rows:
                for r, score in enumerate(report.scores):
                    writer.writerow([variable, report.method, report.split, r, repr(score)])
