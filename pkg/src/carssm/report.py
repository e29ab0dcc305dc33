"""Fit metrics and delimited outputs for the pipeline."""

from __future__ import annotations

import csv

import numpy as np

from .data import DesignTable
from .mcmc import McmcChains, PosteriorSummary


def rse(y, y_hat, zcta_index) -> float:
    """Relative squared error against the within-area-mean persistence model.

    sum (y - y_hat)^2 / sum (y - ybar_area)^2. Rows in single-facility areas
    contribute zero to the denominator (their value is its own area mean).
    """
    y = np.asarray(y, dtype=float)
    y_hat = np.asarray(y_hat, dtype=float)
    zcta_index = np.asarray(zcta_index)
    if y.shape != y_hat.shape or y.shape != zcta_index.shape:
        raise ValueError("y, y_hat and zcta_index must have equal length")
    k = int(zcta_index.max()) + 1 if y.size else 0
    counts = np.bincount(zcta_index, minlength=k)
    sums = np.bincount(zcta_index, weights=y, minlength=k)
    area_mean = np.divide(sums, counts, out=np.zeros_like(sums), where=counts > 0)
    denom = float(np.sum((y - area_mean[zcta_index]) ** 2))
    if denom == 0.0:
        raise ValueError("persistence baseline degenerate: every area has a single value")
    num = float(np.sum((y - y_hat) ** 2))
    return num / denom


def export_zcta_aggregates(table: DesignTable, fitted, path) -> None:
    """Per-ZCTA means of covariates, observed log(SHR) and fitted log(SHR).

    One row per ZCTA in the design table; choropleth-ready. Cells with no
    observed value in a ZCTA are left empty.
    """
    fitted = np.asarray(fitted, dtype=float)
    if fitted.size != table.n_rows:
        raise ValueError("fitted values not aligned to table rows")
    k = table.n_zctas
    idx = table.zcta_index

    def zcta_means(values):
        present = np.isfinite(values)
        counts = np.bincount(idx[present], minlength=k)
        sums = np.bincount(idx[present], weights=values[present], minlength=k)
        out = np.full(k, np.nan)
        np.divide(sums, counts, out=out, where=counts > 0)
        return out

    columns = {name: zcta_means(table.columns[name]) for name in table.covariate_names}
    shr = table.columns["shr"]
    log_shr = np.where(np.isfinite(shr) & (shr > 0), np.log(np.maximum(shr, 1e-300)), np.nan)
    columns["observed_log_shr"] = zcta_means(log_shr)
    columns["fitted_log_shr"] = zcta_means(fitted)

    header = ["zcta_id", "n_facilities"] + list(columns)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        counts = np.bincount(idx, minlength=k)
        for i, zcta in enumerate(table.zcta_ids):
            row = [zcta, int(counts[i])]
            for name in columns:
                v = columns[name][i]
                row.append("" if not np.isfinite(v) else repr(float(v)))
            writer.writerow(row)


def write_chains_csv(chains: McmcChains, path, phi_path=None) -> None:
    """One row per retained draw: beta components, tau2, nu2, rho."""
    header = list(chains.beta_names) + ["tau2", "nu2", "rho"]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(chains.n_retained):
            row = [repr(float(v)) for v in chains.beta[i]]
            row += [repr(float(chains.tau2[i])), repr(float(chains.nu2[i])),
                    repr(float(chains.rho[i]))]
            writer.writerow(row)
    if phi_path is not None and chains.phi is not None:
        with open(phi_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow([f"phi_{j}" for j in range(chains.phi.shape[1])])
            for i in range(chains.phi.shape[0]):
                writer.writerow([repr(float(v)) for v in chains.phi[i]])


def write_summary_csv(summary: PosteriorSummary, path) -> None:
    """Table-3-style layout: parameter, mean, q2.5, q97.5."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["parameter", "mean", "q2.5", "q97.5"])
        for name, m, lo, hi in zip(summary.names, summary.mean, summary.q025, summary.q975):
            writer.writerow([name, repr(float(m)), repr(float(lo)), repr(float(hi))])


def write_fitted_csv(table: DesignTable, summary: PosteriorSummary, path) -> None:
    """Per-facility observed response, fitted mean, and predictive intervals
    for rows whose response was imputed."""
    miss = {int(r): i for i, r in enumerate(summary.missing_rows)}
    shr = table.columns["shr"]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["facility_id", "zcta_id", "observed_log_shr", "fitted_log_shr",
                         "imputed_mean", "imputed_q2.5", "imputed_q97.5"])
        for i in range(table.n_rows):
            observed = ""
            if np.isfinite(shr[i]) and shr[i] > 0:
                observed = repr(float(np.log(shr[i])))
            row = [table.facility_ids[i], table.zcta_of_row[i], observed,
                   repr(float(summary.fitted[i]))]
            if i in miss:
                j = miss[i]
                row += [repr(float(summary.missing_mean[j])),
                        repr(float(summary.missing_q025[j])),
                        repr(float(summary.missing_q975[j]))]
            else:
                row += ["", "", ""]
            writer.writerow(row)
