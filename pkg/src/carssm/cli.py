"""Command-line pipeline: impute -> fit -> summarize, plus helpers.

Subcommands
-----------
impute       state-space imputation of every covariate; writes completed tables
bench        masking/imputation benchmark with SMAPE reports
graph        build + augment the neighborhood matrix; writes diagnostics
fit          MCMC on the completed dataset; chains, summary, fitted values, RSE
export-maps  per-ZCTA aggregates of covariates and observed/fitted responses
simulate     synthetic dataset generation from user-specified true parameters

Every data-processing subcommand takes --config pointing at a TOML file (see
README for the key reference) and writes a <command>_manifest.json recording
what was executed. Errors print a machine-readable JSON record to stderr and
exit nonzero.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import __version__
from .bench import run_benchmark, write_benchmark_csv
from .config import ConfigError, RunConfig, load_config
from .data import (
    COVARIATE_NAMES,
    DataError,
    FPL_NAME,
    PERCENT_COVARIATES,
    ZctaRecord,
    join_zcta,
    load_dataset,
    screen_missingness,
    write_facility_table,
    write_zcta_table,
)
from .geo import make_ordered_series, ordered_series
from .graph import GraphError, augment_islands, build_graph, graph_from_distance_threshold
from .mcmc import (
    McmcConfig,
    McmcError,
    build_car_input,
    default_priors,
    run_mcmc,
    summarize_posterior,
)
from .report import (
    export_zcta_aggregates,
    rse,
    write_chains_csv,
    write_fitted_csv,
    write_summary_csv,
)
from .simulate import DEFAULT_TRUE_BETA, simulate_dataset
from .ssm import impute_series

_USER_ERRORS = (ConfigError, DataError, GraphError, McmcError, ValueError, KeyError, OSError)


def _write_manifest(cfg: RunConfig, command: str, executed: dict) -> None:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    record = {
        "command": command,
        "version": __version__,
        "seed": cfg.seed,
        "config": asdict(cfg),
        "executed": executed,
    }
    with open(out / f"{command}_manifest.json", "w") as fh:
        json.dump(record, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _load_joined(cfg: RunConfig):
    ds = load_dataset(cfg.facilities, cfg.zctas)
    screened = screen_missingness(ds, cfg.missingness_threshold)
    table = join_zcta(screened.dataset)
    return screened, table


def _read_edges(path):
    edges = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["zcta_a", "zcta_b"]:
            raise DataError(f"{path}: expected header zcta_a,zcta_b")
        for row in reader:
            if not row:
                continue
            if len(row) != 2:
                raise DataError(f"{path}: malformed edge row {row!r}")
            edges.append((row[0].strip(), row[1].strip()))
    return edges


def _build_graph_for(cfg: RunConfig, table):
    if cfg.adjacency_threshold_km is not None:
        adj = graph_from_distance_threshold(
            table.zcta_ids, table.zcta_lat, table.zcta_lon, cfg.adjacency_threshold_km
        )
        dropped = 0
    else:
        edges = _read_edges(cfg.adjacency)
        present = set(table.zcta_ids)
        kept = [(a, b) for a, b in edges if a in present and b in present]
        adj = build_graph(kept, table.zcta_ids)
        dropped = len(edges) - len(kept)
    graph = augment_islands(adj, table.zcta_ids, table.zcta_lat, table.zcta_lon)
    return graph, dropped


_CLAMP_RANGES = {name: (0.0, 100.0) for name in PERCENT_COVARIATES}
_CLAMP_RANGES["staff_count"] = (0.0, float("inf"))
_CLAMP_RANGES[FPL_NAME] = (0.0, float("inf"))


def cmd_impute(cfg: RunConfig) -> int:
    screened, table = _load_joined(cfg)
    centroid = (cfg.centroid_lat, cfg.centroid_lon)
    diagnostics = []
    imputed_cols = {}
    for name in COVARIATE_NAMES:
        col = table.columns[name]
        if not np.isnan(col).any():
            continue
        series = make_ordered_series(table, name, centroid, cfg.tie_epsilon_km)
        result = impute_series(series)
        filled = dict(zip(series.site_ids, result.values))
        lo, hi = _CLAMP_RANGES[name]
        values = np.array([filled[fid] for fid in table.facility_ids])
        n_clamped = int(np.sum((values < lo) | (values > hi)))
        imputed_cols[name] = np.clip(values, lo, hi)
        diagnostics.append(
            (name, result.params.sigma2_eps, result.params.sigma2_eta,
             result.log_likelihood, result.n_imputed, n_clamped,
             float(result.imputed_variance.mean()) if result.n_imputed else 0.0)
        )

    facilities = []
    for i, fac in enumerate(screened.dataset.facilities):
        covs = list(fac.covariates)
        for j, name in enumerate(COVARIATE_NAMES):
            if covs[j] is None:
                covs[j] = float(imputed_cols[name][i])
        facilities.append(replace(fac, covariates=tuple(covs)))

    # ZCTA-level FPL score, imputed along the ZCTA-centroid ordering if needed
    zctas = screened.dataset.zctas
    fpl_imputed = 0
    if any(z.fpl_score is None for z in zctas):
        series = ordered_series(
            [z.zcta_id for z in zctas],
            [z.centroid_latitude for z in zctas],
            [z.centroid_longitude for z in zctas],
            [np.nan if z.fpl_score is None else z.fpl_score for z in zctas],
            centroid=centroid,
            tie_epsilon_km=cfg.tie_epsilon_km,
        )
        result = impute_series(series)
        filled = dict(zip(series.site_ids, np.clip(result.values, 0.0, np.inf)))
        zctas = [
            z if z.fpl_score is not None else ZctaRecord(
                z.zcta_id, z.centroid_latitude, z.centroid_longitude,
                z.population, float(filled[z.zcta_id]))
            for z in zctas
        ]
        fpl_imputed = result.n_imputed
        diagnostics.append(
            (FPL_NAME, result.params.sigma2_eps, result.params.sigma2_eta,
             result.log_likelihood, result.n_imputed, 0,
             float(result.imputed_variance.mean()) if result.n_imputed else 0.0)
        )

    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_facility_table(facilities, out / "completed_facilities.csv")
    write_zcta_table(zctas, out / "completed_zctas.csv")
    with open(out / "impute_diagnostics.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["variable", "sigma2_eps", "sigma2_eta", "log_likelihood",
                         "n_imputed", "n_clamped", "mean_smoothed_variance"])
        for row in diagnostics:
            writer.writerow([row[0]] + [repr(float(v)) if isinstance(v, float) else v
                                        for v in row[1:]])
    _write_manifest(cfg, "impute", {
        "n_facilities": len(facilities),
        "n_screened_out": screened.n_removed,
        "variables_imputed": [d[0] for d in diagnostics],
        "n_fpl_imputed": fpl_imputed,
    })
    print(f"impute: {len(facilities)} facilities, "
          f"{sum(d[4] for d in diagnostics)} cells filled -> {out}")
    return 0


def cmd_bench(cfg: RunConfig) -> int:
    _, table = _load_joined(cfg)
    centroid = (cfg.centroid_lat, cfg.centroid_lon)
    variables = list(cfg.bench_variables) or list(COVARIATE_NAMES)
    rows = []
    for name in variables:
        series = make_ordered_series(table, name, centroid, cfg.tie_epsilon_km)
        reports = run_benchmark(
            series,
            methods=cfg.bench_methods,
            splits=cfg.bench_splits,
            n_reps=cfg.bench_n_reps,
            master_seed=cfg.seed,
            n_jobs=cfg.threads,
        )
        rows.extend((name, rep) for rep in reports)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    per_rep = out / "benchmark_replicates.csv" if cfg.bench_per_replicate else None
    write_benchmark_csv(rows, out / "benchmark.csv", per_rep)
    _write_manifest(cfg, "bench", {
        "n_reps": cfg.bench_n_reps,
        "variables": variables,
        "methods": list(cfg.bench_methods),
        "splits": [float(s) for s in cfg.bench_splits],
    })
    print(f"bench: {len(rows)} report rows -> {out / 'benchmark.csv'}")
    return 0


def cmd_graph(cfg: RunConfig) -> int:
    _, table = _load_joined(cfg)
    graph, n_dropped = _build_graph_for(cfg, table)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    repaired = {a for a, _ in graph.augmented_edges}
    with open(out / "graph_degrees.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["zcta_id", "degree", "island_repaired"])
        for i, zcta in enumerate(graph.zcta_ids):
            writer.writerow([zcta, int(graph.degrees[i]), int(zcta in repaired)])
    with open(out / "graph_eigenvalues.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["eigenvalue"])
        for lam in graph.laplacian_eigenvalues:
            writer.writerow([repr(float(lam))])
    _write_manifest(cfg, "graph", {
        "n_zctas": graph.n_zctas,
        "n_edges": int(graph.adjacency.nnz // 2),
        "n_augmented": len(graph.augmented_edges),
        "n_edges_dropped": n_dropped,
    })
    print(f"graph: K={graph.n_zctas}, {len(graph.augmented_edges)} islands repaired -> {out}")
    return 0


def cmd_fit(cfg: RunConfig) -> int:
    _, table = _load_joined(cfg)
    graph, _ = _build_graph_for(cfg, table)
    model = build_car_input(table, graph, standardize=cfg.standardize)
    priors = default_priors(model.X.shape[1], a=cfg.prior_a, b=cfg.prior_b,
                            beta_var=cfg.beta_prior_var)
    mcfg = McmcConfig(
        seed=cfg.seed,
        n_burnin=cfg.n_burnin,
        n_keep=cfg.n_keep,
        thin=cfg.thin,
        n_chains=cfg.n_chains,
        rho_step=cfg.rho_step,
        fix_rho=cfg.fix_rho,
        store_phi=cfg.store_phi,
    )
    chains = run_mcmc(model, priors, mcfg)
    summary = summarize_posterior(chains)

    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_chains_csv(chains, out / "chains.csv",
                     out / "phi.csv" if cfg.store_phi else None)
    write_summary_csv(summary, out / "summary.csv")
    write_fitted_csv(table, summary, out / "fitted.csv")

    obs = model.observed_rows
    fit_rse = rse(model.y[obs], summary.fitted[obs], model.zcta_index[obs])
    with open(out / "rse.txt", "w") as fh:
        fh.write(repr(fit_rse) + "\n")

    executed = chains.manifest()
    executed["rse"] = fit_rse
    _write_manifest(cfg, "fit", executed)
    print(f"fit: {chains.n_retained} retained draws "
          f"(burn-in {chains.n_burnin}), RSE={fit_rse:.4f} -> {out}")
    return 0


def cmd_export_maps(cfg: RunConfig, fitted_path=None) -> int:
    _, table = _load_joined(cfg)
    out = Path(cfg.output_dir)
    path = Path(fitted_path) if fitted_path else out / "fitted.csv"
    fitted_by_id = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            fitted_by_id[row["facility_id"]] = float(row["fitted_log_shr"])
    missing = [fid for fid in table.facility_ids if fid not in fitted_by_id]
    if missing:
        raise DataError(f"{path}: no fitted value for facilities {missing[:5]}")
    fitted = np.array([fitted_by_id[fid] for fid in table.facility_ids])
    out.mkdir(parents=True, exist_ok=True)
    export_zcta_aggregates(table, fitted, out / "zcta_aggregates.csv")
    _write_manifest(cfg, "export-maps", {"n_zctas": table.n_zctas})
    print(f"export-maps: {table.n_zctas} ZCTA rows -> {out / 'zcta_aggregates.csv'}")
    return 0


def cmd_simulate(args) -> int:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    beta = DEFAULT_TRUE_BETA if args.beta is None else tuple(
        float(v) for v in args.beta.split(",")
    )
    dataset, edges, truth = simulate_dataset(
        k=args.k,
        seed=args.seed,
        m_min=args.m_min,
        m_max=args.m_max,
        beta=beta,
        rho=args.rho,
        tau2=args.tau2,
        nu2=args.nu2,
        cov_missing_rate=args.cov_missing_rate,
        shr_missing_rate=args.shr_missing_rate,
    )
    write_facility_table(dataset.facilities, out / "facilities.csv")
    write_zcta_table(dataset.zctas, out / "zctas.csv")
    with open(out / "adjacency.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["zcta_a", "zcta_b"])
        for a, b in edges:
            writer.writerow([a, b])
    with open(out / "truth.json", "w") as fh:
        json.dump(truth, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"simulate: K={args.k}, {truth['n_facilities']} facilities -> {out}")
    return 0


def _add_config_options(parser):
    parser.add_argument("--config", required=True, help="path to the TOML run config")
    parser.add_argument("--seed", type=int, default=None,
                        help="override the master seed (wins over ARTIFACT_SEED)")
    parser.add_argument("--output-dir", default=None, help="override the output directory")
    parser.add_argument("--threads", type=int, default=None,
                        help="max parallel workers for benchmark replicates")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="carssm",
        description="Distance-ordered state-space imputation and multilevel CAR fitting.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    for name, descr in [
        ("impute", "impute missing covariates with the state-space smoother"),
        ("bench", "run the masking/imputation benchmark"),
        ("graph", "build and augment the ZCTA neighborhood matrix"),
        ("fit", "fit the two-level spatial model by MCMC"),
    ]:
        p = sub.add_parser(name, help=descr)
        _add_config_options(p)

    p = sub.add_parser("export-maps", help="write per-ZCTA choropleth-ready aggregates")
    _add_config_options(p)
    p.add_argument("--fitted", default=None, help="fitted.csv from a previous fit")

    p = sub.add_parser("simulate", help="generate a synthetic dataset with known truth")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--k", type=int, required=True, help="number of ZCTAs")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--m-min", type=int, default=1, help="min facilities per ZCTA")
    p.add_argument("--m-max", type=int, default=3, help="max facilities per ZCTA")
    p.add_argument("--beta", default=None,
                   help="comma-separated true coefficients (intercept first)")
    p.add_argument("--rho", type=float, default=0.1)
    p.add_argument("--tau2", type=float, default=0.2)
    p.add_argument("--nu2", type=float, default=0.05)
    p.add_argument("--cov-missing-rate", type=float, default=0.2)
    p.add_argument("--shr-missing-rate", type=float, default=0.01)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "simulate":
            return cmd_simulate(args)
        cfg = load_config(args.config, seed_flag=args.seed,
                          output_dir_flag=args.output_dir, threads_flag=args.threads)
        if args.command == "impute":
            return cmd_impute(cfg)
        if args.command == "bench":
            return cmd_bench(cfg)
        if args.command == "graph":
            return cmd_graph(cfg)
        if args.command == "fit":
            return cmd_fit(cfg)
        if args.command == "export-maps":
            return cmd_export_maps(cfg, fitted_path=args.fitted)
        raise ValueError(f"unknown command {args.command!r}")
    except _USER_ERRORS as exc:
        json.dump({"error": type(exc).__name__, "message": str(exc)}, sys.stderr)
        sys.stderr.write("\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
