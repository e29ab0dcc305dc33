"""Run configuration: a TOML file, an environment override, and CLI flags.

Precedence for the master seed: --seed flag > ARTIFACT_SEED env var > config
file. The config must supply a seed somewhere; there is no wall-clock
default, so runs are reproducible by construction.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .bench import ALL_METHODS
from .geo import DEFAULT_CENTROID, DEFAULT_TIE_EPSILON_KM


class ConfigError(Exception):
    """Raised with every detected problem listed, one per line."""


@dataclass
class RunConfig:
    facilities: str = "facilities.csv"
    zctas: str = "zctas.csv"
    adjacency: str = "adjacency.csv"
    output_dir: str = "out"
    seed: int = None
    centroid_lat: float = DEFAULT_CENTROID[0]
    centroid_lon: float = DEFAULT_CENTROID[1]
    tie_epsilon_km: float = DEFAULT_TIE_EPSILON_KM
    # when set, adjacency is built from centroid distances instead of the
    # edge-list file (synthetic experiments)
    adjacency_threshold_km: float = None
    missingness_threshold: float = 0.8
    # benchmark settings
    bench_methods: tuple = ALL_METHODS
    bench_splits: tuple = (0.4, 0.3, 0.2)
    bench_n_reps: int = 1000
    bench_variables: tuple = ()  # empty: all six facility covariates
    bench_per_replicate: bool = False
    # MCMC settings
    n_burnin: int = 20000
    n_keep: int = 50000
    thin: int = 1
    n_chains: int = 1
    rho_step: float = 1.0
    fix_rho: float = None
    store_phi: bool = False
    standardize: bool = False
    prior_a: float = 1.0
    prior_b: float = 0.01
    beta_prior_var: float = 1e5
    threads: int = 1

    def validate(self) -> None:
        problems = []
        paths = [self.facilities, self.zctas, self.adjacency, self.output_dir]
        if len(set(paths)) != len(paths):
            problems.append("referenced paths must be distinct")
        if self.seed is None:
            problems.append("seed is required (config [seed], ARTIFACT_SEED or --seed)")
        if not -90 <= self.centroid_lat <= 90 or not -180 <= self.centroid_lon <= 180:
            problems.append("centroid out of range")
        if self.tie_epsilon_km <= 0:
            problems.append("tie_epsilon_km must be positive")
        if self.adjacency_threshold_km is not None and self.adjacency_threshold_km <= 0:
            problems.append("adjacency_threshold_km must be positive")
        if not 0 <= self.missingness_threshold <= 1:
            problems.append("missingness_threshold must be in [0, 1]")
        for m in self.bench_methods:
            if m not in ALL_METHODS:
                problems.append(f"unknown benchmark method {m!r}")
        for s in self.bench_splits:
            if not 0 < s < 1:
                problems.append(f"benchmark split {s} not in (0, 1)")
        if self.bench_n_reps < 1:
            problems.append("bench_n_reps must be >= 1")
        if self.n_burnin < 1 or self.n_keep < 1 or self.thin < 1 or self.n_chains < 1:
            problems.append("MCMC iteration counts must be >= 1")
        if self.fix_rho is not None and not 0 <= self.fix_rho < 1:
            problems.append("fix_rho must be in [0, 1)")
        if self.prior_a <= 0 or self.prior_b <= 0:
            problems.append("prior_a and prior_b must be positive")
        if self.beta_prior_var <= 0:
            problems.append("beta_prior_var must be positive")
        if self.threads < 1:
            problems.append("threads must be >= 1")
        if problems:
            raise ConfigError("invalid configuration:\n" + "\n".join(f"- {p}" for p in problems))


_KEY_MAP = {
    ("paths", "facilities"): "facilities",
    ("paths", "zctas"): "zctas",
    ("paths", "adjacency"): "adjacency",
    ("paths", "output_dir"): "output_dir",
    ("geo", "centroid_lat"): "centroid_lat",
    ("geo", "centroid_lon"): "centroid_lon",
    ("geo", "tie_epsilon_km"): "tie_epsilon_km",
    ("geo", "adjacency_threshold_km"): "adjacency_threshold_km",
    ("screen", "missingness_threshold"): "missingness_threshold",
    ("bench", "methods"): "bench_methods",
    ("bench", "splits"): "bench_splits",
    ("bench", "n_reps"): "bench_n_reps",
    ("bench", "variables"): "bench_variables",
    ("bench", "per_replicate"): "bench_per_replicate",
    ("mcmc", "n_burnin"): "n_burnin",
    ("mcmc", "n_keep"): "n_keep",
    ("mcmc", "thin"): "thin",
    ("mcmc", "n_chains"): "n_chains",
    ("mcmc", "rho_step"): "rho_step",
    ("mcmc", "fix_rho"): "fix_rho",
    ("mcmc", "store_phi"): "store_phi",
    ("mcmc", "standardize"): "standardize",
    ("mcmc", "prior_a"): "prior_a",
    ("mcmc", "prior_b"): "prior_b",
    ("mcmc", "beta_prior_var"): "beta_prior_var",
}


def load_config(path, seed_flag=None, output_dir_flag=None, threads_flag=None) -> RunConfig:
    """Read a TOML config and apply flag/env overrides."""
    with open(path, "rb") as fh:
        raw = tomllib.load(fh)

    cfg = RunConfig()
    problems = []
    if "seed" in raw:
        cfg.seed = int(raw.pop("seed"))
    if "threads" in raw:
        cfg.threads = int(raw.pop("threads"))
    for section, table in list(raw.items()):
        if not isinstance(table, dict):
            problems.append(f"unknown top-level key {section!r}")
            continue
        for key, value in table.items():
            attr = _KEY_MAP.get((section, key))
            if attr is None:
                problems.append(f"unknown config key [{section}] {key}")
                continue
            if isinstance(value, list):
                value = tuple(value)
            setattr(cfg, attr, value)
    if problems:
        raise ConfigError("invalid configuration:\n" + "\n".join(f"- {p}" for p in problems))

    env_seed = os.environ.get("ARTIFACT_SEED")
    if env_seed is not None:
        try:
            cfg.seed = int(env_seed)
        except ValueError:
            raise ConfigError(f"ARTIFACT_SEED is not an integer: {env_seed!r}") from None
    if seed_flag is not None:
        cfg.seed = int(seed_flag)
    if output_dir_flag is not None:
        cfg.output_dir = output_dir_flag
    if threads_flag is not None:
        cfg.threads = int(threads_flag)
    cfg.validate()
    return cfg
