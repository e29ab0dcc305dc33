"""carssm: distance-ordered state-space imputation and multilevel CAR modeling."""

__version__ = "0.1.0"

from .bench import (  # noqa: F401
    BenchmarkReport,
    MaskPlan,
    impute_baseline,
    mask_random,
    run_benchmark,
    smape,
)
from .data import (  # noqa: F401
    Dataset,
    DesignTable,
    FacilityRecord,
    ZctaRecord,
    join_zcta,
    load_dataset,
    screen_missingness,
)
from .geo import OrderedSeries, haversine_km, make_ordered_series, strictify  # noqa: F401
from .graph import ZctaGraph, augment_islands, build_graph, logdet_precision  # noqa: F401
from .mcmc import (  # noqa: F401
    CarModelInput,
    McmcConfig,
    Priors,
    build_car_input,
    car_full_conditional,
    default_priors,
    run_mcmc,
    summarize_posterior,
)
from .report import export_zcta_aggregates, rse  # noqa: F401
from .ssm import (  # noqa: F401
    FilterOutput,
    LocalLevelParams,
    SmootherOutput,
    fit_mle,
    impute_series,
    kalman_filter,
    kalman_smoother,
)
