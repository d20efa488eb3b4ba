"""Network-driven volatility modeling with realized measures.

Conditional variances follow a recursion in own and network-neighbor
lagged realized measures; the package covers random network generation,
filtering, quasi-maximum-likelihood estimation (free-intercept and
moment-targeted), closed-form multistep forecasting, a high-frequency
diffusion simulator with noise-robust realized-measure construction,
QLIKE forecast evaluation against a network GARCH baseline, and a CLI.
"""

__version__ = "0.1.0"

from .errors import (
    ConvergenceError,
    DataError,
    EvaluationError,
    InvalidInputError,
    NheavyError,
)
from .estimation import (
    FitResult,
    OptimizerConfig,
    QllValue,
    feasible_start,
    filtered_at_fit,
    fit_one_step,
    fit_two_step,
    initial_level,
    qll_returns,
    qll_rm,
    sample_moments,
    sandwich_covariance,
    score_returns,
    score_rm,
)
from .evaluation import (
    BacktestReport,
    HarnessDesign,
    NgarchFit,
    NgarchParams,
    RmseTable,
    ngarch_filter_and_fit,
    ngarch_filtered,
    ngarch_predictor,
    nheavy_predictor,
    qlike,
    qlike_panel,
    rmse_harness,
    rolling_backtest,
    simulate_ngarch,
)
from .model import (
    BlockDynamics,
    ForecastResult,
    InnovationSpec,
    LatentPanels,
    NheavyParams,
    PanelSeries,
    StationarityReport,
    b_power,
    build_block_dynamics,
    check_stationarity,
    filter_panels,
    forecast,
    forecast_dyn,
    load_panel_csv,
    save_latents_csv,
    save_panel_csv,
    simulate_nheavy,
    stationary_means,
    targeting_intercepts,
)
from .network import (
    AdjacencyMatrix,
    NormalizedNetwork,
    analytic_density,
    density,
    gen_dyad,
    gen_powerlaw,
    gen_sbm,
    load_edges_csv,
    normalize,
    out_degrees,
    powerlaw_pmf,
    save_edges_csv,
)
from .realized import (
    DiffusionSpec,
    IntradayPanel,
    add_noise,
    build_panel,
    load_intraday_csv,
    msrv_weights,
    multiscale_rv,
    rv_naive,
    save_intraday_csv,
    simulate_diffusion,
)
from .rng import as_generator, spawn_seeds
