"""Forecast evaluation: QLIKE loss, network GARCH comparator, rolling and
fixed-window backtests, and the Monte Carlo RMSE harness that runs the full
network -> diffusion -> noise -> realized-measure -> fit pipeline."""

import csv
import json
from dataclasses import dataclass

import numpy as np

from .errors import (
    ConvergenceError,
    EvaluationError,
    InvalidInputError,
    NheavyError,
)
from .estimation import (
    OptimizerConfig,
    QllValue,
    _fit_equation,
    _filter_grad_free,
    _filter_grad_targeted,
    fit_one_step,
    fit_two_step,
    initial_level,
)
from .model import NheavyParams, PanelSeries, _filter_recursion
from .network import (
    NormalizedNetwork,
    density,
    gen_dyad,
    gen_powerlaw,
    gen_sbm,
    normalize,
)
from .rng import as_generator, spawn_seeds

DEFAULT_FLOOR = 1e-12

DEFAULT_INIT_NGARCH = (0.01, 0.05, 0.05, 0.85)
DEFAULT_INIT_NGARCH3 = (0.05, 0.05, 0.85)


def qlike(r2_realized: float, sigma2_pred: float, floor: float = DEFAULT_FLOOR) -> float:
    """QLIKE loss x/p - log(x/p) - 1 for realized x and predictor p.

    Zero exactly when x = p, positive otherwise.  A realized value below
    the floor is replaced by the floor (the log is undefined at zero);
    callers that need the number of floored observations should use
    qlike_panel.
    """
    if not sigma2_pred > 0:
        raise InvalidInputError("predictor variance must be positive")
    if r2_realized < 0:
        raise InvalidInputError("realized squared return must be nonnegative")
    x = max(r2_realized, floor)
    ratio = x / sigma2_pred
    return float(ratio - np.log(ratio) - 1.0)


def qlike_panel(r2: np.ndarray, sigma2: np.ndarray, floor: float = DEFAULT_FLOOR):
    """Elementwise QLIKE with floor accounting; returns (losses, floor_hits)."""
    r2 = np.asarray(r2, dtype=float)
    sigma2 = np.asarray(sigma2, dtype=float)
    if (sigma2 <= 0).any():
        raise InvalidInputError("predictor variances must be positive")
    if (r2 < 0).any():
        raise InvalidInputError("realized squared returns must be nonnegative")
    hits = int((r2 < floor).sum())
    ratio = np.maximum(r2, floor) / sigma2
    return ratio - np.log(ratio) - 1.0, hits


@dataclass(frozen=True)
class NgarchParams:
    """Return-driven network GARCH coefficients: conditional variance
    h_t = omega + alpha r2_{t-1} + lam (W r2)_{t-1} + beta h_{t-1}."""

    omega: float
    alpha: float
    lam: float
    beta: float

    @property
    def vec(self) -> np.ndarray:
        return np.array([self.omega, self.alpha, self.lam, self.beta])

    def validate(self) -> "NgarchParams":
        v = self.vec
        if not np.isfinite(v).all() or (v < 0).any():
            raise InvalidInputError("coefficients must be finite and nonnegative")
        if not self.alpha + self.lam + self.beta < 1:
            raise InvalidInputError(
                f"alpha + lambda + beta = {self.alpha + self.lam + self.beta:.4f} "
                "must be < 1 for stationarity")
        return self


@dataclass
class NgarchFit:
    """Single-equation QMLE result for the network GARCH comparator."""

    method: str
    vec: np.ndarray
    param_names: list
    qll: QllValue
    cov: np.ndarray
    se: np.ndarray
    kappa2: float
    converged: bool
    iterations: dict
    n_days: int
    n_assets: int
    intercept: np.ndarray = None
    moment_targets: dict = None

    def params(self) -> NgarchParams:
        if self.method != "one-step":
            raise InvalidInputError("full NgarchParams only exist for one-step fits")
        return NgarchParams(*map(float, self.vec))


def simulate_ngarch(params: NgarchParams, net: NormalizedNetwork, t_len: int,
                    seed=None, burn_in: int = 500):
    """Simulate squared returns r2 = h * z^2 with standard normal z; returns
    (r2, h) arrays of shape (t_len, n) after discarding burn_in days."""
    params.validate()
    if t_len < 1 or burn_in < 0:
        raise InvalidInputError("t_len must be positive and burn_in nonnegative")
    rng = as_generator(seed)
    n = net.n
    steps = t_len + burn_in
    z2 = rng.standard_normal((steps, n)) ** 2
    h = np.empty((steps, n))
    r2 = np.empty((steps, n))
    h[0] = params.omega / (1.0 - params.alpha - params.lam - params.beta)
    r2[0] = h[0] * z2[0]
    for t in range(1, steps):
        h[t] = (params.omega + params.alpha * r2[t - 1]
                + params.lam * (net.w @ r2[t - 1]) + params.beta * h[t - 1])
        r2[t] = h[t] * z2[t]
    return r2[burn_in:], h[burn_in:]


def ngarch_filter_and_fit(panel: PanelSeries, net: NormalizedNetwork,
                          init_guess=None, config: OptimizerConfig = None,
                          method: str = "one-step", strict: bool = False) -> NgarchFit:
    """QMLE of the return-driven network GARCH recursion.

    method="one-step" fits (omega, alpha, lam, beta) freely; "two-step"
    pins the intercept at (1 - alpha - beta) mu - lam W mu with mu the
    per-asset sample mean of squared returns, then fits the triple.
    """
    if method not in ("one-step", "two-step"):
        raise InvalidInputError("method must be 'one-step' or 'two-step'")
    config = config or OptimizerConfig()
    if panel.t_len < 2:
        raise InvalidInputError("need at least 2 days to fit")
    init_lvl = initial_level(panel.r2)
    mu = panel.r2.mean(axis=0)
    if (mu <= 0).any():
        raise InvalidInputError("sample mean of squared returns must be positive per asset")

    if method == "one-step":
        vec0 = np.asarray(DEFAULT_INIT_NGARCH if init_guess is None else init_guess,
                          dtype=float)
        if vec0.shape != (4,):
            raise InvalidInputError("one-step initial guess must have 4 entries")
        eq = _fit_equation(net, panel.r2, panel.r2, init_lvl, 1.0, vec0, config)
        names = ["omega", "alpha", "lambda", "beta"]
        intercept = None
        targets = None
    else:
        vec0 = np.asarray(DEFAULT_INIT_NGARCH3 if init_guess is None else init_guess,
                          dtype=float)
        if vec0.shape != (3,):
            raise InvalidInputError("two-step initial guess must have 3 entries")
        w_mu = net.w @ mu
        targeting = (mu.copy(), np.column_stack([-mu, -w_mu, -mu]))
        eq = _fit_equation(net, panel.r2, panel.r2, init_lvl, 1.0, vec0, config,
                           targeting=targeting)
        names = ["alpha", "lambda", "beta"]
        alpha, lam, beta = eq.vec
        intercept = (1.0 - alpha - beta) * mu - lam * w_mu
        targets = {"mu": mu}

    cov, se, kappa2, _ = _ngarch_sandwich(eq.vec, panel, net, method, mu)
    fit = NgarchFit(
        method=method, vec=eq.vec, param_names=names, qll=eq.qll,
        cov=cov, se=se, kappa2=kappa2,
        converged=eq.converged,
        iterations={"returns": eq.iterations, "fallback": eq.used_fallback,
                    "grad_max": eq.grad_max},
        n_days=panel.t_len, n_assets=panel.n,
        intercept=intercept, moment_targets=targets,
    )
    if strict and not fit.converged:
        raise ConvergenceError(
            f"network GARCH fit did not converge (max gradient {eq.grad_max:.2e})")
    return fit


def _ngarch_sandwich(vec, panel, net, method, mu):
    init_lvl = initial_level(panel.r2)
    if method == "one-step":
        h, gh = _filter_grad_free(vec, net, panel.r2, init_lvl)
    else:
        w_mu = net.w @ mu
        h, gh, _ = _filter_grad_targeted(vec, net, panel.r2, init_lvl,
                                         mu, np.column_stack([-mu, -w_mu, -mu]))
    t_len, n = h.shape
    hb, gb = h[1:], gh[1:]
    sig = np.einsum("tn,tni,tnj->ij", hb ** -2.0, gb, gb) / (n * (t_len - 1))
    k2 = float(np.mean((panel.r2[1:] / hb) ** 2))
    used_pinv = False
    try:
        sig_inv = np.linalg.solve(sig, np.eye(sig.shape[0]))
        if not np.isfinite(sig_inv).all():
            raise np.linalg.LinAlgError
    except np.linalg.LinAlgError:
        sig_inv = np.linalg.pinv(sig)
        used_pinv = True
    cov = (k2 - 1.0) * sig_inv / (n * t_len)
    cov = 0.5 * (cov + cov.T)
    se = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    return cov, se, k2, used_pinv


def ngarch_filtered(fit: NgarchFit, panel: PanelSeries,
                    net: NormalizedNetwork) -> np.ndarray:
    """Filtered conditional variances at the fitted coefficients."""
    if fit.method == "one-step":
        intercept = fit.vec[0]
        alpha, lam, beta = fit.vec[1:]
    else:
        intercept = fit.intercept
        alpha, lam, beta = fit.vec
    return _filter_recursion(intercept, alpha, lam, beta, net, panel.r2,
                             initial_level(panel.r2))


# ---------------------------------------------------------------------------
# forecasting from an origin

def _nheavy_coefs(fit):
    """Intercepts and slopes from either a FitResult or NheavyParams."""
    if isinstance(fit, NheavyParams):
        return ((fit.omega, fit.alpha, fit.lam, fit.beta),
                (fit.omega_r, fit.alpha_r, fit.lam_r, fit.beta_r))
    if fit.method == "one-step":
        return (tuple(fit.phi), tuple(fit.phi_r))
    c_r, c_m = fit.intercepts["r"], fit.intercepts["rm"]
    return ((c_r,) + tuple(fit.phi), (c_m,) + tuple(fit.phi_r))


def nheavy_predictor(fit, net: NormalizedNetwork, panel: PanelSeries,
                     origin: int, horizon: int) -> np.ndarray:
    """Variance forecast for day origin + horizon given data through origin.

    The first step is exact (the realized measure at the origin is known);
    further steps iterate the conditional-mean map, replacing future
    realized measures by their forecasts.  Filtering starts from the day-1
    level rule applied to rows [0, origin].
    """
    if not 0 <= origin < panel.t_len:
        raise InvalidInputError("origin out of range")
    if horizon < 1:
        raise InvalidInputError("horizon must be >= 1")
    (c_r, a, l, b), (c_m, a_r, l_r, b_r) = _nheavy_coefs(fit)
    sub = panel.window(0, origin + 1)
    h = _filter_recursion(c_r, a, l, b, net, sub.rm, initial_level(sub.r2))
    m = _filter_recursion(c_m, a_r, l_r, b_r, net, sub.rm, initial_level(sub.rm))
    return _nheavy_iterate(c_r, a, l, b, c_m, a_r, l_r, b_r, net,
                           sub.rm[-1], h[-1], m[-1], horizon)


def _nheavy_iterate(c_r, a, l, b, c_m, a_r, l_r, b_r, net, rm_t, h_t, mu_t, horizon):
    w_rm = net.w @ rm_t
    h_next = c_r + a * rm_t + l * w_rm + b * h_t
    mu_next = c_m + a_r * rm_t + l_r * w_rm + b_r * mu_t
    for _ in range(horizon - 1):
        w_mu = net.w @ mu_next
        h_next = c_r + a * mu_next + l * w_mu + b * h_next
        mu_next = c_m + a_r * mu_next + l_r * w_mu + b_r * mu_next
    return h_next


def ngarch_predictor(fit, net: NormalizedNetwork, panel: PanelSeries,
                     origin: int, horizon: int) -> np.ndarray:
    """Network GARCH variance forecast for day origin + horizon; future
    squared returns are replaced by their conditional variances."""
    if not 0 <= origin < panel.t_len:
        raise InvalidInputError("origin out of range")
    if horizon < 1:
        raise InvalidInputError("horizon must be >= 1")
    if isinstance(fit, NgarchParams):
        c, alpha, lam, beta = fit.omega, fit.alpha, fit.lam, fit.beta
    elif fit.method == "one-step":
        c, (alpha, lam, beta) = fit.vec[0], fit.vec[1:]
    else:
        c, (alpha, lam, beta) = fit.intercept, fit.vec
    r2 = panel.r2[:origin + 1]
    h = _filter_recursion(c, alpha, lam, beta, net, r2, initial_level(r2))
    r2_t = r2[-1]
    h_next = c + alpha * r2_t + lam * (net.w @ r2_t) + beta * h[-1]
    for _ in range(horizon - 1):
        h_next = c + alpha * h_next + lam * (net.w @ h_next) + beta * h_next
    return h_next


# ---------------------------------------------------------------------------
# backtests

MODEL_CHOICES = ("nheavy-one-step", "nheavy-two-step",
                 "ngarch-one-step", "ngarch-two-step", "foresight")
PROTOCOL_CHOICES = ("rolling", "fixed")


@dataclass(frozen=True)
class BacktestReport:
    model: str
    protocol: str
    horizon: int
    window_len: int
    per_asset: np.ndarray
    overall: float
    n_origins: int
    floor_hits: int

    def to_json(self) -> str:
        return json.dumps({
            "model": self.model,
            "protocol": self.protocol,
            "horizon": self.horizon,
            "window_len": self.window_len,
            "qlike_per_asset": self.per_asset.tolist(),
            "qlike_overall": self.overall,
            "n_origins": self.n_origins,
            "floor_hits": self.floor_hits,
        }, indent=2)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["asset", "qlike"])
            for i, v in enumerate(self.per_asset):
                writer.writerow([i, "%.17g" % v])
            writer.writerow(["overall", "%.17g" % self.overall])


def _fit_for_model(model_spec, panel, net, config, init_guess):
    if model_spec == "nheavy-one-step":
        return fit_one_step(panel, net, init_guess=init_guess, config=config)
    if model_spec == "nheavy-two-step":
        return fit_two_step(panel, net, init_guess=init_guess, config=config)
    if model_spec == "ngarch-one-step":
        return ngarch_filter_and_fit(panel, net, init_guess=init_guess,
                                     config=config, method="one-step")
    if model_spec == "ngarch-two-step":
        return ngarch_filter_and_fit(panel, net, init_guess=init_guess,
                                     config=config, method="two-step")
    raise InvalidInputError(f"unknown model {model_spec!r}")


def _predict_for_model(model_spec, fit, net, panel, origin, horizon):
    if model_spec.startswith("nheavy"):
        return nheavy_predictor(fit, net, panel, origin, horizon)
    return ngarch_predictor(fit, net, panel, origin, horizon)


def rolling_backtest(panel: PanelSeries, net: NormalizedNetwork, model_spec: str,
                     window_len: int, horizon: int = 1, protocol: str = "rolling",
                     config: OptimizerConfig = None, init_guess=None,
                     floor: float = DEFAULT_FLOOR) -> BacktestReport:
    """Out-of-sample QLIKE evaluation.

    For each origin t with a full window of data, forecast the variance of
    day t + horizon and score it against the realized squared return.
    protocol="rolling" refits on each window [t - window_len + 1, t];
    protocol="fixed" fits once on the first window_len days and reuses
    those estimates for every origin.  model_spec "foresight" predicts the
    realized value itself and is a zero-loss plumbing check.  The number of
    scored origins is T - window_len - horizon + 1.
    """
    if protocol not in PROTOCOL_CHOICES:
        raise InvalidInputError(f"protocol must be one of {PROTOCOL_CHOICES}")
    if model_spec not in MODEL_CHOICES:
        raise InvalidInputError(f"model_spec must be one of {MODEL_CHOICES}")
    if window_len < 2 or horizon < 1:
        raise InvalidInputError("window_len must be >= 2 and horizon >= 1")
    if window_len + horizon > panel.t_len:
        raise InvalidInputError(
            f"window_len + horizon = {window_len + horizon} exceeds T = {panel.t_len}")

    n_origins = panel.t_len - window_len - horizon + 1
    loss_sum = np.zeros(panel.n)
    hits = 0

    fixed_fit = None
    if model_spec != "foresight" and protocol == "fixed":
        fixed_fit = _fit_for_model(model_spec, panel.window(0, window_len), net,
                                   config, init_guess)

    for i in range(n_origins):
        origin = window_len - 1 + i
        target = panel.r2[origin + horizon]
        if model_spec == "foresight":
            pred = np.maximum(target, floor)
        elif protocol == "rolling":
            sub = panel.window(origin - window_len + 1, origin + 1)
            fit = _fit_for_model(model_spec, sub, net, config, init_guess)
            pred = _predict_for_model(model_spec, fit, net, sub,
                                      sub.t_len - 1, horizon)
        else:
            pred = _predict_for_model(model_spec, fixed_fit, net, panel,
                                      origin, horizon)
        losses, h = qlike_panel(target, pred, floor)
        loss_sum += losses
        hits += h

    per_asset = loss_sum / n_origins
    return BacktestReport(model=model_spec, protocol=protocol, horizon=horizon,
                          window_len=window_len, per_asset=per_asset,
                          overall=float(per_asset.mean()), n_origins=n_origins,
                          floor_hits=hits)


# ---------------------------------------------------------------------------
# Monte Carlo RMSE harness

GENERATOR_CHOICES = ("dyad", "powerlaw", "sbm")
ESTIMATOR_CHOICES = ("one-step", "two-step", "degenerate")


@dataclass(frozen=True)
class HarnessDesign:
    """One column of an RMSE table: data-generating settings plus the
    reference parameter vector theta0 the estimates are compared against."""

    generator: str
    n: int
    t_len: int
    m_ticks: int
    theta0: tuple
    q_reps: int
    estimator: str = "one-step"
    gen_alpha: float = 2.5
    gen_k: int = 3
    kappa: float = 0.5
    tau_scale: float = 1.0
    noise_sd: float = 0.001
    k_scales: int = None

    def __post_init__(self):
        if self.generator not in GENERATOR_CHOICES:
            raise InvalidInputError(f"generator must be one of {GENERATOR_CHOICES}")
        if self.estimator not in ESTIMATOR_CHOICES:
            raise InvalidInputError(f"estimator must be one of {ESTIMATOR_CHOICES}")
        if self.q_reps < 1:
            raise InvalidInputError("q_reps must be >= 1")
        if self.n < 2 or self.t_len < 2 or self.m_ticks < 2:
            raise InvalidInputError("n, t_len and m_ticks must each be >= 2")
        theta0 = tuple(float(v) for v in self.theta0)
        expected = {"one-step": 8, "two-step": 6, "degenerate": len(theta0)}
        if len(theta0) != expected[self.estimator] or len(theta0) == 0:
            raise InvalidInputError(
                f"theta0 must have {expected[self.estimator]} entries for "
                f"estimator {self.estimator!r}")
        object.__setattr__(self, "theta0", theta0)

    @property
    def param_names(self) -> list:
        from .estimation import PARAM_NAMES_ONE_STEP, PARAM_NAMES_TWO_STEP
        if self.estimator == "two-step":
            return list(PARAM_NAMES_TWO_STEP)
        if self.estimator == "one-step":
            return list(PARAM_NAMES_ONE_STEP)
        return [f"theta{i}" for i in range(len(self.theta0))]


@dataclass(frozen=True)
class RmseTable:
    param_names: list
    rmse: np.ndarray
    mean_estimate: np.ndarray
    theta0: np.ndarray
    mean_density: float
    n_requested: int
    n_completed: int
    n_failed: int

    def to_json(self) -> str:
        return json.dumps({
            "rmse": dict(zip(self.param_names, map(float, self.rmse))),
            "mean_estimate": dict(zip(self.param_names, map(float, self.mean_estimate))),
            "reference": dict(zip(self.param_names, map(float, self.theta0))),
            "mean_density_pct": self.mean_density * 100.0,
            "replications": {"requested": self.n_requested,
                             "completed": self.n_completed,
                             "failed": self.n_failed},
        }, indent=2)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["parameter", "rmse", "mean_estimate", "reference"])
            for name, r, m, t0 in zip(self.param_names, self.rmse,
                                      self.mean_estimate, self.theta0):
                writer.writerow([name, "%.17g" % r, "%.17g" % m, "%.17g" % t0])
            writer.writerow(["network_density_pct", "%.17g" % (self.mean_density * 100.0),
                             "", ""])
            writer.writerow(["replications_completed", self.n_completed,
                             "failed", self.n_failed])


def _draw_network(design: HarnessDesign, seed):
    if design.generator == "dyad":
        return gen_dyad(design.n, seed)
    if design.generator == "powerlaw":
        return gen_powerlaw(design.n, design.gen_alpha, seed)
    return gen_sbm(design.n, design.gen_k, seed)


def _one_replication(design: HarnessDesign, seed):
    """network -> diffusion -> noise -> realized panel -> fit, one draw.
    Returns (theta_hat, density) or raises."""
    from .realized import DiffusionSpec, add_noise, build_panel, simulate_diffusion

    s_net, s_tau, s_path, s_noise = spawn_seeds(seed, 4)
    adj = _draw_network(design, s_net)
    nd = density(adj)
    if design.estimator == "degenerate":
        return np.array(design.theta0), nd
    net = normalize(adj)
    spec = DiffusionSpec.draw(design.n, s_tau, tau_scale=design.tau_scale,
                              kappa=design.kappa, noise_sd=design.noise_sd)
    clean = simulate_diffusion(spec, design.t_len, design.m_ticks, design.n, s_path)
    noisy = add_noise(clean, design.noise_sd, s_noise)
    panel = build_panel(noisy, "multiscale", k_scales=design.k_scales, clean=clean)
    if design.estimator == "one-step":
        fit = fit_one_step(panel, net)
    else:
        fit = fit_two_step(panel, net)
    return fit.theta, nd


def rmse_harness(design: HarnessDesign, seed=None, jobs: int = 1) -> RmseTable:
    """Per-parameter RMSE against design.theta0 over q_reps independent
    pipeline replications; failed replications are excluded and counted."""
    seeds = spawn_seeds(seed, design.q_reps)

    def run(child):
        try:
            return _one_replication(design, child)
        except (NheavyError, np.linalg.LinAlgError):
            return None

    if jobs != 1 and design.q_reps > 1:
        from joblib import Parallel, delayed
        results = Parallel(n_jobs=jobs)(delayed(run)(s) for s in seeds)
    else:
        results = [run(s) for s in seeds]

    done = [r for r in results if r is not None]
    n_failed = design.q_reps - len(done)
    if not done:
        raise EvaluationError("every replication failed; no RMSE to report")
    thetas = np.vstack([r[0] for r in done])
    densities = np.array([r[1] for r in done])
    theta0 = np.array(design.theta0)
    rmse = np.sqrt(np.mean((thetas - theta0) ** 2, axis=0))
    return RmseTable(param_names=design.param_names, rmse=rmse,
                     mean_estimate=thetas.mean(axis=0), theta0=theta0,
                     mean_density=float(densities.mean()),
                     n_requested=design.q_reps, n_completed=len(done),
                     n_failed=n_failed)
