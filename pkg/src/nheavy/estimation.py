"""Quasi-maximum-likelihood machinery.

Both equations are fit by minimizing the Gaussian-form criterion

    L = (1/T) sum_{t=2}^T (1/N) sum_i { log x_it + target_it / x_it }

where x is the filtered conditional variance (target = squared returns) or
conditional mean (target = realized measures), with the day-1 level pinned
by the data rule x_1 = T^{-1/2} * sum of the first floor(sqrt(T)) targets.
Minimization runs unconstrained on a transformed scale: intercepts through
log, and (alpha, lam, beta) through a stick-breaking map that keeps
alpha + lam * kappa_max + beta inside (0, 1).  Gradients are analytic
throughout, and standard errors come from the robust sandwich form.
"""

import json
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit, logit

from .errors import ConvergenceError, DataError, EvaluationError, InvalidInputError
from .model import (
    NheavyParams,
    PanelSeries,
    LatentPanels,
    targeting_intercepts,
)
from .network import NormalizedNetwork

DEFAULT_INIT_PHI = (0.005, 0.001, 0.001, 0.9)
DEFAULT_INIT_PHI_R = (0.005, 0.1, 0.1, 0.5)
DEFAULT_INIT_PHI3 = (0.01, 0.001, 0.7)
DEFAULT_INIT_PHI3_R = (0.001, 0.01, 0.85)

PARAM_NAMES_ONE_STEP = ["omega", "alpha", "lambda", "beta",
                        "omega_r", "alpha_r", "lambda_r", "beta_r"]
PARAM_NAMES_TWO_STEP = ["alpha", "lambda", "beta",
                        "alpha_r", "lambda_r", "beta_r"]


@dataclass(frozen=True)
class QllValue:
    """Average criterion value and the T-1 per-day contributions.

    value is the t=2..T sum of per-day averages divided by T (not by T-1),
    so value equals sum(per_day) / T.
    """

    value: float
    per_day: np.ndarray


@dataclass(frozen=True)
class OptimizerConfig:
    gtol: float = 1e-6
    maxiter: int = 500
    fallback: bool = True


@dataclass
class EquationFit:
    vec: np.ndarray
    qll: QllValue
    converged: bool
    iterations: int
    grad_max: float
    used_fallback: bool


@dataclass
class FitResult:
    """Point estimates with sandwich covariance and diagnostics.

    phi and phi_r hold (omega, alpha, lambda, beta) per equation for the
    one-step method, or (alpha, lambda, beta) for the two-step targeting
    method, whose intercepts are pinned by sample moments and reported in
    ``intercepts``.  Two-step covariances are moment-plug-in sandwiches,
    not HAC-corrected.
    """

    method: str
    phi: np.ndarray
    phi_r: np.ndarray
    param_names: list
    qll_r: QllValue
    qll_rm: QllValue
    cov: np.ndarray
    se: np.ndarray
    kappa2: dict
    converged: bool
    iterations: dict
    n_days: int
    n_assets: int
    moment_targets: dict = None
    intercepts: dict = None
    messages: tuple = ()

    @property
    def theta(self) -> np.ndarray:
        return np.concatenate([self.phi, self.phi_r])

    def params(self) -> NheavyParams:
        if self.method != "one-step":
            raise InvalidInputError("full NheavyParams only exist for one-step fits")
        return NheavyParams.from_vectors(self.phi, self.phi_r)

    def to_json(self) -> str:
        obj = {
            "method": self.method,
            "estimates": dict(zip(self.param_names, map(float, self.theta))),
            "standard_errors": dict(zip(self.param_names, map(float, self.se))),
            "covariance": self.cov.tolist(),
            "qll": {"returns": self.qll_r.value, "measures": self.qll_rm.value},
            "kappa2": {k: float(v) for k, v in self.kappa2.items()},
            "convergence": {
                "converged": bool(self.converged),
                "iterations": self.iterations,
            },
            "n_days": self.n_days,
            "n_assets": self.n_assets,
            "messages": list(self.messages),
        }
        if self.moment_targets is not None:
            obj["moment_targets"] = {k: np.asarray(v).tolist()
                                     for k, v in self.moment_targets.items()}
        if self.intercepts is not None:
            obj["intercepts"] = {k: np.asarray(v).tolist()
                                 for k, v in self.intercepts.items()}
        return json.dumps(obj, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "FitResult":
        try:
            obj = json.loads(text)
            method = obj["method"]
            names = list(obj["estimates"].keys())
            theta = np.array([obj["estimates"][k] for k in names])
            se = np.array([obj["standard_errors"][k] for k in names])
            cov = np.array(obj["covariance"])
            half = len(names) // 2
            fit = cls(
                method=method,
                phi=theta[:half],
                phi_r=theta[half:],
                param_names=names,
                qll_r=QllValue(obj["qll"]["returns"], np.array([])),
                qll_rm=QllValue(obj["qll"]["measures"], np.array([])),
                cov=cov,
                se=se,
                kappa2=obj["kappa2"],
                converged=obj["convergence"]["converged"],
                iterations=obj["convergence"]["iterations"],
                n_days=obj["n_days"],
                n_assets=obj["n_assets"],
                messages=tuple(obj.get("messages", ())),
            )
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise DataError(f"bad fit JSON: {exc}") from exc
        if "moment_targets" in obj:
            fit.moment_targets = {k: np.array(v) for k, v in obj["moment_targets"].items()}
        if "intercepts" in obj:
            fit.intercepts = {k: np.array(v) for k, v in obj["intercepts"].items()}
        return fit


def initial_level(target: np.ndarray) -> np.ndarray:
    """Day-1 level rule: T^{-1/2} times the sum of the first floor(sqrt(T))
    observations, per asset."""
    t_len = target.shape[0]
    k = int(np.floor(np.sqrt(t_len)))
    return target[:k].sum(axis=0) / np.sqrt(t_len)


def sample_moments(panel: PanelSeries):
    """Per-asset sample means (mu_hat, mu_r_hat, kappa_hat) over all T days."""
    mu = panel.r2.mean(axis=0)
    mu_r = panel.rm.mean(axis=0)
    if (mu <= 0).any():
        raise InvalidInputError("sample mean of squared returns must be positive per asset")
    return mu, mu_r, mu_r / mu


def _filter_grad_free(vec, net, driver, init_level_vec):
    """Filter and its gradient for the free-intercept layout
    vec = (intercept, alpha, lam, beta).  Returns x (T,N), dx (T,N,4)."""
    c, alpha, lam, beta = vec
    t_len, n = driver.shape
    x = np.empty((t_len, n))
    dx = np.zeros((t_len, n, 4))
    x[0] = init_level_vec
    net_driver = driver @ net.w.T
    for t in range(1, t_len):
        x[t] = c + alpha * driver[t - 1] + lam * net_driver[t - 1] + beta * x[t - 1]
        dx[t] = beta * dx[t - 1]
        dx[t, :, 0] += 1.0
        dx[t, :, 1] += driver[t - 1]
        dx[t, :, 2] += net_driver[t - 1]
        dx[t, :, 3] += x[t - 1]
    return x, dx


def _filter_grad_targeted(vec3, net, driver, init_level_vec, c_base, c_jac):
    """Filter and gradient when the intercept vector is a linear function
    c_base + c_jac @ vec3 of vec3 = (alpha, lam, beta).  Returns x, dx
    (T,N,3); x may contain nonpositive values if the implied intercept is
    negative, callers must check."""
    alpha, lam, beta = vec3
    intercept = c_base + c_jac @ vec3
    t_len, n = driver.shape
    x = np.empty((t_len, n))
    dx = np.zeros((t_len, n, 3))
    x[0] = init_level_vec
    net_driver = driver @ net.w.T
    for t in range(1, t_len):
        x[t] = intercept + alpha * driver[t - 1] + lam * net_driver[t - 1] + beta * x[t - 1]
        dx[t] = c_jac + beta * dx[t - 1]
        dx[t, :, 0] += driver[t - 1]
        dx[t, :, 1] += net_driver[t - 1]
        dx[t, :, 2] += x[t - 1]
    return x, dx, intercept


def _qll_terms(x, target):
    t_len = x.shape[0]
    body = x[1:]
    if (body <= 0).any() or not np.isfinite(body).all():
        raise EvaluationError(
            "filtered level is nonpositive or nonfinite; parameters outside the valid region")
    per_day = np.mean(np.log(body) + target[1:] / body, axis=1)
    return QllValue(value=float(per_day.sum() / t_len), per_day=per_day)


def _score_terms(x, dx, target):
    t_len, n = x.shape
    body = x[1:]
    weight = (1.0 - target[1:] / body) / body
    return np.einsum("tn,tnk->k", weight, dx[1:]) / (t_len * n)


def _check_vec4(vec, label):
    vec = np.asarray(vec, dtype=float)
    if vec.shape != (4,):
        raise InvalidInputError(f"{label} must have 4 entries")
    if not np.isfinite(vec).all() or (vec < 0).any():
        raise InvalidInputError(f"{label} must be finite and nonnegative")
    if not vec[3] < 1:
        raise InvalidInputError(f"{label}: persistence coefficient must be < 1")
    return vec


def qll_returns(phi, net: NormalizedNetwork, panel: PanelSeries) -> QllValue:
    """Criterion of the return equation at phi = (omega, alpha, lam, beta)."""
    phi = _check_vec4(phi, "phi")
    x, _ = _filter_grad_free(phi, net, panel.rm, initial_level(panel.r2))
    return _qll_terms(x, panel.r2)


def qll_rm(phi_r, net: NormalizedNetwork, panel: PanelSeries) -> QllValue:
    """Criterion of the realized-measure equation at phi_r."""
    phi_r = _check_vec4(phi_r, "phi_r")
    x, _ = _filter_grad_free(phi_r, net, panel.rm, initial_level(panel.rm))
    return _qll_terms(x, panel.rm)


def score_returns(phi, net: NormalizedNetwork, panel: PanelSeries) -> np.ndarray:
    """Analytic gradient of qll_returns at phi."""
    phi = _check_vec4(phi, "phi")
    x, dx = _filter_grad_free(phi, net, panel.rm, initial_level(panel.r2))
    _qll_terms(x, panel.r2)
    return _score_terms(x, dx, panel.r2)


def score_rm(phi_r, net: NormalizedNetwork, panel: PanelSeries) -> np.ndarray:
    """Analytic gradient of qll_rm at phi_r."""
    phi_r = _check_vec4(phi_r, "phi_r")
    x, dx = _filter_grad_free(phi_r, net, panel.rm, initial_level(panel.rm))
    _qll_terms(x, panel.rm)
    return _score_terms(x, dx, panel.rm)


# ---------------------------------------------------------------------------
# unconstrained reparameterization

_CLIP = 1e-10


class _StickTransform:
    """Bijection between R^K and the admissible region.

    The persistence triple maps through s = sigmoid(u_s) and two fractions,
    so alpha + lam * kappa_max + beta = s < 1 holds at every iterate; a
    free intercept, when present, maps through exp.
    """

    def __init__(self, with_intercept: bool, kappa_max: float):
        self.with_intercept = with_intercept
        self.kappa_max = float(kappa_max)
        self.size = 4 if with_intercept else 3

    def natural(self, u):
        s, f1, f2 = expit(u[-3]), expit(u[-2]), expit(u[-1])
        alpha = s * f1
        lam = s * (1 - f1) * f2 / self.kappa_max
        beta = s * (1 - f1) * (1 - f2)
        if self.with_intercept:
            return np.array([np.exp(u[0]), alpha, lam, beta])
        return np.array([alpha, lam, beta])

    def jacobian(self, u):
        """d natural / d u, shape (size, size)."""
        s, f1, f2 = expit(u[-3]), expit(u[-2]), expit(u[-1])
        ds, df1, df2 = s * (1 - s), f1 * (1 - f1), f2 * (1 - f2)
        k = self.kappa_max
        block = np.array([
            [ds * f1, s * df1, 0.0],
            [ds * (1 - f1) * f2 / k, -s * df1 * f2 / k, s * (1 - f1) * df2 / k],
            [ds * (1 - f1) * (1 - f2), -s * df1 * (1 - f2), -s * (1 - f1) * df2],
        ])
        if not self.with_intercept:
            return block
        jac = np.zeros((4, 4))
        jac[0, 0] = np.exp(u[0])
        jac[1:, 1:] = block
        return jac

    def internal(self, vec):
        vec = np.asarray(vec, dtype=float)
        alpha, lam, beta = vec[-3:]
        lam_scaled = lam * self.kappa_max
        s = alpha + lam_scaled + beta
        if not s < 1:
            raise InvalidInputError(
                f"persistence sum {s:.4f} >= 1 is outside the admissible region"
            )
        s = np.clip(s, _CLIP, 1 - _CLIP)
        f1 = np.clip(alpha / s, _CLIP, 1 - _CLIP)
        rest = max(lam_scaled + beta, _CLIP)
        f2 = np.clip(lam_scaled / rest, _CLIP, 1 - _CLIP)
        tail = [logit(s), logit(f1), logit(f2)]
        if self.with_intercept:
            return np.array([np.log(max(vec[0], _CLIP))] + tail)
        return np.array(tail)


def feasible_start(vec, kappa_max, with_intercept=True):
    """Nudge an initial guess strictly inside the admissible region: floor
    components at a tiny positive value and shrink the persistence triple
    if its kappa-weighted sum reaches 1."""
    vec = np.asarray(vec, dtype=float).copy()
    vec = np.maximum(vec, _CLIP)
    tail = vec[-3:]
    s = tail[0] + tail[1] * kappa_max + tail[2]
    if s >= 1 - 1e-8:
        tail *= 0.98 / s
        vec[-3:] = tail
    if with_intercept:
        vec[0] = max(vec[0], _CLIP)
    return vec


def _fit_equation(net, driver, target, init_level_vec, kappa_max, init_vec,
                  config: OptimizerConfig, targeting=None) -> EquationFit:
    """Minimize one equation's criterion.

    targeting = None fits (intercept, alpha, lam, beta); otherwise
    targeting = (c_base, c_jac) pins the intercept vector to a linear
    function of (alpha, lam, beta) and fits only those three.  Proposals
    with a nonpositive implied intercept are rejected with an infinite
    criterion value.
    """
    transform = _StickTransform(with_intercept=targeting is None, kappa_max=kappa_max)
    big = 1e12

    if targeting is None:
        def fun(u):
            vec = transform.natural(u)
            x, dx = _filter_grad_free(vec, net, driver, init_level_vec)
            try:
                q = _qll_terms(x, target)
            except EvaluationError:
                return big, np.zeros(transform.size)
            g_nat = _score_terms(x, dx, target)
            return q.value, transform.jacobian(u).T @ g_nat
    else:
        c_base, c_jac = targeting

        def fun(u):
            vec = transform.natural(u)
            x, dx, intercept = _filter_grad_targeted(
                vec, net, driver, init_level_vec, c_base, c_jac)
            if (intercept <= 0).any():
                return big, np.zeros(transform.size)
            try:
                q = _qll_terms(x, target)
            except EvaluationError:
                return big, np.zeros(transform.size)
            g_nat = _score_terms(x, dx, target)
            return q.value, transform.jacobian(u).T @ g_nat

    u0 = transform.internal(feasible_start(init_vec, kappa_max, targeting is None))
    res = minimize(fun, u0, jac=True, method="BFGS",
                   options={"gtol": config.gtol, "maxiter": config.maxiter})
    iterations = int(res.nit)
    used_fallback = False
    best_u = res.x
    _, grad = fun(best_u)
    grad_max = float(np.max(np.abs(grad)))
    if (not np.isfinite(res.fun) or grad_max >= config.gtol) and config.fallback:
        used_fallback = True
        nm = minimize(lambda u: fun(u)[0], best_u, method="Nelder-Mead",
                      options={"maxiter": 4000, "xatol": 1e-10, "fatol": 1e-12})
        iterations += int(nm.nit)
        if np.isfinite(nm.fun):
            best_u = nm.x
            _, grad = fun(best_u)
            grad_max = float(np.max(np.abs(grad)))

    vec = transform.natural(best_u)
    if targeting is None:
        x, _ = _filter_grad_free(vec, net, driver, init_level_vec)
    else:
        x, _, _ = _filter_grad_targeted(vec, net, driver, init_level_vec, *targeting)
    qll = _qll_terms(x, target)
    return EquationFit(vec=vec, qll=qll, converged=grad_max < config.gtol,
                       iterations=iterations, grad_max=grad_max,
                       used_fallback=used_fallback)


@dataclass(frozen=True)
class SandwichResult:
    cov: np.ndarray
    se: np.ndarray
    kappa2: dict
    used_pinv: bool


def _gradients_at_fit(fit: FitResult, panel: PanelSeries, net: NormalizedNetwork):
    """Recompute filtered levels and per-observation gradients at the
    estimates, matching the fit's parameterization."""
    if fit.method == "one-step":
        h, gh = _filter_grad_free(fit.phi, net, panel.rm, initial_level(panel.r2))
        m, gm = _filter_grad_free(fit.phi_r, net, panel.rm, initial_level(panel.rm))
    else:
        mu, mu_r, _ = sample_moments(panel)
        (cb_r, cj_r), (cb_m, cj_m) = _targeting_parts(net, mu, mu_r)
        h, gh, _ = _filter_grad_targeted(fit.phi, net, panel.rm,
                                         initial_level(panel.r2), cb_r, cj_r)
        m, gm, _ = _filter_grad_targeted(fit.phi_r, net, panel.rm,
                                         initial_level(panel.rm), cb_m, cj_m)
    return h, gh, m, gm


def sandwich_covariance(fit: FitResult, panel: PanelSeries,
                        net: NormalizedNetwork) -> SandwichResult:
    """Robust covariance of the stacked estimates.

    The bread is block diagonal in the two equations' curvature matrices,
    the meat scales those blocks by (kappa2 - 1) and couples the equations
    through the cross moment of standardized residuals; the result is the
    asymptotic matrix divided by N*T.
    """
    h, gh, m, gm = _gradients_at_fit(fit, panel, net)
    t_len, n = h.shape
    denom = n * (t_len - 1)
    hb, mb = h[1:], m[1:]
    gh_b, gm_b = gh[1:], gm[1:]

    sig_r = np.einsum("tn,tni,tnj->ij", hb ** -2.0, gh_b, gh_b) / denom
    sig_m = np.einsum("tn,tni,tnj->ij", mb ** -2.0, gm_b, gm_b) / denom
    sig_cross = np.einsum("tn,tni,tnj->ij", 1.0 / (hb * mb), gh_b, gm_b) / denom

    eps_r = panel.r2[1:] / hb
    eps_m = panel.rm[1:] / mb
    k2_r = float(np.mean(eps_r ** 2))
    k2_m = float(np.mean(eps_m ** 2))
    k2_cross = float(np.mean(eps_r * eps_m))

    k = sig_r.shape[0]
    bread = np.zeros((2 * k, 2 * k))
    bread[:k, :k] = sig_r
    bread[k:, k:] = sig_m
    meat = np.zeros((2 * k, 2 * k))
    meat[:k, :k] = (k2_r - 1.0) * sig_r
    meat[k:, k:] = (k2_m - 1.0) * sig_m
    meat[:k, k:] = (k2_cross - 1.0) * sig_cross
    meat[k:, :k] = (k2_cross - 1.0) * sig_cross.T

    used_pinv = False
    try:
        bread_inv = np.linalg.solve(bread, np.eye(2 * k))
        if not np.isfinite(bread_inv).all():
            raise np.linalg.LinAlgError
    except np.linalg.LinAlgError:
        warnings.warn("curvature matrix is singular; using pseudo-inverse")
        bread_inv = np.linalg.pinv(bread)
        used_pinv = True
    cov = bread_inv @ meat @ bread_inv.T / (n * t_len)
    cov = 0.5 * (cov + cov.T)
    se = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    kappa2 = {"r": k2_r, "rm": k2_m, "cross": k2_cross}
    return SandwichResult(cov=cov, se=se, kappa2=kappa2, used_pinv=used_pinv)


def _resolve_init(init_guess, defaults):
    if init_guess is None:
        return (np.array(defaults[0], dtype=float), np.array(defaults[1], dtype=float))
    if isinstance(init_guess, NheavyParams):
        return init_guess.phi, init_guess.phi_r
    phi, phi_r = init_guess
    return np.asarray(phi, dtype=float), np.asarray(phi_r, dtype=float)


def fit_one_step(panel: PanelSeries, net: NormalizedNetwork, init_guess=None,
                 config: OptimizerConfig = None, strict: bool = False) -> FitResult:
    """Independent QMLE of the two equations with free intercepts.

    init_guess may be an NheavyParams or a (phi, phi_r) pair; the default
    start is the documented simulation initializer.  strict=True raises
    ConvergenceError instead of returning converged=False.
    """
    config = config or OptimizerConfig()
    phi0, phi_r0 = _resolve_init(init_guess, (DEFAULT_INIT_PHI, DEFAULT_INIT_PHI_R))
    if panel.t_len < 2:
        raise InvalidInputError("need at least 2 days to fit")
    _, _, kappa = sample_moments(panel)
    kappa_max = float(kappa.max())

    eq_r = _fit_equation(net, panel.rm, panel.r2, initial_level(panel.r2),
                         kappa_max, phi0, config)
    eq_m = _fit_equation(net, panel.rm, panel.rm, initial_level(panel.rm),
                         1.0, phi_r0, config)

    fit = FitResult(
        method="one-step", phi=eq_r.vec, phi_r=eq_m.vec,
        param_names=list(PARAM_NAMES_ONE_STEP),
        qll_r=eq_r.qll, qll_rm=eq_m.qll,
        cov=np.zeros((8, 8)), se=np.zeros(8), kappa2={},
        converged=eq_r.converged and eq_m.converged,
        iterations={"returns": eq_r.iterations, "measures": eq_m.iterations,
                    "fallback": eq_r.used_fallback or eq_m.used_fallback,
                    "grad_max": max(eq_r.grad_max, eq_m.grad_max)},
        n_days=panel.t_len, n_assets=panel.n,
    )
    sandwich = sandwich_covariance(fit, panel, net)
    fit.cov, fit.se, fit.kappa2 = sandwich.cov, sandwich.se, sandwich.kappa2
    if sandwich.used_pinv:
        fit.messages = fit.messages + ("covariance used pseudo-inverse",)
    if strict and not fit.converged:
        raise ConvergenceError(
            f"one-step fit did not converge (max gradient {fit.iterations['grad_max']:.2e})"
        )
    return fit


def _targeting_parts(net, mu, mu_r):
    """Linear maps from (alpha, lam, beta) to the pinned intercept vectors:
    intercept = c_base + c_jac @ vec3 for each equation."""
    w_mu_r = net.w @ mu_r
    cj_r = np.column_stack([-mu_r, -w_mu_r, -mu])
    cj_m = np.column_stack([-mu_r, -w_mu_r, -mu_r])
    return (mu.copy(), cj_r), (mu_r.copy(), cj_m)


def fit_two_step(panel: PanelSeries, net: NormalizedNetwork, init_guess=None,
                 config: OptimizerConfig = None, strict: bool = False) -> FitResult:
    """Targeting QMLE: intercepts pinned by sample moments, then the
    persistence triples estimated per equation."""
    config = config or OptimizerConfig()
    phi0, phi_r0 = _resolve_init(init_guess, (DEFAULT_INIT_PHI3, DEFAULT_INIT_PHI3_R))
    if phi0.shape != (3,) or phi_r0.shape != (3,):
        raise InvalidInputError("two-step initial guesses must have 3 entries each")
    if panel.t_len < 2:
        raise InvalidInputError("need at least 2 days to fit")
    mu, mu_r, kappa = sample_moments(panel)
    kappa_max = float(kappa.max())
    part_r, part_m = _targeting_parts(net, mu, mu_r)

    eq_r = _fit_equation(net, panel.rm, panel.r2, initial_level(panel.r2),
                         kappa_max, phi0, config, targeting=part_r)
    eq_m = _fit_equation(net, panel.rm, panel.rm, initial_level(panel.rm),
                         1.0, phi_r0, config, targeting=part_m)

    intercept_r, intercept_rm = targeting_intercepts(eq_r.vec, eq_m.vec, net, mu, mu_r)
    fit = FitResult(
        method="two-step", phi=eq_r.vec, phi_r=eq_m.vec,
        param_names=list(PARAM_NAMES_TWO_STEP),
        qll_r=eq_r.qll, qll_rm=eq_m.qll,
        cov=np.zeros((6, 6)), se=np.zeros(6), kappa2={},
        converged=eq_r.converged and eq_m.converged,
        iterations={"returns": eq_r.iterations, "measures": eq_m.iterations,
                    "fallback": eq_r.used_fallback or eq_m.used_fallback,
                    "grad_max": max(eq_r.grad_max, eq_m.grad_max)},
        n_days=panel.t_len, n_assets=panel.n,
        moment_targets={"mu": mu, "mu_r": mu_r, "kappa": kappa},
        intercepts={"r": intercept_r, "rm": intercept_rm},
        messages=("two-step covariance is moment-plug-in, not HAC-corrected",),
    )
    sandwich = sandwich_covariance(fit, panel, net)
    fit.cov, fit.se, fit.kappa2 = sandwich.cov, sandwich.se, sandwich.kappa2
    if sandwich.used_pinv:
        fit.messages = fit.messages + ("covariance used pseudo-inverse",)
    if strict and not fit.converged:
        raise ConvergenceError(
            f"two-step fit did not converge (max gradient {fit.iterations['grad_max']:.2e})"
        )
    return fit


def filtered_at_fit(fit: FitResult, panel: PanelSeries,
                    net: NormalizedNetwork) -> LatentPanels:
    """Filtered conditional panels at the fitted parameters, using the same
    day-1 initialization rule as the criterion.  Two-step fits reuse their
    stored intercept estimates, so the panel here may differ from the one
    the fit was computed on."""
    if fit.method == "one-step":
        h, _ = _filter_grad_free(fit.phi, net, panel.rm, initial_level(panel.r2))
        m, _ = _filter_grad_free(fit.phi_r, net, panel.rm, initial_level(panel.rm))
        return LatentPanels(h=h, mu=m)
    from .model import _filter_recursion

    h = _filter_recursion(fit.intercepts["r"], fit.phi[0], fit.phi[1], fit.phi[2],
                          net, panel.rm, initial_level(panel.r2))
    m = _filter_recursion(fit.intercepts["rm"], fit.phi_r[0], fit.phi_r[1], fit.phi_r[2],
                          net, panel.rm, initial_level(panel.rm))
    return LatentPanels(h=h, mu=m)
