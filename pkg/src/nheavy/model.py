"""Core bivariate volatility dynamics on a network.

Two coupled recursions drive everything: a conditional-variance equation for
squared returns and a conditional-mean equation for realized measures, each
fed by own-lag and neighbor-average realized measures,

    h_t  = omega   + alpha   RM_{t-1} + lam   W RM_{t-1} + beta   h_{t-1}
    mu_t = omega_r + alpha_r RM_{t-1} + lam_r W RM_{t-1} + beta_r mu_{t-1}

with W the row-normalized network.  Stacking (h_t, mu_t) gives a linear map
x_t = w + B x_{t-1} whose block-triangular transition matrix has closed-form
powers; forecasting, stationarity checks, and simulation all build on that.
"""

import csv
from dataclasses import dataclass

import numpy as np
from scipy.special import gammainccinv, ndtr, ndtri, roots_hermitenorm

from .errors import DataError, InvalidInputError
from .network import NormalizedNetwork
from .rng import as_generator


@dataclass(frozen=True)
class NheavyParams:
    """The eight coefficients, grouped as phi = (omega, alpha, lam, beta)
    for the return-variance equation and phi_r = (omega_r, alpha_r, lam_r,
    beta_r) for the realized-measure equation."""

    omega: float
    alpha: float
    lam: float
    beta: float
    omega_r: float
    alpha_r: float
    lam_r: float
    beta_r: float

    @property
    def phi(self) -> np.ndarray:
        return np.array([self.omega, self.alpha, self.lam, self.beta])

    @property
    def phi_r(self) -> np.ndarray:
        return np.array([self.omega_r, self.alpha_r, self.lam_r, self.beta_r])

    @classmethod
    def from_vectors(cls, phi, phi_r) -> "NheavyParams":
        phi = np.asarray(phi, dtype=float)
        phi_r = np.asarray(phi_r, dtype=float)
        if phi.shape != (4,) or phi_r.shape != (4,):
            raise InvalidInputError("phi and phi_r must each have 4 entries")
        return cls(*phi, *phi_r)

    def validate(self, kappa_max: float = None) -> "NheavyParams":
        """Check the admissible region: nonnegative coefficients, beta < 1,
        alpha_r + lam_r + beta_r < 1, and (when kappa_max is supplied)
        alpha + lam * kappa_max + beta < 1.  Returns self for chaining."""
        vec = np.array([*self.phi, *self.phi_r])
        if not np.isfinite(vec).all():
            raise InvalidInputError("parameters must be finite")
        if (vec < 0).any():
            raise InvalidInputError("all parameters must be nonnegative")
        if not self.beta < 1:
            raise InvalidInputError(f"beta must be < 1, got {self.beta}")
        s_r = self.alpha_r + self.lam_r + self.beta_r
        if not s_r < 1:
            raise InvalidInputError(f"alpha_r + lam_r + beta_r must be < 1, got {s_r}")
        if kappa_max is not None:
            s = self.alpha + self.lam * kappa_max + self.beta
            if not s < 1:
                raise InvalidInputError(
                    f"alpha + lam*kappa_max + beta must be < 1, got {s}"
                )
        return self

    def to_dict(self) -> dict:
        return {
            "phi": {"omega": self.omega, "alpha": self.alpha,
                    "lambda": self.lam, "beta": self.beta},
            "phi_r": {"omega": self.omega_r, "alpha": self.alpha_r,
                      "lambda": self.lam_r, "beta": self.beta_r},
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "NheavyParams":
        try:
            p, q = obj["phi"], obj["phi_r"]
            return cls(
                float(p["omega"]), float(p["alpha"]), float(p["lambda"]), float(p["beta"]),
                float(q["omega"]), float(q["alpha"]), float(q["lambda"]), float(q["beta"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"bad parameter dict: {exc}") from exc


@dataclass(frozen=True)
class PanelSeries:
    """Aligned T x N panels of daily squared returns and realized measures."""

    r2: np.ndarray
    rm: np.ndarray

    def __post_init__(self):
        r2 = np.asarray(self.r2, dtype=float).copy()
        rm = np.asarray(self.rm, dtype=float).copy()
        if r2.ndim != 2 or r2.shape != rm.shape:
            raise DataError(f"panels must share a T x N shape, got {r2.shape} vs {rm.shape}")
        if not (np.isfinite(r2).all() and np.isfinite(rm).all()):
            raise DataError("panel contains non-finite entries")
        if (r2 < 0).any() or (rm < 0).any():
            raise DataError("panel contains negative entries")
        r2.flags.writeable = False
        rm.flags.writeable = False
        object.__setattr__(self, "r2", r2)
        object.__setattr__(self, "rm", rm)

    @property
    def t_len(self) -> int:
        return self.r2.shape[0]

    @property
    def n(self) -> int:
        return self.r2.shape[1]

    def window(self, start: int, stop: int) -> "PanelSeries":
        """Day slice [start, stop) with 0-based day indices."""
        return PanelSeries(self.r2[start:stop], self.rm[start:stop])


@dataclass(frozen=True)
class LatentPanels:
    """Filtered conditional variances h and conditional means mu, T x N."""

    h: np.ndarray
    mu: np.ndarray

    def __post_init__(self):
        h = np.asarray(self.h, dtype=float).copy()
        mu = np.asarray(self.mu, dtype=float).copy()
        if h.shape != mu.shape or h.ndim != 2:
            raise DataError("latent panels must share a T x N shape")
        h.flags.writeable = False
        mu.flags.writeable = False
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "mu", mu)


@dataclass(frozen=True)
class BlockDynamics:
    """Stacked linear dynamics x_t = w_vec + b_mat x_{t-1} for x = (h, mu).

    b_mat is block upper triangular: the h block feeds back through beta I
    and picks up the realized-measure state through v1 = alpha I + lam W,
    while the mu block evolves through v2 = alpha_r I + lam_r W + beta_r I.
    """

    w_vec: np.ndarray
    b_mat: np.ndarray
    v1: np.ndarray
    v2: np.ndarray
    beta: float

    @property
    def n(self) -> int:
        return self.v1.shape[0]


def filter_panels(params: NheavyParams, net: NormalizedNetwork, panel: PanelSeries,
                  init_h: np.ndarray, init_mu: np.ndarray) -> LatentPanels:
    """Run both recursions over a panel from given day-1 levels.

    Day indices are 0-based: h[0] = init_h and the recursions generate rows
    1..T-1 from lagged realized measures.
    """
    init_h = np.broadcast_to(np.asarray(init_h, dtype=float), (panel.n,))
    init_mu = np.broadcast_to(np.asarray(init_mu, dtype=float), (panel.n,))
    if (init_h <= 0).any() or (init_mu <= 0).any():
        raise InvalidInputError("initial levels must be strictly positive")
    h = _filter_recursion(params.omega, params.alpha, params.lam, params.beta,
                          net, panel.rm, init_h)
    mu = _filter_recursion(params.omega_r, params.alpha_r, params.lam_r, params.beta_r,
                           net, panel.rm, init_mu)
    return LatentPanels(h=h, mu=mu)


def _filter_recursion(intercept, a_own, a_net, b, net: NormalizedNetwork,
                      driver: np.ndarray, init: np.ndarray) -> np.ndarray:
    """Shared linear recursion x_t = intercept + a_own d_{t-1}
    + a_net (W d)_{t-1} + b x_{t-1}; intercept may be scalar or per-asset."""
    t_len, n = driver.shape
    x = np.empty((t_len, n))
    x[0] = init
    if t_len > 1:
        impact = a_own * driver + a_net * (driver @ net.w.T)
        for t in range(1, t_len):
            x[t] = intercept + impact[t - 1] + b * x[t - 1]
    return x


def build_block_dynamics(params: NheavyParams, net: NormalizedNetwork) -> BlockDynamics:
    """Assemble w_vec (2N) and the 2N x 2N transition matrix."""
    return _block_dynamics_from_parts(
        np.full(net.n, params.omega), params.alpha, params.lam, params.beta,
        np.full(net.n, params.omega_r), params.alpha_r, params.lam_r, params.beta_r,
        net,
    )


def _block_dynamics_from_parts(intercept_r, alpha, lam, beta,
                               intercept_rm, alpha_r, lam_r, beta_r,
                               net: NormalizedNetwork) -> BlockDynamics:
    n = net.n
    eye = np.eye(n)
    v1 = alpha * eye + lam * net.w
    v2 = alpha_r * eye + lam_r * net.w + beta_r * eye
    b = np.zeros((2 * n, 2 * n))
    b[:n, :n] = beta * eye
    b[:n, n:] = v1
    b[n:, n:] = v2
    w_vec = np.concatenate([np.broadcast_to(intercept_r, (n,)),
                            np.broadcast_to(intercept_rm, (n,))])
    return BlockDynamics(w_vec=w_vec, b_mat=b, v1=v1, v2=v2, beta=beta)


def b_power(dyn: BlockDynamics, j: int) -> np.ndarray:
    """j-th power of the transition matrix via its block-triangular closed
    form: top-left beta^j I, bottom-right v2^j, and top-right
    v1 (v2^{j-1} + v2^{j-2} beta + ... + beta^{j-1}), so no full-size
    matrix products are needed."""
    n = dyn.n
    if j < 0:
        raise InvalidInputError("matrix power requires j >= 0")
    if j == 0:
        return np.eye(2 * n)
    eye = np.eye(n)
    # s_j = sum_{m=0}^{j-1} v2^{j-1-m} beta^m, built by s_{k+1} = v2 s_k + beta^k I
    s = eye.copy()
    v2_pow = dyn.v2.copy()
    for k in range(1, j):
        s = dyn.v2 @ s + dyn.beta ** k * eye
        v2_pow = v2_pow @ dyn.v2
    out = np.zeros((2 * n, 2 * n))
    out[:n, :n] = dyn.beta ** j * eye
    out[:n, n:] = dyn.v1 @ s
    out[n:, n:] = v2_pow
    return out


@dataclass(frozen=True)
class StationarityReport:
    stationary: bool
    bound: float
    spectral_radius: float


def check_stationarity(params: NheavyParams, net: NormalizedNetwork) -> StationarityReport:
    """Spectral radius of the transition matrix against its row-sum bound
    max(beta, alpha_r + lam_r + beta_r)."""
    dyn = build_block_dynamics(params, net)
    rho_v2 = float(np.max(np.abs(np.linalg.eigvals(dyn.v2))))
    radius = max(params.beta, rho_v2)
    bound = max(params.beta, params.alpha_r + params.lam_r + params.beta_r)
    return StationarityReport(stationary=radius < 1.0, bound=bound, spectral_radius=radius)


@dataclass(frozen=True)
class ForecastResult:
    h: np.ndarray
    mu: np.ndarray
    stationary: bool


def forecast(params: NheavyParams, net: NormalizedNetwork,
             h_last: np.ndarray, mu_last: np.ndarray, s: int) -> ForecastResult:
    """Multistep forecast (I + B + ... + B^s) w + B^{s+1} (h_last, mu_last).

    Given the state on day t-1, the result is the conditional expectation
    for day t+s; s=0 is a single application of the map.  Nonstationary
    parameters are flagged in the result, not rejected.
    """
    dyn = build_block_dynamics(params, net)
    report = check_stationarity(params, net)
    h_out, mu_out = forecast_dyn(dyn, h_last, mu_last, s)
    return ForecastResult(h=h_out, mu=mu_out, stationary=report.stationary)


def forecast_dyn(dyn: BlockDynamics, h_last, mu_last, s: int):
    """Forecast from explicit dynamics (used for targeted parameterizations
    whose intercepts vary by asset).  Returns (h, mu) for day t+s given the
    state on day t-1."""
    h_last = np.asarray(h_last, dtype=float)
    mu_last = np.asarray(mu_last, dtype=float)
    if h_last.shape != (dyn.n,) or mu_last.shape != (dyn.n,):
        raise InvalidInputError(f"state vectors must have length {dyn.n}")
    if (h_last <= 0).any() or (mu_last <= 0).any():
        raise InvalidInputError("state vectors must be strictly positive")
    if s < 0:
        raise InvalidInputError("horizon must be >= 0")
    geom = np.eye(2 * dyn.n)
    for j in range(1, s + 1):
        geom = geom + b_power(dyn, j)
    state = np.concatenate([h_last, mu_last])
    out = geom @ dyn.w_vec + b_power(dyn, s + 1) @ state
    return out[:dyn.n], out[dyn.n:]


def targeting_intercepts(phi3, phi_r3, net: NormalizedNetwork,
                         mu_bar: np.ndarray, mu_r_bar: np.ndarray):
    """Intercept vectors implied by unconditional moments.

    phi3 = (alpha, lam, beta) and phi_r3 = (alpha_r, lam_r, beta_r); mu_bar
    and mu_r_bar are the unconditional means of squared returns and realized
    measures.  Returns (intercept_r, intercept_rm) with

        intercept_r[i]  = (1 - alpha kappa_i - beta) mu_i - lam (W mu_r)_i
        intercept_rm[i] = (1 - alpha_r - beta_r) mu_r_i - lam_r (W mu_r)_i

    where kappa_i = mu_r_i / mu_i.
    """
    alpha, lam, beta = (float(v) for v in phi3)
    alpha_r, lam_r, beta_r = (float(v) for v in phi_r3)
    mu_bar = np.asarray(mu_bar, dtype=float)
    mu_r_bar = np.asarray(mu_r_bar, dtype=float)
    if (mu_bar <= 0).any():
        raise InvalidInputError("targeting requires strictly positive mu_bar")
    kappa = mu_r_bar / mu_bar
    w_mu_r = net.w @ mu_r_bar
    intercept_r = (1.0 - alpha * kappa - beta) * mu_bar - lam * w_mu_r
    intercept_rm = (1.0 - alpha_r - beta_r) * mu_r_bar - lam_r * w_mu_r
    return intercept_r, intercept_rm


@dataclass(frozen=True)
class InnovationSpec:
    """Joint law of the two unit-mean multiplicative innovations.

    family "chisq-gamma": the return innovation is chi-square(1) (second
    moment 3) and the measure innovation is Gamma(shape a, scale 1/a)
    (second moment 1 + 1/a); dependence comes from a shared bivariate
    Gaussian factor with correlation cross_rho pushed through each
    marginal's quantile function.  family "degenerate" pins both
    innovations at 1, so r2 = h and RM = mu exactly.
    """

    family: str = "chisq-gamma"
    gamma_shape: float = 5.0
    cross_rho: float = 0.5

    def __post_init__(self):
        if self.family not in ("chisq-gamma", "degenerate"):
            raise InvalidInputError(f"unknown innovation family {self.family!r}")
        if not self.gamma_shape > 0:
            raise InvalidInputError("gamma_shape must be positive")
        if not -1.0 < self.cross_rho < 1.0:
            raise InvalidInputError("cross_rho must lie in (-1, 1)")

    @property
    def kappa2_r(self) -> float:
        return 1.0 if self.family == "degenerate" else 3.0

    @property
    def kappa2_rm(self) -> float:
        return 1.0 if self.family == "degenerate" else 1.0 + 1.0 / self.gamma_shape

    def kappa2_cross(self, order: int = 80) -> float:
        """Cross moment E[eps_r * eps_rm] by Gauss-Hermite quadrature over
        the underlying bivariate normal."""
        if self.family == "degenerate":
            return 1.0
        nodes, weights = roots_hermitenorm(order)
        weights = weights / weights.sum()
        rho = self.cross_rho
        z1 = nodes[:, None]
        z2 = rho * nodes[:, None] + np.sqrt(1.0 - rho ** 2) * nodes[None, :]
        val = _chisq1_from_normal(z1) * _gamma_from_normal(z2, self.gamma_shape)
        return float(weights @ val @ weights)

    def draw(self, size, seed=None):
        """Return (eps_r, eps_rm) arrays of the given shape."""
        if self.family == "degenerate":
            return np.ones(size), np.ones(size)
        rng = as_generator(seed)
        z1 = rng.standard_normal(size)
        z_extra = rng.standard_normal(size)
        z2 = self.cross_rho * z1 + np.sqrt(1.0 - self.cross_rho ** 2) * z_extra
        return _chisq1_from_normal(z1), _gamma_from_normal(z2, self.gamma_shape)


def _chisq1_from_normal(z):
    # quantile coupling F^{-1}(ndtr(z)) written through the survival
    # function so both tails keep full floating-point accuracy
    return ndtri(0.5 * ndtr(-np.asarray(z, dtype=float))) ** 2


def _gamma_from_normal(z, shape):
    return gammainccinv(shape, ndtr(-np.asarray(z, dtype=float))) / shape


def stationary_means(params: NheavyParams, net: NormalizedNetwork):
    """Unconditional means (h_bar, mu_bar) implied by stationary dynamics."""
    dyn = build_block_dynamics(params, net)
    n = net.n
    mu_bar = np.linalg.solve(np.eye(n) - dyn.v2, np.full(n, params.omega_r))
    h_bar = (params.omega + dyn.v1 @ mu_bar) / (1.0 - params.beta)
    return h_bar, mu_bar


def simulate_nheavy(params: NheavyParams, net: NormalizedNetwork, t_len: int,
                    innov: InnovationSpec = InnovationSpec(), burn_in: int = 500,
                    seed=None):
    """Forward-simulate (r2, RM, h, mu) jointly and discard the burn-in.

    Returns (PanelSeries, LatentPanels) of length t_len.  The chain starts
    at its unconditional means and refuses nonstationary parameters.
    """
    params.validate()
    report = check_stationarity(params, net)
    if not report.stationary:
        raise InvalidInputError(
            f"refusing to simulate: spectral radius {report.spectral_radius:.6f} >= 1"
        )
    if burn_in < 0 or t_len < 1:
        raise InvalidInputError("need burn_in >= 0 and t_len >= 1")
    rng = as_generator(seed)
    n = net.n
    steps = burn_in + t_len
    eps_r, eps_rm = innov.draw((steps, n), rng)

    h = np.empty((steps, n))
    mu = np.empty((steps, n))
    rm = np.empty((steps, n))
    r2 = np.empty((steps, n))
    h_bar, mu_bar = stationary_means(params, net)
    h[0], mu[0] = h_bar, mu_bar
    r2[0] = eps_r[0] * h[0]
    rm[0] = eps_rm[0] * mu[0]
    for t in range(1, steps):
        net_rm = net.w @ rm[t - 1]
        mu[t] = params.omega_r + params.alpha_r * rm[t - 1] + params.lam_r * net_rm \
            + params.beta_r * mu[t - 1]
        h[t] = params.omega + params.alpha * rm[t - 1] + params.lam * net_rm \
            + params.beta * h[t - 1]
        rm[t] = eps_rm[t] * mu[t]
        r2[t] = eps_r[t] * h[t]
    sl = slice(burn_in, burn_in + t_len)
    return PanelSeries(r2=r2[sl], rm=rm[sl]), LatentPanels(h=h[sl], mu=mu[sl])


def save_panel_csv(panel: PanelSeries, path) -> None:
    """Write a panel in long format ``day,asset,r2,rm`` (0-based indices)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["day", "asset", "r2", "rm"])
        for t in range(panel.t_len):
            for i in range(panel.n):
                writer.writerow([t, i, f"{panel.r2[t, i]:.17g}", f"{panel.rm[t, i]:.17g}"])


def load_panel_csv(path) -> PanelSeries:
    """Read a long-format panel CSV with header ``day,asset,r2,rm``."""
    records = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [c.strip() for c in header[:4]] != ["day", "asset", "r2", "rm"]:
            raise DataError(f"{path}: expected header 'day,asset,r2,rm', got {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                records.append((int(row[0]), int(row[1]), float(row[2]), float(row[3])))
            except (IndexError, ValueError) as exc:
                raise DataError(f"{path}:{lineno}: bad panel row {row}") from exc
    if not records:
        raise DataError(f"{path}: empty panel")
    days = sorted({r[0] for r in records})
    assets = sorted({r[1] for r in records})
    if days != list(range(len(days))) or assets != list(range(len(assets))):
        raise DataError(f"{path}: day/asset indices must be contiguous from 0")
    r2 = np.full((len(days), len(assets)), np.nan)
    rm = np.full((len(days), len(assets)), np.nan)
    for day, asset, v_r2, v_rm in records:
        r2[day, asset] = v_r2
        rm[day, asset] = v_rm
    if np.isnan(r2).any() or np.isnan(rm).any():
        raise DataError(f"{path}: panel has missing (day, asset) cells")
    return PanelSeries(r2=r2, rm=rm)


def save_latents_csv(latents: LatentPanels, path) -> None:
    """Write filtered panels in long format ``day,asset,h,mu``."""
    t_len, n = latents.h.shape
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["day", "asset", "h", "mu"])
        for t in range(t_len):
            for i in range(n):
                writer.writerow([t, i, f"{latents.h[t, i]:.17g}", f"{latents.mu[t, i]:.17g}"])
