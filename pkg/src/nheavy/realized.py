"""High-frequency simulation and daily realized-measure construction.

A constant-covariance driftless diffusion generates intraday log prices on
a regular grid of M ticks per day; microstructure noise is added per tick;
daily variance is then estimated either by the naive sum of squared tick
returns (biased upward by twice the per-increment noise variance times the
increment count) or by a multi-scale combination whose weights cancel that
bias exactly.
"""

import csv
from dataclasses import dataclass

import numpy as np

from .errors import DataError, InvalidInputError
from .model import PanelSeries
from .rng import as_generator


@dataclass(frozen=True)
class DiffusionSpec:
    """Spot covariance spec: gamma[i, j] = sqrt(tau_i tau_j) * kappa^|i-j|,
    zero drift, i.i.d. Gaussian observation noise with sd noise_sd."""

    tau: tuple
    kappa: float = 0.5
    noise_sd: float = 0.001

    drift: float = 0.0

    def __post_init__(self):
        tau = np.asarray(self.tau, dtype=float)
        if tau.ndim != 1 or tau.size < 1:
            raise InvalidInputError("tau must be a 1-D vector")
        if not np.isfinite(tau).all() or (tau <= 0).any():
            raise InvalidInputError("tau entries must be finite and positive")
        if not (0 < self.kappa < 1):
            raise InvalidInputError("kappa must lie in (0, 1)")
        if not (np.isfinite(self.noise_sd) and self.noise_sd >= 0):
            raise InvalidInputError("noise_sd must be nonnegative")
        if self.drift != 0.0:
            raise InvalidInputError("drift is fixed at zero")
        object.__setattr__(self, "tau", tuple(float(v) for v in tau))

    @property
    def n(self) -> int:
        return len(self.tau)

    @property
    def gamma(self) -> np.ndarray:
        tau = np.asarray(self.tau)
        idx = np.arange(self.n)
        decay = self.kappa ** np.abs(idx[:, None] - idx[None, :])
        return np.sqrt(np.outer(tau, tau)) * decay

    def chol(self) -> np.ndarray:
        """Lower Cholesky factor of gamma; raises on a non-PD matrix."""
        try:
            return np.linalg.cholesky(self.gamma)
        except np.linalg.LinAlgError as exc:
            raise InvalidInputError("gamma is not positive definite") from exc

    @classmethod
    def draw(cls, n: int, seed=None, tau_scale: float = 1.0,
             kappa: float = 0.5, noise_sd: float = 0.001) -> "DiffusionSpec":
        """Draw tau ~ tau_scale * U(0, 1] per asset."""
        if n < 1:
            raise InvalidInputError("need at least one asset")
        if not tau_scale > 0:
            raise InvalidInputError("tau_scale must be positive")
        rng = as_generator(seed)
        tau = tau_scale * (1.0 - rng.random(n))
        return cls(tau=tuple(tau), kappa=kappa, noise_sd=noise_sd)


@dataclass(frozen=True)
class IntradayPanel:
    """Log prices on the grid t = (day) + (tick+1)/M for day = 0..L-1,
    tick = 0..M-1; logp has shape (L, M, N).

    x0 optionally stores the time-0 log price (the anchor immediately
    before the first tick) so day 0 has a close-to-close return; panels
    ingested from CSV leave it None and fall back to the first tick.
    """

    logp: np.ndarray
    x0: np.ndarray = None

    def __post_init__(self):
        logp = np.asarray(self.logp, dtype=float)
        if logp.ndim != 3:
            raise InvalidInputError("logp must have shape (days, ticks, assets)")
        if not np.isfinite(logp).all():
            raise InvalidInputError("log prices must be finite")
        object.__setattr__(self, "logp", logp)
        if self.x0 is not None:
            x0 = np.asarray(self.x0, dtype=float)
            if x0.shape != (logp.shape[2],) or not np.isfinite(x0).all():
                raise InvalidInputError("x0 must be a finite vector of length n")
            object.__setattr__(self, "x0", x0)

    @property
    def l_days(self) -> int:
        return self.logp.shape[0]

    @property
    def m_ticks(self) -> int:
        return self.logp.shape[1]

    @property
    def n(self) -> int:
        return self.logp.shape[2]

    def closes(self) -> np.ndarray:
        """Last tick of each day, shape (L, N)."""
        return self.logp[:, -1, :]


def simulate_diffusion(spec: DiffusionSpec, l_days: int, m_ticks: int, n: int,
                       seed=None, gamma_path=None) -> IntradayPanel:
    """One continuous Euler path of the driftless diffusion, noiseless.

    Increments are sqrt(1/M) * chol(gamma) @ z with z standard normal, so
    day-to-day increments are independent.  gamma_path, if given, is a
    callable (day, tick) -> covariance matrix replacing the constant gamma.
    """
    if l_days < 1 or m_ticks < 1:
        raise InvalidInputError("l_days and m_ticks must be positive")
    if n != spec.n:
        raise InvalidInputError(f"spec has {spec.n} assets, asked for {n}")
    rng = as_generator(seed)
    step = np.sqrt(1.0 / m_ticks)
    x0 = np.zeros(n)
    if gamma_path is None:
        factor = spec.chol()
        z = rng.standard_normal((l_days * m_ticks, n))
        increments = step * z @ factor.T
    else:
        increments = np.empty((l_days * m_ticks, n))
        pos = 0
        for day in range(l_days):
            for tick in range(m_ticks):
                gamma = np.asarray(gamma_path(day, tick), dtype=float)
                try:
                    factor = np.linalg.cholesky(gamma)
                except np.linalg.LinAlgError as exc:
                    raise InvalidInputError(
                        f"gamma_path({day}, {tick}) is not positive definite") from exc
                increments[pos] = step * factor @ rng.standard_normal(n)
                pos += 1
    path = x0 + np.cumsum(increments, axis=0)
    return IntradayPanel(logp=path.reshape(l_days, m_ticks, n), x0=x0)


def add_noise(panel: IntradayPanel, noise_sd: float, seed=None) -> IntradayPanel:
    """Observed prices Y = X + xi with xi i.i.d. N(0, noise_sd^2) per tick
    per asset; the x0 anchor is carried over unchanged."""
    if not (np.isfinite(noise_sd) and noise_sd >= 0):
        raise InvalidInputError("noise_sd must be nonnegative")
    if noise_sd == 0:
        return panel
    rng = as_generator(seed)
    noisy = panel.logp + noise_sd * rng.standard_normal(panel.logp.shape)
    return IntradayPanel(logp=noisy, x0=panel.x0)


def rv_naive(panel: IntradayPanel, day: int, asset: int) -> float:
    """Sum of squared within-day tick returns.  Unbiased for the spanned
    integrated variance without noise; biased upward by 2*(M-1)*noise_sd^2
    under i.i.d. noise."""
    y = _day_series(panel, day, asset)
    return float(np.sum(np.diff(y) ** 2))


def msrv_weights(k_scales: int) -> np.ndarray:
    """Scale weights a_k = 12 k (k - (K+1)/2) / (K (K^2 - 1)), k = 1..K.

    This is the optimal-rate weighting of Zhang (2006, Bernoulli 12(6),
    1019-1043) for the multi-scale realized variance; it satisfies
    sum a_k = 1 and sum a_k / k = 0, so the i.i.d.-noise bias of the
    subsampled estimators cancels exactly.
    """
    if k_scales < 2:
        raise InvalidInputError("need at least 2 scales")
    k = np.arange(1, k_scales + 1, dtype=float)
    return 12.0 * k * (k - (k_scales + 1) / 2.0) / (k_scales * (k_scales ** 2 - 1.0))


def _subsampled_rv(y: np.ndarray, k: int) -> float:
    """Average of k-lag squared differences, rescaled so the diffusion part
    targets the full spanned window: [n/(n-k+1)] * (1/k) * sum_{j=k}^n
    (y_j - y_{j-k})^2 with n = len(y) - 1 increments."""
    n = y.size - 1
    diffs = y[k:] - y[:-k]
    return float(n / (n - k + 1) / k * np.sum(diffs ** 2))


def multiscale_rv(panel: IntradayPanel, day: int, asset: int,
                  k_scales: int = None) -> float:
    """Noise-robust daily variance: sum_k a_k RV^(k) over scales 1..K.

    K defaults to floor(sqrt(M - 1)) and must satisfy 2 <= K < M.  Under
    i.i.d. noise the noise contribution 2*(M-1)*noise_sd^2/k per scale is
    annihilated by the weight constraint sum a_k / k = 0.
    """
    y = _day_series(panel, day, asset)
    n = y.size - 1
    if n < 1:
        raise InvalidInputError("need at least 2 ticks per day")
    if k_scales is None:
        k_scales = max(2, int(np.floor(np.sqrt(n))))
    if k_scales >= y.size:
        raise InvalidInputError(f"k_scales={k_scales} must be < ticks per day ({y.size})")
    weights = msrv_weights(k_scales)
    rvs = np.array([_subsampled_rv(y, k) for k in range(1, k_scales + 1)])
    return float(weights @ rvs)


def _day_series(panel: IntradayPanel, day: int, asset: int) -> np.ndarray:
    if not 0 <= day < panel.l_days:
        raise InvalidInputError(f"day {day} out of range [0, {panel.l_days})")
    if not 0 <= asset < panel.n:
        raise InvalidInputError(f"asset {asset} out of range [0, {panel.n})")
    return panel.logp[day, :, asset]


ESTIMATOR_CHOICES = ("multiscale", "naive")


def build_panel(intraday: IntradayPanel, estimator_choice: str = "multiscale",
                k_scales: int = None, clean: IntradayPanel = None) -> PanelSeries:
    """Daily panel from intraday prices: squared close-to-close log returns
    and one realized measure per day and asset.

    Returns come from ``clean`` closes when a noiseless panel is supplied
    (simulation studies) and from the observed panel otherwise; realized
    measures always come from the observed panel.  Day 0 is anchored at x0
    when present, else at the first tick of day 0.
    """
    if estimator_choice not in ESTIMATOR_CHOICES:
        raise InvalidInputError(
            f"estimator_choice must be one of {ESTIMATOR_CHOICES}, got {estimator_choice!r}")
    source = clean if clean is not None else intraday
    if clean is not None and clean.logp.shape != intraday.logp.shape:
        raise InvalidInputError("clean and observed panels must share a shape")
    closes = source.closes()
    anchor = source.x0 if source.x0 is not None else source.logp[0, 0, :]
    prev = np.vstack([anchor[None, :], closes[:-1]])
    r2 = (closes - prev) ** 2

    l_days, _, n = intraday.logp.shape
    rm = np.empty((l_days, n))
    for day in range(l_days):
        for asset in range(n):
            try:
                if estimator_choice == "multiscale":
                    rm[day, asset] = multiscale_rv(intraday, day, asset, k_scales)
                else:
                    rm[day, asset] = rv_naive(intraday, day, asset)
            except InvalidInputError as exc:
                raise DataError(f"estimator failed on day {day}, asset {asset}: {exc}") from exc
            if not np.isfinite(rm[day, asset]) or rm[day, asset] < 0:
                raise DataError(
                    f"estimator produced an invalid value on day {day}, asset {asset}")
    return PanelSeries(r2=r2, rm=rm)


def save_intraday_csv(panel: IntradayPanel, path) -> None:
    """Write rows day,tick,asset,logprice with 0-based indices; the x0
    anchor is not representable and is dropped."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["day", "tick", "asset", "logprice"])
        l_days, m_ticks, n = panel.logp.shape
        for day in range(l_days):
            for tick in range(m_ticks):
                for asset in range(n):
                    writer.writerow([day, tick, asset,
                                     "%.17g" % panel.logp[day, tick, asset]])


def load_intraday_csv(path) -> IntradayPanel:
    """Read a day,tick,asset,logprice file into an IntradayPanel (x0=None).
    The rows must fill a complete regular grid."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["day", "tick", "asset", "logprice"]:
            raise DataError("expected header day,tick,asset,logprice")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise DataError(f"line {lineno}: expected 4 fields")
            try:
                rows.append((int(row[0]), int(row[1]), int(row[2]), float(row[3])))
            except ValueError as exc:
                raise DataError(f"line {lineno}: {exc}") from exc
    if not rows:
        raise DataError("no data rows")
    days = max(r[0] for r in rows) + 1
    ticks = max(r[1] for r in rows) + 1
    assets = max(r[2] for r in rows) + 1
    logp = np.full((days, ticks, assets), np.nan)
    for day, tick, asset, price in rows:
        if day < 0 or tick < 0 or asset < 0:
            raise DataError("indices must be nonnegative")
        logp[day, tick, asset] = price
    if np.isnan(logp).any():
        raise DataError("rows do not fill a complete day x tick x asset grid")
    return IntradayPanel(logp=logp)
