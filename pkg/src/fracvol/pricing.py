"""Closed-form swap pricing.

Fractional model: expected realized variance in closed form, the
variance swap by discounting, and the volatility swap by the square-root
series in jump moments A_j and Gaussian moments B_k. Benchmarks: the
square-root variance process model (CIR spot variance) and the classical
jump-OU variance model.

Moments B_k of the time-averaged exponential of the log-variance factor
are k-dimensional integrals; they are evaluated by tensor Gauss-Legendre
for k <= 3 and scrambled Sobol QMC above that, both in log space so that
large orders cannot overflow intermediates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.interpolate import RectBivariateSpline
from scipy.special import logsumexp
from scipy.stats import qmc

from .fou import FouParams, expected_exp_integral, fou_gram, fou_mean
from .gaussian_core import TimeGrid
from .levy import SubordinatorSpec, cumulant, moments_from_cumulants, MAX_MOMENT_ORDER
from .quadrature import DEFAULT_QUAD, QuadratureConfig, adaptive_gauss_legendre, gl_nodes, panel_nodes
from .rng import derived_rng

LOG_FLOAT_MAX = math.log(np.finfo(float).max)


class SeriesDivergenceError(RuntimeError):
    """Volatility-swap series terms grew instead of shrinking."""


@dataclass(frozen=True)
class SwapContract:
    """Forward contract on realized variance or volatility."""

    maturity: float
    strike: float
    notional: float = 1.0
    rate: float = 0.0
    kind: str = "variance"

    def __post_init__(self):
        if self.maturity <= 0:
            raise ValueError("maturity must be positive")
        if self.notional <= 0:
            raise ValueError("notional must be positive")
        if self.kind not in ("variance", "volatility"):
            raise ValueError("kind must be 'variance' or 'volatility'")


@dataclass(frozen=True)
class ModelParams:
    """Full parameter set of the long-memory jump stochastic volatility model."""

    fou: FouParams
    lam: float
    rho: float
    c1: float
    c2: float
    sigma0_sq: float
    s0: float
    spec: SubordinatorSpec

    def __post_init__(self):
        if self.lam <= 0:
            raise ValueError("lam must be positive")
        if self.rho > 0:
            raise ValueError("rho must be non-positive")
        if self.sigma0_sq <= 0:
            raise ValueError("sigma0_sq must be positive")
        if self.s0 <= 0:
            raise ValueError("s0 must be positive")

    @classmethod
    def reference(cls, *, rho: float = 0.0, sigma0_sq: float = 400.0,
                  s0: float = 100.0, x0: float | None = None) -> "ModelParams":
        """The parameter set used throughout the backtest defaults."""
        m = math.log(400.0)
        fou = FouParams(alpha=1.0 / 30.0, m=m, nu=1.0 / 3.0, h=0.75,
                        x0=m if x0 is None else x0)
        spec = SubordinatorSpec.from_cumulants("compound-poisson-exp", 30.0, 25.0)
        return cls(fou=fou, lam=1.0 / 20.0, rho=rho, c1=0.0, c2=0.5,
                   sigma0_sq=sigma0_sq, s0=s0, spec=spec)


@dataclass(frozen=True)
class HestonParams:
    """CIR spot-variance benchmark parameters."""

    sigma0_sq: float
    theta_sq: float
    k: float
    gamma: float

    def __post_init__(self):
        if min(self.sigma0_sq, self.theta_sq, self.k, self.gamma) <= 0:
            raise ValueError("all parameters must be positive")


@dataclass(frozen=True)
class SeriesConfig:
    """Square-root series controls: expansion centre and truncation."""

    beta2: float | None = None  # None -> centre at the expected realized variance
    max_terms: int = 20
    target_abs_error: float = 1e-4

    def __post_init__(self):
        if self.beta2 is not None and self.beta2 <= 0:
            raise ValueError("beta2 must be positive")
        if self.max_terms < 1:
            raise ValueError("max_terms must be at least 1")


def rate_per_day(annual_rate: float, days_per_year: float = 252.0) -> float:
    """Convert an annual simple rate to the per-day quote used throughout."""
    return annual_rate / days_per_year


def risk_neutral_c1(spec: SubordinatorSpec, rho: float, r: float) -> float:
    """Drift level that makes the discounted stock a martingale (with c2 = 1/2)."""
    from .levy import cgf
    return r - cgf(spec, rho)


def jump_leg_mean_rv(p: ModelParams, T: float) -> float:
    """E of the jump contribution (1/(lam T)) int_0^T (1-e^{-lam(T-s)}) dZ_s."""
    lam = p.lam
    k1 = p.spec.kappa1
    return k1 / (lam * T) * (T - (1.0 - math.exp(-lam * T)) / lam)


def frac_bns_expected_rv(p: ModelParams, T: float,
                         quad: QuadratureConfig = DEFAULT_QUAD,
                         fixed_nodes: int = 0) -> float:
    """Expected realized variance: decay of the initial imbalance, the
    accumulated jump mean, and the lognormal time average of e^{X_t}."""
    if T <= 0:
        raise ValueError("T must be positive")
    lam = p.lam
    e_x0 = math.exp(p.fou.x0)
    v1 = ((1.0 - math.exp(-lam * T)) * (p.sigma0_sq - e_x0)
          + (T - (1.0 - math.exp(-lam * T)) / lam) * p.spec.kappa1) / lam
    return v1 / T + expected_exp_integral(T, p.fou, quad, fixed_nodes=fixed_nodes)


def frac_bns_variance_swap_price(p: ModelParams, contract: SwapContract,
                                 quad: QuadratureConfig = DEFAULT_QUAD) -> float:
    """Discounted difference between expected realized variance and strike."""
    if contract.kind != "variance":
        raise ValueError("contract kind must be 'variance'")
    T = contract.maturity
    erv = frac_bns_expected_rv(p, T, quad)
    return math.exp(-contract.rate * T) * (erv - contract.strike)


_NODE_CACHE: dict = {}


def _gauss_law_on_nodes(p: FouParams, T: float, n_nodes: int):
    """Mean vector and covariance of X at GL nodes on [0, T]."""
    key = (p, float(T), int(n_nodes), "gl")
    hit = _NODE_CACHE.get(key)
    if hit is not None:
        return hit
    nodes, weights = panel_nodes(np.array([0.0]), np.array([T]), n_nodes)
    nodes, weights = nodes[0], weights[0]
    grid = TimeGrid(np.concatenate([[0.0], nodes]))
    mean, cov = fou_gram(p, grid)
    out = (nodes, weights, mean, cov)
    _NODE_CACHE[key] = out
    return out


def _cov_spline(p: FouParams, T: float, n_grid: int = 129):
    key = (p, float(T), int(n_grid), "spline")
    hit = _NODE_CACHE.get(key)
    if hit is not None:
        return hit
    grid = TimeGrid.uniform(T, n_grid - 1)
    _, cov = fou_gram(p, grid)
    # pad time 0 (X_0 deterministic: zero covariance row)
    full = np.zeros((n_grid, n_grid))
    full[1:, 1:] = cov
    spline = RectBivariateSpline(grid.points, grid.points, full, kx=3, ky=3)
    _NODE_CACHE[key] = spline
    return spline


def _log_b_moment(p: ModelParams, k: int, T: float, integrator: str,
                  quad: QuadratureConfig, qmc_pow: int, qmc_reps: int,
                  target_rel_error: float, seed: int = 0):
    """log of B_k = E[((1/T) int_0^T e^{X_t} dt)^k] and a relative error guess."""
    if k == 0:
        return 0.0, 0.0
    if integrator == "auto":
        integrator = "tensor-quad" if k <= 3 else "qmc"
    if integrator == "tensor-quad":
        if k > 3:
            raise ValueError("tensor-quad is limited to k <= 3")
        n_nodes = 48 if k <= 2 else 32
        nodes, weights, mean, cov = _gauss_law_on_nodes(p.fou, T, n_nodes)
        logw = np.log(weights)
        if k == 1:
            expo = mean + 0.5 * np.diag(cov) + logw
            return float(logsumexp(expo)) - math.log(T), 0.0
        if k == 2:
            expo = (mean[:, None] + mean[None, :]
                    + 0.5 * (np.diag(cov)[:, None] + np.diag(cov)[None, :]) + cov
                    + logw[:, None] + logw[None, :])
            return float(logsumexp(expo)) - 2 * math.log(T), 0.0
        d = np.diag(cov)
        expo = (mean[:, None, None] + mean[None, :, None] + mean[None, None, :]
                + 0.5 * (d[:, None, None] + d[None, :, None] + d[None, None, :])
                + cov[:, :, None] + cov[:, None, :] + cov[None, :, :]
                + logw[:, None, None] + logw[None, :, None] + logw[None, None, :])
        return float(logsumexp(expo)) - 3 * math.log(T), 0.0
    if integrator != "qmc":
        raise ValueError(f"unknown integrator {integrator!r}")
    spline = _cov_spline(p.fou, T)
    n_per_rep = 1 << max(qmc_pow - 3, 8)
    rep_logs = []
    for rep in range(qmc_reps):
        sob = qmc.Sobol(d=k, scramble=True, seed=derived_rng(seed, 90, k, rep))
        u = sob.random(n_per_rep) * T
        expo = fou_mean(u, p.fou).sum(axis=1)
        for a in range(k):
            expo += 0.5 * spline.ev(u[:, a], u[:, a])
            for b in range(a + 1, k):
                expo += spline.ev(u[:, a], u[:, b])
        rep_logs.append(logsumexp(expo) - math.log(n_per_rep))
    rep_logs = np.array(rep_logs)
    center = rep_logs.max()
    vals = np.exp(rep_logs - center)
    mean_val = vals.mean()
    rel_se = vals.std(ddof=1) / (mean_val * math.sqrt(len(vals)))
    if rel_se > target_rel_error:
        raise ValueError(
            f"QMC budget exhausted for B_{k}: relative error {rel_se:.2e} "
            f"above target {target_rel_error:.2e}")
    return float(center + math.log(mean_val)), float(rel_se)


def b_moment(p: ModelParams, k: int, T: float, integrator: str = "auto",
             quad: QuadratureConfig = DEFAULT_QUAD, qmc_pow: int = 16,
             target_rel_error: float = 5e-3) -> float:
    """k-th moment of the time-averaged exponential of the log-variance factor."""
    if k < 0:
        raise ValueError("k must be non-negative")
    log_b, _ = _log_b_moment(p, k, T, integrator, quad, qmc_pow, 8, target_rel_error)
    if log_b > LOG_FLOAT_MAX:
        raise OverflowError(f"B_{k} exceeds float range (log value {log_b:.1f})")
    return math.exp(log_b)


def vol_series_error_bound(beta: float, n_terms: int) -> float:
    """A-priori truncation bound for the N-term square-root series."""
    if n_terms < 1:
        raise ValueError("N must be at least 1")
    return beta / ((2 * n_terms - 1) * math.sqrt(3 * n_terms + 1))


def _sqrt_series_coeff(n: int) -> float:
    # Taylor coefficients of sqrt(1 + x): (-1)^{n+1} (2n)! / (4^n (n!)^2 (2n-1))
    return (-1.0) ** (n + 1) * math.comb(2 * n, n) / (4.0 ** n * (2 * n - 1))


def _scaled_jump_moments(p: ModelParams, T: float, beta2: float, n: int,
                         quad: QuadratureConfig) -> np.ndarray:
    """Moments of (J - beta^2)/beta^2 for the model jump leg J."""
    lam = p.lam
    scale = 1.0 / (lam * T)

    def weight(s):
        return scale * (1.0 - np.exp(-lam * (T - np.asarray(s, dtype=float))))

    cums = np.empty(n) if n else np.empty(0)
    for j in range(1, n + 1):
        wj = adaptive_gauss_legendre(lambda s: weight(s) ** j, 0.0, T, quad)
        cums[j - 1] = cumulant(p.spec, j) * wj / beta2 ** j
    if n:
        cums[0] -= 1.0
    return moments_from_cumulants(cums)


def frac_bns_volatility_swap_price(p: ModelParams, contract: SwapContract,
                                   series: SeriesConfig | None = None,
                                   quad: QuadratureConfig = DEFAULT_QUAD
                                   ) -> tuple[float, int, float]:
    """Volatility swap price by the truncated square-root series.

    Returns (price, number of series terms used, a-priori error bound for
    that truncation). Requires sigma0_sq = e^{x0} so the initial variance
    imbalance term vanishes.
    """
    if contract.kind != "volatility":
        raise ValueError("contract kind must be 'volatility'")
    e_x0 = math.exp(p.fou.x0)
    if abs(p.sigma0_sq - e_x0) > 1e-9 * max(abs(p.sigma0_sq), abs(e_x0)):
        raise ValueError("volatility swap pricing requires sigma0_sq = exp(x0)")
    series = series or SeriesConfig()
    T = contract.maturity
    max_terms = min(series.max_terms, MAX_MOMENT_ORDER)
    beta2 = series.beta2 if series.beta2 is not None else frac_bns_expected_rv(p, T, quad)
    beta = math.sqrt(beta2)
    log_beta2 = math.log(beta2)

    a_scaled = _scaled_jump_moments(p, T, beta2, max_terms, quad)
    b_scaled = np.empty(max_terms + 1)
    b_scaled[0] = 1.0
    total = 0.0
    n_used = 0
    prev_mag = math.inf
    grew = 0
    for n in range(max_terms):
        log_b, _ = _log_b_moment(p, n, T, "auto", quad, 16, 8, 5e-3)
        scaled_log = log_b - n * log_beta2
        if scaled_log > LOG_FLOAT_MAX:
            raise SeriesDivergenceError(
                f"scaled Gaussian moment b_{n} overflows; beta^2 outside the "
                "series validity region")
        b_scaled[n] = math.exp(scaled_log)
        inner = sum(math.comb(n, k) * a_scaled[n - k] * b_scaled[k] for k in range(n + 1))
        term = _sqrt_series_coeff(n) * beta * inner
        total += term
        n_used = n + 1
        mag = abs(term)
        if n >= 2:
            grew = grew + 1 if mag > prev_mag else 0
            if grew >= 2:
                raise SeriesDivergenceError(
                    f"series terms growing at n = {n} (|term| {mag:.3e}); "
                    "beta^2 is outside the validity region")
        prev_mag = mag
        bound = vol_series_error_bound(beta, n_used)
        if n >= 1 and bound < series.target_abs_error and mag < series.target_abs_error:
            break
    bound = vol_series_error_bound(beta, n_used)
    price = math.exp(-contract.rate * T) * (total - contract.strike)
    return price, n_used, bound


def heston_expected_rv(hp: HestonParams, T: float) -> float:
    """Mean realized variance of the CIR spot-variance benchmark."""
    if T <= 0:
        raise ValueError("T must be positive")
    kt = hp.k * T
    return (1.0 - math.exp(-kt)) / kt * (hp.sigma0_sq - hp.theta_sq) + hp.theta_sq


def heston_var_rv(hp: HestonParams, T: float) -> float:
    """Variance of realized variance of the CIR benchmark."""
    if T <= 0:
        raise ValueError("T must be positive")
    k, g = hp.k, hp.gamma
    kt = k * T
    e1 = math.exp(-kt)
    e2 = math.exp(-2 * kt)
    # e^{-2kT}-scaled form of the closed expression, stable for large kT
    term_s = (2.0 - 4.0 * kt * e1 - 2.0 * e2) * (hp.sigma0_sq - hp.theta_sq)
    term_t = (2.0 * kt - 3.0 + 4.0 * e1 - e2) * hp.theta_sq
    return g * g / (2.0 * k ** 3 * T * T) * (term_s + term_t)


def heston_vol_approx(hp: HestonParams, T: float) -> float:
    """Second-order delta-method estimate of expected realized volatility."""
    e = heston_expected_rv(hp, T)
    v = heston_var_rv(hp, T)
    return math.sqrt(e) - v / (8.0 * e ** 1.5)


def classical_bns_expected_rv(sigma0_sq: float, kappa1: float, kappa2: float,
                              lam: float, T: float) -> float:
    """Mean realized variance of the classical jump-OU variance model,
    including the price-jump quadratic variation at unit leverage."""
    decay = (1.0 - math.exp(-lam * T)) / lam
    return (decay * sigma0_sq + kappa1 * (T - decay)) / T + lam * kappa2


def classical_bns_variance_swap_price(sigma0_sq: float, spec: SubordinatorSpec,
                                      lam: float, rho: float,
                                      contract: SwapContract) -> float:
    """Variance swap price for the classical jump-OU variance model."""
    if contract.kind != "variance":
        raise ValueError("contract kind must be 'variance'")
    if lam <= 0:
        raise ValueError("lam must be positive")
    T = contract.maturity
    k1, k2 = spec.kappa1, spec.kappa2
    decay = (1.0 - math.exp(-lam * T)) / lam
    inner = (decay * (sigma0_sq - k1) + k1 * T) / T + rho * rho * lam * k2
    return math.exp(-contract.rate * T) * (inner - contract.strike)
