"""Levy subordinators: cumulant generating functions, cumulants, Levy
densities, path sampling, and moments of weighted jump integrals.

Supported families (all with positive jumps and no Gaussian part):

* compound-poisson-exp: rate a, exponential jump mean b
* gamma: shape a, rate b
* inverse-gaussian: delta, gamma

Moments of shift + int w(s) dZ_s are computed from the cumulants
kappa_j * int w(s)^j ds via the cumulant-to-moment recursion, which is
the Taylor-mode form of repeatedly differentiating the cumulant
generating function at 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .gaussian_core import SamplePath, TimeGrid
from .quadrature import DEFAULT_QUAD, QuadratureConfig, adaptive_gauss_legendre
from .rng import derived_rng

MAX_MOMENT_ORDER = 20

_FAMILIES = ("compound-poisson-exp", "gamma", "inverse-gaussian")


@dataclass(frozen=True)
class SubordinatorSpec:
    """A subordinator family with its two parameters.

    p1, p2 mean (rate, jump mean) for compound-poisson-exp, (shape, rate)
    for gamma, and (delta, gamma) for inverse-gaussian.
    """

    family: str
    p1: float
    p2: float

    def __post_init__(self):
        if self.family not in _FAMILIES:
            raise ValueError(f"unsupported family {self.family!r}")
        if self.p1 < 0 or self.p2 <= 0:
            raise ValueError("parameters must be positive (rate may be zero)")

    @classmethod
    def compound_poisson_exp(cls, rate: float, jump_mean: float) -> "SubordinatorSpec":
        return cls("compound-poisson-exp", rate, jump_mean)

    @classmethod
    def gamma_process(cls, shape: float, rate: float) -> "SubordinatorSpec":
        return cls("gamma", shape, rate)

    @classmethod
    def inverse_gaussian(cls, delta: float, gamma: float) -> "SubordinatorSpec":
        return cls("inverse-gaussian", delta, gamma)

    @classmethod
    def from_cumulants(cls, family: str, kappa1: float, kappa2: float) -> "SubordinatorSpec":
        """Solve the family parameters from the first two cumulants of Z_1."""
        if kappa1 <= 0 or kappa2 <= 0:
            raise ValueError("cumulants must be positive")
        if family == "compound-poisson-exp":
            b = kappa2 / (2.0 * kappa1)
            return cls(family, kappa1 / b, b)
        if family == "gamma":
            b = kappa1 / kappa2
            return cls(family, kappa1 * b, b)
        if family == "inverse-gaussian":
            g = math.sqrt(kappa1 / kappa2)
            return cls(family, kappa1 * g, g)
        raise ValueError(f"unsupported family {family!r}")

    @property
    def theta_max(self) -> float:
        """Upper boundary of the CGF domain."""
        if self.family == "compound-poisson-exp":
            return 1.0 / self.p2
        if self.family == "gamma":
            return self.p2
        return 0.5 * self.p2 ** 2

    @property
    def kappa1(self) -> float:
        return cumulant(self, 1)

    @property
    def kappa2(self) -> float:
        return cumulant(self, 2)

    def levy_density(self, x):
        """Levy measure density on x > 0."""
        x = np.asarray(x, dtype=float)
        if np.any(x <= 0):
            raise ValueError("Levy density defined on x > 0")
        if self.family == "compound-poisson-exp":
            a, b = self.p1, self.p2
            return (a / b) * np.exp(-x / b)
        if self.family == "gamma":
            a, b = self.p1, self.p2
            return a * np.exp(-b * x) / x
        d, g = self.p1, self.p2
        return d / math.sqrt(2 * math.pi) * x ** -1.5 * np.exp(-0.5 * g * g * x)


def cgf(spec: SubordinatorSpec, theta: float) -> float:
    """log E[e^{theta Z_1}] in the family closed form."""
    theta = float(theta)
    if theta >= spec.theta_max:
        raise ValueError(f"theta {theta} is at or above the CGF domain boundary "
                         f"{spec.theta_max}")
    if spec.family == "compound-poisson-exp":
        a, b = spec.p1, spec.p2
        return a * b * theta / (1.0 - b * theta)
    if spec.family == "gamma":
        a, b = spec.p1, spec.p2
        return -a * math.log1p(-theta / b)
    d, g = spec.p1, spec.p2
    return d * (g - math.sqrt(g * g - 2.0 * theta))


def cumulant(spec: SubordinatorSpec, k: int) -> float:
    """k-th cumulant of Z_1 (k-th derivative of the CGF at 0)."""
    if not 1 <= k <= MAX_MOMENT_ORDER:
        raise ValueError(f"cumulant order must be in [1, {MAX_MOMENT_ORDER}]")
    if spec.family == "compound-poisson-exp":
        a, b = spec.p1, spec.p2
        return a * math.factorial(k) * b ** k
    if spec.family == "gamma":
        a, b = spec.p1, spec.p2
        return a * math.factorial(k - 1) / b ** k
    d, g = spec.p1, spec.p2
    # (2k-3)!! = (2k-2)! / (2^{k-1} (k-1)!)
    odd_fact = math.factorial(2 * k - 2) // (2 ** (k - 1) * math.factorial(k - 1))
    return d * odd_fact * g ** (1 - 2 * k)


def moments_from_cumulants(cums: np.ndarray) -> np.ndarray:
    """Raw moments m_0..m_n from cumulants c_1..c_n (cums[j] = c_{j+1})."""
    n = cums.size
    m = np.empty(n + 1)
    m[0] = 1.0
    for k in range(1, n + 1):
        acc = 0.0
        for j in range(1, k + 1):
            acc += math.comb(k - 1, j - 1) * cums[j - 1] * m[k - j]
        m[k] = acc
    return m


def weighted_integral_moments(spec: SubordinatorSpec, weight, upper: float, n: int,
                              shift: float = 0.0,
                              quad: QuadratureConfig = DEFAULT_QUAD) -> np.ndarray:
    """Moments m_0..m_n of shift + int_0^upper weight(s) dZ_s.

    The j-th cumulant of the integral is kappa_j * int_0^upper w(s)^j ds.
    """
    if n < 0:
        raise ValueError("moment order must be non-negative")
    if n > MAX_MOMENT_ORDER:
        raise ValueError(f"moment order {n} exceeds the configured maximum "
                         f"{MAX_MOMENT_ORDER}")
    if n == 0:
        return np.array([1.0])
    cums = np.empty(n)
    for j in range(1, n + 1):
        wj = adaptive_gauss_legendre(lambda s: np.asarray(weight(s), dtype=float) ** j,
                                     0.0, upper, quad)
        cums[j - 1] = cumulant(spec, j) * wj
    cums[0] += shift
    return moments_from_cumulants(cums)


@dataclass(frozen=True)
class AMomentRequest:
    """Order, squared shift, jump decay rate, and horizon for a jump moment."""

    n: int
    beta2: float
    lam: float
    T: float

    def __post_init__(self):
        if self.n < 0 or self.n > MAX_MOMENT_ORDER:
            raise ValueError(f"order must be in [0, {MAX_MOMENT_ORDER}]")
        if self.beta2 < 0:
            raise ValueError("beta2 must be non-negative")
        if self.lam <= 0 or self.T <= 0:
            raise ValueError("lam and T must be positive")


def a_moment(spec: SubordinatorSpec, req: AMomentRequest,
             quad: QuadratureConfig = DEFAULT_QUAD) -> float:
    """E[(-beta^2 + (1/(lam T)) int_0^{lam T} (1 - e^{-s}) dZ_s)^n]."""
    scale = 1.0 / (req.lam * req.T)
    moments = weighted_integral_moments(
        spec, lambda s: scale * (1.0 - np.exp(-s)), req.lam * req.T,
        req.n, shift=-req.beta2, quad=quad)
    return float(moments[req.n])


def _cgf_vec(spec: SubordinatorSpec, theta: np.ndarray) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    if np.any(theta >= spec.theta_max):
        raise ValueError("theta at or above the CGF domain boundary")
    if spec.family == "compound-poisson-exp":
        a, b = spec.p1, spec.p2
        return a * b * theta / (1.0 - b * theta)
    if spec.family == "gamma":
        a, b = spec.p1, spec.p2
        return -a * np.log1p(-theta / b)
    d, g = spec.p1, spec.p2
    return d * (g - np.sqrt(g * g - 2.0 * theta))


def mgf_of_weighted_integral(spec: SubordinatorSpec, weight, upper: float,
                             theta: float, shift: float = 0.0,
                             quad: QuadratureConfig = DEFAULT_QUAD) -> float:
    """E[e^{theta (shift + int w dZ)}]; used as a differentiation oracle."""
    def integrand(s):
        return _cgf_vec(spec, theta * np.asarray(weight(s), dtype=float))
    inner = adaptive_gauss_legendre(integrand, 0.0, upper, quad)
    return math.exp(theta * shift + inner)


def sample_jumps(spec: SubordinatorSpec, t_end: float, seed: int, stream: int = 0):
    """Exact jump times and sizes on [0, t_end] for compound Poisson."""
    if spec.family != "compound-poisson-exp":
        raise ValueError("exact jump sampling only applies to compound Poisson")
    rng = derived_rng(seed, 1000 + stream)
    a, b = spec.p1, spec.p2
    count = rng.poisson(a * t_end)
    times = np.sort(rng.uniform(0.0, t_end, count))
    sizes = rng.exponential(b, count)
    return times, sizes


def sample_subordinator_batch(spec: SubordinatorSpec, grid: TimeGrid, seed: int,
                              n_paths: int, stream: int = 0) -> np.ndarray:
    """Z on the grid for n_paths independent paths; Z(0) = 0, non-decreasing."""
    pts = grid.points
    out = np.zeros((n_paths, pts.size))
    if spec.family == "compound-poisson-exp":
        a, b = spec.p1, spec.p2
        if a == 0.0:
            return out
        rng = derived_rng(seed, 2, stream)
        t_end = pts[-1]
        counts = rng.poisson(a * t_end, n_paths)
        total = int(counts.sum())
        times = rng.uniform(0.0, t_end, total)
        sizes = rng.exponential(b, total)
        owner = np.repeat(np.arange(n_paths), counts)
        # cumulative jump mass per path at each grid time
        for k in range(1, pts.size):
            mask = times <= pts[k]
            out[:, k] = np.bincount(owner[mask], weights=sizes[mask], minlength=n_paths)
        return out
    rng = derived_rng(seed, 2, stream)
    dt = np.diff(pts)
    if spec.family == "gamma":
        a, b = spec.p1, spec.p2
        inc = rng.gamma(shape=a * dt[None, :].repeat(n_paths, axis=0), scale=1.0 / b)
    else:
        d, g = spec.p1, spec.p2
        mean = d * dt / g
        shape = (d * dt) ** 2
        inc = rng.wald(mean[None, :].repeat(n_paths, axis=0),
                       shape[None, :].repeat(n_paths, axis=0))
    out[:, 1:] = np.cumsum(inc, axis=1)
    return out


def sample_subordinator(spec: SubordinatorSpec, grid: TimeGrid, seed: int) -> SamplePath:
    values = sample_subordinator_batch(spec, grid, seed, 1)[0]
    return SamplePath(grid, values, seed=seed)
