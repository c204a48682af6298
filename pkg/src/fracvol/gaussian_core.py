"""Fractional Brownian motion: covariance, exact samplers, and the
Gaussian calculus for time integrals of continuous Gaussian processes.

Both samplers draw from the exact joint law of the process on the grid:
`cholesky` factors the covariance matrix directly (any grid), `circulant`
embeds the stationary increment covariance in a circulant matrix and uses
FFT (uniform grids, O(n log n)).
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable

import numpy as np

from .quadrature import QuadratureConfig, DEFAULT_QUAD, adaptive_gauss_legendre, adaptive_tensor_quad2d
from .rng import derived_rng

PSD_CLIP_TOL = 1e-10


def check_hurst(h: float) -> float:
    """Validate a Hurst parameter.

    The model requires 1/2 < h <= 1; h = 1/2 is admitted so the Brownian
    reductions can be exercised, anything below is rejected.
    """
    h = float(h)
    if not (0.5 <= h <= 1.0):
        raise ValueError(f"Hurst parameter must satisfy 1/2 <= h <= 1, got {h}")
    return h


def fbm_covariance(s, t, h: float):
    """Covariance (1/2)(|t|^2H + |s|^2H - |t-s|^2H) of fBm at times s, t >= 0."""
    h = check_hurst(h)
    s = np.asarray(s, dtype=float)
    t = np.asarray(t, dtype=float)
    two_h = 2.0 * h
    out = 0.5 * (np.abs(t) ** two_h + np.abs(s) ** two_h - np.abs(t - s) ** two_h)
    if out.ndim == 0:
        return float(out)
    return out


@dataclass(frozen=True)
class TimeGrid:
    """Strictly increasing observation times starting at 0."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 1 or pts.size < 2:
            raise ValueError("grid needs at least two points")
        if pts[0] != 0.0:
            raise ValueError("grid must start at 0")
        if np.any(np.diff(pts) <= 0):
            raise ValueError("grid must be strictly increasing")
        object.__setattr__(self, "points", pts)

    @classmethod
    def uniform(cls, t_end: float, n_steps: int) -> "TimeGrid":
        if t_end <= 0 or n_steps < 1:
            raise ValueError("need t_end > 0 and n_steps >= 1")
        return cls(np.linspace(0.0, float(t_end), int(n_steps) + 1))

    @property
    def n(self) -> int:
        return self.points.size

    @property
    def t_end(self) -> float:
        return float(self.points[-1])

    @property
    def is_uniform(self) -> bool:
        d = np.diff(self.points)
        return bool(np.allclose(d, d[0], rtol=1e-12, atol=1e-14))

    @property
    def dt(self) -> float:
        if not self.is_uniform:
            raise ValueError("grid is not uniform")
        return float(self.points[1] - self.points[0])

    def __eq__(self, other):
        return isinstance(other, TimeGrid) and np.array_equal(self.points, other.points)

    def __hash__(self):
        return hash(self.points.tobytes())


@dataclass(frozen=True)
class SamplePath:
    """One realisation of a process on a grid."""

    grid: TimeGrid
    values: np.ndarray
    seed: int = 0

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.shape != (self.grid.n,):
            raise ValueError("values length must match grid")
        if not np.all(np.isfinite(vals)):
            raise ValueError("path values must be finite")
        object.__setattr__(self, "values", vals)

    def to_csv(self, path_or_buf):
        if hasattr(path_or_buf, "write"):
            self._write_csv(path_or_buf)
        else:
            with open(path_or_buf, "w", newline="") as fh:
                self._write_csv(fh)

    def _write_csv(self, fh):
        writer = csv.writer(fh)
        writer.writerow(["time", "value"])
        for t, v in zip(self.grid.points, self.values):
            writer.writerow([repr(float(t)), repr(float(v))])

    @classmethod
    def from_csv(cls, path_or_buf, seed: int = 0) -> "SamplePath":
        if hasattr(path_or_buf, "read"):
            rows = list(csv.reader(path_or_buf))
        else:
            with open(path_or_buf, newline="") as fh:
                rows = list(csv.reader(fh))
        if not rows or [c.strip().lower() for c in rows[0]] != ["time", "value"]:
            raise ValueError("expected header 'time,value'")
        data = np.array([[float(r[0]), float(r[1])] for r in rows[1:]], dtype=float)
        return cls(TimeGrid(data[:, 0]), data[:, 1], seed=seed)

    def to_npy(self, path):
        np.save(path, np.column_stack([self.grid.points, self.values]))

    @classmethod
    def from_npy(cls, path, seed: int = 0) -> "SamplePath":
        data = np.load(path)
        return cls(TimeGrid(data[:, 0]), data[:, 1], seed=seed)


@dataclass(frozen=True)
class GaussianLaw:
    """Mean and covariance functions of a continuous Gaussian process."""

    mean_fn: Callable
    cov_fn: Callable

    @classmethod
    def brownian(cls) -> "GaussianLaw":
        return cls(lambda t: np.zeros_like(np.asarray(t, dtype=float)),
                   lambda s, t: np.minimum(s, t))

    @classmethod
    def fbm(cls, h: float) -> "GaussianLaw":
        h = check_hurst(h)
        return cls(lambda t: np.zeros_like(np.asarray(t, dtype=float)),
                   lambda s, t: fbm_covariance(s, t, h))

    @classmethod
    def deterministic(cls, mean_fn: Callable) -> "GaussianLaw":
        return cls(mean_fn, lambda s, t: np.zeros(np.broadcast(np.asarray(s), np.asarray(t)).shape))

    def gram(self, times: np.ndarray) -> np.ndarray:
        times = np.asarray(times, dtype=float)
        return np.asarray(self.cov_fn(times[:, None], times[None, :]), dtype=float)


def cholesky_psd(mat: np.ndarray, clip_tol: float = PSD_CLIP_TOL) -> np.ndarray:
    """Lower-triangular-like factor L with L L^T = mat, tolerating round-off.

    Falls back to an eigenvalue factorisation when plain Cholesky fails;
    eigenvalues in [-clip_tol * max_eig, 0) are treated as zero, anything
    below that is a genuine non-PSD input and raises.
    """
    mat = np.asarray(mat, dtype=float)
    sym = 0.5 * (mat + mat.T)
    try:
        return np.linalg.cholesky(sym)
    except np.linalg.LinAlgError:
        eigvals, eigvecs = np.linalg.eigh(sym)
        top = float(eigvals[-1])
        if top <= 0:
            if abs(top) <= clip_tol:
                return np.zeros_like(sym)
            raise ValueError("matrix is not positive semidefinite")
        if eigvals[0] < -clip_tol * top:
            raise ValueError(
                f"matrix is not positive semidefinite: min eig {eigvals[0]:.3e}, max {top:.3e}"
            )
        eigvals = np.clip(eigvals, 0.0, None)
        return eigvecs * np.sqrt(eigvals)


@lru_cache(maxsize=32)
def _fbm_chol_factor(grid: TimeGrid, h: float) -> np.ndarray:
    times = grid.points[1:]
    gram = fbm_covariance(times[:, None], times[None, :], h)
    return cholesky_psd(gram)


@lru_cache(maxsize=32)
def _circulant_sqrt_eig(n_steps: int, h: float, dt: float) -> np.ndarray:
    k = np.arange(n_steps + 1, dtype=float)
    gamma = 0.5 * dt ** (2 * h) * ((k + 1) ** (2 * h) - 2 * k ** (2 * h) + np.abs(k - 1) ** (2 * h))
    c = np.concatenate([gamma, gamma[-2:0:-1]])
    lam = np.fft.fft(c).real
    if lam.min() < -PSD_CLIP_TOL * max(lam.max(), 1.0):
        raise ValueError("circulant embedding produced negative eigenvalues")
    return np.sqrt(np.clip(lam, 0.0, None))


def _fgn_from_rng(rng, n_steps: int, n_paths: int, sqrt_lam: np.ndarray) -> np.ndarray:
    m = sqrt_lam.size  # == 2 * n_steps
    n = n_steps
    z = np.empty((n_paths, m), dtype=np.complex128)
    z[:, 0] = rng.standard_normal(n_paths)
    z[:, n] = rng.standard_normal(n_paths)
    re = rng.standard_normal((n_paths, n - 1))
    im = rng.standard_normal((n_paths, n - 1))
    z[:, 1:n] = (re + 1j * im) / np.sqrt(2.0)
    z[:, n + 1:] = np.conj(z[:, 1:n][:, ::-1])
    fgn = np.fft.ifft(sqrt_lam * z, axis=1).real[:, :n] * np.sqrt(m)
    return fgn


def sample_fbm_batch(h: float, grid: TimeGrid, seed: int, n_paths: int,
                     method: str = "auto", antithetic: bool = False) -> np.ndarray:
    """Sample n_paths fBm paths on the grid; returns array (n_paths, grid.n).

    W(0) = 0 exactly. With antithetic=True consecutive rows are +/- pairs
    driven by the same normals (n_paths must be even).
    """
    h = check_hurst(h)
    if method == "auto":
        method = "circulant" if grid.is_uniform and grid.n > 512 else "cholesky"
    if method not in ("cholesky", "circulant"):
        raise ValueError(f"unknown method {method!r}")
    if antithetic and n_paths % 2:
        raise ValueError("antithetic sampling needs an even path count")
    n_draw = n_paths // 2 if antithetic else n_paths
    rng = derived_rng(seed, 0)
    n_steps = grid.n - 1
    if method == "circulant":
        if not grid.is_uniform:
            raise ValueError("circulant method requires a uniform grid")
        sqrt_lam = _circulant_sqrt_eig(n_steps, h, grid.dt)
        fgn = _fgn_from_rng(rng, n_steps, n_draw, sqrt_lam)
        w = np.cumsum(fgn, axis=1)
    else:
        factor = _fbm_chol_factor(grid, h)
        normals = rng.standard_normal((n_draw, n_steps))
        w = normals @ factor.T
    if antithetic:
        w = np.stack([w, -w], axis=1).reshape(2 * n_draw, n_steps)
    out = np.zeros((n_paths, grid.n))
    out[:, 1:] = w
    return out


def sample_fbm(h: float, grid: TimeGrid, seed: int, method: str = "auto") -> SamplePath:
    """Sample a single fBm path with the exact joint law on the grid."""
    values = sample_fbm_batch(h, grid, seed, 1, method=method)[0]
    return SamplePath(grid, values, seed=seed)


def integrated_gaussian_law(law: GaussianLaw, t: float,
                            quad: QuadratureConfig = DEFAULT_QUAD) -> tuple[float, float]:
    """Mean and variance of the time integral of X over [0, t].

    The integral of a continuous Gaussian process is Gaussian with mean
    the integral of the mean function and variance the double integral of
    the covariance function over the square.
    """
    if t <= 0:
        raise ValueError("t must be positive")
    mean = adaptive_gauss_legendre(lambda x: np.asarray(law.mean_fn(x), dtype=float), 0.0, t, quad)
    var = adaptive_tensor_quad2d(lambda x, y: np.asarray(law.cov_fn(x, y), dtype=float),
                                 0.0, t, 0.0, t, quad)
    return mean, var


def cross_covariance_with_integral(law: GaussianLaw, s: float, t: float,
                                   quad: QuadratureConfig = DEFAULT_QUAD) -> float:
    """Cov(X_s, integral of X over [0, t]) = integral of cov(s, x) dx."""
    if s < 0 or t < 0:
        raise ValueError("times must be non-negative")
    if t == 0:
        return 0.0
    return adaptive_gauss_legendre(lambda x: np.asarray(law.cov_fn(s, x), dtype=float), 0.0, t, quad)
