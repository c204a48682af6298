"""Full-model path simulation and Monte Carlo estimators.

Simulation follows the model dynamics literally: the log-variance factor
X is sampled from its exact Gaussian law on the grid (default) or via the
explicit pathwise solution; the spot variance is assembled from its
integrated representation with compound Poisson jumps placed continuously
in time and decayed with exact exponentials; log-price increments use the
drift b_t = c1 - c2 * sigma_t^2 plus the leveraged jump leg.

Estimators apply antithetic variates to the Gaussian legs and report the
standard error over antithetic pair means. Batches are derived from
(seed, batch index) Philox streams, so results are reproducible for a
fixed batch size regardless of how batches are scheduled.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .fou import fou_gram, fou_mean, sample_fou_batch, _fou_from_fbm
from .gaussian_core import SamplePath, TimeGrid, cholesky_psd, sample_fbm_batch
from .levy import SubordinatorSpec, sample_subordinator_batch
from .pricing import HestonParams, ModelParams
from .rng import derived_rng

EXACT_LAW_MAX_POINTS = 2048


@dataclass(frozen=True)
class SimConfig:
    """Path count, grid resolution, seed and X sampling mode."""

    n_paths: int
    steps_per_day: int = 4
    seed: int = 0
    x_mode: str = "auto"  # exact-law | explicit-solution | auto
    batch_size: int = 16384

    def __post_init__(self):
        if self.n_paths < 1 or self.steps_per_day < 1:
            raise ValueError("n_paths and steps_per_day must be >= 1")
        if self.x_mode not in ("auto", "exact-law", "explicit-solution"):
            raise ValueError(f"unknown x_mode {self.x_mode!r}")


@dataclass(frozen=True)
class ModelPath:
    """One simulated scenario: price, log-variance factor, variance, jumps."""

    grid: TimeGrid
    s: SamplePath
    x: SamplePath
    sigma_sq: SamplePath
    z: SamplePath
    lam: float
    jump_times: np.ndarray | None = None
    jump_sizes: np.ndarray | None = None

    def __post_init__(self):
        if np.any(self.sigma_sq.values <= 0):
            raise ValueError("sigma_sq must be positive along the path")
        if np.any(np.diff(self.z.values) < -1e-12):
            raise ValueError("subordinator path must be non-decreasing")


def _resolve_mode(mode: str, n_points: int) -> str:
    if mode == "auto":
        return "exact-law" if n_points <= EXACT_LAW_MAX_POINTS else "explicit-solution"
    return mode


_GRAM_CACHE: dict = {}


def _x_law(p: ModelParams, grid: TimeGrid):
    key = (p.fou, grid)
    hit = _GRAM_CACHE.get(key)
    if hit is None:
        mean, cov = fou_gram(p.fou, grid)
        hit = (mean, cholesky_psd(cov))
        _GRAM_CACHE[key] = hit
    return hit


def _sample_x_batch(p: ModelParams, grid: TimeGrid, rng, n_pairs: int, mode: str):
    """Antithetic pairs of X paths: returns (2 * n_pairs, grid.n)."""
    n = grid.n
    out = np.empty((2 * n_pairs, n))
    out[:, 0] = p.fou.x0
    if p.fou.nu == 0.0:
        out[:] = fou_mean(grid.points, p.fou)[None, :]
        return out
    if mode == "exact-law":
        mean, factor = _x_law(p, grid)
        normals = rng.standard_normal((n_pairs, n - 1))
        dev = normals @ factor.T
        out[0::2, 1:] = mean[None, :] + dev
        out[1::2, 1:] = mean[None, :] - dev
        return out
    # explicit solution driven by an exactly sampled fBm path
    if not grid.is_uniform:
        raise ValueError("explicit-solution mode expects a uniform grid")
    from .gaussian_core import _circulant_sqrt_eig, _fgn_from_rng
    sqrt_lam = _circulant_sqrt_eig(n - 1, p.fou.h, grid.dt)
    fgn = _fgn_from_rng(rng, n - 1, n_pairs, sqrt_lam)
    w = np.zeros((2 * n_pairs, n))
    w[0::2, 1:] = np.cumsum(fgn, axis=1)
    w[1::2, 1:] = -w[0::2, 1:]
    return _fou_from_fbm(p.fou, grid.points, w)


def _jump_rv_weights(lam: float, T: float, times: np.ndarray) -> np.ndarray:
    return (1.0 - np.exp(-lam * (T - times))) / (lam * T)


def _batch_scenarios(p: ModelParams, T: float, cfg: SimConfig, batch_idx: int,
                     n_pairs: int, mode: str, with_price: bool):
    """Simulate one batch; returns dict of arrays for 2 * n_pairs paths."""
    n_steps = max(1, round(T * cfg.steps_per_day))
    grid = TimeGrid.uniform(T, n_steps)
    rng = derived_rng(cfg.seed, 3, batch_idx)
    x = _sample_x_batch(p, grid, rng, n_pairs, mode)
    n_paths = 2 * n_pairs
    pts = grid.points
    e_x0 = math.exp(p.fou.x0)
    m_t = np.exp(-p.lam * pts) * (p.sigma0_sq - e_x0)

    cp = p.spec.family == "compound-poisson-exp"
    if cp:
        a, b = p.spec.p1, p.spec.p2
        counts = rng.poisson(a * T, n_pairs)
        total = int(counts.sum())
        raw_times = rng.uniform(0.0, T, total)
        sizes = rng.exponential(b, total)
        owner_pair = np.repeat(np.arange(n_pairs), counts)
        order = np.lexsort((raw_times, owner_pair))
        times, sizes, owner_pair = raw_times[order], sizes[order], owner_pair[order]
        jump_leg = np.zeros((n_pairs, pts.size))
        dz_grid = np.zeros((n_pairs, pts.size))
        interval = np.searchsorted(pts, times, side="left")  # jump at t contributes from t on
        dt = grid.dt
        decay_dt = math.exp(-p.lam * dt)
        for k in range(1, pts.size):
            sel = interval == k
            fresh = np.bincount(owner_pair[sel],
                                weights=sizes[sel] * np.exp(-p.lam * (pts[k] - times[sel])),
                                minlength=n_pairs)
            jump_leg[:, k] = jump_leg[:, k - 1] * decay_dt + fresh
            dz_grid[:, k] = np.bincount(owner_pair[sel], weights=sizes[sel],
                                        minlength=n_pairs)
        z_grid = np.cumsum(dz_grid, axis=1)
    else:
        times = sizes = owner_pair = None
        z_pair = sample_subordinator_batch(p.spec, grid, hash((cfg.seed, 3, batch_idx)) & ((1 << 63) - 1), n_pairs)
        z_grid = z_pair
        dz_grid = np.diff(z_grid, axis=1, prepend=0.0)
        jump_leg = np.zeros((n_pairs, pts.size))
        decay_dt = math.exp(-p.lam * grid.dt)
        half = math.exp(-0.5 * p.lam * grid.dt)
        for k in range(1, pts.size):
            jump_leg[:, k] = jump_leg[:, k - 1] * decay_dt + dz_grid[:, k] * half

    jump_leg_full = np.repeat(jump_leg, 2, axis=0)
    z_full = np.repeat(z_grid, 2, axis=0)
    dz_full = np.repeat(dz_grid, 2, axis=0)
    sigma_sq = m_t[None, :] + np.exp(x) + jump_leg_full

    out = {"grid": grid, "x": x, "sigma_sq": sigma_sq, "z": z_full,
           "times": times, "sizes": sizes, "owner_pair": owner_pair}
    if with_price:
        dt = grid.dt
        eta = rng.standard_normal((n_pairs, pts.size - 1))
        eta = np.stack([eta, -eta], axis=1).reshape(n_paths, pts.size - 1)
        sig = np.sqrt(sigma_sq[:, :-1])
        dy = ((p.c1 - p.c2 * sigma_sq[:, :-1]) * dt + sig * math.sqrt(dt) * eta
              + p.rho * dz_full[:, 1:])
        y = np.concatenate([np.zeros((n_paths, 1)), np.cumsum(dy, axis=1)], axis=1)
        out["s"] = p.s0 * np.exp(y)
    return out


def simulate_paths(p: ModelParams, T: float, cfg: SimConfig) -> Iterator[ModelPath]:
    """Stream ModelPath scenarios one at a time."""
    mode = _resolve_mode(cfg.x_mode, max(1, round(T * cfg.steps_per_day)) + 1)
    produced = 0
    batch_idx = 0
    while produced < cfg.n_paths:
        n_pairs = min((cfg.n_paths - produced + 1) // 2, cfg.batch_size // 2)
        n_pairs = max(n_pairs, 1)
        batch = _batch_scenarios(p, T, cfg, batch_idx, n_pairs, mode, with_price=True)
        grid = batch["grid"]
        n_in_batch = min(2 * n_pairs, cfg.n_paths - produced)
        for i in range(n_in_batch):
            pair = i // 2
            if batch["times"] is not None:
                sel = batch["owner_pair"] == pair
                jt, js = batch["times"][sel], batch["sizes"][sel]
            else:
                jt = js = None
            yield ModelPath(
                grid=grid,
                s=SamplePath(grid, batch["s"][i], seed=cfg.seed),
                x=SamplePath(grid, batch["x"][i], seed=cfg.seed),
                sigma_sq=SamplePath(grid, batch["sigma_sq"][i], seed=cfg.seed),
                z=SamplePath(grid, batch["z"][i], seed=cfg.seed),
                lam=p.lam,
                jump_times=jt,
                jump_sizes=js,
            )
        produced += n_in_batch
        batch_idx += 1


def realized_variance(path: ModelPath) -> float:
    """Time-averaged spot variance over the path's horizon.

    With jump information present the jump leg integrates in closed form
    (exact decay between jump times); only the smooth part is left to the
    trapezoid rule.
    """
    pts = path.grid.points
    T = pts[-1]
    if path.jump_times is None:
        return float(np.trapezoid(path.sigma_sq.values, pts)) / T
    lam = path.lam
    sig0 = path.sigma_sq.values[0]
    e_x0 = math.exp(path.x.values[0])
    m_part = (sig0 - e_x0) * (1.0 - math.exp(-lam * T)) / (lam * T)
    gauss_part = float(np.trapezoid(np.exp(path.x.values), pts)) / T
    jump_part = float(np.sum(path.jump_sizes * _jump_rv_weights(lam, T, path.jump_times)))
    return m_part + gauss_part + jump_part


def _rv_pairs(p: ModelParams, T: float, cfg: SimConfig) -> np.ndarray:
    """Antithetic-pair realized variance samples, shape (n_pairs, 2)."""
    mode = _resolve_mode(cfg.x_mode, max(1, round(T * cfg.steps_per_day)) + 1)
    n_pairs_total = (cfg.n_paths + 1) // 2
    lam = p.lam
    e_x0 = math.exp(p.fou.x0)
    m_part = (p.sigma0_sq - e_x0) * (1.0 - math.exp(-lam * T)) / (lam * T)
    chunks = []
    done = 0
    batch_idx = 0
    while done < n_pairs_total:
        n_pairs = min(n_pairs_total - done, cfg.batch_size // 2)
        batch = _batch_scenarios(p, T, cfg, batch_idx, n_pairs, mode, with_price=False)
        pts = batch["grid"].points
        gauss = np.trapezoid(np.exp(batch["x"]), pts, axis=1) / T
        if batch["times"] is not None:
            w = batch["sizes"] * _jump_rv_weights(lam, T, batch["times"])
            jump = np.bincount(batch["owner_pair"], weights=w, minlength=n_pairs)
        else:
            # left-limit weights on grid increments
            wgt = _jump_rv_weights(lam, T, pts[:-1] + 0.5 * np.diff(pts))
            dz = np.diff(batch["z"][0::2], axis=1)
            jump = dz @ wgt
        rv = m_part + gauss.reshape(n_pairs, 2) + jump[:, None]
        chunks.append(rv)
        done += n_pairs
        batch_idx += 1
    return np.concatenate(chunks, axis=0)


def _mc_mean(values: np.ndarray) -> tuple[float, float]:
    est = float(values.mean())
    se = float(values.std(ddof=1) / math.sqrt(values.size)) if values.size > 1 else math.inf
    return est, se


def mc_expected_rv(p: ModelParams, T: float, cfg: SimConfig) -> tuple[float, float]:
    """Monte Carlo estimate (mean, standard error) of expected realized variance."""
    rv = _rv_pairs(p, T, cfg)
    return _mc_mean(rv.mean(axis=1))


def mc_expected_vol(p: ModelParams, T: float, cfg: SimConfig) -> tuple[float, float]:
    """Monte Carlo estimate (mean, standard error) of expected realized volatility."""
    rv = _rv_pairs(p, T, cfg)
    return _mc_mean(np.sqrt(rv).mean(axis=1))


def mc_heston_rv(hp: HestonParams, T: float, n_paths: int, n_steps: int,
                 seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Euler full-truncation CIR paths; returns (rv samples, terminal variance)."""
    rng = derived_rng(seed, 11)
    dt = T / n_steps
    v = np.full(n_paths, hp.sigma0_sq)
    acc = np.zeros(n_paths)  # trapezoid accumulation of v over time
    for _ in range(n_steps):
        vplus = np.maximum(v, 0.0)
        dv = hp.k * (hp.theta_sq - vplus) * dt + hp.gamma * np.sqrt(vplus * dt) * rng.standard_normal(n_paths)
        v_new = v + dv
        acc += 0.5 * dt * (np.maximum(v, 0.0) + np.maximum(v_new, 0.0))
        v = v_new
    return acc / T, v


def mc_classical_bns_rv(sigma0_sq: float, spec: SubordinatorSpec, lam: float,
                        rho: float, T: float, n_paths: int, seed: int = 0) -> np.ndarray:
    """Realized-variance samples for the classical jump-OU model.

    The variance process is driven by the lam-time-changed subordinator and
    realized variance includes the price-jump quadratic variation.
    """
    if spec.family != "compound-poisson-exp":
        raise ValueError("oracle implemented for compound Poisson jumps")
    rng = derived_rng(seed, 12)
    a, b = spec.p1, spec.p2
    counts = rng.poisson(a * lam * T, n_paths)
    total = int(counts.sum())
    times = rng.uniform(0.0, T, total)
    sizes = rng.exponential(b, total)
    owner = np.repeat(np.arange(n_paths), counts)
    base = sigma0_sq * (1.0 - math.exp(-lam * T)) / (lam * T)
    w = sizes * (1.0 - np.exp(-lam * (T - times))) / (lam * T)
    jump_int = np.bincount(owner, weights=w, minlength=n_paths)
    jump_qv = rho * rho * np.bincount(owner, weights=sizes ** 2, minlength=n_paths) / T
    return base + jump_int + jump_qv
