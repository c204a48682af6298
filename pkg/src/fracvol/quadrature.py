"""Adaptive Gauss-Legendre quadrature in one and two dimensions.

Integrands must accept numpy arrays and evaluate elementwise; the
adaptive drivers evaluate whole refinement fronts in single vectorised
calls. Endpoint power singularities are removed by explicit changes of
variable (`power_endpoint_quad`) rather than by brute subdivision.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np


class QuadratureError(RuntimeError):
    """Raised when an adaptive rule cannot reach its tolerance."""


@dataclass(frozen=True)
class QuadratureConfig:
    abs_tol: float = 1e-10
    rel_tol: float = 1e-8
    max_depth: int = 26
    order: int = 12

    def __post_init__(self):
        if self.abs_tol <= 0 or self.rel_tol <= 0:
            raise ValueError("tolerances must be positive")
        if self.order < 2:
            raise ValueError("order must be at least 2")


DEFAULT_QUAD = QuadratureConfig()


@lru_cache(maxsize=64)
def gl_nodes(order: int):
    """Gauss-Legendre nodes/weights on [-1, 1]."""
    x, w = np.polynomial.legendre.leggauss(order)
    return x, w


def panel_nodes(a, b, order: int):
    """Nodes and weights for GL on [a, b]; a, b may be arrays of panels."""
    x, w = gl_nodes(order)
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    half = 0.5 * (b - a)
    mid = 0.5 * (a + b)
    nodes = mid[..., None] + half[..., None] * x
    weights = half[..., None] * w
    return nodes, weights


def _panel_estimates(f, a, b, order):
    nodes, weights = panel_nodes(a, b, order)
    vals = f(nodes)
    return np.sum(vals * weights, axis=-1)


def adaptive_gauss_legendre(f, a: float, b: float, cfg: QuadratureConfig = DEFAULT_QUAD) -> float:
    """Integrate f over [a, b] with adaptive panel bisection.

    Each panel is accepted when the GL estimate agrees with the sum over
    its two halves to within the panel's share of the global tolerance.
    """
    if b == a:
        return 0.0
    if b < a:
        return -adaptive_gauss_legendre(f, b, a, cfg)
    total_width = b - a
    whole = _panel_estimates(f, np.array([a]), np.array([b]), cfg.order)[0]
    scale = abs(whole)
    lo = np.array([a])
    hi = np.array([b])
    coarse = np.array([whole])
    accepted = 0.0
    for depth in range(cfg.max_depth):
        mid = 0.5 * (lo + hi)
        left = _panel_estimates(f, lo, mid, cfg.order)
        right = _panel_estimates(f, mid, hi, cfg.order)
        fine = left + right
        err = np.abs(fine - coarse)
        tol_here = max(cfg.abs_tol, cfg.rel_tol * max(scale, abs(accepted))) * (hi - lo) / total_width
        ok = err <= tol_here
        accepted += float(np.sum(fine[ok]))
        if np.all(ok):
            return accepted
        lo = np.concatenate([lo[~ok], mid[~ok]])
        hi = np.concatenate([mid[~ok], hi[~ok]])
        coarse = np.concatenate([left[~ok], right[~ok]])
        scale = max(scale, abs(accepted) + float(np.sum(np.abs(fine[~ok]))))
    raise QuadratureError(
        f"1d quadrature did not converge in {cfg.max_depth} levels "
        f"(remaining panels: {lo.size}, worst error {float(np.max(err)):.3e})"
    )


def _rect_estimates(f, ax, bx, ay, by, order):
    x, w = gl_nodes(order)
    ax = np.asarray(ax, dtype=float)
    ay = np.asarray(ay, dtype=float)
    hx = 0.5 * (bx - ax)
    hy = 0.5 * (by - ay)
    nx = 0.5 * (ax + bx)[..., None] + hx[..., None] * x
    ny = 0.5 * (ay + by)[..., None] + hy[..., None] * x
    vals = f(nx[:, :, None], ny[:, None, :])
    est = np.einsum("pij,i,j->p", vals, w, w)
    return est * hx * hy


def adaptive_tensor_quad2d(f, ax: float, bx: float, ay: float, by: float,
                           cfg: QuadratureConfig = DEFAULT_QUAD) -> float:
    """Integrate f(x, y) over [ax,bx] x [ay,by] adaptively.

    Rectangles are compared against their 2x2 subdivision and split where
    the two disagree beyond the rectangle's area share of the tolerance.
    """
    if bx == ax or by == ay:
        return 0.0
    total_area = (bx - ax) * (by - ay)
    whole = _rect_estimates(f, np.array([ax]), np.array([bx]), np.array([ay]), np.array([by]), cfg.order)[0]
    scale = abs(whole)
    lox, hix = np.array([ax]), np.array([bx])
    loy, hiy = np.array([ay]), np.array([by])
    coarse = np.array([whole])
    accepted = 0.0
    for depth in range(cfg.max_depth):
        mx = 0.5 * (lox + hix)
        my = 0.5 * (loy + hiy)
        quads = []
        for qlx, qhx, qly, qhy in (
            (lox, mx, loy, my), (mx, hix, loy, my),
            (lox, mx, my, hiy), (mx, hix, my, hiy),
        ):
            quads.append(_rect_estimates(f, qlx, qhx, qly, qhy, cfg.order))
        fine = quads[0] + quads[1] + quads[2] + quads[3]
        err = np.abs(fine - coarse)
        area = (hix - lox) * (hiy - loy)
        tol_here = max(cfg.abs_tol, cfg.rel_tol * max(scale, abs(accepted))) * area / total_area
        ok = err <= tol_here
        accepted += float(np.sum(fine[ok]))
        if np.all(ok):
            return accepted
        bad = ~ok
        lox_b, hix_b, mx_b = lox[bad], hix[bad], mx[bad]
        loy_b, hiy_b, my_b = loy[bad], hiy[bad], my[bad]
        lox = np.concatenate([lox_b, mx_b, lox_b, mx_b])
        hix = np.concatenate([mx_b, hix_b, mx_b, hix_b])
        loy = np.concatenate([loy_b, loy_b, my_b, my_b])
        hiy = np.concatenate([my_b, my_b, hiy_b, hiy_b])
        coarse = np.concatenate([q[bad] for q in quads])
        scale = max(scale, abs(accepted) + float(np.sum(np.abs(fine[bad]))))
        if lox.size > 4_000_000:
            raise QuadratureError("2d quadrature refinement front exploded")
    raise QuadratureError(
        f"2d quadrature did not converge in {cfg.max_depth} levels "
        f"(remaining rectangles: {lox.size})"
    )


def power_endpoint_quad(g, a: float, b: float, p: float = 0.0, q: float = 0.0,
                        order: int = 48) -> float:
    """Integrate g(z) * (z-a)^p * (b-z)^q over [a, b] for p, q > -1.

    The power factors are absorbed exactly by the substitutions
    u = (z-a)^(1+p) on the left half and w = (b-z)^(1+q) on the right
    half, leaving smooth integrands for fixed-order GL. g must be
    vectorised and smooth on (a, b).
    """
    if b <= a:
        return 0.0
    if p <= -1 or q <= -1:
        raise ValueError("power exponents must exceed -1")
    mid = 0.5 * (a + b)
    total = 0.0
    # left half: z = a + u^(1/(1+p)), (z-a)^p dz = du / (1+p)
    cp = 1.0 + p
    u_hi = (mid - a) ** cp
    nodes, weights = panel_nodes(np.array([0.0]), np.array([u_hi]), order)
    z = a + nodes[0] ** (1.0 / cp)
    vals = g(z) * (b - z) ** q
    total += float(np.sum(vals * weights[0])) / cp
    # right half: z = b - w^(1/(1+q))
    cq = 1.0 + q
    w_hi = (b - mid) ** cq
    nodes, weights = panel_nodes(np.array([0.0]), np.array([w_hi]), order)
    z = b - nodes[0] ** (1.0 / cq)
    vals = g(z) * (z - a) ** p
    total += float(np.sum(vals * weights[0])) / cq
    return total
