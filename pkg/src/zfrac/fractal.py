"""Box counting over binary grids and log-log slope estimation of the fractal dimension."""

import math
from dataclasses import dataclass, field

import numpy as np

from .imagio import pad_to_square_pow2

# Slope outside [0, 2] on a planar grid indicates an unreliable small-sample fit.
FD_MIN, FD_MAX = 0.0, 2.0
_BOUND_SLACK = 1e-9


@dataclass
class BoxCountSeries:
    points: list  # [(r, N), ...] with r strictly increasing


@dataclass
class FractalEstimate:
    fd: float
    r_squared: float
    n_points: int
    degenerate: bool = False
    out_of_range: bool = False


def box_count(grid, r):
    """Count r-sided lattice cells (anchored at the origin) holding >= 1 occupied pixel."""
    grid = np.asarray(grid, dtype=bool)
    h, w = grid.shape
    r = int(r)
    if r < 1 or r > max(h, w):
        raise ValueError(f"box side {r} invalid for {w}x{h} grid")
    summed = np.add.reduceat(
        np.add.reduceat(grid, np.arange(0, h, r), axis=0), np.arange(0, w, r), axis=1
    )
    return int(np.count_nonzero(summed))


def box_count_series(grid, radii, pow2_only=True):
    """Box counts at each radius; radii must be strictly increasing (powers of two by default).

    pow2_only=False exists for analytic fixtures whose natural scales are not
    powers of two (e.g. base-3 fractals).
    """
    radii = [int(r) for r in radii]
    if not radii:
        raise ValueError("radii must be non-empty")
    if any(b <= a for a, b in zip(radii, radii[1:])):
        raise ValueError(f"radii {radii} are not strictly increasing")
    if pow2_only and any(r & (r - 1) for r in radii):
        raise ValueError(f"radii {radii} must be powers of two")
    return BoxCountSeries([(r, box_count(grid, r)) for r in radii])


def fit_fd(series):
    """Least-squares slope of ln N against ln(1/r), skipping N = 0 points.

    Fewer than two usable points yields the degenerate estimate fd = 0.
    """
    pts = [(r, n) for r, n in series.points if n > 0]
    if len(pts) < 2:
        return FractalEstimate(0.0, 0.0, len(pts), degenerate=True)

    x = np.log(1.0 / np.array([r for r, _ in pts], dtype=np.float64))
    y = np.log(np.array([n for _, n in pts], dtype=np.float64))
    k = len(pts)
    xm, ym = x.mean(), y.mean()
    sxx = np.sum((x - xm) ** 2)
    slope = float(np.sum((x - xm) * (y - ym)) / sxx)
    resid = y - (ym + slope * (x - xm))
    ss_res = float(np.sum(resid**2))
    ss_tot = float(np.sum((y - ym) ** 2))
    if ss_tot == 0.0:
        r2 = 1.0 if math.isclose(ss_res, 0.0, abs_tol=1e-24) else 0.0
    else:
        r2 = max(0.0, 1.0 - ss_res / ss_tot)
    out_of_range = slope < FD_MIN - _BOUND_SLACK or slope > FD_MAX + _BOUND_SLACK
    return FractalEstimate(slope, r2, k, degenerate=False, out_of_range=out_of_range)


def default_radii(side):
    """Powers of two from 1 to side/2 inclusive."""
    radii = []
    r = 1
    while r <= side // 2:
        radii.append(r)
        r *= 2
    return radii


def fd_of_grid(grid, radii=None):
    """Fractal dimension of a grid: pad to a power-of-two square, count, fit."""
    grid = pad_to_square_pow2(grid)
    side = grid.shape[0]
    if radii is None:
        radii = default_radii(side)
    if not radii:
        return FractalEstimate(0.0, 0.0, 0, degenerate=True)
    return fit_fd(box_count_series(grid, radii))
