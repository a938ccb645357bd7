"""Loss functionals between a true density and a candidate density.

Implements the Hellinger distance ``(integral (sqrt p0 - sqrt p)^2)^(1/2)``,
the KL divergence ``integral p0 log(p0/p)``, the second moment of the log
ratio ``integral p0 (log p0/p)^2``, and the holdout-sample (empirical)
version of the KL divergence.

Quadrature is fixed composite Simpson on an odd-point grid; panels are split
at density breakpoints so piecewise-constant candidates are integrated
exactly.  Inside log ratios the candidate density is clamped below at
:data:`PDF_CLAMP`; when the clamped region carries non-negligible true mass
the KL and second-moment values are reported as ``inf`` rather than as a
floor-dependent large number.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .densities import Density, as_values
from .errors import EmptyHoldout, InvalidInputs, NonFiniteIntegrand

# Candidate densities are clamped below at this value inside log ratios.
PDF_CLAMP = 1e-300
_LOG_CLAMP = math.log(PDF_CLAMP)

# If the clamped region carries more true mass than this, KL and the second
# moment are reported as infinity.
CLAMP_MASS_LIMIT = 1e-3

DEFAULT_N_POINTS = 4097

SQRT2 = math.sqrt(2.0)


@dataclass(frozen=True)
class QuadratureGrid:
    """Equally spaced composite-Simpson grid over [lo, hi], odd point count."""

    lo: float
    hi: float
    n_points: int = DEFAULT_N_POINTS

    def __post_init__(self):
        if not (np.isfinite(self.lo) and np.isfinite(self.hi)) or self.lo >= self.hi:
            raise InvalidInputs(f"need finite lo < hi, got [{self.lo}, {self.hi}]")
        if self.n_points < 3 or self.n_points % 2 == 0:
            raise InvalidInputs(f"n_points must be odd and >= 3, got {self.n_points}")

    def points(self) -> np.ndarray:
        return np.linspace(self.lo, self.hi, self.n_points)

    def interior_points(self) -> np.ndarray:
        # Endpoints nudged one ulp inward so densities with jumps exactly at
        # the panel boundary are evaluated on the correct side.
        x = self.points()
        x[0] = np.nextafter(x[0], x[-1])
        x[-1] = np.nextafter(x[-1], x[0])
        return x

    def integrate(self, values: np.ndarray) -> float:
        """Composite Simpson over this grid's points."""
        values = np.asarray(values, dtype=float)
        if values.shape != (self.n_points,):
            raise InvalidInputs(f"expected {self.n_points} values, got {values.shape}")
        step = (self.hi - self.lo) / (self.n_points - 1)
        return float(
            step / 3.0 * (values[0] + values[-1] + 4.0 * values[1:-1:2].sum() + 2.0 * values[2:-2:2].sum())
        )


def grid_for(*densities: Density, n_points: int = DEFAULT_N_POINTS) -> QuadratureGrid:
    """Grid covering the union of the given densities' supports."""
    if not densities:
        raise InvalidInputs("grid_for requires at least one density")
    lo = min(d.support[0] for d in densities)
    hi = max(d.support[1] for d in densities)
    return QuadratureGrid(lo, hi, n_points)


@dataclass(frozen=True)
class DivergenceReport:
    """Divergence triple for one (truth, candidate) pair.

    ``m_ratio`` is KL over squared Hellinger (NaN when the Hellinger distance
    is zero); ``clamp_fraction`` is the fraction of quadrature points where
    the candidate hit the density clamp.
    """

    d_h: float
    d_k: float
    v: float
    m_ratio: float
    grid: QuadratureGrid
    clamp_fraction: float


def _pieces(grid: QuadratureGrid, breakpoints) -> list[QuadratureGrid]:
    cuts = sorted({float(b) for b in breakpoints if grid.lo < b < grid.hi})
    if not cuts:
        return [grid]
    knots = [grid.lo, *cuts, grid.hi]
    span = grid.hi - grid.lo
    out = []
    for a, b in zip(knots[:-1], knots[1:]):
        npts = max(3, int(round(grid.n_points * (b - a) / span)))
        if npts % 2 == 0:
            npts += 1
        out.append(QuadratureGrid(a, b, npts))
    return out


def _quadrature(p0: Density, p: Density, grid: QuadratureGrid):
    """Accumulate the three divergence integrals in one pass over the grid.

    Returns (hellinger_sq, kl, second_moment, clamp_fraction, clamp_mass).
    """
    lo0, hi0 = p0.support
    lo1, hi1 = p.support
    if grid.lo > min(lo0, lo1) or grid.hi < max(hi0, hi1):
        raise InvalidInputs("grid must cover both densities' supports")

    hell = kl = second = clamp_mass = 0.0
    clamped = 0
    total_points = 0
    for piece in _pieces(grid, set(p0.breakpoints) | set(p.breakpoints)):
        x = piece.interior_points()
        lp0 = p0.log_pdf(x)
        lp1 = p.log_pdf(x)
        if not (np.all(np.isfinite(lp0)) and np.all(np.isfinite(lp1))):
            raise NonFiniteIntegrand("density returned NaN on the quadrature grid")
        f0 = np.exp(lp0)
        f1 = np.exp(lp1)
        if not (np.all(np.isfinite(f0)) and np.all(np.isfinite(f1))):
            raise NonFiniteIntegrand("density overflowed on the quadrature grid")

        diff = np.sqrt(f0) - np.sqrt(f1)
        hell += piece.integrate(diff * diff)

        mask = lp1 < _LOG_CLAMP
        ratio = lp0 - np.maximum(lp1, _LOG_CLAMP)
        pos = f0 > 0.0
        kl += piece.integrate(np.where(pos, f0 * ratio, 0.0))
        second += piece.integrate(np.where(pos, f0 * ratio * ratio, 0.0))
        clamp_mass += piece.integrate(np.where(mask, f0, 0.0))
        clamped += int(mask.sum())
        total_points += x.size
    return hell, kl, second, clamped / total_points, clamp_mass


def hellinger(p0: Density, p: Density, grid: QuadratureGrid) -> float:
    """Hellinger distance between ``p0`` and ``p``; always in [0, sqrt(2)]."""
    hell_sq, _, _, _, _ = _quadrature(p0, p, grid)
    return math.sqrt(min(max(hell_sq, 0.0), 2.0))


def kl(p0: Density, p: Density, grid: QuadratureGrid) -> float:
    """KL divergence of ``p0`` from ``p``; ``inf`` when the clamped region
    under ``p`` carries more than :data:`CLAMP_MASS_LIMIT` of true mass."""
    _, kl_val, _, _, clamp_mass = _quadrature(p0, p, grid)
    if clamp_mass > CLAMP_MASS_LIMIT:
        return math.inf
    return max(kl_val, 0.0)


def v_functional(p0: Density, p: Density, grid: QuadratureGrid) -> float:
    """Second moment of log(p0/p) under ``p0``; same infinity rule as kl."""
    _, _, second, _, clamp_mass = _quadrature(p0, p, grid)
    if clamp_mass > CLAMP_MASS_LIMIT:
        return math.inf
    return max(second, 0.0)


def divergence_report(p0: Density, p: Density, grid: QuadratureGrid) -> DivergenceReport:
    """All three functionals (plus the KL / Hellinger^2 ratio) in one pass."""
    hell_sq, kl_val, second, clamp_fraction, clamp_mass = _quadrature(p0, p, grid)
    d_h = math.sqrt(min(max(hell_sq, 0.0), 2.0))
    if clamp_mass > CLAMP_MASS_LIMIT:
        d_k = math.inf
        v = math.inf
    else:
        d_k = max(kl_val, 0.0)
        v = max(second, 0.0)
    m_ratio = d_k / (d_h * d_h) if d_h > 0.0 else math.nan
    return DivergenceReport(d_h=d_h, d_k=d_k, v=v, m_ratio=m_ratio, grid=grid, clamp_fraction=clamp_fraction)


def empirical_kl(p0: Density, p: Density, holdout) -> float:
    """Holdout-sample mean of log(p0(x)/p(x)) with floored log densities."""
    values = as_values(holdout)
    if values.size == 0:
        raise EmptyHoldout("empirical KL requires at least one holdout point")
    return float(np.mean(p0.log_pdf(values) - p.log_pdf(values)))
