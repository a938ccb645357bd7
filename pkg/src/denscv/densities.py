"""One-dimensional density abstractions and the ground-truth catalog.

Every density is evaluable through ``pdf`` and ``log_pdf`` on scalars or
arrays.  ``pdf`` is always ``exp`` of the same raw log-density expression
that backs ``log_pdf``, so the two never disagree; ``log_pdf`` is floored
at :data:`LOG_FLOOR` so holdout log-likelihood sums stay finite.

Supports are stored as finite intervals chosen so that the truncated tail
mass is below ``1e-9`` per side; quadrature over the support therefore
integrates to one at far better than the 1e-3 sanity tolerance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np
from scipy.special import logsumexp, ndtri

from .errors import InvalidInputs, NonFiniteIntegrand

# Floor applied to log_pdf; decisive enough that an estimator hitting it on a
# holdout point effectively loses the selection, but keeps sums finite.
LOG_FLOOR = -700.0

# Tail mass dropped on each side when truncating an unbounded support.
TAIL_MASS = 1e-9

# z-score of the 1 - TAIL_MASS Gaussian quantile (~5.9978).
_Z_TAIL = float(-ndtri(TAIL_MASS))

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)

# Max elements per evaluation chunk for O(n_train * n_eval) kernels.
_CHUNK_ELEMENTS = 4_000_000


def _as_array(x) -> tuple[np.ndarray, bool]:
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0:
        return arr.reshape(1), True
    return arr, False


class Density:
    """Evaluable probability density on a finite interval of the real line."""

    @property
    def support(self) -> tuple[float, float]:
        """Finite interval holding all but a negligible tail of the mass."""
        raise NotImplementedError

    @property
    def breakpoints(self) -> tuple[float, ...]:
        """Locations where the pdf jumps; quadrature splits panels here."""
        return ()

    def _log_pdf_raw(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def log_pdf(self, x):
        """Log density, floored at :data:`LOG_FLOOR` (never NaN)."""
        arr, scalar = _as_array(x)
        out = np.maximum(self._log_pdf_raw(arr), LOG_FLOOR)
        return float(out[0]) if scalar else out

    def pdf(self, x):
        """Density value, ``exp`` of the raw (unfloored) log density."""
        arr, scalar = _as_array(x)
        out = np.exp(self._log_pdf_raw(arr))
        return float(out[0]) if scalar else out


@dataclass(frozen=True, eq=False)
class Gaussian(Density):
    mu: float = 0.0
    sigma: float = 1.0

    def __post_init__(self):
        if not (np.isfinite(self.mu) and np.isfinite(self.sigma)):
            raise InvalidInputs("Gaussian parameters must be finite")
        if self.sigma <= 0.0:
            raise InvalidInputs(f"sigma must be positive, got {self.sigma}")

    @property
    def support(self) -> tuple[float, float]:
        return (self.mu - _Z_TAIL * self.sigma, self.mu + _Z_TAIL * self.sigma)

    def _log_pdf_raw(self, x: np.ndarray) -> np.ndarray:
        z = (x - self.mu) / self.sigma
        return -0.5 * z * z - math.log(self.sigma) - _LOG_SQRT_2PI


@dataclass(frozen=True, eq=False)
class Uniform(Density):
    lo: float
    hi: float

    def __post_init__(self):
        if not (np.isfinite(self.lo) and np.isfinite(self.hi)):
            raise InvalidInputs("Uniform bounds must be finite")
        if self.lo >= self.hi:
            raise InvalidInputs(f"need lo < hi, got [{self.lo}, {self.hi}]")

    @property
    def support(self) -> tuple[float, float]:
        return (self.lo, self.hi)

    @property
    def breakpoints(self) -> tuple[float, ...]:
        return (self.lo, self.hi)

    def _log_pdf_raw(self, x: np.ndarray) -> np.ndarray:
        inside = (x >= self.lo) & (x <= self.hi)
        return np.where(inside, -math.log(self.hi - self.lo), -np.inf)


@dataclass(frozen=True, eq=False)
class GaussianMixture(Density):
    """Finite Gaussian mixture with strictly positive component scales."""

    weights: tuple[float, ...]
    means: tuple[float, ...]
    sigmas: tuple[float, ...]

    def __post_init__(self):
        k = len(self.weights)
        if k == 0 or len(self.means) != k or len(self.sigmas) != k:
            raise InvalidInputs("weights, means, sigmas must have equal nonzero length")
        w = np.asarray(self.weights, dtype=float)
        if np.any(w < 0.0) or not np.all(np.isfinite(w)) or w.sum() <= 0.0:
            raise InvalidInputs("weights must be nonnegative, finite, with positive sum")
        if abs(w.sum() - 1.0) > 1e-9:
            raise InvalidInputs(f"weights must sum to 1, got {w.sum()}")
        if any(s <= 0.0 or not np.isfinite(s) for s in self.sigmas):
            raise InvalidInputs("component sigmas must be positive and finite")
        if any(not np.isfinite(m) for m in self.means):
            raise InvalidInputs("component means must be finite")

    @property
    def support(self) -> tuple[float, float]:
        mu = np.asarray(self.means)
        sig = np.asarray(self.sigmas)
        return (float(np.min(mu - _Z_TAIL * sig)), float(np.max(mu + _Z_TAIL * sig)))

    def _log_pdf_raw(self, x: np.ndarray) -> np.ndarray:
        w = np.asarray(self.weights, dtype=float)
        mu = np.asarray(self.means, dtype=float)
        sig = np.asarray(self.sigmas, dtype=float)
        z = (x[None, :] - mu[:, None]) / sig[:, None]
        with np.errstate(divide="ignore"):
            logw = np.where(w > 0.0, np.log(np.where(w > 0.0, w, 1.0)), -np.inf)
        comp = -0.5 * z * z - np.log(sig)[:, None] - _LOG_SQRT_2PI + logw[:, None]
        return logsumexp(comp, axis=0)


@dataclass(frozen=True, eq=False)
class KernelDensity(Density):
    """Gaussian-kernel density estimate: mean of N(x_j, h^2) bumps."""

    points: np.ndarray
    bandwidth: float
    support_pad_bandwidths: float = 10.0

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 1 or pts.size == 0:
            raise InvalidInputs("points must be a nonempty 1-d array")
        if not np.all(np.isfinite(pts)):
            raise InvalidInputs("points must be finite")
        if self.bandwidth <= 0.0 or not np.isfinite(self.bandwidth):
            raise InvalidInputs(f"bandwidth must be positive, got {self.bandwidth}")
        object.__setattr__(self, "points", pts)

    @property
    def support(self) -> tuple[float, float]:
        pad = self.support_pad_bandwidths * self.bandwidth
        return (float(self.points.min()) - pad, float(self.points.max()) + pad)

    def _log_pdf_raw(self, x: np.ndarray) -> np.ndarray:
        pts = self.points
        h = self.bandwidth
        norm = math.log(pts.size * h) + _LOG_SQRT_2PI
        out = np.empty(x.shape, dtype=float)
        chunk = max(1, _CHUNK_ELEMENTS // pts.size)
        for i in range(0, x.size, chunk):
            z = (x[i : i + chunk, None] - pts[None, :]) / h
            out[i : i + chunk] = logsumexp(-0.5 * z * z, axis=1) - norm
        return out


@dataclass(frozen=True, eq=False)
class PiecewiseConstant(Density):
    """Histogram-style density: constant heights between consecutive edges."""

    edges: np.ndarray
    heights: np.ndarray

    def __post_init__(self):
        edges = np.asarray(self.edges, dtype=float)
        heights = np.asarray(self.heights, dtype=float)
        if edges.ndim != 1 or edges.size < 2 or np.any(np.diff(edges) <= 0.0):
            raise InvalidInputs("edges must be strictly increasing with >= 2 entries")
        if heights.shape != (edges.size - 1,) or np.any(heights < 0.0):
            raise InvalidInputs("heights must be nonnegative, one per bin")
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "heights", heights)

    @property
    def support(self) -> tuple[float, float]:
        return (float(self.edges[0]), float(self.edges[-1]))

    @property
    def breakpoints(self) -> tuple[float, ...]:
        return tuple(float(e) for e in self.edges)

    def _log_pdf_raw(self, x: np.ndarray) -> np.ndarray:
        lo, hi = self.support
        idx = np.clip(np.searchsorted(self.edges, x, side="right") - 1, 0, self.heights.size - 1)
        h = self.heights[idx]
        inside = (x >= lo) & (x <= hi) & (h > 0.0)
        with np.errstate(divide="ignore"):
            return np.where(inside, np.log(np.where(h > 0.0, h, 1.0)), -np.inf)


# ---------------------------------------------------------------------------
# Samples and ground truths
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Sample:
    """Ordered 1-d observations plus a record of how they were generated."""

    values: np.ndarray
    provenance: Mapping[str, object] = field(default_factory=dict)

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim != 1:
            raise InvalidInputs("Sample values must be one-dimensional")
        if not np.all(np.isfinite(vals)):
            raise InvalidInputs("Sample values must be finite reals")
        object.__setattr__(self, "values", vals)

    def __len__(self) -> int:
        return int(self.values.size)


def as_values(data) -> np.ndarray:
    """Accept a Sample or array-like and return a float ndarray."""
    if isinstance(data, Sample):
        return data.values
    return np.asarray(data, dtype=float)


@dataclass(frozen=True, eq=False)
class TrueDensity:
    """A density with an exact sampler, used as the data-generating truth.

    ``closed_forms`` optionally records analytically known divergence values
    (squared-Hellinger / KL / second-moment triples) against named reference
    densities, for use as quadrature oracles.
    """

    label: str
    density: Density
    sampler: Callable[[np.random.Generator, int], np.ndarray]
    closed_forms: Mapping[str, tuple[float, float, float]] = field(default_factory=dict)


def sample_truth(truth: TrueDensity, n: int, rng: np.random.Generator, seed=None) -> Sample:
    """Draw ``n`` i.i.d. observations from ``truth``.

    Deterministic given the generator state; the generator is advanced.
    ``seed`` is recorded in the sample's provenance when provided.
    """
    if n < 0:
        raise InvalidInputs(f"n must be >= 0, got {n}")
    values = truth.sampler(rng, n) if n > 0 else np.empty(0, dtype=float)
    return Sample(values, provenance={"truth": truth.label, "n": int(n), "seed": seed})


def normal(mu: float = 0.0, sigma: float = 1.0) -> TrueDensity:
    """Gaussian truth.  Sampling uses the generator's exact normal method
    (ziggurat), shifted and scaled."""
    density = Gaussian(mu, sigma)

    def sampler(rng: np.random.Generator, n: int) -> np.ndarray:
        return mu + sigma * rng.standard_normal(n)

    return TrueDensity(label=f"normal({mu:g},{sigma:g})", density=density, sampler=sampler)


def standard_normal() -> TrueDensity:
    return normal(0.0, 1.0)


def uniform(lo: float, hi: float) -> TrueDensity:
    """Uniform truth; sampling is the inverse-CDF transform lo + (hi-lo)*U."""
    density = Uniform(lo, hi)

    def sampler(rng: np.random.Generator, n: int) -> np.ndarray:
        return lo + (hi - lo) * rng.random(n)

    return TrueDensity(label=f"uniform({lo:g},{hi:g})", density=density, sampler=sampler)


def gaussian_mixture(weights, means, sigmas) -> TrueDensity:
    """Gaussian-mixture truth.

    Sampling draws the component index by inverse CDF on the weights, then
    one exact normal per point; both steps consume the generator in a fixed
    order, so draws are reproducible bitwise.
    """
    density = GaussianMixture(tuple(weights), tuple(means), tuple(sigmas))
    w = np.asarray(weights, dtype=float)
    mu = np.asarray(means, dtype=float)
    sig = np.asarray(sigmas, dtype=float)
    cum = np.cumsum(w)
    cum[-1] = 1.0

    def sampler(rng: np.random.Generator, n: int) -> np.ndarray:
        idx = np.searchsorted(cum, rng.random(n), side="right")
        z = rng.standard_normal(n)
        return mu[idx] + sig[idx] * z

    parts = "+".join(f"{wk:g}*N({mk:g},{sk:g}^2)" for wk, mk, sk in zip(weights, means, sigmas))
    return TrueDensity(label=f"mixture[{parts}]", density=density, sampler=sampler)


_TRUTH_KINDS = {
    "standard_normal": (),
    "normal": ("mu", "sigma"),
    "uniform": ("lo", "hi"),
    "gaussian_mixture": ("weights", "means", "sigmas"),
}


def truth_from_config(cfg: Mapping[str, object]) -> TrueDensity:
    """Build a catalog truth from a config mapping with a ``kind`` key."""
    if "kind" not in cfg:
        raise InvalidInputs("truth config requires a 'kind' key")
    kind = cfg["kind"]
    if kind not in _TRUTH_KINDS:
        raise InvalidInputs(f"unknown truth kind {kind!r}; known: {sorted(_TRUTH_KINDS)}")
    allowed = set(_TRUTH_KINDS[kind])
    extra = set(cfg) - allowed - {"kind"}
    if extra:
        raise InvalidInputs(f"unknown truth config keys for {kind!r}: {sorted(extra)}")
    missing = allowed - set(cfg)
    if missing:
        raise InvalidInputs(f"truth config for {kind!r} missing keys: {sorted(missing)}")
    if kind == "standard_normal":
        return standard_normal()
    if kind == "normal":
        return normal(float(cfg["mu"]), float(cfg["sigma"]))
    if kind == "uniform":
        return uniform(float(cfg["lo"]), float(cfg["hi"]))
    return gaussian_mixture(cfg["weights"], cfg["means"], cfg["sigmas"])


# ---------------------------------------------------------------------------
# Closed-form Gaussian divergences (quadrature oracles)
# ---------------------------------------------------------------------------


def gaussian_hellinger(mu0: float, s0: float, mu1: float, s1: float) -> float:
    """Hellinger distance between N(mu0, s0^2) and N(mu1, s1^2).

    Uses the Bhattacharyya coefficient
    ``BC = sqrt(2 s0 s1 / (s0^2 + s1^2)) * exp(-(mu0-mu1)^2 / (4 (s0^2+s1^2)))``
    and the integral convention d^2 = 2 (1 - BC), so the distance is bounded
    by sqrt(2).
    """
    ssum = s0 * s0 + s1 * s1
    bc = math.sqrt(2.0 * s0 * s1 / ssum) * math.exp(-((mu0 - mu1) ** 2) / (4.0 * ssum))
    return math.sqrt(max(0.0, 2.0 * (1.0 - bc)))


def gaussian_kl(mu0: float, s0: float, mu1: float, s1: float) -> float:
    """KL divergence of N(mu0, s0^2) from N(mu1, s1^2) (first argument true)."""
    delta = mu0 - mu1
    return math.log(s1 / s0) + (s0 * s0 + delta * delta) / (2.0 * s1 * s1) - 0.5


def gaussian_log_ratio_second_moment(mu0: float, s0: float, mu1: float, s1: float) -> float:
    """Second moment under N(mu0, s0^2) of log(N(mu0,s0^2)/N(mu1,s1^2)).

    With Z standard normal the log ratio is a + b Z + c Z^2 where
    a = log(s1/s0) + d^2/(2 s1^2), b = d s0 / s1^2, c = s0^2/(2 s1^2) - 1/2,
    d = mu0 - mu1; hence the second moment is a^2 + b^2 + 3 c^2 + 2 a c.
    """
    delta = mu0 - mu1
    a = math.log(s1 / s0) + delta * delta / (2.0 * s1 * s1)
    b = delta * s0 / (s1 * s1)
    c = s0 * s0 / (2.0 * s1 * s1) - 0.5
    return a * a + b * b + 3.0 * c * c + 2.0 * a * c


def gaussian_divergences(mu0, s0, mu1, s1) -> tuple[float, float, float]:
    """(Hellinger, KL, second-moment) triple for a Gaussian pair."""
    return (
        gaussian_hellinger(mu0, s0, mu1, s1),
        gaussian_kl(mu0, s0, mu1, s1),
        gaussian_log_ratio_second_moment(mu0, s0, mu1, s1),
    )


def closed_form_pairs() -> tuple[tuple[Gaussian, Gaussian, float, float, float], ...]:
    """Catalog of Gaussian pairs with analytically known divergence values."""
    params = [
        (0.0, 1.0, 1.0, 1.0),
        (0.0, 1.0, 2.0, 1.0),
        (0.0, 1.0, 0.0, 2.0),
        (0.0, 1.0, 1.0, 2.0),
        (2.0, 0.5, 0.0, 1.0),
        (-1.0, 1.0, 1.0, 1.5),
        (0.0, 1.0, 0.0, 1.0),
    ]
    out = []
    for mu0, s0, mu1, s1 in params:
        dh, dk, v = gaussian_divergences(mu0, s0, mu1, s1)
        out.append((Gaussian(mu0, s0), Gaussian(mu1, s1), dh, dk, v))
    return tuple(out)


# ---------------------------------------------------------------------------
# Normalization sanity gate
# ---------------------------------------------------------------------------


def _simpson(values: np.ndarray, lo: float, hi: float) -> float:
    # Composite Simpson over an odd number of equally spaced points.
    n = values.size
    step = (hi - lo) / (n - 1)
    return float(step / 3.0 * (values[0] + values[-1] + 4.0 * values[1:-1:2].sum() + 2.0 * values[2:-2:2].sum()))


def integrate_pdf(density: Density, lo: float, hi: float, n_points: int) -> float:
    """Composite-Simpson integral of ``density.pdf`` over [lo, hi].

    Panels are split at the density's breakpoints so piecewise-constant
    densities integrate exactly; point budget is spread proportionally to
    piece length with an odd minimum of 3 per piece.
    """
    cuts = sorted({float(b) for b in density.breakpoints if lo < b < hi})
    knots = np.array([lo, *cuts, hi], dtype=float)
    total = 0.0
    span = hi - lo
    for a, b in zip(knots[:-1], knots[1:]):
        npts = max(3, int(round(n_points * (b - a) / span)))
        if npts % 2 == 0:
            npts += 1
        x = np.linspace(a, b, npts)
        # Evaluate one ulp inside the panel so jumps at the boundary land on
        # the correct side; essential for exact piecewise-constant integrals.
        x[0] = np.nextafter(x[0], x[-1])
        x[-1] = np.nextafter(x[-1], x[0])
        vals = density.pdf(x)
        if not np.all(np.isfinite(vals)):
            raise NonFiniteIntegrand(f"pdf returned non-finite values on [{a}, {b}]")
        total += _simpson(vals, a, b)
    return total


def normalization_check(density: Density, grid=None, n_points: int = 4097) -> float:
    """Integral of the pdf over its support; should land within 1e-3 of one.

    ``grid`` may be any object with ``lo``, ``hi`` and ``n_points`` attributes
    (e.g. a quadrature grid); it must cover the density's support.  Without a
    grid the density's own support interval is used.
    """
    s_lo, s_hi = density.support
    if grid is None:
        lo, hi = s_lo, s_hi
    else:
        lo, hi, n_points = grid.lo, grid.hi, grid.n_points
        if lo > s_lo or hi < s_hi:
            raise InvalidInputs("integration interval must cover the density support")
    return integrate_pdf(density, lo, hi, n_points)
