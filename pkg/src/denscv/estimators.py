"""Competing density estimation procedures.

Five fitting procedures share one interface: given a training sample they
return a :class:`FittedDensity` whose density satisfies the normalization
sanity gate.  A sixth pseudo-procedure (``fixed_gaussian``) returns a
preset Gaussian regardless of the training data, which is handy for desk
checks and frozen-candidate experiments.

Fitting is a pure function of (training data, spec, init seed); refitting
with identical inputs is bitwise deterministic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Mapping

import numpy as np
from scipy.special import logsumexp

from .densities import (
    Density,
    Gaussian,
    GaussianMixture,
    KernelDensity,
    PiecewiseConstant,
    as_values,
)
from .errors import ConfigError, EmptyTrainingSet, InsufficientTrainingData, InvalidInputs
from .rng import make_rng

# Lower bound for every fitted Gaussian scale; prevents likelihood blow-up
# from collapsed components.
SIGMA_MIN = 1e-6

# Default uniform contamination mixed into histogram fits so holdout points
# in empty bins keep a finite log density.
HISTOGRAM_CONTAMINATION = 1e-6

DEFAULT_BANDWIDTH_COEFFICIENT = 1.06


@dataclass(frozen=True)
class EMSettings:
    """Stopping and initialization settings for the mixture EM fit."""

    tol: float = 1e-8
    max_iters: int = 500
    init_jitter: float = 0.01
    init_seed: int = 0


@dataclass(frozen=True, eq=False)
class FittedDensity:
    """A density produced by a procedure, with its fitting metadata."""

    density: Density
    procedure_id: int
    n_train: int
    diagnostics: Mapping[str, object] = field(default_factory=dict)


def _require_train(train) -> np.ndarray:
    values = as_values(train)
    if values.size == 0:
        raise EmptyTrainingSet("training sample is empty")
    return values


def fit_kde(train, bandwidth: float, procedure_id: int = 0) -> FittedDensity:
    """Gaussian-kernel density estimate with fixed bandwidth ``h``:

    ``pdf(x) = (1 / (n h)) * sum_j phi((x - X_j) / h)``.
    """
    values = _require_train(train)
    if bandwidth <= 0.0 or not np.isfinite(bandwidth):
        raise InvalidInputs(f"bandwidth must be positive, got {bandwidth}")
    density = KernelDensity(points=values.copy(), bandwidth=float(bandwidth))
    return FittedDensity(density, procedure_id, values.size, {"bandwidth": float(bandwidth)})


def fit_kde_rate(train, coefficient: float = DEFAULT_BANDWIDTH_COEFFICIENT, procedure_id: int = 0) -> FittedDensity:
    """KDE with the n^(-1/5) reference bandwidth ``h = c * sd * n^(-1/5)``.

    The sample standard deviation (ddof=1) is floored at SIGMA_MIN so a
    degenerate training sample still yields a usable density.
    """
    values = _require_train(train)
    if coefficient <= 0.0:
        raise InvalidInputs(f"coefficient must be positive, got {coefficient}")
    sd = float(np.std(values, ddof=1)) if values.size > 1 else 0.0
    sd = max(sd, SIGMA_MIN)
    h = coefficient * sd * values.size ** (-0.2)
    fit = fit_kde(values, h, procedure_id)
    diag = dict(fit.diagnostics)
    diag["coefficient"] = float(coefficient)
    return replace(fit, diagnostics=diag)


def fit_histogram(
    train,
    bin_count: int,
    lo: float,
    hi: float,
    contamination: float = HISTOGRAM_CONTAMINATION,
    procedure_id: int = 0,
) -> FittedDensity:
    """Histogram density on [lo, hi] mixed with uniform contamination.

    Training points outside [lo, hi] are clipped to the boundary bins (and
    counted in the diagnostics) rather than rejected, so random splits of
    unbounded truths never abort.  The returned density is
    ``(1 - delta) * histogram + delta * uniform[lo, hi]``.
    """
    values = _require_train(train)
    if bin_count < 1:
        raise InvalidInputs(f"bin_count must be >= 1, got {bin_count}")
    if not lo < hi:
        raise InvalidInputs(f"need lo < hi, got [{lo}, {hi}]")
    if not 0.0 <= contamination < 1.0:
        raise InvalidInputs(f"contamination must be in [0, 1), got {contamination}")

    clipped = int(np.sum((values < lo) | (values > hi)))
    counts, edges = np.histogram(np.clip(values, lo, hi), bins=bin_count, range=(lo, hi))
    width = (hi - lo) / bin_count
    raw_heights = counts / (values.size * width)
    heights = (1.0 - contamination) * raw_heights + contamination / (hi - lo)
    density = PiecewiseConstant(edges=edges, heights=heights)
    diag = {"clipped": clipped, "contamination": float(contamination)}
    return FittedDensity(density, procedure_id, values.size, diag)


def fit_gaussian_mle(train, procedure_id: int = 0) -> FittedDensity:
    """Gaussian maximum-likelihood fit: sample mean and 1/n variance.

    The scale is floored at SIGMA_MIN; when the floor binds the diagnostics
    carry ``degenerate_variance=True``.
    """
    values = _require_train(train)
    mu = float(np.mean(values))
    sigma = math.sqrt(float(np.mean((values - mu) ** 2)))
    degenerate = sigma < SIGMA_MIN
    if degenerate:
        sigma = SIGMA_MIN
    density = Gaussian(mu, sigma)
    return FittedDensity(density, procedure_id, values.size, {"degenerate_variance": degenerate})


def _em_initial_means(values: np.ndarray, k: int, settings: EMSettings, sd_pool: float) -> np.ndarray:
    # Quantile-spaced means plus a small seeded jitter; jitter breaks exact
    # symmetry without costing determinism.
    means = np.quantile(values, (np.arange(k) + 0.5) / k)
    if settings.init_jitter > 0.0:
        rng = make_rng(settings.init_seed)
        means = means + settings.init_jitter * sd_pool * rng.standard_normal(k)
    return means


def fit_mixture_em(train, n_components: int, settings: EMSettings = EMSettings(), procedure_id: int = 0) -> FittedDensity:
    """K-component Gaussian mixture fit by EM.

    Initialization: quantile-spaced means (with a seeded jitter), pooled
    variance, uniform weights.  Iterations stop when the relative training
    log-likelihood change drops below ``settings.tol`` or at ``max_iters``;
    non-convergence is a diagnostic flag, not an error, and the last iterate
    is returned.  Component variances are floored at SIGMA_MIN^2.
    """
    values = _require_train(train)
    k = int(n_components)
    if k < 1:
        raise InvalidInputs(f"n_components must be >= 1, got {k}")
    n = values.size
    if n < 2 * k:
        raise InsufficientTrainingData(f"need at least {2 * k} points for {k} components, got {n}")

    sd_pool = max(math.sqrt(float(np.mean((values - values.mean()) ** 2))), SIGMA_MIN)
    means = _em_initial_means(values, k, settings, sd_pool)
    variances = np.full(k, sd_pool * sd_pool)
    weights = np.full(k, 1.0 / k)

    ll_path = []
    ll_prev = -np.inf
    converged = False
    iterations = 0
    var_min = SIGMA_MIN * SIGMA_MIN
    for iterations in range(1, settings.max_iters + 1):
        # E step in the log domain.
        z = (values[None, :] - means[:, None]) / np.sqrt(variances)[:, None]
        with np.errstate(divide="ignore"):
            logw = np.where(weights > 0.0, np.log(np.where(weights > 0.0, weights, 1.0)), -np.inf)
        log_joint = logw[:, None] - 0.5 * z * z - 0.5 * np.log(2.0 * math.pi * variances)[:, None]
        log_norm = logsumexp(log_joint, axis=0)
        ll = float(log_norm.sum())
        ll_path.append(ll)
        resp = np.exp(log_joint - log_norm[None, :])

        # M step; tiny-mass guard keeps dead components harmless without
        # introducing any randomness.
        mass = resp.sum(axis=1)
        safe = np.maximum(mass, 1e-300)
        weights = mass / n
        means = (resp @ values) / safe
        centered = values[None, :] - means[:, None]
        variances = np.maximum((resp * centered * centered).sum(axis=1) / safe, var_min)

        if np.isfinite(ll_prev) and abs(ll - ll_prev) <= settings.tol * max(1.0, abs(ll_prev)):
            converged = True
            break
        ll_prev = ll

    order = np.argsort(means, kind="stable")
    density = GaussianMixture(
        weights=tuple(float(w) for w in weights[order]),
        means=tuple(float(m) for m in means[order]),
        sigmas=tuple(float(math.sqrt(v)) for v in variances[order]),
    )
    diag = {
        "iterations": iterations,
        "final_log_likelihood": ll_path[-1],
        "converged": converged,
        "log_likelihood_path": tuple(ll_path),
    }
    return FittedDensity(density, procedure_id, n, diag)


def fit_fixed_gaussian(train, mu: float, sigma: float, procedure_id: int = 0) -> FittedDensity:
    """Pseudo-procedure returning a preset Gaussian; ignores the data."""
    values = _require_train(train)
    return FittedDensity(Gaussian(float(mu), float(sigma)), procedure_id, values.size, {"fixed": True})


# ---------------------------------------------------------------------------
# Procedure specs (config-facing)
# ---------------------------------------------------------------------------

PROCEDURE_KINDS: dict[str, dict[str, set[str]]] = {
    "kde_fixed_bandwidth": {"required": {"bandwidth"}, "optional": set()},
    "kde_rate_bandwidth": {"required": set(), "optional": {"coefficient"}},
    "histogram": {"required": {"bins", "lo", "hi"}, "optional": {"contamination"}},
    "gaussian_mle": {"required": set(), "optional": set()},
    "gaussian_mixture_em": {
        "required": {"components"},
        "optional": {"tol", "max_iters", "init_jitter", "init_seed"},
    },
    "fixed_gaussian": {"required": {"mu", "sigma"}, "optional": set()},
}


@dataclass(frozen=True)
class ProcedureSpec:
    """One competitor: a procedure kind, its parameters, and a stable id.

    Within one experiment ids are distinct and contiguous from 1.
    """

    kind: str
    params: Mapping[str, object] = field(default_factory=dict)
    id: int = 0

    def __post_init__(self):
        if self.kind not in PROCEDURE_KINDS:
            raise ConfigError(f"unknown procedure kind {self.kind!r}; known: {sorted(PROCEDURE_KINDS)}")
        spec = PROCEDURE_KINDS[self.kind]
        keys = set(self.params)
        unknown = keys - spec["required"] - spec["optional"]
        if unknown:
            raise ConfigError(f"unknown parameter(s) {sorted(unknown)} for procedure {self.kind!r}")
        missing = spec["required"] - keys
        if missing:
            raise ConfigError(f"procedure {self.kind!r} missing parameter(s) {sorted(missing)}")
        for key in ("bandwidth", "coefficient", "sigma", "tol"):
            if key in self.params and not float(self.params[key]) > 0.0:
                raise ConfigError(f"procedure {self.kind!r} parameter {key!r} must be > 0")
        for key in ("bins", "components", "max_iters"):
            if key in self.params and int(self.params[key]) < 1:
                raise ConfigError(f"procedure {self.kind!r} parameter {key!r} must be >= 1")

    @property
    def label(self) -> str:
        if not self.params:
            return self.kind
        inner = ",".join(f"{k}={self.params[k]}" for k in sorted(self.params))
        return f"{self.kind}({inner})"


def specs_from_config(items) -> tuple[ProcedureSpec, ...]:
    """Build procedure specs from config dicts, assigning ids 1..m in order."""
    specs = []
    for pos, item in enumerate(items, start=1):
        if "kind" not in item:
            raise ConfigError(f"procedure entry {pos} is missing 'kind'")
        params = {k: v for k, v in item.items() if k not in ("kind", "id")}
        explicit = item.get("id", pos)
        if int(explicit) != pos:
            raise ConfigError(f"procedure ids must be contiguous from 1; entry {pos} has id {explicit}")
        specs.append(ProcedureSpec(kind=item["kind"], params=params, id=pos))
    if not specs:
        raise ConfigError("at least one procedure is required")
    return tuple(specs)


def fit_procedure(spec: ProcedureSpec, train, init_seed: int | None = None) -> FittedDensity:
    """Fit one procedure spec on the training data.

    ``init_seed`` overrides the spec's EM initialization seed; other kinds
    ignore it.
    """
    p = spec.params
    if spec.kind == "kde_fixed_bandwidth":
        return fit_kde(train, float(p["bandwidth"]), spec.id)
    if spec.kind == "kde_rate_bandwidth":
        return fit_kde_rate(train, float(p.get("coefficient", DEFAULT_BANDWIDTH_COEFFICIENT)), spec.id)
    if spec.kind == "histogram":
        return fit_histogram(
            train,
            int(p["bins"]),
            float(p["lo"]),
            float(p["hi"]),
            float(p.get("contamination", HISTOGRAM_CONTAMINATION)),
            spec.id,
        )
    if spec.kind == "gaussian_mle":
        return fit_gaussian_mle(train, spec.id)
    if spec.kind == "gaussian_mixture_em":
        settings = EMSettings(
            tol=float(p.get("tol", EMSettings.tol)),
            max_iters=int(p.get("max_iters", EMSettings.max_iters)),
            init_jitter=float(p.get("init_jitter", EMSettings.init_jitter)),
            init_seed=int(p.get("init_seed", EMSettings.init_seed)) if init_seed is None else int(init_seed),
        )
        return fit_mixture_em(train, int(p["components"]), settings, spec.id)
    return fit_fixed_gaussian(train, float(p["mu"]), float(p["sigma"]), spec.id)
