"""Monte Carlo experiment engine for selection-consistency studies.

Two experiment modes:

* :func:`run_experiment` resamples the full dataset each replicate, splits
  it, fits every procedure on the estimation part, scores on the evaluation
  part, and aggregates selection probabilities into a consistency curve.
* :func:`run_bound_verification` freezes the candidate densities (either
  given directly or fit once on a frozen estimation sample) and draws fresh
  holdout sets, estimating the frequencies of the likelihood-ratio tail
  event and the empirical-KL deviation event next to their bounds.

Replicate r at total size n derives its seed as ``mix_seed(base_seed, n, r)``
so results are identical regardless of execution order or parallelism; all
persisted output is byte-deterministic for a given config and seed.
"""

from __future__ import annotations

import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import __version__
from .densities import TrueDensity, sample_truth, truth_from_config
from .divergences import DivergenceReport, divergence_report, empirical_kl, grid_for
from .errors import ConfigError, DensCvError
from .estimators import ProcedureSpec, fit_procedure, specs_from_config
from .rng import make_rng, mix_seed
from .selection import argmax_smallest_id, make_split, score_holdout
from .theory import (
    BoundInputs,
    ConditionReport,
    MisselectionBound,
    check_conditions,
    kl_deviation_bound,
    likelihood_ratio_tail_bound,
    misselection_bound,
)

REPLICATE_CSV_COLUMNS = (
    "experiment_id",
    "n",
    "n1",
    "n2",
    "replicate",
    "procedure_id",
    "d_H",
    "d_K",
    "V",
    "M_ratio",
    "score",
    "floor_hits",
    "is_winner",
    "cond1",
    "cond2_stat",
    "cond3_pass",
    "lemma1_event",
    "W_event",
)

BOUND_CSV_COLUMNS = (
    "experiment_id",
    "n2",
    "c",
    "t",
    "label",
    "kind",
    "v_sq",
    "bound",
    "frequency",
    "std_error",
    "replicates",
    "within_3se",
)


@dataclass(frozen=True)
class TheorySettings:
    """Knobs for the condition checks: slack factor c, deviation-threshold
    rule ``t = t_scale * n2**t_exponent``, and the cap on the measured
    KL-to-squared-Hellinger ratio."""

    c: float = 0.9
    t_scale: float = 1.0
    t_exponent: float = -1.0 / 3.0
    m_max: float = 100.0

    def __post_init__(self):
        if not 0.0 < self.c < 1.0:
            raise ConfigError(f"theory.c must be in (0, 1), got {self.c}")
        if self.t_scale <= 0.0:
            raise ConfigError(f"theory.t_scale must be > 0, got {self.t_scale}")
        if self.m_max <= 0.0:
            raise ConfigError(f"theory.m_max must be > 0, got {self.m_max}")

    def t_for(self, n2: int) -> float:
        return self.t_scale * float(n2) ** self.t_exponent

    def to_dict(self) -> dict:
        return {"c": self.c, "t_scale": self.t_scale, "t_exponent": self.t_exponent, "m_max": self.m_max}


def _check_keys(d: Mapping, allowed: set[str], required: set[str], where: str) -> None:
    unknown = set(d) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {sorted(unknown)}")
    missing = required - set(d)
    if missing:
        raise ConfigError(f"missing key(s) in {where}: {sorted(missing)}")


def _theory_from_dict(d: Mapping | None) -> TheorySettings:
    if d is None:
        return TheorySettings()
    _check_keys(d, {"c", "t_scale", "t_exponent", "m_max"}, set(), "theory")
    base = TheorySettings()
    return TheorySettings(
        c=float(d.get("c", base.c)),
        t_scale=float(d.get("t_scale", base.t_scale)),
        t_exponent=float(d.get("t_exponent", base.t_exponent)),
        m_max=float(d.get("m_max", base.m_max)),
    )


@dataclass(frozen=True)
class ExperimentConfig:
    """Full description of one consistency experiment.

    ``split_ratios`` give the estimation-part share of each sample (one cell
    per (n, ratio) pair); alternatively ``split_n1`` fixes the estimation
    count for every n.  Procedure lists may vary with the sample size via
    ``procedures_by_n``; ids restart from 1 within each list and
    ``best_procedure_id`` designates the asymptotically better procedure
    for misselection accounting.
    """

    experiment_id: str
    truth: Mapping[str, object]
    procedures: tuple[ProcedureSpec, ...]
    n_grid: tuple[int, ...]
    replicates: int
    base_seed: int
    split_ratios: tuple[float, ...] | None = (0.5,)
    split_n1: int | None = None
    best_procedure_id: int = 1
    theory: TheorySettings = field(default_factory=TheorySettings)
    quadrature_points: int = 4097
    output_dir: str | None = None
    procedures_by_n: Mapping[int, tuple[ProcedureSpec, ...]] | None = None

    def __post_init__(self):
        if self.replicates < 1:
            raise ConfigError(f"replicates must be >= 1, got {self.replicates}")
        if not self.n_grid:
            raise ConfigError("n_grid must be nonempty")
        if (self.split_ratios is None) == (self.split_n1 is None):
            raise ConfigError("exactly one of split.ratios / split.n1 must be given")
        for n in self.n_grid:
            for n1 in self.n1_values(n):
                if not 1 <= n1 < n:
                    raise ConfigError(f"split gives n1={n1} for n={n}; need 1 <= n1 < n")
        for n in self.n_grid:
            specs = self.procedures_for(n)
            ids = [s.id for s in specs]
            if ids != list(range(1, len(ids) + 1)):
                raise ConfigError(f"procedure ids must be 1..m, got {ids} for n={n}")
            if self.best_procedure_id not in ids:
                raise ConfigError(
                    f"best_procedure_id={self.best_procedure_id} not among procedure ids for n={n}"
                )
        if self.quadrature_points < 3 or self.quadrature_points % 2 == 0:
            raise ConfigError("quadrature_points must be odd and >= 3")

    def procedures_for(self, n: int) -> tuple[ProcedureSpec, ...]:
        if self.procedures_by_n and int(n) in self.procedures_by_n:
            return self.procedures_by_n[int(n)]
        return self.procedures

    def n1_values(self, n: int) -> tuple[int, ...]:
        if self.split_n1 is not None:
            return (self.split_n1,)
        return tuple(int(round(r * n)) for r in self.split_ratios)

    def cells(self) -> tuple[tuple[int, int, str], ...]:
        """(n, n1, split label) for every experiment cell."""
        out = []
        for n in self.n_grid:
            if self.split_n1 is not None:
                out.append((n, self.split_n1, f"n1={self.split_n1}"))
            else:
                for ratio in self.split_ratios:
                    out.append((n, int(round(ratio * n)), f"ratio={ratio:g}"))
        return tuple(out)

    @classmethod
    def from_dict(cls, raw: Mapping) -> "ExperimentConfig":
        _check_keys(
            raw,
            {
                "experiment_id",
                "truth",
                "procedures",
                "procedures_by_n",
                "n_grid",
                "split",
                "replicates",
                "base_seed",
                "best_procedure_id",
                "theory",
                "quadrature_points",
                "output_dir",
            },
            {"experiment_id", "truth", "procedures", "n_grid", "split", "replicates", "base_seed"},
            "experiment config",
        )
        split = raw["split"]
        _check_keys(split, {"ratios", "n1"}, set(), "split")
        ratios = tuple(float(r) for r in split["ratios"]) if "ratios" in split else None
        n1 = int(split["n1"]) if "n1" in split else None
        by_n = None
        if raw.get("procedures_by_n"):
            by_n = {int(k): specs_from_config(v) for k, v in raw["procedures_by_n"].items()}
        return cls(
            experiment_id=str(raw["experiment_id"]),
            truth=dict(raw["truth"]),
            procedures=specs_from_config(raw["procedures"]),
            n_grid=tuple(int(n) for n in raw["n_grid"]),
            replicates=int(raw["replicates"]),
            base_seed=int(raw["base_seed"]),
            split_ratios=ratios,
            split_n1=n1,
            best_procedure_id=int(raw.get("best_procedure_id", 1)),
            theory=_theory_from_dict(raw.get("theory")),
            quadrature_points=int(raw.get("quadrature_points", 4097)),
            output_dir=raw.get("output_dir"),
            procedures_by_n=by_n,
        )

    def to_dict(self) -> dict:
        split = {"n1": self.split_n1} if self.split_n1 is not None else {"ratios": list(self.split_ratios)}
        out = {
            "experiment_id": self.experiment_id,
            "truth": dict(self.truth),
            "procedures": [{"kind": s.kind, "id": s.id, **dict(s.params)} for s in self.procedures],
            "n_grid": list(self.n_grid),
            "split": split,
            "replicates": self.replicates,
            "base_seed": self.base_seed,
            "best_procedure_id": self.best_procedure_id,
            "theory": self.theory.to_dict(),
            "quadrature_points": self.quadrature_points,
        }
        if self.output_dir is not None:
            out["output_dir"] = self.output_dir
        if self.procedures_by_n:
            out["procedures_by_n"] = {
                str(n): [{"kind": s.kind, "id": s.id, **dict(s.params)} for s in specs]
                for n, specs in sorted(self.procedures_by_n.items())
            }
        return out


@dataclass(frozen=True)
class ProcedureOutcome:
    """Per-procedure slice of one replicate row."""

    procedure_id: int
    d_h: float
    d_k: float
    v: float
    m_ratio: float
    score: float
    floor_hits: int
    ratio_event: bool | None
    fit_error: str | None = None


@dataclass(frozen=True)
class ReplicateResult:
    """Everything measured in one replicate of one experiment cell."""

    n: int
    n1: int
    n2: int
    replicate: int
    seed: int
    outcomes: tuple[ProcedureOutcome, ...]
    winner: int
    tie: bool
    conditions: ConditionReport | None
    bound: MisselectionBound | None
    deviation_event: bool | None
    s_over_v1: float

    def outcome_for(self, procedure_id: int) -> ProcedureOutcome:
        for outcome in self.outcomes:
            if outcome.procedure_id == procedure_id:
                return outcome
        raise KeyError(procedure_id)


def _clean_m(m_ratio: float, m_max: float) -> float:
    # Measured KL / squared-Hellinger ratio, capped for theorem accounting.
    # NaN arises only when the best fit coincides with the truth (d_H = 0,
    # hence d_K = 0), where the M * v_sq term vanishes anyway.
    if math.isnan(m_ratio):
        return 0.0
    return min(m_ratio, m_max)


def run_replicate(cfg: ExperimentConfig, n: int, n1: int, r: int) -> ReplicateResult:
    """Execute one replicate: sample, split, fit, score, measure, bound."""
    truth = truth_from_config(cfg.truth)
    specs = cfg.procedures_for(n)
    seed = mix_seed(cfg.base_seed, n, r)
    sample = sample_truth(truth, n, make_rng(seed), seed=seed)
    plan = make_split(n, n1, mode="sequential")
    x1, x2 = plan.split(sample)
    n2 = plan.n2

    fits: list = []
    errors: list[str | None] = []
    for spec in specs:
        try:
            fits.append(fit_procedure(spec, x1, init_seed=mix_seed(seed, spec.id)))
            errors.append(None)
        except DensCvError as exc:
            fits.append(None)
            errors.append(f"{type(exc).__name__}: {exc}")

    grid = grid_for(truth.density, *(f.density for f in fits if f is not None), n_points=cfg.quadrature_points)

    reports: list[DivergenceReport | None] = []
    scores: list[float] = []
    hits: list[int] = []
    for fit in fits:
        if fit is None:
            reports.append(None)
            scores.append(-math.inf)
            hits.append(0)
        else:
            reports.append(divergence_report(truth.density, fit.density, grid))
            score, floor_hits = score_holdout(fit, x2)
            scores.append(score)
            hits.append(floor_hits)

    ids = [spec.id for spec in specs]
    winner, tie = argmax_smallest_id(ids, scores)

    best_pos = ids.index(cfg.best_procedure_id)
    best_report = reports[best_pos]
    best_fit = fits[best_pos]

    conditions = None
    bound = None
    deviation_event = None
    s_over_v1 = math.nan
    ratio_events: list[bool | None] = [None] * len(specs)
    if best_report is not None:
        t = cfg.theory.t_for(n2)
        competitor_positions = [p for p in range(len(specs)) if p != best_pos and reports[p] is not None]
        v_sq = (best_report.d_h**2,) + tuple(reports[p].d_h ** 2 for p in competitor_positions)
        inputs = BoundInputs(
            n1=n1,
            n2=n2,
            m=1 + len(competitor_positions),
            v_sq=v_sq,
            s=best_report.v,
            M=_clean_m(best_report.m_ratio, cfg.theory.m_max),
            c=cfg.theory.c,
            t=t,
        )
        conditions = check_conditions(inputs)
        bound = misselection_bound(inputs)
        if best_report.d_h > 0.0:
            s_over_v1 = best_report.v / best_report.d_h**2

        truth_score = float(truth.density.log_pdf(x2).sum())
        for pos in competitor_positions:
            threshold = -n2 * cfg.theory.c * reports[pos].d_h ** 2
            ratio_events[pos] = bool(scores[pos] - truth_score >= threshold)
        if math.isfinite(best_report.d_k) and best_report.v > 0.0:
            emp = empirical_kl(truth.density, best_fit.density, x2)
            deviation_event = bool((emp - best_report.d_k) / best_report.v >= t)
        else:
            deviation_event = False

    outcomes = tuple(
        ProcedureOutcome(
            procedure_id=spec.id,
            d_h=reports[pos].d_h if reports[pos] else math.nan,
            d_k=reports[pos].d_k if reports[pos] else math.nan,
            v=reports[pos].v if reports[pos] else math.nan,
            m_ratio=reports[pos].m_ratio if reports[pos] else math.nan,
            score=scores[pos],
            floor_hits=hits[pos],
            ratio_event=ratio_events[pos],
            fit_error=errors[pos],
        )
        for pos, spec in enumerate(specs)
    )
    return ReplicateResult(
        n=n,
        n1=n1,
        n2=n2,
        replicate=r,
        seed=seed,
        outcomes=outcomes,
        winner=winner,
        tie=tie,
        conditions=conditions,
        bound=bound,
        deviation_event=deviation_event,
        s_over_v1=s_over_v1,
    )


@dataclass(frozen=True)
class CurvePoint:
    """Aggregated selection statistics for one (n, split) cell."""

    n: int
    n1: int
    n2: int
    split_label: str
    replicates: int
    p_select_best: float
    std_error: float
    mean_bound: float
    cond3_fraction: float
    cond2_stat_mean: float
    deviation_rate: float
    cond3_count: int
    misselection_rate_given_cond3: float
    mean_bound_given_cond3: float
    s_over_v1_median: float

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def _aggregate_cell(cell_results: Sequence[ReplicateResult], best_id: int, split_label: str) -> CurvePoint:
    first = cell_results[0]
    rep = len(cell_results)
    wins = sum(res.winner == best_id for res in cell_results)
    p = wins / rep
    se = math.sqrt(p * (1.0 - p) / rep)
    bounds = [res.bound.total for res in cell_results if res.bound is not None]
    cond3 = [res for res in cell_results if res.conditions is not None and res.conditions.cond3_pass]
    cond2_vals = [res.conditions.cond2_stat for res in cell_results if res.conditions is not None]
    dev = [res.deviation_event for res in cell_results if res.deviation_event is not None]
    svr = [res.s_over_v1 for res in cell_results if math.isfinite(res.s_over_v1)]
    mis_cond3 = (
        sum(res.winner != best_id for res in cond3) / len(cond3) if cond3 else math.nan
    )
    bound_cond3 = (
        sum(res.bound.total for res in cond3) / len(cond3) if cond3 else math.nan
    )
    return CurvePoint(
        n=first.n,
        n1=first.n1,
        n2=first.n2,
        split_label=split_label,
        replicates=rep,
        p_select_best=p,
        std_error=se,
        mean_bound=sum(bounds) / len(bounds) if bounds else math.nan,
        cond3_fraction=len(cond3) / rep,
        cond2_stat_mean=sum(cond2_vals) / len(cond2_vals) if cond2_vals else math.nan,
        deviation_rate=sum(dev) / len(dev) if dev else math.nan,
        cond3_count=len(cond3),
        misselection_rate_given_cond3=mis_cond3,
        mean_bound_given_cond3=bound_cond3,
        s_over_v1_median=float(np.median(svr)) if svr else math.nan,
    )


@dataclass(frozen=True)
class ExperimentResult:
    config: ExperimentConfig
    curve: tuple[CurvePoint, ...]
    results: tuple[ReplicateResult, ...]
    csv_path: str | None
    summary_path: str | None
    wall_clock: float


def _replicate_task(args) -> tuple[tuple[int, int, int], ReplicateResult]:
    cfg, n, n1, r = args
    return (n, n1, r), run_replicate(cfg, n, n1, r)


def run_experiment(cfg: ExperimentConfig, out_dir: str | None = None, parallel: int = 1) -> ExperimentResult:
    """Run all cells and replicates, aggregate, and optionally persist.

    Output is independent of ``parallel``: replicates are seeded by cell and
    index, computed in isolation, then ordered deterministically.
    """
    started = time.perf_counter()
    cells = cfg.cells()
    tasks = [(cfg, n, n1, r) for (n, n1, _) in cells for r in range(cfg.replicates)]
    if parallel > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            chunk = max(1, len(tasks) // (8 * parallel))
            raw = dict(pool.map(_replicate_task, tasks, chunksize=chunk))
    else:
        raw = dict(map(_replicate_task, tasks))

    results = []
    curve = []
    for n, n1, label in cells:
        cell_results = [raw[(n, n1, r)] for r in range(cfg.replicates)]
        results.extend(cell_results)
        curve.append(_aggregate_cell(cell_results, cfg.best_procedure_id, label))

    wall = time.perf_counter() - started
    csv_path = summary_path = None
    target = out_dir if out_dir is not None else cfg.output_dir
    result = ExperimentResult(cfg, tuple(curve), tuple(results), None, None, wall)
    if target is not None:
        csv_path, summary_path = persist_experiment(result, target)
        result = ExperimentResult(cfg, tuple(curve), tuple(results), csv_path, summary_path, wall)
    return result


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def replicate_rows(experiment_id: str, results: Sequence[ReplicateResult]):
    """One CSV row per (replicate, procedure), in the documented column order."""
    for res in results:
        for out in res.outcomes:
            yield (
                experiment_id,
                res.n,
                res.n1,
                res.n2,
                res.replicate,
                out.procedure_id,
                float(out.d_h),
                float(out.d_k),
                float(out.v),
                float(out.m_ratio),
                float(out.score),
                out.floor_hits,
                out.procedure_id == res.winner,
                res.conditions is not None,
                float(res.conditions.cond2_stat) if res.conditions is not None else None,
                res.conditions.cond3_pass if res.conditions is not None else None,
                out.ratio_event,
                res.deviation_event,
            )


def persist_experiment(result: ExperimentResult, out_dir: str) -> tuple[str, str]:
    """Write the replicate CSV and the summary JSON; returns their paths."""
    os.makedirs(out_dir, exist_ok=True)
    exp_id = result.config.experiment_id
    csv_path = os.path.join(out_dir, f"{exp_id}_replicates.csv")
    with open(csv_path, "w", newline="\n") as fh:
        fh.write(",".join(REPLICATE_CSV_COLUMNS) + "\n")
        for row in replicate_rows(exp_id, result.results):
            fh.write(",".join(_fmt(v) for v in row) + "\n")

    summary = {
        "experiment_id": exp_id,
        "package_version": __version__,
        "base_seed": result.config.base_seed,
        "config": result.config.to_dict(),
        "curve": [point.to_dict() for point in result.curve],
    }
    summary_path = os.path.join(out_dir, f"{exp_id}_summary.json")
    with open(summary_path, "w", newline="\n") as fh:
        json.dump(summary, fh, indent=2, allow_nan=True)
        fh.write("\n")
    return csv_path, summary_path


# ---------------------------------------------------------------------------
# Bound verification (frozen candidates, fresh holdouts)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BoundCell:
    n2: int
    c: float

    def __post_init__(self):
        if self.n2 < 1:
            raise ConfigError(f"cell n2 must be >= 1, got {self.n2}")
        if not 0.0 < self.c < 1.0:
            raise ConfigError(f"cell c must be in (0, 1), got {self.c}")


@dataclass(frozen=True)
class BoundVerificationConfig:
    """Frozen-candidate experiment: either explicit densities (first entry is
    the designated best) or procedures fit once on a frozen estimation sample
    of size ``frozen_n1``."""

    experiment_id: str
    truth: Mapping[str, object]
    cells: tuple[BoundCell, ...]
    replicates: int
    base_seed: int
    frozen_densities: tuple[Mapping[str, object], ...] | None = None
    procedures: tuple[ProcedureSpec, ...] | None = None
    frozen_n1: int | None = None
    theory: TheorySettings = field(default_factory=TheorySettings)
    quadrature_points: int = 4097
    output_dir: str | None = None

    def __post_init__(self):
        if self.replicates < 1:
            raise ConfigError(f"replicates must be >= 1, got {self.replicates}")
        if not self.cells:
            raise ConfigError("at least one (n2, c) cell is required")
        direct = self.frozen_densities is not None
        fitted = self.procedures is not None
        if direct == fitted:
            raise ConfigError("exactly one of frozen_densities / procedures must be given")
        if fitted and (self.frozen_n1 is None or self.frozen_n1 < 1):
            raise ConfigError("procedures mode requires frozen_n1 >= 1")
        if direct and len(self.frozen_densities) == 0:
            raise ConfigError("frozen_densities must be nonempty")

    @classmethod
    def from_dict(cls, raw: Mapping) -> "BoundVerificationConfig":
        _check_keys(
            raw,
            {
                "experiment_id",
                "truth",
                "frozen_densities",
                "procedures",
                "frozen_n1",
                "cells",
                "replicates",
                "base_seed",
                "theory",
                "quadrature_points",
                "output_dir",
            },
            {"experiment_id", "truth", "cells", "replicates", "base_seed"},
            "bound verification config",
        )
        cells = []
        for i, cell in enumerate(raw["cells"]):
            _check_keys(cell, {"n2", "c"}, {"n2", "c"}, f"cells[{i}]")
            cells.append(BoundCell(n2=int(cell["n2"]), c=float(cell["c"])))
        return cls(
            experiment_id=str(raw["experiment_id"]),
            truth=dict(raw["truth"]),
            cells=tuple(cells),
            replicates=int(raw["replicates"]),
            base_seed=int(raw["base_seed"]),
            frozen_densities=tuple(raw["frozen_densities"]) if "frozen_densities" in raw else None,
            procedures=specs_from_config(raw["procedures"]) if "procedures" in raw else None,
            frozen_n1=int(raw["frozen_n1"]) if "frozen_n1" in raw else None,
            theory=_theory_from_dict(raw.get("theory")),
            quadrature_points=int(raw.get("quadrature_points", 4097)),
            output_dir=raw.get("output_dir"),
        )

    def to_dict(self) -> dict:
        out = {
            "experiment_id": self.experiment_id,
            "truth": dict(self.truth),
            "cells": [{"n2": cell.n2, "c": cell.c} for cell in self.cells],
            "replicates": self.replicates,
            "base_seed": self.base_seed,
            "theory": self.theory.to_dict(),
            "quadrature_points": self.quadrature_points,
        }
        if self.frozen_densities is not None:
            out["frozen_densities"] = [dict(d) for d in self.frozen_densities]
        if self.procedures is not None:
            out["procedures"] = [{"kind": s.kind, "id": s.id, **dict(s.params)} for s in self.procedures]
            out["frozen_n1"] = self.frozen_n1
        if self.output_dir is not None:
            out["output_dir"] = self.output_dir
        return out


@dataclass(frozen=True)
class BoundRow:
    """One (cell, candidate) line of the verification table."""

    n2: int
    c: float
    t: float
    label: str
    kind: str  # "ratio" for the tail event, "deviation" for the KL event
    v_sq: float
    bound: float
    frequency: float
    std_error: float
    replicates: int
    within_3se: bool | None


@dataclass(frozen=True)
class BoundVerificationResult:
    config: BoundVerificationConfig
    rows: tuple[BoundRow, ...]
    csv_path: str | None
    summary_path: str | None
    wall_clock: float


def _frozen_candidates(cfg: BoundVerificationConfig, truth: TrueDensity):
    """(label, density) pairs; index 0 is the designated best candidate."""
    if cfg.frozen_densities is not None:
        out = []
        for spec in cfg.frozen_densities:
            cand = truth_from_config(spec)
            out.append((cand.label, cand.density))
        return out
    train = sample_truth(truth, cfg.frozen_n1, make_rng(mix_seed(cfg.base_seed, 0)))
    out = []
    for spec in cfg.procedures:
        fit = fit_procedure(spec, train, init_seed=mix_seed(cfg.base_seed, 0, spec.id))
        out.append((spec.label, fit.density))
    return out


def run_bound_verification(cfg: BoundVerificationConfig, out_dir: str | None = None) -> BoundVerificationResult:
    """Estimate event frequencies against their bounds on frozen candidates.

    The candidates are fixed once; every cell draws ``replicates`` fresh
    holdout sets of size n2 from the truth.  For each candidate the
    likelihood-ratio tail event uses that candidate's measured squared
    Hellinger loss; the designated best candidate additionally gets the
    empirical-KL deviation event.
    """
    started = time.perf_counter()
    truth = truth_from_config(cfg.truth)
    candidates = _frozen_candidates(cfg, truth)

    measured = []
    for label, density in candidates:
        grid = grid_for(truth.density, density, n_points=cfg.quadrature_points)
        measured.append(divergence_report(truth.density, density, grid))

    rows = []
    for cell_index, cell in enumerate(cfg.cells):
        t = cfg.theory.t_for(cell.n2)
        ratio_counts = np.zeros(len(candidates), dtype=int)
        deviation_count = 0
        best_label, best_density = candidates[0]
        best = measured[0]
        for r in range(cfg.replicates):
            rng = make_rng(mix_seed(cfg.base_seed, 1 + cell_index, r))
            holdout = sample_truth(truth, cell.n2, rng).values
            truth_score = float(truth.density.log_pdf(holdout).sum())
            for j, (label, density) in enumerate(candidates):
                score = float(density.log_pdf(holdout).sum())
                threshold = -cell.n2 * cell.c * measured[j].d_h ** 2
                if score - truth_score >= threshold:
                    ratio_counts[j] += 1
            if math.isfinite(best.d_k) and best.v > 0.0:
                emp = empirical_kl(truth.density, best_density, holdout)
                if (emp - best.d_k) / best.v >= t:
                    deviation_count += 1

        for j, (label, density) in enumerate(candidates):
            v_sq = measured[j].d_h ** 2
            freq = ratio_counts[j] / cfg.replicates
            se = math.sqrt(freq * (1.0 - freq) / cfg.replicates)
            bound = likelihood_ratio_tail_bound(cell.n2, v_sq, cell.c * v_sq)
            rows.append(
                BoundRow(
                    n2=cell.n2,
                    c=cell.c,
                    t=t,
                    label=label,
                    kind="ratio",
                    v_sq=v_sq,
                    bound=bound,
                    frequency=freq,
                    std_error=se,
                    replicates=cfg.replicates,
                    within_3se=freq <= bound + 3.0 * se,
                )
            )
        freq = deviation_count / cfg.replicates
        se = math.sqrt(freq * (1.0 - freq) / cfg.replicates)
        rows.append(
            BoundRow(
                n2=cell.n2,
                c=cell.c,
                t=t,
                label=best_label,
                kind="deviation",
                v_sq=best.d_h**2,
                bound=kl_deviation_bound(cell.n2, t),
                frequency=freq,
                std_error=se,
                replicates=cfg.replicates,
                within_3se=None,
            )
        )

    wall = time.perf_counter() - started
    csv_path = summary_path = None
    target = out_dir if out_dir is not None else cfg.output_dir
    result = BoundVerificationResult(cfg, tuple(rows), None, None, wall)
    if target is not None:
        csv_path, summary_path = persist_bounds(result, target)
        result = BoundVerificationResult(cfg, tuple(rows), csv_path, summary_path, wall)
    return result


def persist_bounds(result: BoundVerificationResult, out_dir: str) -> tuple[str, str]:
    os.makedirs(out_dir, exist_ok=True)
    exp_id = result.config.experiment_id
    csv_path = os.path.join(out_dir, f"{exp_id}_bounds.csv")
    with open(csv_path, "w", newline="\n") as fh:
        fh.write(",".join(BOUND_CSV_COLUMNS) + "\n")
        for row in result.rows:
            fh.write(
                ",".join(
                    _fmt(v)
                    for v in (
                        exp_id,
                        row.n2,
                        row.c,
                        row.t,
                        row.label,
                        row.kind,
                        row.v_sq,
                        row.bound,
                        row.frequency,
                        row.std_error,
                        row.replicates,
                        row.within_3se,
                    )
                )
                + "\n"
            )
    summary = {
        "experiment_id": exp_id,
        "package_version": __version__,
        "base_seed": result.config.base_seed,
        "config": result.config.to_dict(),
        "rows": [
            {
                "n2": row.n2,
                "c": row.c,
                "t": row.t,
                "label": row.label,
                "kind": row.kind,
                "v_sq": row.v_sq,
                "bound": row.bound,
                "frequency": row.frequency,
                "std_error": row.std_error,
                "replicates": row.replicates,
                "within_3se": row.within_3se,
            }
            for row in result.rows
        ],
    }
    summary_path = os.path.join(out_dir, f"{exp_id}_bounds.json")
    with open(summary_path, "w", newline="\n") as fh:
        json.dump(summary, fh, indent=2, allow_nan=True)
        fh.write("\n")
    return csv_path, summary_path


# ---------------------------------------------------------------------------
# Convergence-rate studies
# ---------------------------------------------------------------------------

RATE_CSV_COLUMNS = ("experiment_id", "procedure_id", "label", "n", "mean_d_H", "slope", "slope_stderr")


@dataclass(frozen=True)
class RateConfig:
    """Procedure-wise convergence-rate study: fit on full samples of each
    size and regress log mean Hellinger loss on log n."""

    experiment_id: str
    truth: Mapping[str, object]
    procedures: tuple[ProcedureSpec, ...]
    n_grid: tuple[int, ...]
    replicates: int
    base_seed: int
    quadrature_points: int = 4097
    output_dir: str | None = None

    def __post_init__(self):
        if len(self.n_grid) < 3 or any(b <= a for a, b in zip(self.n_grid, self.n_grid[1:])):
            raise ConfigError("n_grid needs >= 3 strictly increasing sizes")
        if self.replicates < 30:
            raise ConfigError(f"replicates must be >= 30, got {self.replicates}")

    @classmethod
    def from_dict(cls, raw: Mapping) -> "RateConfig":
        _check_keys(
            raw,
            {"experiment_id", "truth", "procedures", "n_grid", "replicates", "base_seed", "quadrature_points", "output_dir"},
            {"experiment_id", "truth", "procedures", "n_grid", "replicates", "base_seed"},
            "rate config",
        )
        return cls(
            experiment_id=str(raw["experiment_id"]),
            truth=dict(raw["truth"]),
            procedures=specs_from_config(raw["procedures"]),
            n_grid=tuple(int(n) for n in raw["n_grid"]),
            replicates=int(raw["replicates"]),
            base_seed=int(raw["base_seed"]),
            quadrature_points=int(raw.get("quadrature_points", 4097)),
            output_dir=raw.get("output_dir"),
        )

    def to_dict(self) -> dict:
        out = {
            "experiment_id": self.experiment_id,
            "truth": dict(self.truth),
            "procedures": [{"kind": s.kind, "id": s.id, **dict(s.params)} for s in self.procedures],
            "n_grid": list(self.n_grid),
            "replicates": self.replicates,
            "base_seed": self.base_seed,
            "quadrature_points": self.quadrature_points,
        }
        if self.output_dir is not None:
            out["output_dir"] = self.output_dir
        return out


@dataclass(frozen=True)
class RateRow:
    procedure_id: int
    label: str
    slope: float
    stderr: float
    ns: tuple[int, ...]
    mean_losses: tuple[float, ...]


@dataclass(frozen=True)
class RateResult:
    config: RateConfig
    rows: tuple[RateRow, ...]
    csv_path: str | None
    summary_path: str | None
    wall_clock: float


def run_rates(cfg: RateConfig, out_dir: str | None = None) -> RateResult:
    """Estimate each procedure's loss decay exponent.

    All procedures share the per-(n, replicate) sample seeds, so their
    losses are paired across replicates.
    """
    from .theory import estimate_rate  # local import avoids a cycle

    started = time.perf_counter()
    truth = truth_from_config(cfg.truth)
    rows = []
    for spec in cfg.procedures:
        est = estimate_rate(truth, spec, cfg.n_grid, cfg.replicates, cfg.base_seed, cfg.quadrature_points)
        rows.append(
            RateRow(
                procedure_id=spec.id,
                label=spec.label,
                slope=est.slope,
                stderr=est.stderr,
                ns=est.ns,
                mean_losses=est.mean_losses,
            )
        )
    wall = time.perf_counter() - started
    csv_path = summary_path = None
    target = out_dir if out_dir is not None else cfg.output_dir
    result = RateResult(cfg, tuple(rows), None, None, wall)
    if target is not None:
        csv_path, summary_path = persist_rates(result, target)
        result = RateResult(cfg, tuple(rows), csv_path, summary_path, wall)
    return result


def persist_rates(result: RateResult, out_dir: str) -> tuple[str, str]:
    os.makedirs(out_dir, exist_ok=True)
    exp_id = result.config.experiment_id
    csv_path = os.path.join(out_dir, f"{exp_id}_rates.csv")
    with open(csv_path, "w", newline="\n") as fh:
        fh.write(",".join(RATE_CSV_COLUMNS) + "\n")
        for row in result.rows:
            for n, loss in zip(row.ns, row.mean_losses):
                fh.write(
                    ",".join(_fmt(v) for v in (exp_id, row.procedure_id, row.label, n, loss, row.slope, row.stderr))
                    + "\n"
                )
    summary = {
        "experiment_id": exp_id,
        "package_version": __version__,
        "base_seed": result.config.base_seed,
        "config": result.config.to_dict(),
        "rates": [
            {
                "procedure_id": row.procedure_id,
                "label": row.label,
                "slope": row.slope,
                "stderr": row.stderr,
                "ns": list(row.ns),
                "mean_losses": list(row.mean_losses),
            }
            for row in result.rows
        ],
    }
    summary_path = os.path.join(out_dir, f"{exp_id}_rates.json")
    with open(summary_path, "w", newline="\n") as fh:
        json.dump(summary, fh, indent=2, allow_nan=True)
        fh.write("\n")
    return csv_path, summary_path
