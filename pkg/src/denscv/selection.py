"""Holdout-likelihood selection among fitted densities.

The sample is split into an estimation part (fits the candidates) and an
evaluation part; each candidate is scored by its summed log density over the
evaluation points and the argmax wins.  All comparison happens in the log
domain, which preserves the argmax of the product of densities exactly while
avoiding underflow.  A multi-split variant runs several independent random
splits and aggregates by majority vote.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .densities import LOG_FLOOR, as_values
from .errors import BadSplitSizes, EmptyHoldout, InvalidInputs, NoProcedures
from .estimators import FittedDensity, ProcedureSpec, fit_procedure
from .rng import make_rng, mix_seed

_FLOOR_EPS = 1e-9


@dataclass(frozen=True, eq=False)
class SplitPlan:
    """Partition of indices 0..n-1 into estimation and evaluation parts.

    The first ``n1`` entries of ``assignment`` index the estimation part.
    Sequential mode keeps natural order (estimation = indices 0..n1-1);
    random mode applies a seeded uniform permutation.
    """

    n: int
    n1: int
    assignment: np.ndarray
    mode: str
    seed: int | None = None

    def __post_init__(self):
        if not 1 <= self.n1 < self.n:
            raise BadSplitSizes(f"need 1 <= n1 < n, got n1={self.n1}, n={self.n}")
        a = np.asarray(self.assignment)
        if a.shape != (self.n,) or not np.array_equal(np.sort(a), np.arange(self.n)):
            raise InvalidInputs("assignment must be a permutation of 0..n-1")

    @property
    def n2(self) -> int:
        return self.n - self.n1

    @property
    def estimation_indices(self) -> np.ndarray:
        return self.assignment[: self.n1]

    @property
    def evaluation_indices(self) -> np.ndarray:
        return self.assignment[self.n1 :]

    def split(self, data) -> tuple[np.ndarray, np.ndarray]:
        values = as_values(data)
        if values.size != self.n:
            raise InvalidInputs(f"data has {values.size} values, split expects {self.n}")
        return values[self.estimation_indices], values[self.evaluation_indices]


def make_split(n: int, n1: int, mode: str = "sequential", seed: int | None = None) -> SplitPlan:
    """Build a split plan; random mode requires a seed for reproducibility."""
    if not 1 <= n1 < n:
        raise BadSplitSizes(f"need 1 <= n1 < n, got n1={n1}, n={n}")
    if mode == "sequential":
        assignment = np.arange(n)
    elif mode == "random":
        if seed is None:
            raise InvalidInputs("random split mode requires a seed")
        assignment = make_rng(seed).permutation(n)
    else:
        raise InvalidInputs(f"unknown split mode {mode!r}")
    return SplitPlan(n=n, n1=n1, assignment=assignment, mode=mode, seed=seed)


def score_holdout(fit: FittedDensity, holdout) -> tuple[float, int]:
    """(summed floored log density, number of floor activations)."""
    values = as_values(holdout)
    if values.size == 0:
        raise EmptyHoldout("holdout scoring requires at least one point")
    lp = fit.density.log_pdf(values)
    hits = int(np.sum(lp <= LOG_FLOOR + _FLOOR_EPS))
    return float(lp.sum()), hits


def holdout_log_likelihood(fit: FittedDensity, holdout) -> float:
    """Summed floored log density of the holdout points under the fit."""
    score, _ = score_holdout(fit, holdout)
    return score


@dataclass(frozen=True)
class SelectionResult:
    """Scores and the winning procedure for one split.

    The winner attains the maximal score; exact ties go to the smallest
    procedure id and set ``tie``.  ``floor_hits`` counts, per procedure, the
    holdout points scored at the log floor, so wins by flooring are
    distinguishable from genuine likelihood wins.
    """

    procedure_ids: tuple[int, ...]
    scores: tuple[float, ...]
    winner: int
    tie: bool
    floor_hits: tuple[int, ...]


def argmax_smallest_id(ids: Sequence[int], scores: Sequence[float]) -> tuple[int, bool]:
    """Winning id under max score with smallest-id tie break."""
    best = max(scores)
    winners = [i for i, s in zip(ids, scores) if s == best]
    return min(winners), len(winners) > 1


def select(fits: Sequence[FittedDensity], holdout) -> SelectionResult:
    """Pick the fitted density with the highest holdout log-likelihood."""
    if len(fits) == 0:
        raise NoProcedures("selection requires at least one fitted density")
    ids = tuple(f.procedure_id for f in fits)
    scored = [score_holdout(f, holdout) for f in fits]
    scores = tuple(s for s, _ in scored)
    hits = tuple(h for _, h in scored)
    winner, tie = argmax_smallest_id(ids, scores)
    return SelectionResult(procedure_ids=ids, scores=scores, winner=winner, tie=tie, floor_hits=hits)


def majority_vote(winner_ids: Sequence[int]) -> tuple[int, dict[int, int]]:
    """Most frequent id; ties among the top vote counts go to the smallest id."""
    if len(winner_ids) == 0:
        raise InvalidInputs("majority vote requires at least one vote")
    tally = Counter(winner_ids)
    top = max(tally.values())
    winner = min(i for i, c in tally.items() if c == top)
    return winner, dict(sorted(tally.items()))


@dataclass(frozen=True)
class MultiSplitResult:
    winner: int
    votes: dict[int, int]
    split_winners: tuple[int, ...]
    split_results: tuple[SelectionResult, ...]
    aggregation: str


def multi_split_select(
    sample,
    specs: Sequence[ProcedureSpec],
    n1: int,
    n_splits: int,
    seed: int,
    aggregation: str = "vote",
) -> MultiSplitResult:
    """Run selection over several independent random splits.

    ``aggregation="vote"`` picks the procedure winning the most splits
    (smallest id on tie); ``"product"`` sums each procedure's holdout
    log-likelihood across splits and takes the argmax.  Per-split seeds are
    derived from ``seed`` by split index, so results do not depend on
    execution order.
    """
    if n_splits < 1:
        raise InvalidInputs(f"n_splits must be >= 1, got {n_splits}")
    if aggregation not in ("vote", "product"):
        raise InvalidInputs(f"unknown aggregation {aggregation!r}")
    if len(specs) == 0:
        raise NoProcedures("multi-split selection requires procedures")
    values = as_values(sample)

    results = []
    for s in range(n_splits):
        plan = make_split(values.size, n1, mode="random", seed=mix_seed(seed, s))
        x1, x2 = plan.split(values)
        fits = [fit_procedure(spec, x1, init_seed=mix_seed(seed, s, spec.id)) for spec in specs]
        results.append(select(fits, x2))

    split_winners = tuple(r.winner for r in results)
    if aggregation == "vote":
        winner, votes = majority_vote(split_winners)
    else:
        ids = results[0].procedure_ids
        totals = [sum(r.scores[j] for r in results) for j in range(len(ids))]
        winner, _ = argmax_smallest_id(ids, totals)
        votes = dict(sorted(Counter(split_winners).items()))
    return MultiSplitResult(
        winner=winner,
        votes=votes,
        split_winners=split_winners,
        split_results=tuple(results),
        aggregation=aggregation,
    )
