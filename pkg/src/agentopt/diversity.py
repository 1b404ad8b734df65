"""Diverse seed selection and diverse-portfolio tracking.

Both use the same greedy rule: walk the history best-to-worst and keep a
record only if it sits at least ``threshold`` away from everything already
kept. Greedy is not optimal in general, but it is deterministic, cheap, and
always feasible, which is what the loop needs at every step.
"""

from __future__ import annotations

from dataclasses import dataclass

from .core import Candidate, Direction, History, PortfolioSpec, ScoredRecord
from .distance import DistanceFn
from .errors import EmptyHistory


def _greedy_select(
    ranked: list[ScoredRecord],
    max_size: int,
    threshold: float,
    dist: DistanceFn,
) -> tuple[list[ScoredRecord], int]:
    """Greedy diverse prefix of a best-first ranking.

    Returns the kept records and the 0-based index of the last rank examined
    before the selection filled up (or ``len(ranked) - 1`` if it never did).
    """
    kept: list[ScoredRecord] = []
    last_examined = len(ranked) - 1
    for idx, record in enumerate(ranked):
        if all(
            dist(record.candidate.canonical, k.candidate.canonical) >= threshold
            for k in kept
        ):
            kept.append(record)
            if len(kept) == max_size:
                last_examined = idx
                break
    return kept, last_examined


def select_diverse_seeds(
    history: History,
    m: int,
    threshold: float,
    dist: DistanceFn,
    direction: Direction,
) -> list[Candidate]:
    """Pick up to ``m`` mutually-distant starting points for local search.

    The global best is always included; fewer than ``m`` seeds are returned
    when the history cannot supply that many sufficiently distinct records.
    """
    if len(history) == 0:
        raise EmptyHistory("cannot select seeds from an empty history")
    if m < 1:
        raise ValueError("seed count must be >= 1")
    ranked = history.ranked(direction)
    kept, _ = _greedy_select(ranked, m, threshold, dist)
    return [record.candidate for record in kept]


@dataclass(frozen=True)
class Portfolio:
    """A diverse set of strong records plus its aggregate score."""

    members: list[ScoredRecord]
    agg_value: float
    complete: bool  # True when the full requested size was reachable


def _aggregate(spec: PortfolioSpec, scores: list[float]) -> float:
    # Only "mean" is defined today; the field exists so other
    # aggregations can slot in without touching callers.
    return sum(scores) / len(scores)


def best_portfolio_greedy(
    history: History,
    spec: PortfolioSpec,
    dist: DistanceFn,
    direction: Direction,
) -> Portfolio:
    """Best-first greedy portfolio under the pairwise distance constraint."""
    if len(history) == 0:
        raise EmptyHistory("cannot build a portfolio from an empty history")
    ranked = history.ranked(direction)
    members, _ = _greedy_select(ranked, spec.size, spec.beta, dist)
    return Portfolio(
        members=members,
        agg_value=_aggregate(spec, [r.score for r in members]),
        complete=len(members) == spec.size,
    )


@dataclass(frozen=True)
class PortfolioPoint:
    eval_index: int
    agg_value: float
    complete: bool


def portfolio_progress(
    history: History,
    spec: PortfolioSpec,
    dist: DistanceFn,
    direction: Direction,
) -> list[PortfolioPoint]:
    """Portfolio aggregate over every prefix of the history.

    Equivalent to rebuilding the greedy portfolio from scratch after each
    evaluation. Recomputation is skipped when a new record ranks below the
    point where the previous greedy pass already filled the portfolio, since
    it cannot alter the selection.
    """
    points: list[PortfolioPoint] = []
    if len(history) == 0:
        return points
    ranked_prefix: list[ScoredRecord] = []
    last_portfolio: list[ScoredRecord] = []
    last_cutoff = -1
    reverse = direction == Direction.MAXIMIZE

    for record in history.records:
        key = (-record.score if reverse else record.score, record.eval_index)
        lo, hi = 0, len(ranked_prefix)
        while lo < hi:
            mid = (lo + hi) // 2
            other = ranked_prefix[mid]
            other_key = (
                -other.score if reverse else other.score,
                other.eval_index,
            )
            if other_key <= key:
                lo = mid + 1
            else:
                hi = mid
        ranked_prefix.insert(lo, record)

        # A record inserted below the rank where greedy last filled the
        # portfolio can never change the selection, so skip the rebuild.
        full = len(last_portfolio) == spec.size
        if not full or lo <= last_cutoff:
            last_portfolio, last_cutoff = _greedy_select(
                ranked_prefix, spec.size, spec.beta, dist
            )

        points.append(
            PortfolioPoint(
                eval_index=record.eval_index,
                agg_value=_aggregate(spec, [r.score for r in last_portfolio]),
                complete=len(last_portfolio) == spec.size,
            )
        )
    return points
