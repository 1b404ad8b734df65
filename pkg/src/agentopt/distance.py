"""Edit-distance primitives used for dedup feedback, seeding, and portfolios.

The normalized form divides the Levenshtein distance by the length of the
shorter string, so it can exceed 1.0 for very different lengths; similarity
clamps that into [0, 1].
"""

from __future__ import annotations

from typing import Callable

# A distance takes two canonical texts and returns a value >= 0,
# with dist(a, a) == 0 and dist(a, b) == dist(b, a).
DistanceFn = Callable[[str, str], float]


def levenshtein(a: str, b: str) -> int:
    """Classic edit distance via the two-row dynamic program."""
    if a == b:
        return 0
    if len(a) < len(b):
        a, b = b, a
    if not b:
        return len(a)
    previous = list(range(len(b) + 1))
    for i, ch_a in enumerate(a, start=1):
        current = [i]
        for j, ch_b in enumerate(b, start=1):
            cost = 0 if ch_a == ch_b else 1
            current.append(
                min(previous[j] + 1, current[j - 1] + 1, previous[j - 1] + cost)
            )
        previous = current
    return previous[-1]


def normalized_edit_distance(a: str, b: str) -> float:
    """Levenshtein distance divided by the shorter string's length."""
    if not a and not b:
        return 0.0
    shorter = min(len(a), len(b))
    if shorter == 0:
        return float("inf")
    return levenshtein(a, b) / shorter


def similarity(a: str, b: str) -> float:
    """1 minus the normalized edit distance, clamped into [0, 1]."""
    return 1.0 - min(1.0, normalized_edit_distance(a, b))


class MemoDistance:
    """Wrap a distance with an unordered-pair cache.

    Portfolio tracking recomputes distances between the same strong
    candidates over and over; the cache makes per-prefix recomputation cheap.
    """

    def __init__(self, fn: DistanceFn):
        self._fn = fn
        self._cache: dict[tuple[str, str], float] = {}

    def __call__(self, a: str, b: str) -> float:
        key = (a, b) if a <= b else (b, a)
        value = self._cache.get(key)
        if value is None:
            value = self._fn(a, b)
            self._cache[key] = value
        return value
