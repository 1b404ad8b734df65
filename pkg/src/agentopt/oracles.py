"""The black-box objective boundary.

Built-in synthetic objectives cover the regimes the loop has to survive at
desk scale (easy gradient, hidden structure, near-total plateau); subprocess
and HTTP adapters connect real predictors. Every adapter enforces the same
contract: one finite float per candidate or an ``OracleFailure``.
"""

from __future__ import annotations

import hashlib
import math
import random
import subprocess
import threading
from pathlib import Path
from typing import Callable, Optional, Sequence

from .core import Candidate, DomainKind, canonicalize
from .errors import EmptyCandidate, InsufficientInit, OracleFailure, OracleTimeout


class Oracle:
    """Base oracle: scores candidates, counts calls, optionally memoizes.

    Call counting and cache updates are serialized so concurrent evaluation
    (when a caller wants it) cannot corrupt the bookkeeping.
    """

    name = "oracle"

    def __init__(self, cache_enabled: bool = False):
        self.calls = 0
        self._lock = threading.Lock()
        self._cache: Optional[dict[str, float]] = {} if cache_enabled else None

    def _score(self, canonical: str) -> float:
        raise NotImplementedError

    def evaluate(self, candidate: Candidate) -> float:
        return self.evaluate_many([candidate])[0]

    def evaluate_many(self, candidates: Sequence[Candidate]) -> list[float]:
        """Score a batch; every returned value is checked for finiteness."""
        texts = [c.canonical for c in candidates]
        scores: list[Optional[float]] = [None] * len(texts)
        missing: list[int] = []
        with self._lock:
            for i, text in enumerate(texts):
                if self._cache is not None and text in self._cache:
                    scores[i] = self._cache[text]
                else:
                    missing.append(i)
        if missing:
            fresh = self._score_many([texts[i] for i in missing])
            checked = []
            for i, value in zip(missing, fresh):
                if not isinstance(value, (int, float)) or not math.isfinite(value):
                    raise OracleFailure(
                        f"oracle {self.name} returned non-finite score {value!r} "
                        f"for {texts[i]!r}"
                    )
                checked.append((i, float(value)))
            with self._lock:
                self.calls += len(missing)
                for i, value in checked:
                    scores[i] = value
                    if self._cache is not None:
                        self._cache[texts[i]] = value
        return [float(s) for s in scores]  # every slot is filled above

    def _score_many(self, texts: list[str]) -> list[float]:
        return [self._score(t) for t in texts]


class MotifMatchOracle(Oracle):
    """Similarity to a hidden target via normalized longest common subsequence.

    Scores lie in [0, 1] with 1.0 exactly at the target, which gives the
    loop a smooth, deterministic gradient to climb in tests and demos.
    """

    def __init__(self, target: str, cache_enabled: bool = False):
        super().__init__(cache_enabled)
        if not target:
            raise ValueError("motif target must be non-empty")
        self.target = target
        self.name = "motif-match"

    def _score(self, canonical: str) -> float:
        lcs = _lcs_length(canonical, self.target)
        return lcs / max(len(canonical), len(self.target))


def _lcs_length(a: str, b: str) -> int:
    if not a or not b:
        return 0
    previous = [0] * (len(b) + 1)
    for ch_a in a:
        current = [0]
        for j, ch_b in enumerate(b, start=1):
            if ch_a == ch_b:
                current.append(previous[j - 1] + 1)
            else:
                current.append(max(previous[j], current[j - 1]))
        previous = current
    return previous[-1]


class HiddenWeightsOracle(Oracle):
    """Linear score over character counts with optional per-candidate noise.

    Noise, when enabled, is hashed from the candidate text so the oracle
    stays a pure function and full-loop tests remain reproducible.
    """

    def __init__(
        self,
        weights: dict[str, float],
        normalize: bool = True,
        noise_sd: float = 0.0,
        seed: int = 0,
        cache_enabled: bool = False,
    ):
        super().__init__(cache_enabled)
        self.weights = dict(weights)
        self.normalize = normalize
        self.noise_sd = noise_sd
        self.seed = seed
        self.name = "hidden-weights"

    def _score(self, canonical: str) -> float:
        total = sum(self.weights.get(ch, 0.0) for ch in canonical)
        if self.normalize and canonical:
            total /= len(canonical)
        if self.noise_sd > 0:
            rng = random.Random(_stable_hash(f"{self.seed}:{canonical}"))
            total += rng.gauss(0.0, self.noise_sd)
        return total


class PlateauOracle(Oracle):
    """Deceptive objective: the floor value almost everywhere.

    A hashed ``mass`` fraction of candidates receive a value in (floor,
    floor + 1]; everything else scores exactly the floor. This reproduces
    the zero-signal initialization regime the guard has to escape.
    """

    def __init__(
        self,
        floor: float = 0.0,
        mass: float = 0.01,
        seed: int = 0,
        cache_enabled: bool = False,
    ):
        super().__init__(cache_enabled)
        if not 0 < mass < 1:
            raise ValueError("mass must lie strictly between 0 and 1")
        self.floor = floor
        self.mass = mass
        self.seed = seed
        self.name = "plateau"

    def _score(self, canonical: str) -> float:
        u = _stable_unit(f"{self.seed}:gate:{canonical}")
        if u >= self.mass:
            return self.floor
        lift = _stable_unit(f"{self.seed}:lift:{canonical}")
        return self.floor + max(lift, 1e-12)


def _stable_hash(text: str) -> int:
    return int.from_bytes(hashlib.sha256(text.encode("utf-8")).digest()[:8], "big")


def _stable_unit(text: str) -> float:
    return _stable_hash(text) / 2**64


SYNTHETIC_ORACLES: dict[str, Callable[..., Oracle]] = {
    "motif-match": MotifMatchOracle,
    "hidden-weights": HiddenWeightsOracle,
    "plateau": PlateauOracle,
}


def make_synthetic(name: str, params: dict, cache_enabled: bool = False) -> Oracle:
    try:
        factory = SYNTHETIC_ORACLES[name]
    except KeyError:
        raise ValueError(
            f"unknown synthetic oracle {name!r}; choose from "
            f"{sorted(SYNTHETIC_ORACLES)}"
        ) from None
    return factory(cache_enabled=cache_enabled, **params)


class SubprocessOracle(Oracle):
    """Line-protocol oracle: N candidate lines on stdin, N score lines back.

    Batched so process startup is amortized across a whole filter-approved
    batch rather than paid per candidate.
    """

    def __init__(
        self,
        command: Sequence[str],
        timeout_s: float = 60.0,
        cache_enabled: bool = False,
    ):
        super().__init__(cache_enabled)
        if not command:
            raise ValueError("subprocess oracle needs a command")
        self.command = list(command)
        self.timeout_s = timeout_s
        self.name = f"subprocess:{Path(command[0]).name}"

    def _score_many(self, texts: list[str]) -> list[float]:
        try:
            proc = subprocess.run(
                self.command,
                input="\n".join(texts) + "\n",
                capture_output=True,
                text=True,
                timeout=self.timeout_s,
                check=False,
            )
        except subprocess.TimeoutExpired as exc:
            raise OracleTimeout(f"oracle timed out after {self.timeout_s}s") from exc
        except OSError as exc:
            raise OracleFailure(f"cannot run oracle command: {exc}") from exc
        if proc.returncode != 0:
            raise OracleFailure(
                f"oracle exited {proc.returncode}: {proc.stderr.strip()[:200]}"
            )
        lines = proc.stdout.splitlines()
        if len(lines) != len(texts):
            raise OracleFailure(
                f"oracle answered {len(lines)} lines for {len(texts)} candidates"
            )
        return [_parse_score(line) for line in lines]


def _parse_score(line: str) -> float:
    try:
        return float(line.strip())
    except ValueError as exc:
        raise OracleFailure(f"unparseable oracle output line: {line!r}") from exc


class HttpOracle(Oracle):
    """POSTs ``{"candidate": text}`` and expects ``{"score": number}`` back."""

    def __init__(self, url: str, timeout_s: float = 60.0, cache_enabled: bool = False):
        super().__init__(cache_enabled)
        self.url = url
        self.timeout_s = timeout_s
        self.name = f"http:{url}"

    def _score(self, canonical: str) -> float:
        import requests

        try:
            response = requests.post(
                self.url, json={"candidate": canonical}, timeout=self.timeout_s
            )
        except requests.Timeout as exc:
            raise OracleTimeout(str(exc)) from exc
        except requests.RequestException as exc:
            raise OracleFailure(str(exc)) from exc
        if response.status_code != 200:
            raise OracleFailure(f"oracle HTTP {response.status_code}")
        try:
            value = response.json()["score"]
        except (ValueError, KeyError, TypeError) as exc:
            raise OracleFailure(f"malformed oracle payload: {exc}") from exc
        if not isinstance(value, (int, float)):
            raise OracleFailure(f"oracle score is not a number: {value!r}")
        return float(value)


# ---------------------------------------------------------------------------
# Initialization candidate sources
# ---------------------------------------------------------------------------


def read_candidate_file(path: Path, kind: DomainKind) -> list[Candidate]:
    """Read one candidate per non-blank line, keeping file order."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise InsufficientInit(f"cannot read init file {path}: {exc}") from exc
    candidates = []
    for line in text.splitlines():
        if not line.strip():
            continue
        try:
            candidates.append(canonicalize(line, kind))
        except EmptyCandidate:
            continue
    return candidates


def mutate_once(parent: str, alphabet: str, rng: random.Random) -> str:
    """Single-position substitution with a uniformly random letter.

    Only letter positions are touched so structural characters (ring digits,
    brackets, bonds) survive mutation of molecule strings.
    """
    positions = [i for i, ch in enumerate(parent) if ch.isalpha()]
    if not positions:
        positions = list(range(len(parent)))
    pos = rng.choice(positions)
    letter = rng.choice(alphabet)
    return parent[:pos] + letter + parent[pos + 1 :]


def template_mutants(
    templates: Sequence[Candidate],
    count: int,
    alphabet: str,
    rng: random.Random,
) -> list[Candidate]:
    """Templates first, then deduplicated single-substitution mutants.

    Returns exactly ``count`` distinct candidates or raises
    ``InsufficientInit`` if the mutation space cannot supply them.
    """
    if not templates:
        raise InsufficientInit("template initialization needs at least one template")
    kind = templates[0].kind
    out: list[Candidate] = []
    seen: set[str] = set()
    for template in templates:
        if template.canonical not in seen and len(out) < count:
            seen.add(template.canonical)
            out.append(template)
    attempts = 0
    limit = max(1000, count * 1000)
    while len(out) < count:
        attempts += 1
        if attempts > limit:
            raise InsufficientInit(
                f"could not generate {count} distinct init candidates "
                f"after {limit} mutation attempts"
            )
        parent = rng.choice(templates)
        mutant = mutate_once(parent.canonical, alphabet, rng)
        if mutant in seen:
            continue
        seen.add(mutant)
        out.append(canonicalize(mutant, kind))
    return out


class CandidatePool:
    """Uniform sampler used by the zero-signal guard.

    Backed either by a fixed list (a dataset file) or by endless template
    mutation. ``draw`` may return duplicates of earlier draws; the guard
    dedups against history itself. Raises ``InsufficientInit`` when a finite
    pool has been exhausted.
    """

    def __init__(
        self,
        items: Optional[list[Candidate]] = None,
        templates: Optional[list[Candidate]] = None,
        alphabet: str = "",
    ):
        if (items is None) == (templates is None):
            raise ValueError("pool needs exactly one of items or templates")
        self._items = items
        self._templates = templates
        self._alphabet = alphabet
        self._drawn: set[str] = set()

    def draw(self, rng: random.Random) -> Candidate:
        if self._items is not None:
            untried = [c for c in self._items if c.canonical not in self._drawn]
            if not untried:
                raise InsufficientInit("candidate pool exhausted during resampling")
            choice = rng.choice(untried)
            self._drawn.add(choice.canonical)
            return choice
        assert self._templates is not None
        parent = rng.choice(self._templates)
        mutant = mutate_once(parent.canonical, self._alphabet, rng)
        return canonicalize(mutant, parent.kind)
