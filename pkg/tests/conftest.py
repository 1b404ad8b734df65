"""Shared fixtures and builders for the test suite."""

from __future__ import annotations

import json
import random

import pytest

from agentopt.core import Candidate, DomainKind, History, canonicalize
from agentopt.domains import make_domain

LETTERS = "ACDEFGHIKLMNPQRSTVWY"


def cand(text: str, kind: DomainKind = DomainKind.GENERIC) -> Candidate:
    return canonicalize(text, kind)


def make_history(
    scores: list[float],
    kind: DomainKind = DomainKind.GENERIC,
    prefix: str = "S",
) -> History:
    """History with the given scores and synthetic distinct candidates."""
    history = History()
    for i, score in enumerate(scores):
        history.append(cand(f"{prefix}{i:04d}", kind), score, origin="init")
    return history


def random_history(
    rng: random.Random,
    size: int,
    kind: DomainKind = DomainKind.GENERIC,
    min_len: int = 5,
    max_len: int = 20,
) -> History:
    """History of random distinct strings with random scores."""
    history = History()
    seen: set[str] = set()
    while len(history) < size:
        length = rng.randint(min_len, max_len)
        text = "".join(rng.choice(LETTERS) for _ in range(length))
        if text in seen:
            continue
        seen.add(text)
        history.append(cand(text, kind), rng.uniform(0.0, 100.0), origin="init")
    return history


def candidates_reply(items: list[str]) -> str:
    return json.dumps({"candidates": items})


def write_script(path, replies: list[tuple[str, str]]) -> None:
    """Write (role, reply) pairs as a scripted-backend JSONL file."""
    lines = [
        json.dumps({"match": {"role": role}, "reply": reply})
        for role, reply in replies
    ]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def diverse_init(n: int = 10, length: int = 6) -> list[str]:
    """Mutually distant strings (distinct repeated letters), all scoring 0
    under a count-of-A objective."""
    letters = "BDEFGHIKLMNPQRSTVWY"
    assert n <= len(letters)
    return [letters[i] * length for i in range(n)]


def multi_round_replies(n_rounds: int) -> list[tuple[str, str]]:
    """Scripted scenario driving ``n_rounds`` full loop rounds.

    Per round, under a count-of-A oracle: one improving proposal batch, three
    failing ones (patience exit), a planner reusing SIMILAR, and six worker
    calls (1 task x 2 seeds x 3 parse failures). Four evaluations land per
    round, so a budget of ``len(init) + 4 * n_rounds`` ends the run exactly
    at round ``n_rounds``'s final proposal batch.
    """
    replies: list[tuple[str, str]] = []
    for r in range(1, n_rounds + 1):
        replies.append(("explorer", candidates_reply(["A" * r])))
        for i in range(3):
            replies.append(("explorer", candidates_reply([f"Z{r}B{i}"])))
        if r < n_rounds:
            replies.append(("planner", '{"SIMILAR": "USE_EXISTING"}'))
            replies += [("worker", "no json in this reply")] * 6
    return replies


@pytest.fixture(scope="session")
def peptide_domain():
    return make_domain(DomainKind.PEPTIDE)


@pytest.fixture(scope="session")
def smiles_domain():
    return make_domain(DomainKind.SMILES)


@pytest.fixture(scope="session")
def generic_domain():
    return make_domain(DomainKind.GENERIC)
