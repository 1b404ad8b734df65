"""Built-in domain descriptors: peptide sequences, SMILES strings, generic.

Switching domains is meant to cost nothing but a different descriptor:
validator, distance function, default tasks, prompt templates, and the
default diversity threshold all hang off :class:`DomainSpec`.
"""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Optional

from .core import DomainKind
from .distance import DistanceFn, normalized_edit_distance
from .errors import ConfigError
from .filtering import (
    PEPTIDE_ALPHABET,
    GenericValidator,
    PeptideValidator,
    SmilesValidator,
    Validator,
)
from .prompts import PromptPack, load_prompt_pack

GENERIC_ALPHABET = "ABCDEFGHIJKLMNOPQRSTUVWXYZ"
# Single-character atoms only, so random substitutions stay parseable.
SMILES_ALPHABET = "CNOSPFIcnos"

_DEFAULT_TASK_FILES: dict[DomainKind, list[tuple[str, str]]] = {
    DomainKind.PEPTIDE: [
        ("SIMILAR", "task_similar.txt"),
        ("EXPLORE", "task_explore.txt"),
        ("SHUFFLE", "task_shuffle.txt"),
    ],
    DomainKind.SMILES: [
        ("SIMILAR", "task_similar.txt"),
        ("EXPLORE", "task_explore.txt"),
        ("SCAFFOLD_HOP", "task_scaffold_hop.txt"),
    ],
    DomainKind.GENERIC: [
        ("SIMILAR", "task_similar.txt"),
        ("EXPLORE", "task_explore.txt"),
        ("SHUFFLE", "task_shuffle.txt"),
    ],
}

# Greedy seed-selection thresholds: peptides use 0.75 normalized edit
# distance, molecules 0.5 on whatever distance is plugged in.
DEFAULT_SEED_THRESHOLDS: dict[DomainKind, float] = {
    DomainKind.PEPTIDE: 0.75,
    DomainKind.SMILES: 0.5,
    DomainKind.GENERIC: 0.75,
}


@dataclass
class DomainSpec:
    """Everything the engine needs to know about one design space."""

    kind: DomainKind
    validator: Validator
    distance: DistanceFn
    default_tasks: list[tuple[str, str]]  # exactly 3 (name, text) pairs
    prompt_pack: PromptPack
    alphabet: str
    default_seed_threshold: float

    def __post_init__(self) -> None:
        if len(self.default_tasks) != 3:
            raise ValueError("a domain must define exactly 3 default tasks")


def builtin_template_dir(kind: DomainKind) -> Path:
    return Path(str(resources.files("agentopt") / "templates" / kind.value))


def make_domain(
    kind: DomainKind,
    template_dir: Optional[Path] = None,
    distance: Optional[DistanceFn] = None,
    peptide_min_len: int = 5,
    peptide_max_len: int = 60,
    validator: Optional[Validator] = None,
) -> DomainSpec:
    """Assemble a domain, allowing template/validator/distance overrides.

    The built-in molecule distance is the edit-distance fallback; attach a
    fingerprint distance through ``distance`` when a chemistry toolkit is
    available.
    """
    directory = Path(template_dir) if template_dir else builtin_template_dir(kind)
    pack = load_prompt_pack(directory)
    tasks = []
    for name, filename in _DEFAULT_TASK_FILES[kind]:
        task_path = directory / filename
        if not task_path.is_file():
            raise ConfigError(f"missing default task file: {task_path}")
        tasks.append((name, task_path.read_text(encoding="utf-8").rstrip("\n")))
    if validator is None:
        if kind == DomainKind.PEPTIDE:
            validator = PeptideValidator(min_len=peptide_min_len, max_len=peptide_max_len)
        elif kind == DomainKind.SMILES:
            validator = SmilesValidator()
        else:
            validator = GenericValidator()
    if kind == DomainKind.PEPTIDE:
        alphabet = PEPTIDE_ALPHABET
    elif kind == DomainKind.SMILES:
        alphabet = SMILES_ALPHABET
    else:
        alphabet = GENERIC_ALPHABET
    return DomainSpec(
        kind=kind,
        validator=validator,
        distance=distance or normalized_edit_distance,
        default_tasks=tasks,
        prompt_pack=pack,
        alphabet=alphabet,
        default_seed_threshold=DEFAULT_SEED_THRESHOLDS[kind],
    )
