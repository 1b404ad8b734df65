"""Prompt assembly and reply parsing for the three agent roles.

Templates live as UTF-8 text files with ``{name}`` placeholders and are
loaded once at startup, so prompt edits never require a code change. Parsing
is deliberately forgiving: agent replies arrive wrapped in prose, code
fences, and chain-of-thought, and the last well-formed JSON answer wins.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Optional

from .core import ObjectiveSpec
from .errors import ConfigError, MissingPlaceholder, NoCandidatesFound, NoPlanFound
from .registry import TaskRegistry

logger = logging.getLogger(__name__)

_PLACEHOLDER = re.compile(r"\{([A-Za-z_][A-Za-z0-9_]*)\}")

TEMPLATE_FILES = {
    "explorer_template": "explorer.txt",
    "planner_template": "planner.txt",
    "worker_prefix": "worker_prefix.txt",
    "worker_suffix": "worker_suffix.txt",
    "worker_user_template": "worker_user.txt",
    "task_awareness_slot": "task_awareness.txt",
}


@dataclass(frozen=True)
class PromptPack:
    """The full template set for one domain."""

    explorer_template: str
    planner_template: str
    worker_prefix: str
    worker_suffix: str
    worker_user_template: str
    task_awareness_slot: str


def load_prompt_pack(directory: Path) -> PromptPack:
    """Read the six template files from ``directory``.

    Raises ``ConfigError`` naming the missing path if any file is absent.
    """
    texts = {}
    for attr, filename in TEMPLATE_FILES.items():
        path = Path(directory) / filename
        if not path.is_file():
            raise ConfigError(f"missing template file: {path}")
        texts[attr] = path.read_text(encoding="utf-8").rstrip("\n")
    return PromptPack(**texts)


def render_template(template: str, values: dict[str, str]) -> str:
    """Substitute ``{name}`` placeholders; unknown names raise."""

    def _sub(match: re.Match) -> str:
        name = match.group(1)
        if name not in values:
            raise MissingPlaceholder(f"template references unsupplied placeholder {{{name}}}")
        return values[name]

    return _PLACEHOLDER.sub(_sub, template)


def build_explorer_prompt(
    pack: PromptPack,
    ctx_text: str,
    best_score_text: str,
    objective: ObjectiveSpec,
) -> str:
    """Instantiate the global-proposal prompt around the rendered context."""
    if not ctx_text.strip():
        raise ValueError("context text must be non-empty")
    prompt = render_template(
        pack.explorer_template,
        {"C_global": ctx_text, "best_score": best_score_text},
    )
    return _append_objective_description(prompt, pack, objective)


def build_planner_prompt(
    pack: PromptPack,
    ctx_text: str,
    stats_text: str,
    summary_text: str,
    objective: ObjectiveSpec,
) -> str:
    """Instantiate the task-planning prompt with stats and task summaries."""
    if not ctx_text.strip():
        raise ValueError("context text must be non-empty")
    prompt = render_template(
        pack.planner_template,
        {
            "C_global": ctx_text,
            "performance_stats": stats_text,
            "existing_tasks_summary": summary_text,
        },
    )
    return _append_objective_description(prompt, pack, objective)


def _append_objective_description(
    prompt: str, pack: PromptPack, objective: ObjectiveSpec
) -> str:
    if not objective.description:
        return prompt
    section = render_template(
        pack.task_awareness_slot, {"description": objective.description}
    )
    return prompt + "\n\n" + section


def build_worker_prompts(
    pack: PromptPack, task_text: str, x_curr: str
) -> tuple[str, str]:
    """Compose the (system, user) pair for one local-search iteration.

    The system prompt is the fixed domain prefix, the task text, and the
    fixed domain suffix; the user prompt carries only the current incumbent.
    """
    if not task_text.strip():
        raise ValueError("task text must be non-empty")
    system = "\n\n".join(
        [pack.worker_prefix.strip(), task_text.strip(), pack.worker_suffix.strip()]
    )
    user = render_template(pack.worker_user_template, {"x_curr": x_curr})
    return system, user


# ---------------------------------------------------------------------------
# Reply parsing
# ---------------------------------------------------------------------------

_DECODER = json.JSONDecoder()


def _iter_json_objects(text: str) -> Iterator[object]:
    """Yield every JSON value that starts at a ``{`` anywhere in ``text``.

    Scans overlapping positions, so objects nested inside reasoning or code
    fences are all seen; callers keep the last one that fits their shape.
    """
    idx = 0
    while True:
        start = text.find("{", idx)
        if start == -1:
            return
        try:
            value, _ = _DECODER.raw_decode(text, start)
        except ValueError:
            pass
        else:
            yield value
        idx = start + 1


def parse_candidates(reply: str) -> list[str]:
    """Extract the candidate list from a free-form agent reply.

    Takes the last well-formed JSON object whose ``candidates`` key maps to
    an array; non-string and empty items are dropped. Raises
    ``NoCandidatesFound`` when no such object exists.
    """
    found: Optional[list] = None
    for value in _iter_json_objects(reply):
        if isinstance(value, dict) and isinstance(value.get("candidates"), list):
            found = value["candidates"]
    if found is None:
        raise NoCandidatesFound("reply contains no parseable candidates object")
    return [item for item in found if isinstance(item, str) and item.strip()]


@dataclass(frozen=True)
class PlannerDirective:
    """One planner instruction: reuse a known task or create a new one."""

    name: str
    action: str  # "use_existing" | "create"
    text: Optional[str] = None


USE_EXISTING = "USE_EXISTING"


def _normalize_task_name(name: str) -> str:
    cleaned = re.sub(r"\s+", "_", name.strip()).upper()
    return cleaned


def parse_planner_reply(reply: str, registry: TaskRegistry) -> list[PlannerDirective]:
    """Turn a planner reply into directives, in reply order.

    The plan is the last JSON object whose values are all strings. Reuse
    directives naming unknown tasks are dropped with a warning rather than
    failing the round; create directives clashing with a default task name
    are renamed with a ``_V2`` suffix. Raises ``NoPlanFound`` when no plan
    object exists at all.
    """
    plan: Optional[dict] = None
    for value in _iter_json_objects(reply):
        if (
            isinstance(value, dict)
            and value
            and all(isinstance(k, str) and isinstance(v, str) for k, v in value.items())
        ):
            plan = value
    if plan is None:
        raise NoPlanFound("reply contains no parseable task plan object")

    directives: list[PlannerDirective] = []
    for raw_name, value in plan.items():
        name = _normalize_task_name(raw_name)
        if not name:
            logger.warning("dropping planner directive with empty name")
            continue
        if value.strip() == USE_EXISTING:
            if name not in registry:
                logger.warning("dropping reuse of unknown task %s", name)
                continue
            directives.append(PlannerDirective(name=name, action="use_existing"))
        else:
            if not value.strip():
                logger.warning("dropping creation of task %s with empty text", name)
                continue
            final = registry.resolve_new_name(name)
            directives.append(PlannerDirective(name=final, action="create", text=value))
    return directives
