"""Append-only run telemetry: events.jsonl, history.jsonl, checkpoint.json.

Every line is independently parseable JSON and flushed on write, so a run
killed at any moment leaves logs that are valid up to their last byte. The
event stream carries enough payload (agent replies, evaluated records) to
rebuild the history and to replay a recorded run against scripted backends.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from .core import Candidate, DomainKind, History, ScoredRecord
from .errors import CorruptCheckpoint

EVENT_KINDS = (
    "agent_call",
    "filter_report",
    "eval_batch",
    "registry_change",
    "round_end",
    "checkpoint",
    "error",
)

EVENTS_FILE = "events.jsonl"
HISTORY_FILE = "history.jsonl"
CHECKPOINT_FILE = "checkpoint.json"
SUMMARY_FILE = "summary.json"
CONFIG_COPY_FILE = "config.json"
CHECKPOINT_DIR = "checkpoints"


def record_to_json(record: ScoredRecord) -> dict:
    return {
        "eval_index": record.eval_index,
        "raw": record.candidate.raw,
        "canonical": record.candidate.canonical,
        "domain": record.candidate.kind.value,
        "score": record.score,
        "origin": record.origin,
    }


def record_from_json(payload: dict) -> ScoredRecord:
    candidate = Candidate(
        raw=payload["raw"],
        canonical=payload["canonical"],
        kind=DomainKind(payload["domain"]),
    )
    return ScoredRecord(
        candidate=candidate,
        score=payload["score"],
        eval_index=payload["eval_index"],
        origin=payload["origin"],
    )


class JsonlWriter:
    """One JSON object per line, flushed immediately, append-only."""

    def __init__(self, path: Path, append: bool = False):
        self.path = Path(path)
        self._fh = open(self.path, "a" if append else "w", encoding="utf-8")

    def write(self, obj: dict) -> None:
        self._fh.write(json.dumps(obj, ensure_ascii=False) + "\n")
        self._fh.flush()

    def close(self) -> None:
        if not self._fh.closed:
            self._fh.close()


class EventLog:
    """Monotonically sequenced event stream for one run."""

    def __init__(self, path: Path, next_seq: int = 1, append: bool = False):
        self._writer = JsonlWriter(path, append=append)
        self.next_seq = next_seq
        self.last_seq = next_seq - 1

    def emit(self, kind: str, round_idx: int, phase: str, payload: dict) -> int:
        if kind not in EVENT_KINDS:
            raise ValueError(f"unknown event kind: {kind}")
        seq = self.next_seq
        self._writer.write(
            {
                "seq": seq,
                "ts": time.time(),
                "round": round_idx,
                "phase": phase,
                "kind": kind,
                "payload": payload,
            }
        )
        self.next_seq = seq + 1
        self.last_seq = seq
        return seq

    def close(self) -> None:
        self._writer.close()


class HistoryLog:
    def __init__(self, path: Path, append: bool = False):
        self._writer = JsonlWriter(path, append=append)

    def write_record(self, record: ScoredRecord) -> None:
        self._writer.write(record_to_json(record))

    def close(self) -> None:
        self._writer.close()


def read_jsonl(path: Path) -> list[dict]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                rows.append(json.loads(line))
    return rows


def load_history(path: Path, limit: Optional[int] = None) -> History:
    """Rebuild a History from history.jsonl (optionally only a prefix)."""
    history = History()
    for i, row in enumerate(read_jsonl(Path(path))):
        if limit is not None and i >= limit:
            break
        record = record_from_json(row)
        stored = history.append(record.candidate, record.score, record.origin)
        if stored.eval_index != record.eval_index:
            raise CorruptCheckpoint(
                f"history file eval indices are not contiguous at {record.eval_index}"
            )
    return history


def truncate_jsonl(path: Path, keep_lines: int) -> None:
    """Rewrite a JSONL file keeping exactly the first ``keep_lines`` lines.

    The kept prefix is preserved byte-for-byte, which is what makes resumed
    runs reproduce straight-through output files exactly.
    """
    path = Path(path)
    kept: list[str] = []
    with open(path, "rb") as fh:
        for line in fh:
            if len(kept) == keep_lines:
                break
            kept.append(line.decode("utf-8"))
    if len(kept) < keep_lines:
        raise CorruptCheckpoint(
            f"{path} has {len(kept)} lines, checkpoint expects {keep_lines}"
        )
    with open(path, "w", encoding="utf-8") as fh:
        fh.writelines(kept)


@dataclass
class Checkpoint:
    """Resumable run state captured at a round boundary."""

    round_idx: int
    finished: bool
    evals_used: int
    history_len: int
    events_seq: int
    registry: dict
    rng: dict
    ledger: dict
    backend_positions: dict
    stop_reason: Optional[str] = None

    def to_json(self) -> dict:
        return {
            "version": 1,
            "round": self.round_idx,
            "finished": self.finished,
            "evals_used": self.evals_used,
            "history_len": self.history_len,
            "events_seq": self.events_seq,
            "registry": self.registry,
            "rng": self.rng,
            "ledger": self.ledger,
            "backend_positions": self.backend_positions,
            "stop_reason": self.stop_reason,
        }

    @classmethod
    def from_json(cls, payload: dict) -> "Checkpoint":
        try:
            if payload["version"] != 1:
                raise CorruptCheckpoint(
                    f"unsupported checkpoint version {payload['version']}"
                )
            return cls(
                round_idx=payload["round"],
                finished=payload["finished"],
                evals_used=payload["evals_used"],
                history_len=payload["history_len"],
                events_seq=payload["events_seq"],
                registry=payload["registry"],
                rng=payload["rng"],
                ledger=payload["ledger"],
                backend_positions=payload["backend_positions"],
                stop_reason=payload.get("stop_reason"),
            )
        except (KeyError, TypeError) as exc:
            raise CorruptCheckpoint(f"checkpoint missing field: {exc}") from exc


def write_checkpoint(run_dir: Path, checkpoint: Checkpoint) -> Path:
    """Write checkpoint.json atomically, plus a per-round archival copy."""
    run_dir = Path(run_dir)
    payload = json.dumps(checkpoint.to_json(), ensure_ascii=False, indent=1)
    tmp = run_dir / (CHECKPOINT_FILE + ".tmp")
    tmp.write_text(payload, encoding="utf-8")
    final = run_dir / CHECKPOINT_FILE
    tmp.replace(final)
    archive_dir = run_dir / CHECKPOINT_DIR
    archive_dir.mkdir(exist_ok=True)
    (archive_dir / f"round_{checkpoint.round_idx:05d}.json").write_text(
        payload, encoding="utf-8"
    )
    return final


def load_checkpoint(path: Path) -> Checkpoint:
    path = Path(path)
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise CorruptCheckpoint(f"cannot read checkpoint {path}: {exc}") from exc
    return Checkpoint.from_json(payload)


def validate_event_log(path: Path, expected_last_seq: int) -> None:
    """Check seq contiguity up to the checkpoint's last event.

    Lines beyond ``expected_last_seq`` may be damaged (a kill signal can tear
    the final write); they are discarded on resume anyway, so damage there is
    tolerated. Anything wrong within the checkpointed prefix is corruption.
    """
    count = 0
    try:
        with open(Path(path), encoding="utf-8") as fh:
            for i, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    row = json.loads(line)
                except json.JSONDecodeError as exc:
                    if i > expected_last_seq:
                        break
                    raise CorruptCheckpoint(
                        f"event log {path} unreadable at line {i}: {exc}"
                    ) from exc
                if row.get("seq") != i:
                    raise CorruptCheckpoint(
                        f"event log sequence gap at line {i}: got {row.get('seq')}"
                    )
                count = i
    except OSError as exc:
        raise CorruptCheckpoint(f"cannot read event log {path}: {exc}") from exc
    if count < expected_last_seq:
        raise CorruptCheckpoint(
            f"event log has {count} events, checkpoint expects at least "
            f"{expected_last_seq}"
        )
