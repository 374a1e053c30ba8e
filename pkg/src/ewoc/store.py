"""File-backed, event-sourced persistence for trials.

One JSON-lines file per trial: a config header followed by one line per
event. An event is acknowledged only after the line has been flushed and
fsynced, so any state a caller has seen survives a crash; replaying the log
reproduces the live state field-for-field.
"""

from __future__ import annotations

import json
import os
import threading
import uuid
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

from . import trial
from .errors import ConflictError, NotFoundError
from .trial import TrialConfig, TrialState

__all__ = ["TrialRecord", "TrialStore"]


def _now() -> str:
    return datetime.now(timezone.utc).isoformat().replace("+00:00", "Z")


@dataclass
class TrialRecord:
    id: str
    state: TrialState
    created_at: str
    updated_at: str


class TrialStore:
    """Append-only trial storage rooted at a data directory."""

    def __init__(self, data_dir: str | Path):
        self.data_dir = Path(data_dir)
        self.data_dir.mkdir(parents=True, exist_ok=True)
        self._records: dict[str, TrialRecord] = {}
        self._locks: dict[str, threading.Lock] = {}
        self._registry_lock = threading.Lock()

    # -- paths and locking ---------------------------------------------------

    def _path(self, trial_id: str) -> Path:
        return self.data_dir / f"{trial_id}.jsonl"

    def _lock(self, trial_id: str) -> threading.Lock:
        with self._registry_lock:
            return self._locks.setdefault(trial_id, threading.Lock())

    # -- durable append ------------------------------------------------------

    def _append_lines(self, trial_id: str, lines: list[dict]) -> None:
        path = self._path(trial_id)
        with open(path, "a", encoding="utf-8") as fh:
            for line in lines:
                fh.write(json.dumps(line, separators=(",", ":")) + "\n")
            fh.flush()
            os.fsync(fh.fileno())

    # -- load / replay -------------------------------------------------------

    def _load(self, trial_id: str) -> TrialRecord:
        path = self._path(trial_id)
        if not path.exists():
            raise NotFoundError(trial_id)
        events: list[dict] = []
        header: dict | None = None
        last_at: str | None = None
        with open(path, encoding="utf-8") as fh:
            for raw in fh:
                raw = raw.strip()
                if not raw:
                    continue
                doc = json.loads(raw)
                if doc["type"] == "config":
                    header = doc
                else:
                    events.append(doc)
                    last_at = doc.get("at", last_at)
        if header is None:
            raise NotFoundError(trial_id)
        config = trial.config_from_dict(header["config"])
        state = trial.replay_events(config, events)
        return TrialRecord(id=trial_id, state=state,
                           created_at=header["created_at"],
                           updated_at=last_at or header["created_at"])

    # -- public API ----------------------------------------------------------

    def create(self, config: TrialConfig, covariates=None) -> TrialRecord:
        state = trial.start_trial(config, covariates=covariates)
        trial_id = uuid.uuid4().hex[:12]
        created = _now()
        header = {"type": "config", "id": trial_id, "created_at": created,
                  "config": trial.config_to_dict(config)}
        events = [dict(e, at=created) for e in trial.state_to_events(state)]
        self._append_lines(trial_id, [header] + events)
        record = TrialRecord(id=trial_id, state=state, created_at=created, updated_at=created)
        self._records[trial_id] = record
        return record

    def get(self, trial_id: str) -> TrialRecord:
        record = self._records.get(trial_id)
        if record is None:
            record = self._load(trial_id)
            self._records[trial_id] = record
        return record

    def list_ids(self) -> list[str]:
        ids = {p.stem for p in self.data_dir.glob("*.jsonl")}
        return sorted(ids)

    def list_records(self) -> list[TrialRecord]:
        return [self.get(tid) for tid in self.list_ids()]

    def _commit(self, record: TrialRecord, new_state: TrialState) -> TrialRecord:
        at = _now()
        new_events = [dict(e, at=at) for e in
                      trial.events_since(new_state, record.state.version)]
        self._append_lines(record.id, new_events)
        updated = TrialRecord(id=record.id, state=new_state,
                              created_at=record.created_at, updated_at=at)
        self._records[record.id] = updated
        return updated

    def enroll(self, trial_id: str, covariates=None,
               expected_version: int | None = None) -> TrialRecord:
        with self._lock(trial_id):
            record = self.get(trial_id)
            if expected_version is not None and expected_version != record.state.version:
                raise ConflictError(
                    f"version mismatch: expected {expected_version}, "
                    f"current {record.state.version}"
                )
            new_state = trial.enroll_patient(record.state, covariates=covariates)
            return self._commit(record, new_state)

    def resolve(self, trial_id: str, patient_id: str, dlt: int,
                expected_version: int | None = None) -> TrialRecord:
        with self._lock(trial_id):
            record = self.get(trial_id)
            if expected_version is not None and expected_version != record.state.version:
                raise ConflictError(
                    f"version mismatch: expected {expected_version}, "
                    f"current {record.state.version}"
                )
            new_state = trial.record_outcome(record.state, patient_id, dlt)
            return self._commit(record, new_state)

    def export(self, trial_id: str) -> dict:
        """Raw header and event log, as persisted."""
        path = self._path(trial_id)
        if not path.exists():
            raise NotFoundError(trial_id)
        header = None
        events = []
        with open(path, encoding="utf-8") as fh:
            for raw in fh:
                raw = raw.strip()
                if not raw:
                    continue
                doc = json.loads(raw)
                if doc["type"] == "config":
                    header = doc
                else:
                    events.append(doc)
        return {"id": trial_id, "header": header, "events": events}
