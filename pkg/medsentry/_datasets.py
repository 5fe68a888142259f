"""File-backed stores: IS provider info kept apart from the RS patient dataset."""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, ValidationError

from medsentry._types import ConfigError

IS_STORE_FILE = "is_store.json"
RS_STORE_FILE = "rs_store.json"

_HEX_ID = r"^[0-9a-f]{32}$"


def atomic_write(path: Path, data: bytes | str) -> None:
    """Replace ``path`` with ``data`` via a synced sibling temp file."""
    payload = data.encode("utf-8") if isinstance(data, str) else data
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    tmp = Path(tmp_name)
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(payload)
            handle.flush()
            os.fsync(handle.fileno())
        tmp.replace(path)
    except BaseException:
        tmp.unlink(missing_ok=True)
        raise


class InfoRecord(BaseModel):
    """Provider-side facts about one deployed entity."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    entity_id: str = Field(pattern=_HEX_ID)
    kind: Literal["sensor", "user", "base_station", "info_server", "repo_server"]
    role: str


class RepoRecord(BaseModel):
    """One authorized store or retrieve against the patient dataset."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    subject: str = Field(pattern=_HEX_ID)
    action: Literal["store", "retrieve"]
    request_id: str = Field(pattern=_HEX_ID)
    ts: int = Field(ge=0)


def _load_records[R: BaseModel](path: Path, model: type[R]) -> list[R]:
    if not path.exists():
        return []
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
        return [model.model_validate(item) for item in raw]
    except (json.JSONDecodeError, TypeError, ValidationError) as exc:
        raise ConfigError(str(path), f"invalid {model.__name__} data: {exc}") from exc


def _dump_records(path: Path, records: list[InfoRecord] | list[RepoRecord]) -> None:
    body = json.dumps([r.model_dump() for r in records], indent=2, sort_keys=True)
    atomic_write(path, body + "\n")


@dataclass
class InfoStore:
    """The IS dataset; holds no patient fields by schema."""

    records: list[InfoRecord] = field(default_factory=list)

    @classmethod
    def load(cls, path: Path) -> InfoStore:
        """Read ``is_store.json``; a missing file is an empty store."""
        return cls(_load_records(path, InfoRecord))

    def save(self, path: Path) -> None:
        """Write the store atomically."""
        _dump_records(path, self.records)


@dataclass
class RepoStore:
    """The RS patient dataset."""

    records: list[RepoRecord] = field(default_factory=list)

    @classmethod
    def load(cls, path: Path) -> RepoStore:
        """Read ``rs_store.json``; a missing file is an empty store."""
        return cls(_load_records(path, RepoRecord))

    def save(self, path: Path) -> None:
        """Write the store atomically."""
        _dump_records(path, self.records)

    def append(self, record: RepoRecord) -> None:
        """Persist one authorized access in memory."""
        self.records.append(record)

    def records_for(self, subject: str) -> tuple[RepoRecord, ...]:
        """All records of ``subject`` in insertion order."""
        return tuple(r for r in self.records if r.subject == subject)


def scan_split(info_path: Path) -> list[str]:
    """Return the patient-only field names found in the IS store file."""
    if not info_path.exists():
        return []
    raw = json.loads(info_path.read_text(encoding="utf-8"))
    patient_only = set(RepoRecord.model_fields) - set(InfoRecord.model_fields)
    found: set[str] = set()
    for item in raw:
        if isinstance(item, dict):
            found.update(patient_only.intersection(item))
    return sorted(found)
