"""Exemplar and metric-validation datasets stored as JSONL.

One entry per line::

    {"explanation": "(f, v, c), ...", "format": "...", "context": "...",
     "narrative": "..." | null, "labels": {...} | null}

An optional ``"id"`` field names the entry; it defaults to ``<dataset>-<line>``.
"""

from __future__ import annotations

import hashlib
import json
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .explanation import DEFAULT_FORMAT, Explanation, ExplanationError

VALIDATION_METRICS = {"accuracy": range(0, 2), "completeness": range(0, 3)}
ERROR_TYPES = {
    "accuracy": {
        "Accurate with all values": 1,
        "Accurate with some values": 1,
        "Accurate with approximate values": 1,
        "Error in values": 0,
        "Error in contribution direction": 0,
    },
    "completeness": {
        "All features, values, and contributions": 2,
        "All features, values, and contribution directions": 2,
        "All features, but not all values or contribution directions": 1,
        "Missing one or more features": 0,
    },
}
_FIELDS = {"id", "explanation", "format", "context", "narrative", "labels"}


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class ExemplarEntry:
    explanation: Explanation
    narrative: str | None = None
    id: str = ""
    labels: dict | None = field(default=None, compare=False, hash=False)

    @property
    def has_narrative(self) -> bool:
        return bool(self.narrative and self.narrative.strip())

    def to_record(self) -> dict:
        record = {
            "id": self.id,
            "explanation": self.explanation.text,
            "format": self.explanation.format_descriptor,
            "context": self.explanation.context,
            "narrative": self.narrative,
            "labels": self.labels,
        }
        return record


@dataclass(frozen=True)
class ExemplarDataset:
    id: str
    entries: tuple[ExemplarEntry, ...]

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))
        seen: set[str] = set()
        for entry in self.entries:
            if entry.id in seen:
                raise DatasetError(f"dataset {self.id!r}: duplicate entry id {entry.id!r}")
            seen.add(entry.id)

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def narrated(self) -> list[ExemplarEntry]:
        return [e for e in self.entries if e.has_narrative]

    @property
    def hand_written_count(self) -> int:
        return len(self.narrated)

    def digest(self) -> str:
        payload = "\n".join(json.dumps(e.to_record(), sort_keys=True) for e in self.entries)
        return hashlib.sha256(f"{self.id}\n{payload}".encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class ValidationEntry:
    explanation: Explanation
    narrative: str
    metric: str
    human_grade: int
    error_type: str

    def __post_init__(self):
        if self.metric not in VALIDATION_METRICS:
            raise DatasetError(f"unknown validation metric {self.metric!r}")
        if self.human_grade not in VALIDATION_METRICS[self.metric]:
            raise DatasetError(
                f"human grade {self.human_grade} out of range for {self.metric}"
            )
        expected = ERROR_TYPES[self.metric].get(self.error_type)
        if expected is None:
            raise DatasetError(f"unknown {self.metric} error type {self.error_type!r}")
        if expected != self.human_grade:
            raise DatasetError(
                f"error type {self.error_type!r} has rubric grade {expected}, "
                f"not {self.human_grade}"
            )

    def to_record(self) -> dict:
        return {
            "explanation": self.explanation.text,
            "format": self.explanation.format_descriptor,
            "context": self.explanation.context,
            "narrative": self.narrative,
            "labels": {
                "metric": self.metric,
                "human_grade": self.human_grade,
                "error_type": self.error_type,
            },
        }


def _read_records(path: Path) -> list[tuple[int, dict]]:
    if not path.is_file():
        raise DatasetError(f"dataset file not found: {path}")
    records = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"{path}:{lineno}: invalid JSON: {exc.msg}") from exc
            if not isinstance(record, dict):
                raise DatasetError(f"{path}:{lineno}: expected a JSON object")
            unknown = set(record) - _FIELDS
            if unknown:
                raise DatasetError(f"{path}:{lineno}: unknown fields {sorted(unknown)}")
            if not isinstance(record.get("explanation"), str):
                raise DatasetError(f"{path}:{lineno}: 'explanation' must be a string")
            for key in ("format", "context"):
                if not isinstance(record.get(key, ""), str):
                    raise DatasetError(f"{path}:{lineno}: {key!r} must be a string")
            narrative = record.get("narrative")
            if narrative is not None and not isinstance(narrative, str):
                raise DatasetError(f"{path}:{lineno}: 'narrative' must be a string or null")
            labels = record.get("labels")
            if labels is not None and not isinstance(labels, dict):
                raise DatasetError(f"{path}:{lineno}: 'labels' must be an object or null")
            records.append((lineno, record))
    if not records:
        raise DatasetError(f"{path}: dataset is empty")
    return records


def _explanation(path: Path, lineno: int, record: dict) -> Explanation:
    try:
        return Explanation.from_text(
            record["explanation"], record.get("format") or DEFAULT_FORMAT,
            record.get("context", ""),
        )
    except ExplanationError as exc:
        raise DatasetError(f"{path}:{lineno}: malformed explanation: {exc}") from exc


def load_dataset(path: str | Path, dataset_id: str | None = None) -> ExemplarDataset:
    path = Path(path)
    dataset_id = dataset_id or path.stem
    entries = []
    for lineno, record in _read_records(path):
        entries.append(
            ExemplarEntry(
                _explanation(path, lineno, record),
                record.get("narrative"),
                str(record.get("id") or f"{dataset_id}-{lineno}"),
                record.get("labels"),
            )
        )
    try:
        return ExemplarDataset(dataset_id, entries)
    except DatasetError as exc:
        raise DatasetError(f"{path}: {exc}") from exc


def save_dataset(dataset: ExemplarDataset, path: str | Path) -> Path:
    return _write_jsonl(path, (e.to_record() for e in dataset.entries))


def load_datasets(directory: str | Path, ids: Sequence[str] | None = None) -> list[ExemplarDataset]:
    directory = Path(directory)
    paths = [directory / f"{i}.jsonl" for i in ids] if ids else sorted(directory.glob("*.jsonl"))
    if not paths:
        raise DatasetError(f"no datasets found in {directory}")
    return [load_dataset(p) for p in paths]


def load_validation(path: str | Path) -> list[ValidationEntry]:
    path = Path(path)
    entries = []
    for lineno, record in _read_records(path):
        labels = record.get("labels") or {}
        narrative = record.get("narrative")
        if not isinstance(narrative, str):
            raise DatasetError(f"{path}:{lineno}: validation entries need a narrative")
        try:
            entries.append(
                ValidationEntry(
                    _explanation(path, lineno, record),
                    narrative,
                    labels["metric"],
                    int(labels["human_grade"]),
                    labels["error_type"],
                )
            )
        except KeyError as exc:
            raise DatasetError(f"{path}:{lineno}: missing label {exc}") from exc
        except DatasetError as exc:
            raise DatasetError(f"{path}:{lineno}: {exc}") from exc
    return entries


def save_validation(entries: Iterable[ValidationEntry], path: str | Path) -> Path:
    return _write_jsonl(path, (e.to_record() for e in entries))


def _write_jsonl(path: str | Path, records: Iterable[dict]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")
    return path


@dataclass(frozen=True)
class Pools:
    few_shot: tuple[ExemplarEntry, ...]
    fluency: tuple[ExemplarEntry, ...]
    evaluation: tuple[ExemplarEntry, ...]

    @property
    def fluency_narratives(self) -> list[str]:
        return [e.narrative for e in self.fluency]


def split_pools(
    dataset: ExemplarDataset,
    h: int,
    fluency_k: int = 5,
    seed: int = 0,
    *,
    shared: bool = False,
) -> Pools:
    """Draw the hand-written few-shot pool and the fluency exemplar pool.

    Both pools come from entries with narratives. By default they are
    disjoint and the remaining narrated entries are the evaluation set. With
    ``shared=True`` the few-shot pool is drawn from the fluency pool's own
    entries, which is how a dataset holding only five narratives can serve
    both roles; evaluation is then every entry not used in a pool.
    """
    if h < 0 or fluency_k < 0:
        raise ValueError("pool sizes must be non-negative")
    narrated = dataset.narrated
    rng = random.Random(f"{dataset.id}:{seed}")
    order = list(narrated)
    rng.shuffle(order)
    if shared:
        if max(h, fluency_k) > len(order):
            raise DatasetError(
                f"dataset {dataset.id!r} has {len(order)} narrated entries; "
                f"needs {max(h, fluency_k)}"
            )
        fluency = order[:fluency_k]
        few_shot = (fluency + order[fluency_k:])[:h]
        used = {e.id for e in fluency} | {e.id for e in few_shot}
        evaluation = [e for e in dataset.entries if e.id not in used]
    else:
        if h + fluency_k > len(order):
            raise DatasetError(
                f"dataset {dataset.id!r} has {len(order)} narrated entries; "
                f"needs {h + fluency_k} for h={h} and fluency_k={fluency_k}"
            )
        few_shot = order[:h]
        fluency = order[h : h + fluency_k]
        used = {e.id for e in few_shot} | {e.id for e in fluency}
        evaluation = [e for e in narrated if e.id not in used]
    # keep dataset order inside each pool
    position = {e.id: i for i, e in enumerate(dataset.entries)}
    return Pools(
        tuple(sorted(few_shot, key=lambda e: position[e.id])),
        tuple(sorted(fluency, key=lambda e: position[e.id])),
        tuple(evaluation),
    )
