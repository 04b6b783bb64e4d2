"""Bootstrapped few-shot examples: narrate exemplar entries with the
hand-written examples in the prompt, grade the results, and keep only
candidates that clear every threshold."""

from __future__ import annotations

import hashlib
import json
import logging
import random
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

from .backends import Backend
from .datasets import ExemplarDataset, ExemplarEntry
from .explanation import Explanation
from .grading import GradeReport, GradingError
from .narrator import NarratorConfig, narrate
from .prompts import FewShotExample, PromptTemplates

logger = logging.getLogger(__name__)

GradeFn = Callable[[Explanation, str], GradeReport]


class BootstrapError(RuntimeError):
    def __init__(self, message: str, best: Sequence[tuple[str, GradeReport]] = ()):
        super().__init__(message)
        self.best = list(best)


@dataclass(frozen=True)
class BootstrapThresholds:
    accuracy: float = 4.0
    completeness: float = 4.0
    fluency: float = 4.0
    conciseness: float = 3.5

    def __post_init__(self):
        for name, value in asdict(self).items():
            if not 0 <= value <= 4:
                raise ValueError(f"threshold {name}={value} outside [0, 4]")

    def accepts(self, report: GradeReport) -> bool:
        return (
            report.accuracy.weighted >= self.accuracy
            and report.completeness.weighted >= self.completeness
            and report.fluency.weighted >= self.fluency
            and report.conciseness.weighted >= self.conciseness
        )


@dataclass(frozen=True)
class Candidate:
    entry_id: str
    narrative: str | None
    report: GradeReport | None
    error: str | None = None
    accepted: bool = False


@dataclass(frozen=True)
class BootstrapResult:
    accepted: tuple[FewShotExample, ...]
    attempts: int
    candidates: tuple[Candidate, ...] = field(default=())

    @property
    def reports(self) -> list[GradeReport]:
        return [c.report for c in self.candidates if c.report is not None]


def _candidate_entries(
    entries: Sequence[ExemplarEntry],
    hand_written: Sequence[FewShotExample],
    shuffle_seed: int | None,
) -> list[ExemplarEntry]:
    excluded = {ex.explanation for ex in hand_written}
    pool = [e for e in entries if e.explanation not in excluded]
    if shuffle_seed is not None:
        random.Random(shuffle_seed).shuffle(pool)
    return pool


def bootstrap_examples(
    dataset: "ExemplarDataset | Sequence[ExemplarEntry]",
    config: NarratorConfig,
    *,
    backend: Backend,
    grade: GradeFn,
    hand_written: Sequence[FewShotExample] = (),
    thresholds: BootstrapThresholds = BootstrapThresholds(),
    b: int | None = None,
    max_attempts: int | None = None,
    shuffle_seed: int | None = None,
    max_workers: int = 1,
    templates: PromptTemplates | None = None,
) -> BootstrapResult:
    """Collect up to ``b`` bootstrapped examples.

    Candidates are tried in dataset order (or a seeded shuffle); entries whose
    explanation already appears among ``hand_written`` are skipped. Stops at
    ``b`` accepted or after ``max_attempts`` candidates (default ``4 * b``).
    Raises :class:`BootstrapError` when nothing was accepted.
    """
    b = config.b if b is None else b
    if b < 1:
        raise ValueError("b must be >= 1")
    max_attempts = 4 * b if max_attempts is None else max_attempts
    if max_attempts < 1:
        raise ValueError("max_attempts must be >= 1")
    entries = dataset.entries if isinstance(dataset, ExemplarDataset) else list(dataset)
    pool = _candidate_entries(entries, hand_written, shuffle_seed)[:max_attempts]
    if not pool:
        raise BootstrapError("no candidate entries beyond the hand-written examples")

    def evaluate(entry: ExemplarEntry) -> Candidate:
        narrative = None
        try:
            narrative = narrate(entry.explanation, backend, config, hand_written, templates)
            report = grade(entry.explanation, narrative)
        except (GradingError, ValueError) as exc:
            return Candidate(entry.id, narrative, None, str(exc))
        return Candidate(entry.id, narrative, report, None, thresholds.accepts(report))

    accepted: list[FewShotExample] = []
    tried: list[Candidate] = []
    by_id = {e.id: e for e in pool}
    window = max(1, max_workers)
    executor = ThreadPoolExecutor(window) if window > 1 else None
    try:
        for start in range(0, len(pool), window):
            chunk = pool[start : start + window]
            results = list(executor.map(evaluate, chunk)) if executor else [evaluate(chunk[0])]
            # commit strictly in candidate order
            for candidate in results:
                tried.append(candidate)
                if candidate.accepted:
                    entry = by_id[candidate.entry_id]
                    accepted.append(
                        FewShotExample(entry.explanation, candidate.narrative, "bootstrapped")
                    )
                if len(accepted) == b:
                    break
            if len(accepted) == b:
                break
    finally:
        if executor:
            executor.shutdown()

    if not accepted:
        graded = [(c.entry_id, c.report) for c in tried if c.report is not None]
        graded.sort(key=lambda item: -item[1].total)
        best = graded[:3]
        summary = "; ".join(
            f"{eid}: A={r.accuracy.weighted:.2f} C={r.completeness.weighted:.2f} "
            f"F={r.fluency.weighted:.2f} S={r.conciseness.weighted:.2f}"
            for eid, r in best
        ) or "no candidate could be graded"
        raise BootstrapError(
            f"no candidate met the thresholds after {len(tried)} attempts ({summary})", best
        )
    if len(accepted) < b:
        logger.warning("bootstrap accepted %d of %d requested examples", len(accepted), b)
    return BootstrapResult(tuple(accepted), len(tried), tuple(tried))


class BootstrapCache:
    """Accepted examples on disk, one JSONL file per (dataset, settings) key."""

    def __init__(self, directory: str | Path):
        self.directory = Path(directory)

    @staticmethod
    def key(
        dataset: ExemplarDataset,
        config: NarratorConfig,
        hand_written: Iterable[FewShotExample],
        thresholds: BootstrapThresholds,
        extra: dict | None = None,
    ) -> str:
        payload = json.dumps(
            {
                "dataset": dataset.digest(),
                "config": config.digest(),
                "hand_written": [[e.explanation.text, e.narrative] for e in hand_written],
                "thresholds": asdict(thresholds),
                "extra": extra or {},
            },
            sort_keys=True,
        )
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:32]

    def path(self, key: str) -> Path:
        return self.directory / f"bootstrap-{key}.jsonl"

    def load(self, key: str) -> BootstrapResult | None:
        path = self.path(key)
        if not path.is_file():
            return None
        accepted, candidates, attempts = [], [], 0
        for line in path.read_text(encoding="utf-8").splitlines():
            record = json.loads(line)
            ex = record["example"]
            expl = Explanation.from_text(ex["explanation"], ex["format"], ex["context"])
            accepted.append(FewShotExample(expl, ex["narrative"], ex["origin"]))
            report = GradeReport.from_dict(record["report"])
            candidates.append(Candidate(record["entry_id"], ex["narrative"], report, None, True))
            attempts = record["attempts"]
        return BootstrapResult(tuple(accepted), attempts, tuple(candidates))

    def store(self, key: str, result: BootstrapResult) -> Path:
        path = self.path(key)
        path.parent.mkdir(parents=True, exist_ok=True)
        chosen = [c for c in result.candidates if c.accepted]
        with path.open("w", encoding="utf-8") as fh:
            for example, candidate in zip(result.accepted, chosen):
                record = {
                    "entry_id": candidate.entry_id,
                    "attempts": result.attempts,
                    "example": {
                        "explanation": example.explanation.text,
                        "format": example.explanation.format_descriptor,
                        "context": example.explanation.context,
                        "narrative": example.narrative,
                        "origin": example.origin,
                    },
                    "report": candidate.report.to_dict(),
                }
                fh.write(json.dumps(record, ensure_ascii=False, sort_keys=True) + "\n")
        return path
