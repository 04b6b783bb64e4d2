"""Grader validation and Narrator experiment sweeps."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import random
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from statistics import mean, stdev
from typing import Callable, Iterable, Sequence

from .backends import Backend
from .bootstrap import BootstrapCache, BootstrapError, BootstrapThresholds, bootstrap_examples
from .datasets import VALIDATION_METRICS, ExemplarDataset, ValidationEntry, split_pools
from .grading import (
    DEFAULT_REPEATS,
    METRICS,
    ConcisenessParams,
    GradeReport,
    GradeWeights,
    GradingError,
    calibrate_l_max,
    grade_accuracy,
    grade_completeness,
    grade_fluency,
    grade_narrative,
)
from .narrator import NarratorConfig, narrate
from .prompts import FewShotExample, PromptTemplates

logger = logging.getLogger(__name__)

# The 13 base-prompt / few-shot settings: three zero-shot base prompts, then
# BP1 with H hand-written and B bootstrapped examples.
DEFAULT_SETTINGS: tuple[tuple[str, int, int], ...] = (
    ("BP1", 0, 0),
    ("BP2", 0, 0),
    ("BP3", 0, 0),
    ("BP1", 1, 0),
    ("BP1", 3, 0),
    ("BP1", 5, 0),
    ("BP1", 1, 1),
    ("BP1", 1, 3),
    ("BP1", 3, 1),
    ("BP1", 3, 3),
    ("BP1", 5, 1),
    ("BP1", 5, 3),
    ("BP1", 5, 5),
)
PER_DATASET_SETTINGS = (("BP1", 1, 1), ("BP1", 1, 3))
STD_NOTE = "± is the sample standard deviation (n - 1 denominator) over narratives."


def round_half_away(x: float) -> int:
    return int(math.floor(abs(x) + 0.5)) * (1 if x >= 0 else -1)


@dataclass(frozen=True)
class ConfusionMatrix:
    """Counts indexed ``[human_grade][grader_grade]``."""

    metric: str
    matrix: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        rows = tuple(tuple(int(c) for c in row) for row in self.matrix)
        if not rows or any(len(r) != len(rows) for r in rows):
            raise ValueError("confusion matrix must be square and non-empty")
        if any(c < 0 for r in rows for c in r):
            raise ValueError("confusion counts must be non-negative")
        object.__setattr__(self, "matrix", rows)

    @classmethod
    def from_pairs(
        cls, metric: str, human: Iterable[int], grader: Iterable[int], levels: int
    ) -> "ConfusionMatrix":
        counts = [[0] * levels for _ in range(levels)]
        for h, g in zip(human, grader, strict=True):
            if not (0 <= h < levels and 0 <= g < levels):
                raise ValueError(f"grade pair ({h}, {g}) outside 0..{levels - 1}")
            counts[h][g] += 1
        return cls(metric, tuple(map(tuple, counts)))

    @property
    def total(self) -> int:
        return sum(map(sum, self.matrix))

    @property
    def trace(self) -> int:
        return sum(self.matrix[i][i] for i in range(len(self.matrix)))

    @property
    def agreement_fraction(self) -> Fraction:
        if self.total == 0:
            raise ValueError("agreement of an empty confusion matrix is undefined")
        return Fraction(self.trace, self.total)

    @property
    def agreement(self) -> float:
        return float(self.agreement_fraction)

    def to_dict(self) -> dict:
        frac = self.agreement_fraction
        return {
            "metric": self.metric,
            "matrix": [list(r) for r in self.matrix],
            "rows": "human grade",
            "columns": "grader grade",
            "agreement": self.agreement,
            "agreement_fraction": f"{frac.numerator}/{frac.denominator}",
            "total": self.total,
        }


def validate_grader(
    metric: str,
    entries: Sequence[ValidationEntry],
    backend: Backend,
    repeats: int = DEFAULT_REPEATS,
    **grade_kwargs,
) -> ConfusionMatrix:
    """Grade every validation entry and tally against its human label.

    The mean of the repeated grades is rounded to the nearest rubric integer
    (halves away from zero) before tallying.
    """
    if metric not in VALIDATION_METRICS:
        raise ValueError(f"grader validation supports {sorted(VALIDATION_METRICS)}, not {metric!r}")
    levels = len(VALIDATION_METRICS[metric])
    grade_fn = grade_accuracy if metric == "accuracy" else grade_completeness
    human, graded = [], []
    for entry in entries:
        if entry.metric != metric:
            raise ValueError(f"validation entry labelled {entry.metric!r}, expected {metric!r}")
        if entry.human_grade not in VALIDATION_METRICS[metric]:
            raise ValueError(f"human grade {entry.human_grade} out of range for {metric}")
        grade = grade_fn(entry.explanation, entry.narrative, backend, repeats, **grade_kwargs)
        human.append(entry.human_grade)
        graded.append(round_half_away(grade.raw_mean))
    return ConfusionMatrix.from_pairs(metric, human, graded, levels)


@dataclass(frozen=True)
class FluencyMatrix:
    """Mean fluency; rows are narrative datasets, columns exemplar datasets."""

    ids: tuple[str, ...]
    values: tuple[tuple[float, ...], ...]

    @property
    def flags(self) -> list[str]:
        """Rows whose diagonal is not the row maximum."""
        return [
            rid for i, rid in enumerate(self.ids)
            if self.values[i][i] < max(self.values[i])
        ]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["narratives \\ exemplars", *self.ids])
        for rid, row in zip(self.ids, self.values):
            writer.writerow([rid, *(f"{v:.2f}" for v in row)])
        return buf.getvalue()


def fluency_cross_matrix(
    datasets: Sequence[ExemplarDataset],
    backend: Backend,
    k: int = 5,
    seed: int = 0,
    repeats: int = DEFAULT_REPEATS,
    **grade_kwargs,
) -> FluencyMatrix:
    """Grade each dataset's human narratives against every dataset's exemplars.

    Each dataset contributes ``k`` randomly drawn narratives as exemplars and
    its remaining narratives are graded. A dataset with no narratives left
    over grades its exemplar narratives instead, each one against the other
    exemplars (leave-one-out), so no narrative is compared to itself.
    """
    pools = {d.id: split_pools(d, 0, k, seed) for d in datasets}
    ids = tuple(d.id for d in datasets)
    values = []
    for row in ids:
        pool = pools[row]
        graded = pool.evaluation or pool.fluency
        narratives = [e.narrative for e in graded if e.has_narrative]
        if not pool.evaluation and len(narratives) < 2:
            raise ValueError(f"dataset {row!r} needs at least 2 narratives for fluency validation")
        cells = []
        for col in ids:
            grades = []
            for n in narratives:
                exemplars = [x for x in pools[col].fluency_narratives if x != n]
                grades.append(
                    grade_fluency(n, exemplars, backend, repeats, **grade_kwargs).raw_mean
                )
            cells.append(mean(grades))
        values.append(tuple(cells))
    return FluencyMatrix(ids, tuple(values))


@dataclass(frozen=True)
class Setting:
    base_prompt: str
    h: int
    b: int

    @property
    def label(self) -> str:
        return f"{self.base_prompt} H={self.h} B={self.b}"

    def sort_key(self) -> tuple:
        return (self.base_prompt, self.h, self.b)


@dataclass(frozen=True)
class Stat:
    mean: float
    std: float
    n: int

    @classmethod
    def of(cls, values: Sequence[float]) -> "Stat":
        values = list(values)
        if not values:
            return cls(float("nan"), float("nan"), 0)
        return cls(mean(values), stdev(values) if len(values) > 1 else 0.0, len(values))


@dataclass(frozen=True)
class SweepCell:
    setting: Setting
    stats: dict[str, Stat]

    @property
    def total(self) -> Stat:
        return self.stats["total"]


@dataclass(frozen=True)
class NarrativeRecord:
    dataset: str
    entry_id: str
    setting: Setting
    narrative: str
    report: GradeReport


@dataclass
class SweepResult:
    cells: list[SweepCell]
    by_dataset: list[tuple[str, dict[str, Stat]]]
    records: list[NarrativeRecord]
    failures: list[dict] = field(default_factory=list)


def _summarise(records: Sequence[NarrativeRecord]) -> dict[str, Stat]:
    stats = {m: Stat.of([getattr(r.report, m).weighted for r in records]) for m in METRICS}
    stats["total"] = Stat.of([r.report.total for r in records])
    return stats


def select_best_setting(cells: Sequence[SweepCell]) -> Setting:
    """Highest mean total; ties go to fewer examples, then lexicographic order."""
    if not cells:
        raise ValueError("no sweep cells to choose from")
    best = min(
        cells,
        key=lambda c: (-c.total.mean, c.setting.h + c.setting.b, c.setting.sort_key()),
    )
    return best.setting


@dataclass
class SweepOptions:
    repeats: int = DEFAULT_REPEATS
    weights: GradeWeights = field(default_factory=GradeWeights)
    fluency_k: int = 5
    seed: int = 0
    l_max: float | None = None
    thresholds: BootstrapThresholds = field(default_factory=BootstrapThresholds)
    max_attempts: int | None = None
    shuffle_seed: int | None = None
    cache_dir: str | Path | None = None
    temperature: float = 0.0
    max_tokens: int = 512
    max_workers: int = 1
    templates: PromptTemplates | None = None
    per_dataset_settings: Sequence[tuple[str, int, int]] = PER_DATASET_SETTINGS


def _dataset_jobs(
    dataset: ExemplarDataset,
    settings: Sequence[Setting],
    backend: Backend,
    opts: SweepOptions,
) -> tuple[list[NarrativeRecord], list[dict]]:
    records: list[NarrativeRecord] = []
    failures: list[dict] = []
    max_h = max(s.h for s in settings)
    pools = split_pools(dataset, max_h, opts.fluency_k, opts.seed, shared=True)
    exemplars = pools.fluency_narratives
    if opts.l_max is not None:
        conciseness = ConcisenessParams(opts.l_max)
    else:
        conciseness = calibrate_l_max((e.narrative, e.explanation.num_features)
                                      for e in dataset.narrated)
    grade_kwargs = dict(temperature=opts.temperature, max_tokens=opts.max_tokens,
                        max_workers=opts.max_workers, templates=opts.templates)

    def grade(expl, narrative):
        return grade_narrative(expl, narrative, backend, exemplars=exemplars,
                               conciseness=conciseness, weights=opts.weights,
                               repeats=opts.repeats, **grade_kwargs)

    cache = BootstrapCache(opts.cache_dir) if opts.cache_dir else None
    rng_order = list(pools.few_shot)
    random.Random(f"{dataset.id}:fewshot:{opts.seed}").shuffle(rng_order)
    for setting in settings:
        config = NarratorConfig(setting.base_prompt, setting.h, setting.b,
                                opts.temperature, opts.max_tokens)
        hand_written = [FewShotExample(e.explanation, e.narrative) for e in rng_order[: setting.h]]
        examples = list(hand_written)
        if setting.b > 0:
            boot = None
            key = None
            if cache is not None:
                key = BootstrapCache.key(dataset, config, hand_written, opts.thresholds,
                                         {"l_max": conciseness.l_max, "repeats": opts.repeats,
                                          "max_attempts": opts.max_attempts,
                                          "shuffle_seed": opts.shuffle_seed,
                                          "fluency": exemplars})
                boot = cache.load(key)
            if boot is None:
                try:
                    boot = bootstrap_examples(
                        pools.evaluation, config, backend=backend, grade=grade,
                        hand_written=hand_written, thresholds=opts.thresholds,
                        max_attempts=opts.max_attempts, shuffle_seed=opts.shuffle_seed,
                        templates=opts.templates,
                    )
                except BootstrapError as exc:
                    failures.append({"dataset": dataset.id, "setting": setting.label,
                                     "entry": None, "stage": "bootstrap", "error": str(exc)})
                else:
                    if cache is not None:
                        cache.store(key, boot)
            if boot is not None:
                examples += list(boot.accepted)
        for entry in pools.evaluation:
            narrative = None
            try:
                narrative = narrate(entry.explanation, backend, config, examples, opts.templates)
                report = grade(entry.explanation, narrative)
            except (GradingError, ValueError, RuntimeError) as exc:
                failures.append({"dataset": dataset.id, "setting": setting.label,
                                 "entry": entry.id, "stage": "narrate" if narrative is None
                                 else "grade", "error": str(exc)})
                continue
            records.append(NarrativeRecord(dataset.id, entry.id, setting, narrative, report))
    return records, failures


def run_sweep(
    datasets: Sequence[ExemplarDataset],
    settings: Sequence[tuple[str, int, int]] = DEFAULT_SETTINGS,
    backend: Backend | None = None,
    options: SweepOptions | None = None,
    jobs: int = 1,
) -> SweepResult:
    """Narrate and grade every evaluation entry under every setting.

    Per dataset, the fluency exemplars and the hand-written few-shot pool come
    from the same hand-written narratives; evaluation covers every other
    entry. Failing narratives are collected in ``failures``.
    """
    if backend is None:
        raise ValueError("run_sweep needs a backend")
    if not datasets or not settings:
        raise ValueError("run_sweep needs at least one dataset and one setting")
    opts = options or SweepOptions()
    parsed = [Setting(*s) if not isinstance(s, Setting) else s for s in settings]
    run: Callable = lambda d: _dataset_jobs(d, parsed, backend, opts)
    if jobs > 1:
        with ThreadPoolExecutor(jobs) as pool:
            outputs = list(pool.map(run, datasets))
    else:
        outputs = [run(d) for d in datasets]
    records = [r for recs, _ in outputs for r in recs]
    failures = [f for _, fails in outputs for f in fails]
    cells = [
        SweepCell(s, _summarise([r for r in records if r.setting == s])) for s in parsed
    ]
    chosen = {Setting(*s) for s in opts.per_dataset_settings}
    by_dataset = [
        (d.id, _summarise([r for r in records if r.dataset == d.id and r.setting in chosen]))
        for d in datasets
    ]
    return SweepResult(cells, by_dataset, records, failures)


def _fmt(stat: Stat, digits: int = 3) -> str:
    if stat.n == 0:
        return "n/a"
    return f"{stat.mean:.{digits}f} ± {stat.std:.2f}"


_COLUMNS = (*METRICS, "total")


def sweep_table_csv(result: SweepResult) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["base_prompt", "h", "b", "n",
                     *(f"{c}_{s}" for c in _COLUMNS for s in ("mean", "std"))])
    for cell in result.cells:
        row = [cell.setting.base_prompt, cell.setting.h, cell.setting.b, cell.total.n]
        for c in _COLUMNS:
            row += [f"{cell.stats[c].mean:.6f}", f"{cell.stats[c].std:.6f}"]
        writer.writerow(row)
    return buf.getvalue()


def dataset_table_csv(result: SweepResult) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["dataset", "n", *(f"{c}_{s}" for c in _COLUMNS for s in ("mean", "std"))])
    for dataset_id, stats in result.by_dataset:
        row = [dataset_id, stats["total"].n]
        for c in _COLUMNS:
            row += [f"{stats[c].mean:.6f}", f"{stats[c].std:.6f}"]
        writer.writerow(row)
    return buf.getvalue()


def sweep_markdown(result: SweepResult) -> str:
    lines = [
        "# Narrative quality by setting",
        "",
        "Weighted (0-4) metric values averaged over all datasets. " + STD_NOTE,
        "",
        "| Base Prompt | H | B | Accuracy | Completeness | Fluency | Conciseness | Total grade |",
        "|---|---|---|---|---|---|---|---|",
    ]
    for cell in result.cells:
        s = cell.setting
        lines.append(
            f"| {s.base_prompt} | {s.h} | {s.b} | "
            + " | ".join(_fmt(cell.stats[c]) for c in _COLUMNS) + " |"
        )
    if result.cells:
        lines += ["", f"Best setting: {select_best_setting(result.cells).label}"]
    chosen = ", ".join(Setting(*s).label for s in PER_DATASET_SETTINGS)
    lines += [
        "",
        "# Narrative quality by dataset",
        "",
        f"Settings pooled: {chosen}. " + STD_NOTE,
        "",
        "| Dataset | Accuracy | Completeness | Fluency | Conciseness | Total score |",
        "|---|---|---|---|---|---|",
    ]
    for dataset_id, stats in result.by_dataset:
        lines.append(f"| {dataset_id} | " + " | ".join(_fmt(stats[c]) for c in _COLUMNS) + " |")
    lines += ["", "# Failures", ""]
    if result.failures:
        for f in result.failures:
            lines.append(f"- {f['dataset']} / {f['setting']} / {f['entry']} ({f['stage']}): "
                         f"{f['error']}")
    else:
        lines.append("None.")
    return "\n".join(lines) + "\n"


def write_sweep_reports(result: SweepResult, out_dir: str | Path) -> dict[str, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    outputs = {
        "sweep.csv": sweep_table_csv(result),
        "sweep_by_dataset.csv": dataset_table_csv(result),
        "sweep.md": sweep_markdown(result),
        "failures.json": json.dumps(result.failures, indent=2, sort_keys=True) + "\n",
    }
    paths = {}
    for name, text in outputs.items():
        path = out_dir / name
        path.write_text(text, encoding="utf-8")
        paths[name] = path
    return paths


def write_confusion_report(matrix: ConfusionMatrix, out_dir: str | Path) -> Path:
    path = Path(out_dir) / f"confusion_{matrix.metric}.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(matrix.to_dict(), indent=2) + "\n", encoding="utf-8")
    return path


def write_fluency_report(matrix: FluencyMatrix, out_dir: str | Path) -> Path:
    path = Path(out_dir) / "fluency_matrix.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(matrix.to_csv(), encoding="utf-8")
    return path
