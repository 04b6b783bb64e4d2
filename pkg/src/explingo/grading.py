"""Narrative grading: LLM-judged accuracy, completeness and fluency, the
word-count conciseness grade, and the weighted total."""

from __future__ import annotations

import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import Iterable, Sequence

from .backends import Backend, CompletionRequest
from .explanation import Explanation
from .prompts import (
    GRADER_TERMINATOR,
    PromptTemplates,
    assemble_accuracy_prompt,
    assemble_completeness_prompt,
    assemble_fluency_prompt,
)

logger = logging.getLogger(__name__)

METRICS = ("accuracy", "completeness", "fluency", "conciseness")
LLM_METRICS = ("accuracy", "completeness", "fluency")
METRIC_MAX = {"accuracy": 1, "completeness": 2, "fluency": 4, "conciseness": 4}
WEIGHTED_MAX = 4.0
DEFAULT_REPEATS = 5
REASK_SUFFIX = (
    "\n\nYour previous answer did not end with a number from the rubric. "
    "Reply with only a single number from the rubric.\n\n" + GRADER_TERMINATOR
)

_INTEGER = re.compile(r"(?<![\w.\-])\d+(?!\.?\d)(?![A-Za-z_])")


class GradingError(RuntimeError):
    def __init__(self, message: str, raw_text: str = ""):
        super().__init__(message)
        self.raw_text = raw_text


@dataclass(frozen=True)
class GradeWeights:
    accuracy: float = 4.0
    completeness: float = 2.0
    fluency: float = 1.0
    conciseness: float = 1.0

    def __post_init__(self):
        for name, value in asdict(self).items():
            if value < 0:
                raise ValueError(f"weight {name} must be non-negative")


@dataclass(frozen=True)
class ConcisenessParams:
    l_max: float

    def __post_init__(self):
        if not self.l_max > 0:
            raise ValueError(f"l_max must be positive, got {self.l_max}")


@dataclass(frozen=True)
class MetricGrade:
    metric: str
    raw_samples: tuple[float, ...]
    raw_mean: float
    weighted: float
    spread_alert: bool

    @classmethod
    def from_samples(cls, metric: str, samples: Iterable[float]) -> "MetricGrade":
        samples = tuple(samples)
        if not samples:
            raise ValueError("a metric grade needs at least one sample")
        top = METRIC_MAX[metric]
        for s in samples:
            if not 0 <= s <= top:
                raise ValueError(f"{metric} sample {s} outside [0, {top}]")
        mean = sum(samples) / len(samples)
        alert = max(samples) - min(samples) > 1
        return cls(metric, samples, mean, mean * (WEIGHTED_MAX / top), alert)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["raw_samples"] = list(self.raw_samples)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "MetricGrade":
        return cls(d["metric"], tuple(d["raw_samples"]), d["raw_mean"], d["weighted"],
                   d["spread_alert"])


@dataclass(frozen=True)
class GradeReport:
    accuracy: MetricGrade
    completeness: MetricGrade
    fluency: MetricGrade
    conciseness: MetricGrade
    total: float

    @classmethod
    def build(
        cls,
        accuracy: MetricGrade,
        completeness: MetricGrade,
        fluency: MetricGrade,
        conciseness: MetricGrade,
        weights: GradeWeights = GradeWeights(),
    ) -> "GradeReport":
        total = total_grade(
            accuracy.raw_mean, completeness.raw_mean, fluency.raw_mean, conciseness.raw_mean,
            weights,
        )
        return cls(accuracy, completeness, fluency, conciseness, total)

    def grades(self) -> dict[str, MetricGrade]:
        return {m: getattr(self, m) for m in METRICS}

    @property
    def spread_alert(self) -> bool:
        return any(g.spread_alert for g in self.grades().values())

    def to_dict(self) -> dict:
        d = {m: g.to_dict() for m, g in self.grades().items()}
        d["total"] = self.total
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "GradeReport":
        return cls(*(MetricGrade.from_dict(d[m]) for m in METRICS), d["total"])


def total_grade(
    accuracy: float,
    completeness: float,
    fluency: float,
    conciseness: float,
    weights: GradeWeights = GradeWeights(),
) -> float:
    """Weighted sum of raw metric means. With default weights the result is in [0, 16]."""
    return (
        weights.accuracy * accuracy
        + weights.fluency * fluency
        + weights.completeness * completeness
        + weights.conciseness * conciseness
    )


def word_count(text: str) -> int:
    return len(text.split())


def conciseness_grade(length: float, num_features: int, l_max: float) -> float:
    """4 up to ``num_features * l_max`` words, 0 from twice that, linear between."""
    if num_features < 1:
        raise ValueError("num_features must be >= 1")
    if not l_max > 0:
        raise ValueError("l_max must be positive")
    budget = num_features * l_max
    if length <= budget:
        return 4.0
    if length >= 2 * budget:
        return 0.0
    return 4.0 * (2.0 - length / budget)


def grade_conciseness(narrative: str, num_features: int, params: ConcisenessParams) -> MetricGrade:
    grade = conciseness_grade(word_count(narrative), num_features, params.l_max)
    return MetricGrade("conciseness", (grade,), grade, grade, False)


def calibrate_l_max(pairs: Iterable[tuple[str, int]], fraction: float = 0.9) -> ConcisenessParams:
    """Set ``l_max`` to ``fraction`` of the largest words-per-feature ratio.

    ``pairs`` holds ``(narrative, num_features)`` for the exemplar narratives.
    """
    ratios = [word_count(text) / n for text, n in pairs if n > 0]
    if not ratios:
        raise ValueError("cannot calibrate l_max without exemplar narratives")
    return ConcisenessParams(fraction * max(ratios))


def parse_rubric_grade(response: str, allowed: Sequence[int] | range) -> int:
    """Return the last standalone integer in ``response`` that lies in ``allowed``.

    Decimals such as ``0.15`` and tokens glued to letters are ignored, so
    leading reasoning text that quotes an explanation is tolerated.
    """
    allowed = set(allowed)
    found = [int(m.group()) for m in _INTEGER.finditer(response)]
    found = [v for v in found if v in allowed]
    if not found:
        raise GradingError(f"no rubric grade in {sorted(allowed)} found in response", response)
    return found[-1]


def _repeat_seed(seed: int | None, repeat: int) -> int:
    return repeat if seed is None else seed * 1000 + repeat


def _ask_for_grade(backend: Backend, request: CompletionRequest, allowed: range) -> int:
    text = backend.complete(request).text
    try:
        return parse_rubric_grade(text, allowed)
    except GradingError:
        logger.info("unparseable grader output, re-asking once: %r", text[:200])
    retry = CompletionRequest(
        request.prompt + "\n" + text.strip() + REASK_SUFFIX,
        request.temperature,
        request.max_tokens,
        request.seed,
    )
    second = backend.complete(retry).text
    try:
        return parse_rubric_grade(second, allowed)
    except GradingError as exc:
        raise GradingError(
            f"grader output not parseable after re-ask: {second[:200]!r}", second
        ) from exc


def grade_with_prompt(
    metric: str,
    prompt: str,
    backend: Backend,
    repeats: int = DEFAULT_REPEATS,
    *,
    temperature: float = 0.0,
    max_tokens: int = 512,
    seed: int | None = None,
    max_workers: int = 1,
) -> MetricGrade:
    """Query ``backend`` ``repeats`` times with ``prompt`` and aggregate.

    Each repeat gets its own seed so scripted backends can vary per repeat.
    Samples are always ordered by repeat index.
    """
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    allowed = range(METRIC_MAX[metric] + 1)
    requests = [
        CompletionRequest(prompt, temperature, max_tokens, _repeat_seed(seed, r))
        for r in range(repeats)
    ]
    if max_workers > 1 and repeats > 1:
        with ThreadPoolExecutor(min(max_workers, repeats)) as pool:
            samples = list(pool.map(lambda q: _ask_for_grade(backend, q, allowed), requests))
    else:
        samples = [_ask_for_grade(backend, q, allowed) for q in requests]
    grade = MetricGrade.from_samples(metric, samples)
    if grade.spread_alert:
        logger.warning("%s grades spread more than 1: %s", metric, samples)
    return grade


def _check_narrative(narrative: str) -> None:
    if not narrative or not narrative.strip():
        raise ValueError("cannot grade an empty narrative")


def grade_accuracy(
    expl: Explanation,
    narrative: str,
    backend: Backend,
    repeats: int = DEFAULT_REPEATS,
    *,
    rubric: str | None = None,
    templates: PromptTemplates | None = None,
    **kwargs,
) -> MetricGrade:
    _check_narrative(narrative)
    prompt = assemble_accuracy_prompt(expl, narrative, rubric, templates)
    return grade_with_prompt("accuracy", prompt.text, backend, repeats, **kwargs)


def grade_completeness(
    expl: Explanation,
    narrative: str,
    backend: Backend,
    repeats: int = DEFAULT_REPEATS,
    *,
    rubric: str | None = None,
    templates: PromptTemplates | None = None,
    **kwargs,
) -> MetricGrade:
    _check_narrative(narrative)
    prompt = assemble_completeness_prompt(expl, narrative, rubric, templates)
    return grade_with_prompt("completeness", prompt.text, backend, repeats, **kwargs)


def grade_fluency(
    narrative: str,
    exemplars: Sequence[str],
    backend: Backend,
    repeats: int = DEFAULT_REPEATS,
    *,
    rubric: str | None = None,
    templates: PromptTemplates | None = None,
    **kwargs,
) -> MetricGrade:
    _check_narrative(narrative)
    prompt = assemble_fluency_prompt(narrative, exemplars, rubric, templates)
    return grade_with_prompt("fluency", prompt.text, backend, repeats, **kwargs)


def grade_narrative(
    expl: Explanation,
    narrative: str,
    backend: Backend,
    *,
    exemplars: Sequence[str],
    conciseness: ConcisenessParams,
    weights: GradeWeights = GradeWeights(),
    repeats: int = DEFAULT_REPEATS,
    rubrics: dict[str, str] | None = None,
    templates: PromptTemplates | None = None,
    **kwargs,
) -> GradeReport:
    """Grade one narrative on all four metrics."""
    rubrics = rubrics or {}
    common = dict(templates=templates, **kwargs)
    return GradeReport.build(
        grade_accuracy(expl, narrative, backend, repeats, rubric=rubrics.get("accuracy"), **common),
        grade_completeness(expl, narrative, backend, repeats,
                           rubric=rubrics.get("completeness"), **common),
        grade_fluency(narrative, exemplars, backend, repeats, rubric=rubrics.get("fluency"),
                      **common),
        grade_conciseness(narrative, expl.num_features, conciseness),
        weights,
    )
