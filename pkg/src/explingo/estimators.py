"""scikit-learn style front ends: :class:`Grader` scores narratives and
:class:`Narrator` transforms explanations into narratives."""

from __future__ import annotations

import random

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .bootstrap import BootstrapCache, BootstrapThresholds, bootstrap_examples
from .datasets import ExemplarDataset
from .explanation import DEFAULT_FORMAT
from .grading import (
    ConcisenessParams,
    GradeReport,
    GradeWeights,
    MetricGrade,
    calibrate_l_max,
    grade_accuracy,
    grade_completeness,
    grade_conciseness,
    grade_fluency,
)
from .narrator import NarratorConfig, narrate
from .prompts import FewShotExample, PromptTemplates
from .validation import check_entries, check_explanation, check_explanations, check_pairs


def _templates(directory) -> PromptTemplates | None:
    return PromptTemplates(directory) if directory is not None else None


class Grader(BaseEstimator):
    """Scores narratives on accuracy, completeness, fluency and conciseness.

    ``fit`` takes exemplar entries (a dataset, a list of entries, or
    explanations ``X`` with hand-written narratives ``y``). It draws
    ``fluency_k`` hand-written narratives as style exemplars and, when
    ``l_max="auto"``, calibrates the conciseness budget from them.

    Parameters
    ----------
    backend : Backend
        Completion backend used for the LLM-judged metrics.
    repeats : int
        Number of grader queries per metric; the mean is reported.
    weights : GradeWeights or None
        Weights of the total grade; ``None`` means (4, 2, 1, 1).
    l_max : float or "auto"
        Ideal words per feature for conciseness.
    """

    def __init__(
        self,
        backend=None,
        repeats: int = 5,
        weights: GradeWeights | None = None,
        l_max="auto",
        fluency_k: int = 5,
        seed: int = 0,
        rubrics: dict | None = None,
        temperature: float = 0.0,
        max_tokens: int = 512,
        max_workers: int = 1,
        templates_dir=None,
    ):
        self.backend = backend
        self.repeats = repeats
        self.weights = weights
        self.l_max = l_max
        self.fluency_k = fluency_k
        self.seed = seed
        self.rubrics = rubrics
        self.temperature = temperature
        self.max_tokens = max_tokens
        self.max_workers = max_workers
        self.templates_dir = templates_dir

    def fit(self, X=None, y=None, fluency_exemplars=None):
        """``X`` may be omitted when ``fluency_exemplars`` are given and
        ``l_max`` is a number."""
        if self.backend is None:
            raise ValueError("Grader needs a backend")
        if self.repeats < 1:
            raise ValueError("repeats must be >= 1")
        entries = check_entries(X, y)[1] if X is not None else []
        narrated = [e for e in entries if e.has_narrative]
        if fluency_exemplars is None:
            if not narrated:
                raise ValueError("fit needs entries with hand-written narratives")
            k = min(self.fluency_k, len(narrated))
            fluency_exemplars = [e.narrative for e in random.Random(self.seed).sample(narrated, k)]
        if not fluency_exemplars:
            raise ValueError("at least one fluency exemplar is required")
        self.fluency_exemplars_ = list(fluency_exemplars)
        if self.l_max == "auto":
            if not narrated:
                raise ValueError("l_max='auto' needs entries with hand-written narratives")
            self.conciseness_ = calibrate_l_max(
                (e.narrative, e.explanation.num_features) for e in narrated
            )
        else:
            self.conciseness_ = ConcisenessParams(float(self.l_max))
        self.weights_ = self.weights or GradeWeights()
        self.templates_ = _templates(self.templates_dir)
        return self

    def _kwargs(self) -> dict:
        return dict(temperature=self.temperature, max_tokens=self.max_tokens,
                    max_workers=self.max_workers, templates=self.templates_)

    def grade_metric(self, metric: str, explanation, narrative: str) -> MetricGrade:
        check_is_fitted(self, "conciseness_")
        expl = check_explanation(explanation)
        rubrics = self.rubrics or {}
        if metric == "accuracy":
            return grade_accuracy(expl, narrative, self.backend, self.repeats,
                                  rubric=rubrics.get("accuracy"), **self._kwargs())
        if metric == "completeness":
            return grade_completeness(expl, narrative, self.backend, self.repeats,
                                      rubric=rubrics.get("completeness"), **self._kwargs())
        if metric == "fluency":
            return grade_fluency(narrative, self.fluency_exemplars_, self.backend, self.repeats,
                                 rubric=rubrics.get("fluency"), **self._kwargs())
        if metric == "conciseness":
            return grade_conciseness(narrative, expl.num_features, self.conciseness_)
        raise ValueError(f"unknown metric {metric!r}")

    def grade(self, explanation, narrative: str) -> GradeReport:
        grades = [self.grade_metric(m, explanation, narrative)
                  for m in ("accuracy", "completeness", "fluency", "conciseness")]
        return GradeReport.build(*grades, weights=self.weights_)

    def transform(self, X) -> list[GradeReport]:
        """Grade ``(explanation, narrative)`` pairs."""
        return [self.grade(e, n) for e, n in check_pairs(X)]

    def predict(self, X) -> np.ndarray:
        """Total grade of each pair."""
        return np.array([r.total for r in self.transform(X)], dtype=float)


class Narrator(TransformerMixin, BaseEstimator):
    """Transforms explanations into narratives.

    ``fit`` takes the same inputs as :meth:`Grader.fit`. It selects ``h``
    hand-written examples from the narratives
    and, if ``b > 0``, bootstraps ``b`` more using ``grader`` (a
    :class:`Grader`; fitted on the same entries when not yet fitted).
    ``transform`` accepts explanations in any form understood by
    :func:`explingo.validation.check_explanation` and returns a list of strings.
    """

    def __init__(
        self,
        backend=None,
        base_prompt: str = "BP1",
        h: int = 0,
        b: int = 0,
        num_features: int | None = None,
        context: str = "",
        format_descriptor: str = DEFAULT_FORMAT,
        temperature: float = 0.0,
        max_tokens: int = 512,
        seed: int = 0,
        grader: Grader | None = None,
        thresholds: BootstrapThresholds | None = None,
        max_attempts: int | None = None,
        shuffle_seed: int | None = None,
        cache_dir=None,
        templates_dir=None,
    ):
        self.backend = backend
        self.base_prompt = base_prompt
        self.h = h
        self.b = b
        self.num_features = num_features
        self.context = context
        self.format_descriptor = format_descriptor
        self.temperature = temperature
        self.max_tokens = max_tokens
        self.seed = seed
        self.grader = grader
        self.thresholds = thresholds
        self.max_attempts = max_attempts
        self.shuffle_seed = shuffle_seed
        self.cache_dir = cache_dir
        self.templates_dir = templates_dir

    def _config(self) -> NarratorConfig:
        return NarratorConfig(self.base_prompt, self.h, self.b, self.temperature,
                              self.max_tokens, self.num_features)

    def fit(self, X=None, y=None, hand_written=None):
        if self.backend is None:
            raise ValueError("Narrator needs a backend")
        config = self._config()
        self.templates_ = _templates(self.templates_dir)
        entries = []
        dataset_id = ""
        if X is not None:
            dataset_id, entries = check_entries(X, y)
        if hand_written is None:
            narrated = [e for e in entries if e.has_narrative]
            if self.h > len(narrated):
                raise ValueError(f"h={self.h} but only {len(narrated)} hand-written narratives")
            chosen = random.Random(self.seed).sample(narrated, self.h)
            hand_written = [FewShotExample(e.explanation, e.narrative) for e in chosen]
        self.hand_written_ = list(hand_written)
        self.bootstrap_result_ = None
        bootstrapped: list[FewShotExample] = []
        if self.b > 0:
            if not entries:
                raise ValueError("bootstrapping needs exemplar entries")
            grader = self.grader
            if grader is None:
                raise ValueError("bootstrapping (b > 0) needs a grader")
            if not hasattr(grader, "conciseness_"):
                grader.fit(entries)
            thresholds = self.thresholds or BootstrapThresholds()
            cache = BootstrapCache(self.cache_dir) if self.cache_dir else None
            key = None
            if cache is not None:
                dataset = ExemplarDataset(dataset_id or "entries", entries)
                key = BootstrapCache.key(dataset, config, self.hand_written_, thresholds,
                                         {"max_attempts": self.max_attempts,
                                          "shuffle_seed": self.shuffle_seed})
                self.bootstrap_result_ = cache.load(key)
            if self.bootstrap_result_ is None:
                self.bootstrap_result_ = bootstrap_examples(
                    entries, config, backend=self.backend, grade=grader.grade,
                    hand_written=self.hand_written_, thresholds=thresholds,
                    max_attempts=self.max_attempts, shuffle_seed=self.shuffle_seed,
                    templates=self.templates_,
                )
                if cache is not None:
                    cache.store(key, self.bootstrap_result_)
            bootstrapped = list(self.bootstrap_result_.accepted)
        self.examples_ = self.hand_written_ + bootstrapped
        self.config_ = config
        return self

    def narrate(self, explanation) -> str:
        check_is_fitted(self, "examples_")
        expl = check_explanation(explanation, self.format_descriptor, self.context)
        return narrate(expl, self.backend, self.config_, self.examples_, self.templates_)

    def transform(self, X) -> list[str]:
        check_is_fitted(self, "examples_")
        return [
            narrate(e, self.backend, self.config_, self.examples_, self.templates_)
            for e in check_explanations(X, self.format_descriptor, self.context)
        ]
