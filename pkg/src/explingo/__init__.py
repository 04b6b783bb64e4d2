"""Turn feature-attribution explanations into narratives and grade them."""

from .backends import (
    Backend,
    BackendConfig,
    BackendError,
    CacheMissError,
    CompletionRequest,
    CompletionResponse,
    HTTPBackend,
    MockBackend,
    ReplayBackend,
    make_backend,
)
from .bootstrap import BootstrapError, BootstrapResult, BootstrapThresholds, bootstrap_examples
from .datasets import (
    ExemplarDataset,
    ExemplarEntry,
    ValidationEntry,
    load_dataset,
    load_validation,
    split_pools,
)
from .estimators import Grader, Narrator
from .explanation import Explanation, FeatureContribution, parse_explanation, select_top_n
from .grading import (
    GradeReport,
    GradeWeights,
    MetricGrade,
    conciseness_grade,
    grade_narrative,
    total_grade,
)
from .harness import ConfusionMatrix, run_sweep, validate_grader
from .narrator import NarratorConfig, narrate
from .prompts import BASE_PROMPTS, FewShotExample, assemble_narrator_prompt

__version__ = "0.1.0"

__all__ = [
    "BASE_PROMPTS",
    "Backend",
    "BackendConfig",
    "BackendError",
    "BootstrapError",
    "BootstrapResult",
    "BootstrapThresholds",
    "CacheMissError",
    "CompletionRequest",
    "CompletionResponse",
    "ConfusionMatrix",
    "ExemplarDataset",
    "ExemplarEntry",
    "Explanation",
    "FeatureContribution",
    "FewShotExample",
    "GradeReport",
    "GradeWeights",
    "Grader",
    "HTTPBackend",
    "MetricGrade",
    "MockBackend",
    "Narrator",
    "NarratorConfig",
    "ReplayBackend",
    "ValidationEntry",
    "assemble_narrator_prompt",
    "bootstrap_examples",
    "conciseness_grade",
    "grade_narrative",
    "load_dataset",
    "load_validation",
    "make_backend",
    "narrate",
    "parse_explanation",
    "run_sweep",
    "select_top_n",
    "split_pools",
    "total_grade",
    "validate_grader",
]
