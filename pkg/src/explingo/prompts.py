"""Deterministic assembly of Narrator and Grader prompts.

Templates live as text resources in ``explingo/templates``. Lines starting with
``##`` are comments and never reach a prompt. Any template can be replaced by
dropping a file with the same name into an override directory.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Mapping, Sequence

from .explanation import Explanation

BASE_PROMPTS = {
    "BP1": (
        "You are helping users understand an ML model's prediction. Given an explanation "
        "and information about the model, convert the explanation into a human-readable "
        "narrative."
    ),
    "BP2": (
        "You are helping users who do not have experience working with ML understand an ML "
        "model's prediction. Given an explanation and information about the model, convert "
        "the explanation into a human-readable narrative. Make your answers sound as natural "
        "as possible."
    ),
    "BP3": (
        "You are helping users understand an ML model's prediction. Given an explanation "
        "and information about the model, convert the explanation into a human-readable "
        "narrative. Be sure to explicitly mention all values from the explanation in your "
        "response."
    ),
}

ACCURACY_RUBRIC = (
    "0 - Contains one or more errors in value or contribution direction. "
    "1 - Contains no errors, but may be missing information."
)
COMPLETENESS_RUBRIC = (
    "0 - One or more feature names from the explanation are not mentioned at all in the "
    "narrative. 1 - All features are mentioned, but not all feature values and/or "
    "contribution directions. 2 - All features are mentioned, and for each feature, "
    "includes at least an approximation of the feature's value and contribution direction."
)
FLUENCY_RUBRIC = "0: Very dissimilar. 1: Dissimilar. 2: Neutral. 3: Similar. 4: Very similar"

NARRATOR_TERMINATOR = "Narrative:"
GRADER_TERMINATOR = "Assessment:"
BLOCK_SEPARATOR = "\n\n"

_PLACEHOLDER = re.compile(r"\{\{(\w+)\}\}")
_TEMPLATE_NAMES = (
    "narrator_definitions",
    "narrator_example",
    "narrator_explanation",
    "narrator_format",
    "narrator_context",
    "narrator_instructions",
    "grader_definitions",
    "accuracy",
    "completeness",
    "fluency",
)


@dataclass(frozen=True)
class BasePrompt:
    id: str
    text: str

    def __post_init__(self):
        if not self.text.strip():
            raise ValueError("base prompt text must be non-empty")

    @classmethod
    def get(cls, key: "str | BasePrompt") -> "BasePrompt":
        """Resolve ``"BP1"``/``"BP2"``/``"BP3"``; any other string is a custom prompt."""
        if isinstance(key, BasePrompt):
            return key
        if key in BASE_PROMPTS:
            return cls(key, BASE_PROMPTS[key])
        return cls("custom", key)


@dataclass(frozen=True)
class FewShotExample:
    explanation: Explanation
    narrative: str
    origin: str = "hand_written"

    def __post_init__(self):
        if not self.narrative.strip():
            raise ValueError("few-shot narrative must be non-empty")
        if self.origin not in ("hand_written", "bootstrapped"):
            raise ValueError(f"unknown few-shot origin {self.origin!r}")


@dataclass(frozen=True)
class NarratorPrompt:
    text: str
    spans: Mapping[str, tuple[int, int]] = field(default_factory=dict, compare=False)

    def component(self, name: str) -> str:
        start, stop = self.spans[name]
        return self.text[start:stop]


@dataclass(frozen=True)
class GraderPrompt:
    metric: str
    text: str


def _strip_comments(raw: str) -> str:
    lines = [line for line in raw.splitlines() if not line.startswith("##")]
    return "\n".join(lines).strip("\n")


class PromptTemplates:
    """Template set with optional per-file overrides from ``directory``."""

    def __init__(self, directory: str | Path | None = None):
        self.directory = Path(directory) if directory is not None else None
        package = resources.files("explingo") / "templates"
        self._templates: dict[str, str] = {}
        for name in _TEMPLATE_NAMES:
            raw = (package / f"{name}.txt").read_text(encoding="utf-8")
            if self.directory is not None:
                override = self.directory / f"{name}.txt"
                if override.is_file():
                    raw = override.read_text(encoding="utf-8")
            self._templates[name] = _strip_comments(raw)

    def raw(self, name: str) -> str:
        return self._templates[name]

    def render(self, name: str, **values: str) -> str:
        template = self._templates[name]

        def substitute(match: re.Match) -> str:
            key = match.group(1)
            if key not in values:
                raise KeyError(f"template {name!r} needs a value for {{{{{key}}}}}")
            return values[key]

        return _PLACEHOLDER.sub(substitute, template)


_DEFAULT_TEMPLATES: PromptTemplates | None = None


def default_templates() -> PromptTemplates:
    global _DEFAULT_TEMPLATES
    if _DEFAULT_TEMPLATES is None:
        _DEFAULT_TEMPLATES = PromptTemplates()
    return _DEFAULT_TEMPLATES


def assemble_narrator_prompt(
    base: "BasePrompt | str",
    examples: Sequence[FewShotExample],
    target: Explanation,
    templates: PromptTemplates | None = None,
) -> NarratorPrompt:
    """Build the Narrator prompt.

    Blocks are joined by a blank line in a fixed order: base prompt,
    definitions, few-shot examples (hand-written first, then bootstrapped),
    target explanation, explanation format, context, output instructions and
    finally the ``Narrative:`` terminator.
    """
    templates = templates or default_templates()
    base = BasePrompt.get(base)
    ordered = [e for e in examples if e.origin == "hand_written"]
    ordered += [e for e in examples if e.origin == "bootstrapped"]
    example_blocks = [
        templates.render(
            "narrator_example",
            explanation=e.explanation.text,
            format=e.explanation.format_descriptor,
            context=e.explanation.context,
            narrative=e.narrative.strip(),
        )
        for e in ordered
    ]
    blocks = [
        ("base", base.text),
        ("definitions", templates.raw("narrator_definitions")),
        ("examples", BLOCK_SEPARATOR.join(example_blocks)),
        ("explanation", templates.render("narrator_explanation", explanation=target.text)),
        ("format", templates.render("narrator_format", format=target.format_descriptor)),
        ("context", templates.render("narrator_context", context=target.context)),
        ("instructions", templates.raw("narrator_instructions")),
        ("terminator", NARRATOR_TERMINATOR),
    ]
    parts: list[str] = []
    spans: dict[str, tuple[int, int]] = {}
    offset = 0
    for name, text in blocks:
        # explanation, format and context form one block of consecutive lines
        sep = "\n" if name in ("format", "context") else BLOCK_SEPARATOR
        if parts and text:
            parts.append(sep)
            offset += len(sep)
        spans[name] = (offset, offset + len(text))
        parts.append(text)
        offset += len(text)
    return NarratorPrompt("".join(parts), spans)


def assemble_accuracy_prompt(
    expl: Explanation,
    narrative: str,
    rubric: str | None = None,
    templates: PromptTemplates | None = None,
) -> GraderPrompt:
    templates = templates or default_templates()
    text = templates.render(
        "accuracy",
        definitions=templates.raw("grader_definitions"),
        format=expl.format_descriptor,
        explanation=expl.text,
        narrative=narrative,
        rubric=rubric or ACCURACY_RUBRIC,
    )
    return GraderPrompt("accuracy", text)


def assemble_completeness_prompt(
    expl: Explanation,
    narrative: str,
    rubric: str | None = None,
    templates: PromptTemplates | None = None,
) -> GraderPrompt:
    templates = templates or default_templates()
    text = templates.render(
        "completeness",
        definitions=templates.raw("grader_definitions"),
        format=expl.format_descriptor,
        explanation=expl.text,
        narrative=narrative,
        rubric=rubric or COMPLETENESS_RUBRIC,
    )
    return GraderPrompt("completeness", text)


def assemble_fluency_prompt(
    narrative: str,
    exemplars: Sequence[str],
    rubric: str | None = None,
    templates: PromptTemplates | None = None,
) -> GraderPrompt:
    if not exemplars:
        raise ValueError("fluency grading needs at least one exemplar narrative")
    templates = templates or default_templates()
    text = templates.render(
        "fluency",
        definitions=templates.raw("grader_definitions"),
        exemplars=BLOCK_SEPARATOR.join(e.strip() for e in exemplars),
        narrative=narrative,
        rubric=rubric or FLUENCY_RUBRIC,
    )
    return GraderPrompt("fluency", text)
