"""Turning explanations into narratives with a prompted backend."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass
from typing import Sequence

from .backends import Backend, CompletionRequest
from .explanation import Explanation
from .prompts import BASE_PROMPTS, BasePrompt, FewShotExample, PromptTemplates, assemble_narrator_prompt


@dataclass(frozen=True)
class NarratorConfig:
    """Narrator settings: base prompt, few-shot counts and sampling parameters.

    ``base_prompt`` is ``"BP1"``, ``"BP2"``, ``"BP3"`` or custom prompt text.
    ``num_features``, when set, keeps only that many top features of each
    explanation before prompting.
    """

    base_prompt: str = "BP1"
    h: int = 0
    b: int = 0
    temperature: float = 0.0
    max_tokens: int = 512
    num_features: int | None = None
    seed: int | None = None

    def __post_init__(self):
        if self.h < 0 or self.b < 0:
            raise ValueError("few-shot counts must be non-negative")
        if self.num_features is not None and self.num_features < 1:
            raise ValueError("num_features must be >= 1")
        BasePrompt.get(self.base_prompt)

    @property
    def base(self) -> BasePrompt:
        return BasePrompt.get(self.base_prompt)

    @property
    def label(self) -> str:
        base = self.base_prompt if self.base_prompt in BASE_PROMPTS else "custom"
        return f"{base} H={self.h} B={self.b}"

    def digest(self) -> str:
        payload = json.dumps(asdict(self), sort_keys=True)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def narrate(
    explanation: Explanation,
    backend: Backend,
    config: NarratorConfig = NarratorConfig(),
    examples: Sequence[FewShotExample] = (),
    templates: PromptTemplates | None = None,
) -> str:
    if config.num_features is not None:
        explanation = explanation.top(config.num_features)
    prompt = assemble_narrator_prompt(config.base, examples, explanation, templates)
    request = CompletionRequest(prompt.text, config.temperature, config.max_tokens, config.seed)
    return backend.complete(request).text.strip()
