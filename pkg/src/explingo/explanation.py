"""Feature-contribution explanations: representation, top-N selection and the
canonical ``(name, value, contribution), ...`` text form used in prompts and
dataset files."""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Iterable, Sequence

DEFAULT_FORMAT = "(feature_name, feature_value, SHAP contribution)."

_NUMBER = re.compile(r"[+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?")
_FORBIDDEN = set(",()")


class ExplanationError(ValueError):
    """Raised when an explanation cannot be used (empty, malformed fields)."""


class ExplanationParseError(ExplanationError):
    """Raised when text does not follow the canonical triple grammar."""

    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (at position {position})")
        self.position = position


def _render_number(x: float) -> str:
    return repr(float(x))


@dataclass(frozen=True)
class FeatureContribution:
    """One ``(feature name, feature value, contribution)`` triple.

    ``value`` is always kept as text. ``contribution`` may be given as a number
    or as a numeric string; the lexical form is kept in ``contribution_text``
    so that formatting reproduces the ingested bytes.
    """

    name: str
    value: str
    contribution: float
    contribution_text: str = field(default="", repr=False)

    def __post_init__(self):
        name = str(self.name).strip()
        value = str(self.value).strip()
        if not name:
            raise ExplanationError("feature name must be non-empty")
        for label, text in (("name", name), ("value", value)):
            if _FORBIDDEN & set(text):
                raise ExplanationError(
                    f"feature {label} {text!r} contains ',', '(' or ')', which the "
                    "triple format cannot represent"
                )
        raw = self.contribution
        if isinstance(raw, str):
            text = raw.strip()
            if not _NUMBER.fullmatch(text):
                raise ExplanationError(f"contribution {raw!r} is not a number")
            number = float(text)
        else:
            number = float(raw)
            if not math.isfinite(number):
                raise ExplanationError(f"contribution for {name!r} must be finite")
            text = self.contribution_text.strip() or _render_number(number)
            if not _NUMBER.fullmatch(text) or float(text) != number:
                raise ExplanationError(
                    f"contribution text {text!r} does not match value {number!r}"
                )
        if not math.isfinite(number):
            raise ExplanationError(f"contribution for {name!r} must be finite")
        object.__setattr__(self, "name", name)
        object.__setattr__(self, "value", value)
        object.__setattr__(self, "contribution", number)
        object.__setattr__(self, "contribution_text", text)

    def to_text(self) -> str:
        return f"({self.name}, {self.value}, {self.contribution_text})"


@dataclass(frozen=True)
class Explanation:
    """An explanation together with its format descriptor and context sentence."""

    features: tuple[FeatureContribution, ...]
    format_descriptor: str = DEFAULT_FORMAT
    context: str = ""

    def __post_init__(self):
        features = tuple(self.features)
        if not features:
            raise ExplanationError("explanation has no features")
        object.__setattr__(self, "features", features)

    @classmethod
    def from_text(
        cls, text: str, format_descriptor: str = DEFAULT_FORMAT, context: str = ""
    ) -> "Explanation":
        return cls(parse_explanation(text), format_descriptor, context)

    @property
    def text(self) -> str:
        return format_explanation(self.features)

    @property
    def num_features(self) -> int:
        return len(self.features)

    def top(self, n: int) -> "Explanation":
        return Explanation(select_top_n(self.features, n), self.format_descriptor, self.context)


def select_top_n(features: Sequence[FeatureContribution], n: int) -> list[FeatureContribution]:
    """Return the ``n`` features with the largest absolute contribution.

    The result is sorted by ``|contribution|`` descending; equal magnitudes keep
    their input order.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    features = list(features)
    if not features:
        raise ExplanationError("cannot select features from an empty explanation")
    return sorted(features, key=lambda f: -abs(f.contribution))[:n]


def format_explanation(features: Iterable[FeatureContribution]) -> str:
    features = list(features)
    if not features:
        raise ExplanationError("cannot format an empty explanation")
    return ", ".join(f.to_text() for f in features)


def parse_explanation(text: str) -> list[FeatureContribution]:
    """Parse ``"(a, 1, 2.5), (b, none, -0.3)"`` into triples.

    Whitespace around items is tolerated. Errors carry the character offset
    where parsing failed.
    """
    features: list[FeatureContribution] = []
    pos = 0
    end = len(text)

    def skip_ws(p: int) -> int:
        while p < end and text[p].isspace():
            p += 1
        return p

    pos = skip_ws(pos)
    if pos == end:
        raise ExplanationParseError("empty explanation", pos)
    while True:
        if text[pos] != "(":
            raise ExplanationParseError(f"expected '(' but found {text[pos]!r}", pos)
        close = text.find(")", pos + 1)
        nested = text.find("(", pos + 1)
        if close == -1:
            raise ExplanationParseError("unclosed '('", pos)
        if nested != -1 and nested < close:
            raise ExplanationParseError("nested '(' inside a triple", nested)
        parts = text[pos + 1 : close].split(",")
        if len(parts) != 3:
            raise ExplanationParseError(
                f"expected 3 comma-separated fields, found {len(parts)}", pos
            )
        name, value, contribution = (p.strip() for p in parts)
        if not _NUMBER.fullmatch(contribution):
            offset = pos + 1 + len(parts[0]) + len(parts[1]) + 2
            raise ExplanationParseError(f"contribution {contribution!r} is not a number", offset)
        try:
            features.append(FeatureContribution(name, value, contribution))
        except ExplanationError as exc:
            raise ExplanationParseError(str(exc), pos) from exc
        pos = skip_ws(close + 1)
        if pos == end:
            return features
        if text[pos] != ",":
            raise ExplanationParseError(f"expected ',' between triples, found {text[pos]!r}", pos)
        pos = skip_ws(pos + 1)
        if pos == end:
            raise ExplanationParseError("trailing ',' without a triple", pos)
