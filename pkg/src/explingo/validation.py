"""Input coercion helpers shared by the estimators."""

from __future__ import annotations

from collections.abc import Mapping, Sequence

from .datasets import ExemplarDataset, ExemplarEntry
from .explanation import DEFAULT_FORMAT, Explanation, FeatureContribution


def check_explanation(
    x, format_descriptor: str = DEFAULT_FORMAT, context: str = ""
) -> Explanation:
    """Coerce one explanation.

    Accepts an :class:`Explanation`, canonical triple text, a sequence of
    :class:`FeatureContribution` or ``(name, value, contribution)`` tuples, or
    a mapping ``{name: (value, contribution)}``.
    """
    if isinstance(x, Explanation):
        return x
    if isinstance(x, ExemplarEntry):
        return x.explanation
    if isinstance(x, str):
        return Explanation.from_text(x, format_descriptor, context)
    if isinstance(x, Mapping):
        items = [(name, *pair) for name, pair in x.items()]
    elif isinstance(x, Sequence):
        items = list(x)
    else:
        raise TypeError(f"cannot interpret {type(x).__name__} as an explanation")
    features = []
    for item in items:
        if isinstance(item, FeatureContribution):
            features.append(item)
        elif isinstance(item, Sequence) and not isinstance(item, str) and len(item) == 3:
            features.append(FeatureContribution(*item))
        else:
            raise TypeError(f"expected a (name, value, contribution) triple, got {item!r}")
    return Explanation(tuple(features), format_descriptor, context)


def check_explanations(X, format_descriptor: str = DEFAULT_FORMAT, context: str = "") -> list[Explanation]:
    if isinstance(X, (Explanation, str)):
        X = [X]
    return [check_explanation(x, format_descriptor, context) for x in X]


def check_entries(X, y=None) -> tuple[str, list[ExemplarEntry]]:
    """Return ``(dataset_id, entries)``.

    ``X`` is a dataset, a sequence of entries, or a sequence of explanations
    with their narratives (``None`` for none) in ``y``.
    """
    if isinstance(X, ExemplarDataset):
        return X.id, list(X.entries)
    items = list(X)
    if not items:
        raise ValueError("no exemplar entries given")
    if all(isinstance(e, ExemplarEntry) for e in items):
        if y is not None:
            raise ValueError("y must be omitted when X holds exemplar entries")
        return "", items
    explanations = [check_explanation(x) for x in items]
    narratives = [None] * len(explanations) if y is None else list(y)
    if len(narratives) != len(explanations):
        raise ValueError(f"X has {len(explanations)} explanations but y has {len(narratives)} narratives")
    for n in narratives:
        if n is not None and not isinstance(n, str):
            raise TypeError("narratives must be strings or None")
    return "", [ExemplarEntry(x, n, f"entry-{i + 1}")
                for i, (x, n) in enumerate(zip(explanations, narratives))]


def check_pairs(X, format_descriptor: str = DEFAULT_FORMAT, context: str = "") -> list[tuple[Explanation, str]]:
    """Coerce ``(explanation, narrative)`` pairs; narrated entries count as pairs."""
    pairs = []
    for item in X:
        if isinstance(item, ExemplarEntry):
            if not item.has_narrative:
                raise ValueError(f"entry {item.id!r} has no narrative to grade")
            pairs.append((item.explanation, item.narrative))
            continue
        expl, narrative = item
        if not isinstance(narrative, str):
            raise TypeError("narratives must be strings")
        pairs.append((check_explanation(expl, format_descriptor, context), narrative))
    return pairs
