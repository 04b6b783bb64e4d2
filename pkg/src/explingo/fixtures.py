"""Synthetic stand-ins for the nine exemplar datasets and the two metric
validation sets.

Entry counts per dataset and the validation taxonomy counts follow the
published dataset summaries; explanations and narratives are generated, and
each dataset's narratives use their own writing style.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Callable

from .datasets import (
    ExemplarDataset,
    ExemplarEntry,
    ValidationEntry,
    save_dataset,
    save_validation,
)
from .explanation import DEFAULT_FORMAT, Explanation, FeatureContribution, select_top_n

DATASET_SIZES = {
    "house-1": 35,
    "house-2": 22,
    "house-3": 22,
    "mush-1": 30,
    "mush-2": 30,
    "pdf-1": 30,
    "pdf-2": 30,
    "student-1": 30,
    "student-2": 30,
}
VALIDATION_COUNTS = {
    "accuracy": [
        ("Accurate with all values", 1, 15),
        ("Accurate with some values", 1, 8),
        ("Accurate with approximate values", 1, 8),
        ("Error in values", 0, 6),
        ("Error in contribution direction", 0, 7),
    ],
    "completeness": [
        ("All features, values, and contributions", 2, 3),
        ("All features, values, and contribution directions", 2, 4),
        ("All features, but not all values or contribution directions", 1, 9),
        ("Missing one or more features", 0, 10),
    ],
}
HAND_WRITTEN = 5


@dataclass(frozen=True)
class _Feature:
    name: str
    phrase: str
    values: Callable[[random.Random], str]


def _ints(lo: int, hi: int) -> Callable[[random.Random], str]:
    return lambda rng: str(rng.randint(lo, hi))


def _pick(*options: str) -> Callable[[random.Random], str]:
    return lambda rng: rng.choice(options)


_DOMAINS = {
    "house": dict(
        context="The model predicts house prices",
        scale=20000.0,
        features=[
            _Feature("Above ground living area square feet", "above ground living space", _ints(700, 3200)),
            _Feature("Overall material and finish quality", "material quality", _ints(1, 10)),
            _Feature("Original construction date", "construction date", _ints(1890, 2009)),
            _Feature("Total square feet of basement area", "basement area", _ints(0, 2000)),
            _Feature("Size of garage in car capacity", "garage size", _ints(0, 4)),
            _Feature("Second floor square feet", "second floor area", _ints(0, 1400)),
            _Feature("Lot size in square feet", "lot size", _ints(1500, 20000)),
        ],
    ),
    "mush": dict(
        context="The model predicts whether a mushroom is poisonous",
        scale=0.2,
        features=[
            _Feature("odor", "odor", _pick("none", "foul", "almond", "anise", "pungent", "fishy")),
            _Feature("gill-size", "gill size", _pick("broad", "narrow")),
            _Feature("spore-print-color", "spore print color", _pick("brown", "chocolate", "white", "black")),
            _Feature("stalk-surface-above-ring", "stalk surface", _pick("smooth", "silky", "fibrous")),
            _Feature("ring-type", "ring type", _pick("pendant", "evanescent", "large")),
            _Feature("bruises", "bruising", _pick("yes", "no")),
        ],
    ),
    "pdf": dict(
        context="The model predicts whether a PDF file contains malware",
        scale=0.25,
        features=[
            _Feature("metadata size in KB", "metadata size", _ints(1, 400)),
            _Feature("total size in KB", "total size", _ints(1, 900)),
            _Feature("number of objects", "number of objects", _ints(1, 120)),
            _Feature("number of Javascript keywords", "Javascript keywords", _ints(0, 6)),
            _Feature("number of pages", "page count", _ints(0, 40)),
            _Feature("number of embedded files", "embedded files", _ints(0, 3)),
        ],
    ),
    "student": dict(
        context="The model predicts whether a student will pass a class",
        scale=0.2,
        features=[
            _Feature("family educational support", "family support", _pick("yes", "no")),
            _Feature("sex", "sex", _pick("male", "female")),
            _Feature("in a romantic relationship", "romantic relationship", _pick("yes", "no")),
            _Feature("number of past class failures", "past failures", _ints(0, 3)),
            _Feature("weekly study time in hours", "study time", _ints(1, 10)),
            _Feature("number of school absences", "absences", _ints(0, 30)),
            _Feature("wants to take higher education", "plans for higher education", _pick("yes", "no")),
        ],
    ),
}


def _about(domain: str, contribution: float) -> str:
    if domain == "house":
        return f"about ${round(abs(contribution), -3):,.0f}"
    return "slightly" if abs(contribution) < 0.05 else "noticeably"


def _explanation(domain: str, rng: random.Random) -> Explanation:
    info = _DOMAINS[domain]
    features = []
    for feat in info["features"]:
        magnitude = rng.uniform(0.05, 1.0) * info["scale"]
        sign = rng.choice((1, -1))
        text = f"{sign * magnitude:.2f}"
        if float(text) == 0:
            text = f"{sign * 0.01:.2f}"
        features.append(FeatureContribution(feat.name, feat.values(rng), text))
    n = rng.choice((2, 3, 3, 4))
    return Explanation(tuple(select_top_n(features, n)), DEFAULT_FORMAT, info["context"])


def _phrase(domain: str, name: str) -> str:
    for feat in _DOMAINS[domain]["features"]:
        if feat.name == name:
            return feat.phrase
    return name


def _join(items: list[str]) -> str:
    if len(items) == 1:
        return items[0]
    return ", ".join(items[:-1]) + " and " + items[-1]


# Each style renders a narrative for one dataset from its explanation.

def _style_house_1(expl: Explanation) -> str:
    sentences = []
    for f in expl.features:
        size = "larger" if f.contribution > 0 else "smaller"
        verb = "increased" if f.contribution > 0 else "reduced"
        sentences.append(
            f"The relatively {size} {_phrase('house', f.name)} in this house {verb} its "
            f"predicted price by {_about('house', f.contribution)}."
        )
    return " ".join(sentences)


def _style_house_2(expl: Explanation) -> str:
    ups = [f for f in expl.features if f.contribution > 0]
    downs = [f for f in expl.features if f.contribution <= 0]
    parts = []
    for group, verb in ((ups, "increases"), (downs, "decreases")):
        if group:
            facts = _join([f"the {_phrase('house', f.name)} is {f.value}" for f in group])
            parts.append(f"The SHAP value indicates that the house price {verb} because {facts}.")
    return " ".join(parts)


def _style_house_3(expl: Explanation) -> str:
    more = sum(f.contribution for f in expl.features) > 0
    facts = []
    for f in expl.features:
        amount = "more" if f.contribution > 0 else "less"
        facts.append(f"{amount} {_phrase('house', f.name)} ({f.value})")
    return f"This house is {'more expensive' if more else 'cheaper'} because it has {_join(facts)}."


def _style_mush_1(expl: Explanation) -> str:
    poisonous = sum(f.contribution for f in expl.features) > 0
    facts = _join([f"{f.value} {_phrase('mush', f.name)}" for f in expl.features])
    if poisonous:
        return f"This mushroom is more likely to be poisonous because of its {facts}. Be careful!"
    return (f"This mushroom is less likely to be poisonous because of its {facts}. "
            "Confirm with an expert before eating it.")


def _described(f: FeatureContribution) -> str:
    return f"{f.value} {_phrase('mush', f.name)}"


def _style_mush_2(expl: Explanation) -> str:
    safe = [f for f in expl.features if f.contribution <= 0]
    risky = [f for f in expl.features if f.contribution > 0]
    parts = []
    if safe:
        parts.append(f"The {_join([_described(f) for f in safe])} "
                     "suggest the mushroom is less likely to be poisonous")
    if risky:
        clause = (f"the {_join([_described(f) for f in risky])} "
                  "indicates a higher risk of toxicity")
        parts.append(f"but {clause}" if parts else clause[0].upper() + clause[1:])
    return ", ".join(parts) + "."


def _style_pdf_1(expl: Explanation) -> str:
    malware = sum(f.contribution for f in expl.features) > 0
    facts = _join([f"a {_phrase('pdf', f.name)} of {f.value}" for f in expl.features])
    verdict = "more likely" if malware else "less likely"
    return f"The PDF file is {verdict} to contain malware because it has {facts}."


def _style_pdf_2(expl: Explanation) -> str:
    facts = _join([f"the {_phrase('pdf', f.name)} ({f.value})" for f in expl.features])
    malware = sum(f.contribution for f in expl.features) > 0
    verdict = "contains malware" if malware else "is safe"
    return f"{facts[0].upper() + facts[1:]} suggest the PDF {verdict}."


def _style_student_1(expl: Explanation) -> str:
    passing = sum(f.contribution for f in expl.features) > 0
    facts = _join([f"their {_phrase('student', f.name)} is {f.value}" for f in expl.features])
    verdict = "more likely" if passing else "less likely"
    return (f"We believe this child is {verdict} to pass because {facts}, and we have seen "
            "that this pattern matters for other students too.")


def _style_student_2(expl: Explanation) -> str:
    sentences = []
    for i, f in enumerate(expl.features):
        effect = ("indicates a higher probability of passing" if f.contribution > 0
                  else "suggests the student is less likely to pass the class")
        lead = "But, the" if i and f.contribution > 0 else "The"
        sentences.append(f"{lead} {_phrase('student', f.name)} ({f.value}) {effect}.")
    return " ".join(sentences)


STYLES = {
    "house-1": _style_house_1,
    "house-2": _style_house_2,
    "house-3": _style_house_3,
    "mush-1": _style_mush_1,
    "mush-2": _style_mush_2,
    "pdf-1": _style_pdf_1,
    "pdf-2": _style_pdf_2,
    "student-1": _style_student_1,
    "student-2": _style_student_2,
}


def build_fixture_datasets(seed: int = 0, narratives: int = HAND_WRITTEN) -> list[ExemplarDataset]:
    datasets = []
    for dataset_id, size in DATASET_SIZES.items():
        rng = random.Random(f"{dataset_id}:{seed}")
        domain = dataset_id.split("-")[0]
        narrated = set(rng.sample(range(size), min(narratives, size)))
        entries = []
        for i in range(size):
            expl = _explanation(domain, rng)
            text = STYLES[dataset_id](expl) if i in narrated else None
            entries.append(ExemplarEntry(expl, text, f"{dataset_id}-{i + 1}"))
        datasets.append(ExemplarDataset(dataset_id, entries))
    return datasets


def _signed(f: FeatureContribution) -> str:
    return "increases" if f.contribution > 0 else "decreases"


def _flip(f: FeatureContribution) -> str:
    return "decreases" if f.contribution > 0 else "increases"


def _validation_narrative(kind: str, expl: Explanation, rng: random.Random) -> str:
    feats = list(expl.features)
    if kind in ("Accurate with all values", "All features, values, and contributions"):
        return " ".join(
            f"The {f.name} of {f.value} {_signed(f)} the prediction by {abs(f.contribution):g}."
            for f in feats
        )
    if kind == "Accurate with some values":
        head, rest = feats[0], feats[1:]
        text = f"The {head.name} of {head.value} {_signed(head)} the prediction."
        return text + "".join(f" The {f.name} also {_signed(f)} it." for f in rest)
    if kind == "Accurate with approximate values":
        return " ".join(
            f"The {f.name} of {f.value} {_signed(f)} the prediction by roughly "
            f"{float(f'{abs(f.contribution):.1g}'):g}."
            for f in feats
        )
    if kind == "Error in values":
        wrong = rng.randrange(len(feats))
        parts = []
        for i, f in enumerate(feats):
            value = f.value
            if i == wrong:
                value = f"{value}0" if value[-1].isdigit() else f"not {value}"
            parts.append(f"The {f.name} of {value} {_signed(f)} the prediction.")
        return " ".join(parts)
    if kind == "Error in contribution direction":
        wrong = rng.randrange(len(feats))
        return " ".join(
            f"The {f.name} of {f.value} {_flip(f) if i == wrong else _signed(f)} the prediction."
            for i, f in enumerate(feats)
        )
    if kind == "All features, values, and contribution directions":
        return " ".join(f"The {f.name} of {f.value} {_signed(f)} the prediction." for f in feats)
    if kind == "All features, but not all values or contribution directions":
        head, rest = feats[0], feats[1:]
        return (f"The {head.name} of {head.value} {_signed(head)} the prediction. "
                f"The {_join([f.name for f in rest])} also played a role.")
    if kind == "Missing one or more features":
        kept = feats[:-1]
        return " ".join(f"The {f.name} of {f.value} {_signed(f)} the prediction." for f in kept)
    raise ValueError(f"unknown validation type {kind!r}")


def build_validation_sets(seed: int = 0) -> dict[str, list[ValidationEntry]]:
    sets: dict[str, list[ValidationEntry]] = {}
    domains = sorted(_DOMAINS)
    for metric, rows in VALIDATION_COUNTS.items():
        rng = random.Random(f"validation-{metric}:{seed}")
        entries = []
        for kind, grade, count in rows:
            for _ in range(count):
                expl = _explanation(rng.choice(domains), rng)
                entries.append(
                    ValidationEntry(expl, _validation_narrative(kind, expl, rng), metric, grade, kind)
                )
        sets[metric] = entries
    return sets


def generate_fixture_datasets(
    out_dir: str | Path, seed: int = 0, narratives: int = HAND_WRITTEN
) -> list[Path]:
    """Write ``datasets/<id>.jsonl`` and ``validation/<metric>.jsonl`` under ``out_dir``."""
    out_dir = Path(out_dir)
    paths = [
        save_dataset(d, out_dir / "datasets" / f"{d.id}.jsonl")
        for d in build_fixture_datasets(seed, narratives)
    ]
    for metric, entries in build_validation_sets(seed).items():
        paths.append(save_validation(entries, out_dir / "validation" / f"{metric}.jsonl"))
    return paths


def shipped_fixtures() -> Path:
    """Directory of the fixture files bundled with the package (seed 0)."""
    return Path(str(resources.files("explingo") / "data"))
