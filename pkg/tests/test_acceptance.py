"""The ten acceptance criteria. Each test prints one PASS/FAIL line; the lines
are repeated in the terminal summary."""

import contextlib
import random
import socket
import time
from fractions import Fraction
from pathlib import Path

import pytest

import conftest
from _support import HOUSE
from golden.make_golden import golden_prompts
from explingo.backends import (
    BackendConfig,
    CompletionRequest,
    HTTPBackend,
    MockBackend,
    RetryPolicy,
    TransportError,
    make_backend,
)
from explingo.bootstrap import BootstrapError, BootstrapThresholds, bootstrap_examples
from explingo.cli import main
from explingo.datasets import ExemplarEntry, load_datasets
from explingo.explanation import Explanation, FeatureContribution, select_top_n
from explingo.fixtures import shipped_fixtures
from explingo.grading import (
    GradeReport,
    GradeWeights,
    MetricGrade,
    conciseness_grade,
    grade_with_prompt,
    total_grade,
)
from explingo.harness import (
    DEFAULT_SETTINGS,
    ConfusionMatrix,
    SweepOptions,
    fluency_cross_matrix,
    run_sweep,
    write_sweep_reports,
)
from explingo.narrator import NarratorConfig
from explingo.prompts import (
    FewShotExample,
    assemble_accuracy_prompt,
    assemble_completeness_prompt,
    assemble_fluency_prompt,
)

GOLDEN = Path(__file__).parent / "golden"
DATASETS_DIR = shipped_fixtures() / "datasets"


@contextlib.contextmanager
def criterion(number, description):
    line = f"criterion {number}: {description}"
    try:
        yield
    except BaseException:
        _emit(f"FAIL {line}")
        raise
    _emit(f"PASS {line}")


def _emit(line):
    conftest.ACCEPTANCE_LINES.append(line)
    print(line)


# 1 -------------------------------------------------------------------------

def test_criterion_1_conciseness_formula():
    with criterion(1, "conciseness boundaries, continuity and 10^4 random cases"):
        start = time.perf_counter()
        for n, l_max in [(1, 1.0), (3, 15.0), (7, 2.5), (4, 0.3)]:
            budget = n * l_max
            assert conciseness_grade(budget, n, l_max) == 4.0
            assert conciseness_grade(2 * budget, n, l_max) == 0.0
            assert abs(conciseness_grade(1.5 * budget, n, l_max) - 2.0) <= 1e-12
            eps = budget * 1e-13
            assert abs(conciseness_grade(budget + eps, n, l_max) - 4.0) <= 1e-12
            assert abs(conciseness_grade(2 * budget - eps, n, l_max) - 0.0) <= 1e-12
        rng = random.Random(1)
        for _ in range(10_000):
            n = rng.randint(1, 20)
            l_max = rng.uniform(0.1, 40.0)
            length = rng.uniform(0.0, 3 * n * l_max)
            ratio = length / (n * l_max)
            expected = 4.0 if ratio <= 1 else 0.0 if ratio >= 2 else 8.0 - 4.0 * ratio
            got = conciseness_grade(length, n, l_max)
            assert abs(got - expected) <= 1e-12
            assert 0.0 <= got <= 4.0
        assert time.perf_counter() - start < 1.0


# 2 -------------------------------------------------------------------------

def test_criterion_2_total_grade():
    with criterion(2, "total grade 16 at the maximum and linear in the raw grades"):
        start = time.perf_counter()
        weights = GradeWeights(accuracy=4, fluency=1, completeness=2, conciseness=1)
        assert total_grade(accuracy=1, completeness=2, fluency=4, conciseness=4, weights=weights) == 16
        rng = random.Random(2)
        for _ in range(10_000):
            w = {k: rng.uniform(0, 5) for k in ("accuracy", "completeness", "fluency", "conciseness")}
            weights = GradeWeights(**w)
            x = {k: rng.uniform(0, 4) for k in w}
            y = {k: rng.uniform(0, 4) for k in w}
            a, b = rng.uniform(-3, 3), rng.uniform(-3, 3)
            mix = {k: a * x[k] + b * y[k] for k in w}
            lhs = total_grade(**mix, weights=weights)
            rhs = a * total_grade(**x, weights=weights) + b * total_grade(**y, weights=weights)
            assert abs(lhs - rhs) <= 1e-12 * max(1.0, abs(lhs))
            assert abs(total_grade(**x, weights=weights) - sum(w[k] * x[k] for k in w)) <= 1e-12 * 100
        assert time.perf_counter() - start < 1.0


# 3 -------------------------------------------------------------------------

def test_criterion_3_agreement_arithmetic():
    with criterion(3, "agreement 41/44 (accuracy) and 24/26 (completeness) as rationals"):
        # rows are the human label, columns the grader's rounded grade
        accuracy = ConfusionMatrix("accuracy", [[12, 1], [2, 29]])
        completeness = ConfusionMatrix("completeness", [[10, 0, 0], [0, 8, 1], [0, 1, 6]])
        assert accuracy.agreement_fraction == Fraction(41, 44)
        assert completeness.agreement_fraction == Fraction(24, 26)
        assert f"{float(accuracy.agreement_fraction):.1%}" == "93.2%"
        assert f"{float(completeness.agreement_fraction):.1%}" == "92.3%"


# 4 -------------------------------------------------------------------------

# (metric, samples, hand-computed mean, spread alert)
REPEAT_CASES = [
    ("accuracy", [1, 1, 1, 1, 1], 1.0, False),
    ("accuracy", [0, 0, 0, 0, 0], 0.0, False),
    ("accuracy", [1, 0, 1, 1, 1], 0.8, False),
    ("accuracy", [0, 1], 0.5, False),
    ("accuracy", [1], 1.0, False),
    ("completeness", [2, 2, 2, 2, 2], 2.0, False),
    ("completeness", [2, 1, 2, 1, 2], 1.6, False),
    ("completeness", [0, 2], 1.0, True),
    ("completeness", [2, 2, 0, 2, 2], 1.6, True),
    ("completeness", [1, 0, 1], 2 / 3, False),
    ("completeness", [0, 1, 2], 1.0, True),
    ("fluency", [4, 4, 4, 4, 4], 4.0, False),
    ("fluency", [3, 4, 3, 4, 3], 3.4, False),
    ("fluency", [2, 4, 3, 3, 3], 3.0, True),
    ("fluency", [4, 3], 3.5, False),
    ("fluency", [1, 3], 2.0, True),
    ("fluency", [0, 4, 4, 4, 4], 3.2, True),
    ("fluency", [2, 2, 2], 2.0, False),
    ("fluency", [0, 1, 0, 1, 0], 0.4, False),
    ("fluency", [3, 3, 3, 3], 3.0, False),
    ("fluency", [4, 2, 4, 4, 4, 4, 4], 26 / 7, True),
    ("completeness", [1, 1, 1, 1, 2], 1.2, False),
]


def test_criterion_4_repeated_grading():
    with criterion(4, f"mean and spread alert on {len(REPEAT_CASES)} scripted sample sequences"):
        assert len(REPEAT_CASES) >= 20
        spreads = {max(s) - min(s) for _, s, _, _ in REPEAT_CASES}
        assert {1, 2} <= spreads
        top = {"accuracy": 1, "completeness": 2, "fluency": 4}
        for i, (metric, samples, mean, alert) in enumerate(REPEAT_CASES):
            prompt = f"case {i}"
            backend = MockBackend(script={prompt: [str(s) for s in samples]})
            grade = grade_with_prompt(metric, prompt, backend, repeats=len(samples))
            assert list(grade.raw_samples) == samples
            assert abs(grade.raw_mean - mean) <= 1e-12
            assert abs(grade.weighted - mean * 4 / top[metric]) <= 1e-12
            assert grade.spread_alert is alert


# 5 -------------------------------------------------------------------------

SCORE_CHOICES = [
    (4.0, 4.0, 4.0, 4.0),
    (4.0, 4.0, 4.0, 3.5),
    (4.0, 4.0, 4.0, 3.4),
    (3.0, 4.0, 4.0, 4.0),
    (4.0, 2.0, 4.0, 4.0),
    (4.0, 4.0, 3.8, 4.0),
    (0.0, 0.0, 0.0, 0.0),
]


def _report(accuracy, completeness, fluency, conciseness):
    return GradeReport.build(
        MetricGrade.from_samples("accuracy", [accuracy / 4]),
        MetricGrade.from_samples("completeness", [completeness / 2]),
        MetricGrade.from_samples("fluency", [fluency]),
        MetricGrade("conciseness", (conciseness,), conciseness, conciseness, False),
    )


def _brute_force(scores, excluded, b, max_attempts):
    pool = [i for i in range(len(scores)) if i not in excluded][:max_attempts]
    accepted, tried = [], 0
    for i in pool:
        tried += 1
        a, c, f, s = scores[i]
        if a >= 4.0 and c >= 4.0 and f >= 4.0 and s >= 3.5:
            accepted.append(i)
        if len(accepted) == b:
            break
    return accepted, tried


def test_criterion_5_bootstrap_filter():
    with criterion(5, "bootstrap admission equals a brute-force filter on 50 random scripts"):
        rng = random.Random(5)
        outcomes = {"full": 0, "partial": 0, "error": 0}
        for _ in range(50):
            n = rng.randint(1, 14)
            scores = [rng.choice(SCORE_CHOICES) for _ in range(n)]
            entries = [ExemplarEntry(Explanation.from_text(f"(f, {i}, 1.0)"), f"hand {i}", f"e{i}")
                       for i in range(n)]
            excluded = set(rng.sample(range(n), rng.randint(0, min(2, n - 1))))
            hand_written = [FewShotExample(entries[i].explanation, entries[i].narrative)
                            for i in sorted(excluded)]
            b = rng.randint(1, 4)
            max_attempts = rng.choice([None, rng.randint(1, 12)])
            expected, tried = _brute_force(scores, excluded, b, max_attempts or 4 * b)
            seen = []

            def grade(expl, narrative):
                i = int(expl.features[0].value)
                seen.append(i)
                return _report(*scores[i])

            run = lambda: bootstrap_examples(
                entries, NarratorConfig("BP1", len(hand_written), b),
                backend=MockBackend(default="A narrative."), grade=grade,
                hand_written=hand_written, thresholds=BootstrapThresholds(),
                max_attempts=max_attempts,
            )
            if not expected:
                with pytest.raises(BootstrapError):
                    run()
                outcomes["error"] += 1
                continue
            result = run()
            got = [int(ex.explanation.features[0].value) for ex in result.accepted]
            assert got == expected
            assert result.attempts == tried
            assert seen == [i for i in range(n) if i not in excluded][:tried]
            outcomes["full" if len(got) == b else "partial"] += 1
        assert all(outcomes.values()), outcomes


# 6 -------------------------------------------------------------------------

RUBRIC_SENTENCES = {
    "accuracy": "Contains one or more errors in value or contribution direction",
    "completeness": "Start by listing out all the features",
    "fluency": "0: Very dissimilar",
}


def test_criterion_6_prompt_assembly():
    with criterion(6, "golden bytes for 9 narrator and 3 grader prompts, verbatim rubrics"):
        prompts = golden_prompts()
        narrator = [k for k in prompts if k.startswith("narrator_")]
        grader = [k for k in prompts if k.startswith("grader_")]
        assert len(narrator) == 9 and len(grader) == 3
        for name, text in prompts.items():
            assert text.encode("utf-8") == (GOLDEN / name).read_bytes(), name
        narrative = "A narrative."
        assembled = {
            "accuracy": assemble_accuracy_prompt(HOUSE, narrative).text,
            "completeness": assemble_completeness_prompt(HOUSE, narrative).text,
            "fluency": assemble_fluency_prompt(narrative, ["An exemplar."]).text,
        }
        for metric, sentence in RUBRIC_SENTENCES.items():
            assert sentence in assembled[metric]
            assert sentence in (GOLDEN / f"grader_{metric}.txt").read_text(encoding="utf-8")


# 7 -------------------------------------------------------------------------

def test_criterion_7_top_n_selection():
    with criterion(7, "top-N equals a sort-and-truncate oracle on 10^3 explanations with ties"):
        rng = random.Random(7)
        ties = 0
        for case in range(1000):
            size = rng.randint(1, 25)
            magnitudes = [rng.choice([0.0, 0.5, 1.0, 2.25, 3.0]) if rng.random() < 0.6
                          else round(rng.uniform(0, 5), 3) for _ in range(size)]
            features = [FeatureContribution(f"f{i}", str(i), rng.choice([-1, 1]) * m)
                        for i, m in enumerate(magnitudes)]
            n = rng.randint(1, 30)
            # oracle: decorate with input position, full sort, truncate
            decorated = sorted((-abs(f.contribution), i) for i, f in enumerate(features))
            expected = [features[i] for _, i in decorated[:n]]
            assert select_top_n(features, n) == expected
            ties += len({abs(f.contribution) for f in features}) < size
        assert ties > 100


# 8 -------------------------------------------------------------------------

def _sweep_once(out_dir):
    datasets = load_datasets(DATASETS_DIR)
    backend = make_backend(BackendConfig(kind="mock"))
    result = run_sweep(datasets, DEFAULT_SETTINGS, backend, SweepOptions(cache_dir=None))
    paths = write_sweep_reports(result, out_dir)
    return datasets, {name: path.read_bytes() for name, path in paths.items()}


def test_criterion_8_desk_scale_sweep(tmp_path):
    with criterion(8, "9 datasets x 13 settings under the mock, < 60 s, byte-identical reruns"):
        start = time.perf_counter()
        datasets, first = _sweep_once(tmp_path / "run1")
        elapsed = time.perf_counter() - start
        assert len(datasets) == 9 and len(DEFAULT_SETTINGS) == 13
        assert elapsed < 60, f"sweep took {elapsed:.1f} s"
        _, second = _sweep_once(tmp_path / "run2")
        assert first == second
        settings_rows = first["sweep.csv"].decode().splitlines()
        dataset_rows = first["sweep_by_dataset.csv"].decode().splitlines()
        assert len(settings_rows) == 1 + 13
        assert len(dataset_rows) == 1 + 9


# 9 -------------------------------------------------------------------------

def style_aware_mock(datasets):
    owner = {e.narrative: d.id for d in datasets for e in d.entries if e.has_narrative}

    def respond(request):
        body = request.prompt.split("these examples:\n\n", 1)[1]
        exemplar_text, rest = body.split("\n\nNarrative: ", 1)
        narrative = rest.split("\n\nRubric:", 1)[0]
        exemplars = {owner[x] for x in exemplar_text.split("\n\n")}
        return "4" if exemplars == {owner[narrative]} else "2"

    return MockBackend(responder=respond)


def test_criterion_9_fluency_diagonal():
    with criterion(9, "style-aware mock puts every row maximum on the diagonal, no flags"):
        datasets = load_datasets(DATASETS_DIR)
        matrix = fluency_cross_matrix(datasets, style_aware_mock(datasets), k=5, repeats=2)
        assert len(matrix.ids) == 9
        for i, row in enumerate(matrix.values):
            assert row[i] == max(row) == 4.0
            assert all(v <= 2 for j, v in enumerate(row) if j != i)
        assert matrix.flags == []


# 10 ------------------------------------------------------------------------

def test_criterion_10_offline_guarantee(tmp_path, capsys):
    with criterion(10, "outbound connections are blocked and the mock path runs end to end"):
        with socket.socket() as sock:
            with pytest.raises(conftest.NetworkBlocked):
                sock.connect(("203.0.113.7", 443))
        http = HTTPBackend(api_base="http://203.0.113.7/v1", retry=RetryPolicy(1, 0.0), timeout_s=1)
        with pytest.raises(TransportError):
            http.complete(CompletionRequest("hello"))
        entry = tmp_path / "entry.json"
        entry.write_text('{"explanation": "(size, 2000, 12000.5), (age, 30, -500.25)"}')
        code = main(["narrate", "--entry", str(entry), "--dataset", str(DATASETS_DIR / "house-1.jsonl"),
                     "--grade", "--repeats", "2", "--json"])
        out = capsys.readouterr().out
        assert code in (0, 2)
        assert '"total"' in out
