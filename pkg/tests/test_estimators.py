import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from _support import HOUSE, grader_backend, is_narrator_prompt
from explingo.backends import MockBackend
from explingo.datasets import ExemplarDataset, ExemplarEntry
from explingo.estimators import Grader, Narrator
from explingo.explanation import Explanation, FeatureContribution
from explingo.grading import GradeWeights


def dataset(narrated=6, plain=4):
    entries = [ExemplarEntry(Explanation.from_text(f"(a, {i}, 0.5), (b, x, -0.2)"),
                             " ".join(["word"] * (4 + i)), f"n{i}") for i in range(narrated)]
    entries += [ExemplarEntry(Explanation.from_text(f"(q, {i}, 1.5)"), None, f"p{i}") for i in range(plain)]
    return ExemplarDataset("toy", entries)


def test_params_round_trip_and_clone():
    grader = Grader(backend=grader_backend(), repeats=3, l_max=12.0)
    assert grader.get_params()["repeats"] == 3
    copy = clone(grader)
    assert copy.get_params()["l_max"] == 12.0
    narrator = Narrator(backend=grader_backend(), h=2, b=1, grader=grader)
    assert narrator.set_params(h=3).h == 3
    assert "grader__repeats" in narrator.get_params(deep=True)
    assert clone(narrator).h == 3


def test_grader_requires_fit():
    with pytest.raises(NotFittedError):
        Grader(backend=grader_backend()).grade(HOUSE, "text")


def test_grader_fit_calibrates_and_picks_exemplars():
    grader = Grader(backend=grader_backend(), fluency_k=3).fit(dataset())
    # longest exemplar: 9 words over 2 features
    assert grader.conciseness_.l_max == pytest.approx(0.9 * 9 / 2)
    assert len(grader.fluency_exemplars_) == 3
    assert grader.weights_ == GradeWeights()


def test_grader_fit_with_explicit_exemplars_only():
    grader = Grader(backend=grader_backend(), l_max=10.0).fit(fluency_exemplars=["one", "two"])
    assert grader.fluency_exemplars_ == ["one", "two"]
    with pytest.raises(ValueError):
        Grader(backend=grader_backend()).fit(fluency_exemplars=["one"])


def test_grader_transform_and_predict():
    grader = Grader(backend=grader_backend(), repeats=2, l_max=50.0).fit(fluency_exemplars=["ex"])
    pairs = [(HOUSE, "A narrative."), ("(a, 1, 2)", "Another narrative.")]
    reports = grader.transform(pairs)
    assert [r.total for r in reports] == [16.0, 16.0]
    np.testing.assert_array_equal(grader.predict(pairs), np.array([16.0, 16.0]))
    assert grader.grade_metric("accuracy", HOUSE, "A narrative.").weighted == 4.0
    with pytest.raises(ValueError):
        grader.grade_metric("style", HOUSE, "x")


def test_grader_input_validation():
    grader = Grader(backend=grader_backend(), l_max=5.0).fit(fluency_exemplars=["ex"])
    with pytest.raises(TypeError):
        grader.transform([(HOUSE, 5)])
    with pytest.raises(ValueError):
        grader.transform([ExemplarEntry(HOUSE, None, "x")])
    with pytest.raises(ValueError):
        Grader().fit(dataset())
    with pytest.raises(ValueError):
        Grader(backend=grader_backend(), repeats=0).fit(dataset())


def test_narrator_zero_shot_transform():
    narrator = Narrator(backend=grader_backend(narrative="  Scripted story.  ")).fit()
    inputs = [HOUSE, "(a, 1, 2)", [("a", "1", 2.0)], {"a": ("1", 2.0)}, [FeatureContribution("a", "1", 2.0)]]
    assert narrator.transform(inputs) == ["Scripted story."] * 5
    assert narrator.transform("(a, 1, 2)") == ["Scripted story."]


def test_narrator_num_features_truncates():
    prompts = []

    def respond(request):
        prompts.append(request.prompt)
        return "ok"

    Narrator(backend=MockBackend(responder=respond), num_features=1).fit().narrate(HOUSE)
    assert "Explanation: (Above ground living area square feet, 1256, -12527.46)\n" in prompts[0]


def test_narrator_hand_written_selection_is_seeded():
    a = Narrator(backend=grader_backend(), h=3, seed=4).fit(dataset())
    b = Narrator(backend=grader_backend(), h=3, seed=4).fit(dataset())
    assert a.examples_ == b.examples_
    assert len(a.examples_) == 3
    with pytest.raises(ValueError):
        Narrator(backend=grader_backend(), h=7).fit(dataset())


def test_narrator_bootstrap_with_grader(tmp_path):
    backend = grader_backend(narrative="word word")
    grader = Grader(backend=backend, repeats=1)
    narrator = Narrator(backend=backend, h=1, b=2, grader=grader, cache_dir=tmp_path).fit(dataset())
    assert [e.origin for e in narrator.examples_] == ["hand_written", "bootstrapped", "bootstrapped"]
    assert narrator.bootstrap_result_.attempts == 2
    assert len(list(tmp_path.glob("*.jsonl"))) == 1
    again = Narrator(backend=MockBackend(), h=1, b=2, grader=grader, cache_dir=tmp_path).fit(dataset())
    assert again.examples_ == narrator.examples_


def test_narrator_bootstrap_needs_grader():
    with pytest.raises(ValueError):
        Narrator(backend=grader_backend(), b=1).fit(dataset())


def test_narrator_requires_fit():
    with pytest.raises(NotFittedError):
        Narrator(backend=grader_backend()).transform([HOUSE])


def test_in_pipeline_like_usage():
    backend = MockBackend(responder=lambda r: "story" if is_narrator_prompt(r.prompt) else None)
    narrator = Narrator(backend=backend)
    assert narrator.fit_transform([HOUSE]) == ["story"]


def test_fit_with_explanations_and_narratives():
    X = ["(a, 1, 2)", "(b, 2, -1)", "(c, 3, 0.5)"]
    y = ["A raised it.", None, "C nudged it up a little."]
    narrator = Narrator(backend=grader_backend(), h=2).fit(X, y)
    assert sorted(e.narrative for e in narrator.examples_) == ["A raised it.", "C nudged it up a little."]
    grader = Grader(backend=grader_backend()).fit(X, y)
    assert grader.conciseness_.l_max == pytest.approx(0.9 * 6)
    with pytest.raises(ValueError):
        Narrator(backend=grader_backend()).fit(X, y[:2])
