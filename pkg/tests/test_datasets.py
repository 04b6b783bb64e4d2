import filecmp
import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from explingo.datasets import (
    ERROR_TYPES,
    DatasetError,
    ExemplarDataset,
    ExemplarEntry,
    ValidationEntry,
    load_dataset,
    load_datasets,
    load_validation,
    save_dataset,
    split_pools,
)
from explingo.explanation import Explanation
from explingo.fixtures import (
    DATASET_SIZES,
    STYLES,
    VALIDATION_COUNTS,
    build_fixture_datasets,
    generate_fixture_datasets,
    shipped_fixtures,
)

EXPL = Explanation.from_text("(a, 1, 0.5), (b, x, -0.2)", context="ctx")


def narrated_dataset(n_narrated, n_plain=0, dataset_id="toy"):
    entries = [ExemplarEntry(EXPL, f"narrative {i}", f"n{i}") for i in range(n_narrated)]
    entries += [ExemplarEntry(EXPL, None, f"p{i}") for i in range(n_plain)]
    return ExemplarDataset(dataset_id, entries)


def write_lines(path, lines):
    path.write_text("".join(line + "\n" for line in lines))
    return path


def test_shipped_fixture_counts():
    datasets = load_datasets(shipped_fixtures() / "datasets")
    assert {d.id: len(d) for d in datasets} == DATASET_SIZES
    assert len(load_dataset(shipped_fixtures() / "datasets" / "house-1.jsonl")) == 35
    for d in datasets:
        assert d.hand_written_count == 5


def test_shipped_validation_taxonomy():
    for metric, rows in VALIDATION_COUNTS.items():
        entries = load_validation(shipped_fixtures() / "validation" / f"{metric}.jsonl")
        assert len(entries) == sum(count for _, _, count in rows)
        for kind, grade, count in rows:
            matching = [e for e in entries if e.error_type == kind]
            assert len(matching) == count
            assert {e.human_grade for e in matching} == {grade}
    assert len(load_validation(shipped_fixtures() / "validation" / "accuracy.jsonl")) == 44
    assert len(load_validation(shipped_fixtures() / "validation" / "completeness.jsonl")) == 26


def test_shipped_fixtures_match_generator(tmp_path):
    generate_fixture_datasets(tmp_path, seed=0)
    for sub in ("datasets", "validation"):
        shipped = shipped_fixtures() / sub
        names = sorted(p.name for p in shipped.glob("*.jsonl"))
        assert names == sorted(p.name for p in (tmp_path / sub).glob("*.jsonl"))
        for name in names:
            assert filecmp.cmp(shipped / name, tmp_path / sub / name, shallow=False), name


def test_fixture_styles_differ_between_datasets():
    for d in build_fixture_datasets():
        for entry in d.narrated:
            assert STYLES[d.id](entry.explanation) == entry.narrative
            others = {STYLES[o](entry.explanation) for o in STYLES if o != d.id}
            assert entry.narrative not in others


def test_fixture_generation_is_seeded():
    a = [d.digest() for d in build_fixture_datasets(seed=1)]
    assert a == [d.digest() for d in build_fixture_datasets(seed=1)]
    assert a != [d.digest() for d in build_fixture_datasets(seed=2)]


def test_round_trip(tmp_path):
    original = build_fixture_datasets()[3]
    path = save_dataset(original, tmp_path / f"{original.id}.jsonl")
    assert load_dataset(path) == original


@given(st.lists(st.tuples(st.booleans(), st.sampled_from(["2.5", "-0.30", "1e-3", "7"])), min_size=1, max_size=8))
def test_round_trip_property(tmp_path_factory, rows):
    entries = [
        ExemplarEntry(Explanation.from_text(f"(f{i}, v{i}, {c})", context=f"c{i}"),
                      f"story {i}" if narrated else None, f"e{i}", {"k": i} if narrated else None)
        for i, (narrated, c) in enumerate(rows)
    ]
    dataset = ExemplarDataset("prop", entries)
    path = save_dataset(dataset, tmp_path_factory.mktemp("rt") / "prop.jsonl")
    loaded = load_dataset(path)
    assert loaded == dataset
    assert [e.labels for e in loaded.entries] == [e.labels for e in entries]


def test_default_ids_use_line_numbers(tmp_path):
    path = write_lines(tmp_path / "d.jsonl", [json.dumps({"explanation": "(a, 1, 2)"}), "",
                                                json.dumps({"explanation": "(b, 1, 2)"})])
    assert [e.id for e in load_dataset(path).entries] == ["d-1", "d-3"]


def test_empty_file_is_an_error(tmp_path):
    path = tmp_path / "empty.jsonl"
    path.write_text("\n")
    with pytest.raises(DatasetError, match="empty"):
        load_dataset(path)


@pytest.mark.parametrize(
    "line, message",
    [
        ("{not json", "invalid JSON"),
        ("[1, 2]", "JSON object"),
        ('{"explanation": "(a, 1)"}', "malformed explanation"),
        ('{"explanation": 5}', "'explanation' must be a string"),
        ('{"explanation": "(a, 1, 2)", "colour": "red"}', "unknown fields"),
        ('{"explanation": "(a, 1, 2)", "narrative": 3}', "'narrative' must be"),
        ('{"explanation": "(a, 1, 2)", "labels": []}', "'labels' must be"),
    ],
)
def test_schema_errors_report_line_numbers(tmp_path, line, message):
    path = write_lines(tmp_path / "bad.jsonl", [json.dumps({"explanation": "(a, 1, 2)"}), line])
    with pytest.raises(DatasetError, match=message) as info:
        load_dataset(path)
    assert "bad.jsonl:2" in str(info.value)


def test_duplicate_ids_rejected(tmp_path):
    line = json.dumps({"id": "x", "explanation": "(a, 1, 2)"})
    with pytest.raises(DatasetError, match="duplicate"):
        load_dataset(write_lines(tmp_path / "dup.jsonl", [line, line]))


def test_missing_file():
    with pytest.raises(DatasetError, match="not found"):
        load_dataset("/nonexistent/file.jsonl")


def test_validation_entry_checks():
    ValidationEntry(EXPL, "n", "accuracy", 0, "Error in contribution direction")
    with pytest.raises(DatasetError):
        ValidationEntry(EXPL, "n", "accuracy", 2, "Error in values")
    with pytest.raises(DatasetError):
        ValidationEntry(EXPL, "n", "accuracy", 1, "Error in values")
    with pytest.raises(DatasetError):
        ValidationEntry(EXPL, "n", "fluency", 1, "Error in values")
    with pytest.raises(DatasetError):
        ValidationEntry(EXPL, "n", "completeness", 1, "Missing the point")
    for metric, kinds in ERROR_TYPES.items():
        for kind, grade in kinds.items():
            assert ValidationEntry(EXPL, "n", metric, grade, kind).human_grade == grade


def test_split_1_5_4():
    pools = split_pools(narrated_dataset(10, 3), h=1, fluency_k=5, seed=0)
    assert (len(pools.few_shot), len(pools.fluency), len(pools.evaluation)) == (1, 5, 4)
    ids = [{e.id for e in p} for p in (pools.few_shot, pools.fluency, pools.evaluation)]
    assert not (ids[0] & ids[1] or ids[0] & ids[2] or ids[1] & ids[2])


def test_split_h0_and_insufficient():
    assert split_pools(narrated_dataset(6), h=0).few_shot == ()
    with pytest.raises(DatasetError):
        split_pools(narrated_dataset(5), h=1, fluency_k=5)


def test_shared_pools_reuse_the_fluency_narratives():
    dataset = narrated_dataset(5, 10)
    pools = split_pools(dataset, h=3, fluency_k=5, shared=True)
    assert {e.id for e in pools.few_shot} <= {e.id for e in pools.fluency}
    assert len(pools.evaluation) == 10


@given(st.integers(5, 20), st.integers(0, 5), st.integers(1, 5), st.integers(0, 1000))
def test_split_disjoint_and_seeded(n, h, k, seed):
    dataset = narrated_dataset(n, 2)
    if h + k > n:
        with pytest.raises(DatasetError):
            split_pools(dataset, h, k, seed)
        return
    a = split_pools(dataset, h, k, seed)
    assert a == split_pools(dataset, h, k, seed)
    groups = [{e.id for e in p} for p in (a.few_shot, a.fluency, a.evaluation)]
    union = groups[0] | groups[1] | groups[2]
    assert sum(map(len, groups)) == len(union)
    assert union <= {e.id for e in dataset.narrated}
