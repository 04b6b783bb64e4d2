"""``explingo`` command line: narrate, grade, bootstrap, validate-grader,
fluency-matrix, sweep and fixtures.

Exit codes: 0 success, 1 operational error, 2 guardrail rejection.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path
from typing import Sequence

from .backends import BackendError, make_backend
from .bootstrap import BootstrapCache, BootstrapError, BootstrapThresholds
from .config import AppConfig, ConfigError, load_config
from .datasets import DatasetError, ExemplarDataset, load_dataset, load_datasets, load_validation
from .estimators import Grader, Narrator
from .explanation import DEFAULT_FORMAT, Explanation, ExplanationError
from .fixtures import generate_fixture_datasets, shipped_fixtures
from .grading import GradeReport, GradingError
from .harness import (
    DEFAULT_SETTINGS,
    SweepOptions,
    fluency_cross_matrix,
    run_sweep,
    select_best_setting,
    validate_grader,
    write_confusion_report,
    write_fluency_report,
    write_sweep_reports,
)
from .prompts import PromptTemplates

logger = logging.getLogger("explingo")

EXIT_OK, EXIT_ERROR, EXIT_GUARDRAIL = 0, 1, 2


class CLIError(RuntimeError):
    pass


def _common(parser: argparse.ArgumentParser) -> None:
    g = parser.add_argument_group("common options")
    g.add_argument("--config", help="YAML/JSON config file (else $EXPLINGO_CONFIG)")
    g.add_argument("--backend", choices=("http", "mock", "replay"))
    g.add_argument("--model")
    g.add_argument("--timeout", type=float, help="request timeout in seconds")
    g.add_argument("--mock-script", help="JSON script for the mock backend")
    g.add_argument("--cassette", help="JSONL cassette for the replay backend")
    g.add_argument("--record", action="store_true",
                   help="with --backend replay: call the live backend on misses and record")
    g.add_argument("--repeats", type=int, help="grader repeats per metric")
    g.add_argument("--seed", type=int)
    g.add_argument("--templates", help="directory of prompt template overrides")
    g.add_argument("--json", action="store_true", help="machine-readable output")
    g.add_argument("-v", "--verbose", action="store_true")


def _explanation_inputs(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--entry", help="JSON/JSONL file whose first record is the entry")
    parser.add_argument("--explanation", help='inline explanation "(name, value, c), ..."')
    parser.add_argument("--context", default=None)
    parser.add_argument("--format", dest="format_descriptor", default=None)
    parser.add_argument("--dataset", help="exemplar dataset JSONL (few-shot and fluency pool)")
    parser.add_argument("--exemplar", action="append", default=None,
                        help="fluency exemplar narrative (repeatable)")
    parser.add_argument("--l-max", type=float, help="conciseness words-per-feature budget")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="explingo", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("narrate", help="turn an explanation into a narrative")
    _common(p)
    _explanation_inputs(p)
    p.add_argument("--base-prompt")
    p.add_argument("--h", type=int)
    p.add_argument("--b", type=int)
    p.add_argument("--grade", action="store_true", help="grade the narrative and apply the guardrail")
    p.add_argument("--guardrail-min-total", type=float)
    p.add_argument("--guardrail-min-accuracy", type=float)

    p = sub.add_parser("grade", help="grade a narrative")
    _common(p)
    _explanation_inputs(p)
    p.add_argument("--narrative", help="narrative text (else taken from --entry)")
    p.add_argument("--metric", choices=("accuracy", "completeness", "fluency", "conciseness"))

    p = sub.add_parser("bootstrap", help="bootstrap few-shot examples for a dataset")
    _common(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--h", type=int)
    p.add_argument("--b", type=int)
    p.add_argument("--max-attempts", type=int)
    p.add_argument("--shuffle-seed", type=int)
    p.add_argument("--cache-dir")
    p.add_argument("--l-max", type=float)

    p = sub.add_parser("validate-grader", help="agreement of the grader with human labels")
    _common(p)
    p.add_argument("--metric", choices=("accuracy", "completeness"), required=True)
    p.add_argument("--validation", help="validation JSONL (default: shipped fixture)")
    p.add_argument("--out", help="report directory")

    p = sub.add_parser("fluency-matrix", help="fluency of each dataset against every exemplar set")
    _common(p)
    p.add_argument("--datasets-dir")
    p.add_argument("--fluency-k", type=int)
    p.add_argument("--out")

    p = sub.add_parser("sweep", help="run base-prompt x few-shot settings over datasets")
    _common(p)
    p.add_argument("--datasets-dir")
    p.add_argument("--dataset", action="append", help="dataset id within --datasets-dir")
    p.add_argument("--settings", help='e.g. "BP1:0:0,BP1:1:3" (default: the 13 standard settings)')
    p.add_argument("--out")
    p.add_argument("--l-max", type=float)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--no-cache", action="store_true")

    p = sub.add_parser("fixtures", help="write synthetic fixture datasets")
    _common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--narratives", type=int, default=5, help="hand-written narratives per dataset")
    return parser


def _overrides(args: argparse.Namespace) -> dict:
    backend = {
        "kind": args.backend,
        "model": args.model,
        "timeout_s": args.timeout,
        "script": args.mock_script,
        "cassette": args.cassette,
        "strict": False if args.record else None,
    }
    pools = {"seed": args.seed, "h": getattr(args, "h", None), "b": getattr(args, "b", None),
             "fluency_k": getattr(args, "fluency_k", None)}
    guard = {"min_total": getattr(args, "guardrail_min_total", None),
             "min_accuracy": getattr(args, "guardrail_min_accuracy", None)}
    return {
        "backend": backend,
        "repeats": args.repeats,
        "pools": pools,
        "narrator": {"base_prompt": getattr(args, "base_prompt", None)},
        "bootstrap": {"max_attempts": getattr(args, "max_attempts", None),
                      "shuffle_seed": getattr(args, "shuffle_seed", None)},
        "guardrail": guard,
        "conciseness": getattr(args, "l_max", None),
        "paths": {"templates": args.templates, "cache": getattr(args, "cache_dir", None)},
    }


def _read_entry(path: str) -> dict:
    text = Path(path).read_text(encoding="utf-8").strip()
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return json.loads(text.splitlines()[0])


def _target(args, config: AppConfig) -> tuple[Explanation, dict]:
    record: dict = {}
    if args.entry:
        record = _read_entry(args.entry)
    text = args.explanation or record.get("explanation")
    if not text:
        raise CLIError("give an explanation with --explanation or --entry")
    expl = Explanation.from_text(
        text,
        args.format_descriptor or record.get("format") or DEFAULT_FORMAT,
        args.context if args.context is not None else record.get("context", ""),
    )
    if config.narrator.num_features:
        expl = expl.top(config.narrator.num_features)
    return expl, record


def _grader(args, config: AppConfig, backend, dataset: ExemplarDataset | None) -> Grader:
    l_max = config.conciseness
    grader = Grader(backend=backend, repeats=config.repeats, weights=config.weights,
                    l_max=l_max, fluency_k=config.pools.fluency_k, seed=config.pools.seed,
                    temperature=config.narrator.temperature,
                    templates_dir=config.paths.templates)
    exemplars = getattr(args, "exemplar", None)
    if dataset is None and not exemplars:
        raise CLIError("grading needs fluency exemplars: pass --dataset or --exemplar")
    if dataset is None and l_max == "auto":
        raise CLIError("conciseness l_max is 'auto' but no --dataset was given; pass --l-max")
    grader.fit(dataset, fluency_exemplars=exemplars)
    return grader


def _emit(payload: dict, as_json: bool, human: str | None = None) -> None:
    if as_json or human is None:
        print(json.dumps(payload, indent=2, ensure_ascii=False))
    else:
        print(human)


def _guardrail(report: GradeReport, config: AppConfig) -> dict:
    passed = (report.total >= config.guardrail.min_total
              and report.accuracy.weighted >= config.guardrail.min_accuracy)
    return {"passed": passed, "min_total": config.guardrail.min_total,
            "min_accuracy": config.guardrail.min_accuracy}


def cmd_narrate(args, config: AppConfig) -> int:
    backend = make_backend(config.backend)
    expl, _ = _target(args, config)
    dataset = load_dataset(args.dataset) if args.dataset else None
    grader = None
    if args.grade or config.pools.b > 0:
        grader = _grader(args, config, backend, dataset)
    narrator = Narrator(
        backend=backend, base_prompt=config.narrator.base_prompt, h=config.pools.h,
        b=config.pools.b, temperature=config.narrator.temperature,
        max_tokens=config.narrator.max_tokens, seed=config.pools.seed, grader=grader,
        max_attempts=config.bootstrap.max_attempts, shuffle_seed=config.bootstrap.shuffle_seed,
        cache_dir=config.paths.cache, templates_dir=config.paths.templates,
    )
    if config.pools.h or config.pools.b:
        if dataset is None:
            raise CLIError("few-shot examples (h/b > 0) need --dataset")
        narrator.fit(dataset)
    else:
        narrator.fit()
    text = narrator.narrate(expl)
    if not args.grade:
        _emit({"narrative": text}, args.json, text)
        return EXIT_OK
    report = grader.grade(expl, text)
    guard = _guardrail(report, config)
    payload = {"narrative": text, "report": report.to_dict(), "guardrail": guard}
    if args.json:
        _emit(payload, True)
    else:
        print(text)
        print(json.dumps({"report": report.to_dict(), "guardrail": guard}, indent=2))
    return EXIT_OK if guard["passed"] else EXIT_GUARDRAIL


def cmd_grade(args, config: AppConfig) -> int:
    backend = make_backend(config.backend)
    expl, record = _target(args, config)
    narrative = args.narrative if args.narrative is not None else record.get("narrative")
    if not narrative:
        raise CLIError("give a narrative with --narrative or an --entry that has one")
    dataset = load_dataset(args.dataset) if args.dataset else None
    if args.metric in ("accuracy", "completeness"):
        # these metrics need neither fluency exemplars nor l_max
        grader = Grader(backend=backend, repeats=config.repeats, l_max=1.0,
                        templates_dir=config.paths.templates)
        grader.fit(fluency_exemplars=["-"])
    else:
        grader = _grader(args, config, backend, dataset)
    if args.metric:
        grade = grader.grade_metric(args.metric, expl, narrative)
        _emit(grade.to_dict(), True)
        return EXIT_OK
    report = grader.grade(expl, narrative)
    _emit(report.to_dict(), True)
    return EXIT_OK


def cmd_bootstrap(args, config: AppConfig) -> int:
    backend = make_backend(config.backend)
    dataset = load_dataset(args.dataset)
    b = config.pools.b or 1
    grader = _grader(args, config, backend, dataset)
    narrator = Narrator(
        backend=backend, base_prompt=config.narrator.base_prompt, h=config.pools.h, b=b,
        temperature=config.narrator.temperature, max_tokens=config.narrator.max_tokens,
        seed=config.pools.seed, grader=grader, max_attempts=config.bootstrap.max_attempts,
        shuffle_seed=config.bootstrap.shuffle_seed, cache_dir=config.paths.cache or ".explingo-cache",
        templates_dir=config.paths.templates,
    )
    narrator.fit(dataset)
    result = narrator.bootstrap_result_
    key = BootstrapCache.key(
        dataset, narrator.config_, narrator.hand_written_, BootstrapThresholds(),
        {"max_attempts": config.bootstrap.max_attempts,
         "shuffle_seed": config.bootstrap.shuffle_seed},
    )
    path = BootstrapCache(narrator.cache_dir).path(key)
    payload = {
        "cache": str(path),
        "requested": b,
        "accepted": len(result.accepted),
        "attempts": result.attempts,
        "examples": [ex.narrative for ex in result.accepted],
    }
    human = (f"accepted {len(result.accepted)}/{b} after {result.attempts} attempts\n"
             f"cache: {path}")
    _emit(payload, args.json, human)
    return EXIT_OK


def _fixture_dir(kind: str, configured: str | None) -> Path:
    if configured:
        return Path(configured)
    return shipped_fixtures() / kind


def cmd_validate_grader(args, config: AppConfig) -> int:
    backend = make_backend(config.backend)
    path = Path(args.validation) if args.validation else (
        _fixture_dir("validation", config.paths.validation) / f"{args.metric}.jsonl")
    entries = load_validation(path)
    templates = PromptTemplates(config.paths.templates) if config.paths.templates else None
    matrix = validate_grader(args.metric, entries, backend, config.repeats, templates=templates)
    out = write_confusion_report(matrix, args.out or config.paths.reports)
    payload = {**matrix.to_dict(), "report": str(out)}
    human = "\n".join(
        [f"{args.metric} agreement: {matrix.agreement_fraction} = {matrix.agreement:.3f}",
         "rows: human grade, columns: grader grade"]
        + ["  " + " ".join(f"{c:3d}" for c in row) for row in matrix.matrix]
        + [f"report: {out}"]
    )
    _emit(payload, args.json, human)
    return EXIT_OK


def _datasets(args, config: AppConfig) -> list[ExemplarDataset]:
    directory = Path(args.datasets_dir) if args.datasets_dir else _fixture_dir(
        "datasets", config.paths.datasets)
    return load_datasets(directory, getattr(args, "dataset", None))


def cmd_fluency_matrix(args, config: AppConfig) -> int:
    backend = make_backend(config.backend)
    datasets = _datasets(args, config)
    templates = PromptTemplates(config.paths.templates) if config.paths.templates else None
    matrix = fluency_cross_matrix(datasets, backend, config.pools.fluency_k, config.pools.seed,
                                  config.repeats, templates=templates)
    out = write_fluency_report(matrix, args.out or config.paths.reports)
    payload = {"ids": list(matrix.ids), "values": [list(r) for r in matrix.values],
               "flags": matrix.flags, "report": str(out)}
    _emit(payload, args.json, matrix.to_csv() + f"flags: {matrix.flags or 'none'}\nreport: {out}")
    return EXIT_OK


def parse_settings(text: str) -> list[tuple[str, int, int]]:
    settings = []
    for item in text.split(","):
        try:
            base, h, b = item.strip().split(":")
            settings.append((base, int(h), int(b)))
        except ValueError as exc:
            raise CLIError(f"bad setting {item!r}; expected BASE:H:B") from exc
    return settings


def cmd_sweep(args, config: AppConfig) -> int:
    backend = make_backend(config.backend)
    datasets = _datasets(args, config)
    settings = parse_settings(args.settings) if args.settings else list(DEFAULT_SETTINGS)
    options = SweepOptions(
        repeats=config.repeats, weights=config.weights, fluency_k=config.pools.fluency_k,
        seed=config.pools.seed,
        l_max=None if config.conciseness == "auto" else float(config.conciseness),
        max_attempts=config.bootstrap.max_attempts, shuffle_seed=config.bootstrap.shuffle_seed,
        cache_dir=None if args.no_cache else config.paths.cache,
        temperature=config.narrator.temperature, max_tokens=config.narrator.max_tokens,
        templates=PromptTemplates(config.paths.templates) if config.paths.templates else None,
    )
    started = time.monotonic()
    result = run_sweep(datasets, settings, backend, options, jobs=args.jobs)
    paths = write_sweep_reports(result, args.out or config.paths.reports)
    best = select_best_setting(result.cells)
    payload = {
        "settings": len(result.cells),
        "datasets": len(result.by_dataset),
        "narratives": len(result.records),
        "failures": len(result.failures),
        "best": best.label,
        "reports": {k: str(v) for k, v in paths.items()},
        "seconds": round(time.monotonic() - started, 2),
    }
    human = (f"{len(result.records)} narratives over {len(result.cells)} settings "
             f"and {len(result.by_dataset)} datasets; {len(result.failures)} failures\n"
             f"best setting: {best.label}\n"
             + "\n".join(f"  {v}" for v in paths.values()))
    _emit(payload, args.json, human)
    return EXIT_OK


def cmd_fixtures(args, config: AppConfig) -> int:
    paths = generate_fixture_datasets(args.out, config.pools.seed, args.narratives)
    _emit({"files": [str(p) for p in paths]}, args.json, "\n".join(str(p) for p in paths))
    return EXIT_OK


COMMANDS = {
    "narrate": cmd_narrate,
    "grade": cmd_grade,
    "bootstrap": cmd_bootstrap,
    "validate-grader": cmd_validate_grader,
    "fluency-matrix": cmd_fluency_matrix,
    "sweep": cmd_sweep,
    "fixtures": cmd_fixtures,
}


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = load_config(args.config, _overrides(args))
        return COMMANDS[args.command](args, config)
    except (CLIError, ConfigError, DatasetError, ExplanationError, GradingError,
            BackendError, BootstrapError, ValueError, OSError) as exc:
        print(f"explingo: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
