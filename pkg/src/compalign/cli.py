"""Command-line entry point: ``compalign <command> [flags]``.

Payload goes to stdout; logs and diagnostics go to stderr.

Exit codes: 0 success, 1 validation error, 2 run finished with failures,
3 fatal error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Sequence

from . import backends as registry
from .aggregate import AggregationPolicy, EmptyGroupRule, aggregate
from .cache import CacheStore
from .core import Category, DegeneracyFlag, PromptRecord, QuestionSet, dumps
from .errors import BackendError, CompalignError, ConfigError, DecompositionError
from .harness import (
    BackendChoice,
    RunConfig,
    join_for_correlation,
    load_human_ratings,
    load_prompt_set,
    read_results,
    run_evaluation,
    summarize,
)
from .questions import DEFAULT_TEMPLATE, decompose_prompt, load_template
from .regions import DecompositionConfig, build_box_set, load_image
from .scoring import score_question_set
from .stats import correlation_report, render_table

log = logging.getLogger("compalign")

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_FAILURES = 2
EXIT_FATAL = 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on usage errors; 2 means "run had failures" here
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _emit(text: str, out: str | None = None) -> None:
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
        sys.stdout.flush()


def _cache(args) -> CacheStore | None:
    return CacheStore(args.cache_dir) if getattr(args, "cache_dir", None) else None


def _settings(pairs: Sequence[str] | None) -> dict:
    """``KEY=VALUE`` pairs; values are read as JSON when they parse, else kept as strings."""
    out = {}
    for pair in pairs or ():
        key, sep, value = pair.partition("=")
        if not sep or not key:
            raise UsageError(f"expected KEY=VALUE, got {pair!r}")
        try:
            out[key] = json.loads(value)
        except json.JSONDecodeError:
            out[key] = value
    return out


def _category(value: str) -> Category:
    try:
        return Category(value)
    except ValueError:
        raise UsageError(f"unknown category {value!r}; choose from {[c.value for c in Category]}") from None


def cmd_decompose(args) -> int:
    if bool(args.prompt) == bool(args.prompt_set):
        raise UsageError("decompose: give exactly one of --prompt or --prompt-set")
    if args.prompt:
        prompts = [PromptRecord(args.prompt_id, args.prompt, _category(args.category))]
    else:
        prompts = load_prompt_set(args.prompt_set)
    template = load_template(args.template) if args.template else DEFAULT_TEMPLATE
    backend = registry.make_generator(args.backend, _settings(args.backend_opt))
    cache = _cache(args)
    lines = []
    for p in prompts:
        try:
            qs = decompose_prompt(p, backend, template, args.max_retries, cache)
        except DecompositionError as exc:
            print(f"error: {exc}", file=sys.stderr)
            print("last raw output:", file=sys.stderr)
            print(exc.last_raw if exc.last_raw is not None else "<none>", file=sys.stderr)
            return EXIT_INVALID
        lines.append(dumps(qs.to_dict()))
    _emit("".join(line + "\n" for line in lines), args.out)
    return EXIT_OK


def _decomposition_config(args) -> DecompositionConfig:
    return DecompositionConfig(args.threshold, args.max_boxes, args.min_region_side)


def cmd_detect(args) -> int:
    backend = registry.make_detector(args.backend, _settings(args.backend_opt))
    config = _decomposition_config(args)
    cache = _cache(args)
    sets = [build_box_set(load_image(path), backend, config, cache) for path in args.image]
    if args.json:
        _emit("".join(dumps(s.to_dict()) + "\n" for s in sets), args.out)
        return EXIT_OK
    lines = []
    for s in sets:
        lines.append(f"{s.image_id} ({s.image_width}x{s.image_height})")
        for label, group, fallback in (
            ("entity", s.entity_boxes, s.entity_fallback),
            ("relational", s.relational_boxes, s.relational_fallback),
        ):
            note = " (whole-image fallback)" if fallback else ""
            lines.append(f"  {label} boxes: {len(group)}{note}")
            for b in group:
                lines.append(f"    {b.coords}  {b.label or '-'}  {b.confidence:.3f}")
    _emit("\n".join(lines) + "\n", args.out)
    return EXIT_OK


def cmd_score(args) -> int:
    if bool(args.prompt) == bool(args.questions):
        raise UsageError("score: give exactly one of --prompt or --questions")
    cache = _cache(args)
    if args.questions:
        qs = QuestionSet.from_dict(json.loads(Path(args.questions).read_text(encoding="utf-8")))
        prompt_id = qs.prompt_id or args.prompt_id
    else:
        generator = registry.make_generator(args.generator)
        prompt = PromptRecord(args.prompt_id, args.prompt, _category(args.category))
        qs = decompose_prompt(prompt, generator, DEFAULT_TEMPLATE, args.max_retries, cache)
        prompt_id = prompt.id
    image = load_image(args.image)
    boxes = build_box_set(image, registry.make_detector(args.detector), _decomposition_config(args), cache)
    vqa = registry.make_vqa(args.vqa, _settings(args.vqa_opt))
    scores = score_question_set(qs, image, boxes, vqa, args.min_region_side, cache)
    flags = set()
    if boxes.entity_fallback:
        flags.add(DegeneracyFlag.NO_ENTITIES_DETECTED)
    if boxes.relational_fallback:
        flags.add(DegeneracyFlag.NO_RELATIONAL_BOXES)
    result = aggregate(
        prompt_id,
        image.image_id,
        scores.entity,
        scores.relational,
        scores.global_,
        AggregationPolicy(args.empty_group_rule),
        flags,
        _category(args.category),
    )
    if args.audit:
        Path(args.audit).write_text(json.dumps(scores.audit_dump(), indent=2, sort_keys=True) + "\n")
    if args.json:
        _emit(dumps(result.to_dict()) + "\n", args.out)
        return EXIT_OK
    width = max(len(q.text) for q in result.per_question)
    lines = [f"{q.kind.value:<10}  {q.text:<{width}}  {q.score:.4f}" for q in result.per_question]
    fine = "n/a" if result.fine_grained is None else f"{result.fine_grained:.4f}"
    lines += [
        "",
        f"fine-grained    {fine}",
        f"coarse-grained  {result.coarse_grained:.4f}",
        f"overall         {result.overall:.4f}",
    ]
    if result.degeneracy_flags:
        lines.append("flags           " + ", ".join(sorted(f.value for f in result.degeneracy_flags)))
    _emit("\n".join(lines) + "\n", args.out)
    return EXIT_OK


def _fmt(v) -> str:
    return "n/a" if v is None else f"{v:.4f}"


def _summary_table(summary: dict) -> str:
    rows = [("category", "n", "overall", "fine", "coarse")]
    for cat, s in summary["per_category"].items():
        rows.append((cat, str(s["n"]), _fmt(s["overall"]), _fmt(s["fine_grained"]), _fmt(s["coarse_grained"])))
    counts = summary["counts"]
    rows.append(("all", str(counts["results"]), _fmt(summary["mean_overall"]), "", ""))
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    lines = ["  ".join(c.ljust(widths[0]) if i == 0 else c.rjust(widths[i]) for i, c in enumerate(r)) for r in rows]
    lines.insert(1, "-" * len(lines[0]))
    lines.insert(len(lines) - 1, "-" * len(lines[0]))
    lines.append(f"samples {counts['samples']}, results {counts['results']}, failures {counts['failures']}")
    return "\n".join(lines) + "\n"


def _run_config(args) -> RunConfig:
    if args.config:
        config = RunConfig.load(args.config)
    else:
        missing = [f for f in ("prompt_set", "image_root", "output_dir") if getattr(args, f) is None]
        if missing:
            flags = ", ".join("--" + m.replace("_", "-") for m in missing)
            raise UsageError(f"evaluate: without --config, {flags} required")
        config = RunConfig(Path(args.prompt_set), Path(args.image_root), Path(args.output_dir))
    overrides = {}
    for name in ("prompt_set", "image_root", "output_dir", "cache_dir", "template"):
        value = getattr(args, name)
        if value is not None:
            overrides[name] = Path(value)
    for role in ("generator", "detector", "vqa"):
        value = getattr(args, role)
        if value is not None:
            overrides[role] = BackendChoice(value)
    if args.concurrency is not None:
        overrides["concurrency"] = args.concurrency
    if args.max_retries is not None:
        overrides["max_retries"] = args.max_retries
    if args.empty_group_rule is not None:
        overrides["aggregation"] = AggregationPolicy(args.empty_group_rule)
    if args.run_id is not None:
        overrides["run_id"] = args.run_id
    return replace(config, **overrides)


def cmd_evaluate(args) -> int:
    config = _run_config(args)
    run = run_evaluation(config, resume=args.resume)
    print(f"run {run.run_id} written to {run.run_dir}", file=sys.stderr)
    if args.json:
        _emit(json.dumps({"run_id": run.run_id, "run_dir": str(run.run_dir), **run.summary}, sort_keys=True) + "\n")
    else:
        _emit(_summary_table(run.summary))
    if run.failures:
        print(f"{len(run.failures)} sample(s) failed; see {run.run_dir / 'failures.jsonl'}", file=sys.stderr)
        return EXIT_FAILURES
    return EXIT_OK


def _results_path(path: str) -> Path:
    p = Path(path)
    return p / "results.jsonl" if p.is_dir() else p


def cmd_correlate(args) -> int:
    keys = [k.strip() for k in args.group_by.split(",") if k.strip()]
    if not keys or any(k not in ("model", "category") for k in keys):
        raise UsageError(f"--group-by takes model and/or category, got {args.group_by!r}")
    results = read_results(_results_path(args.results))
    ratings = load_human_ratings(args.human)
    samples, unjoined = join_for_correlation(results, ratings, args.metric)
    if unjoined:
        log.warning("%d result row(s) had no human rating or no %s score and were left out", unjoined, args.metric)
    if "model" not in keys:
        samples = [s._replace(model="all") for s in samples]
    if "category" not in keys:
        samples = [s._replace(category="all") for s in samples]
    table = correlation_report(samples)
    table.metadata.update({"metric": args.metric, "group_by": keys, "unjoined": unjoined})
    if not table.groups:
        print("error: no group has at least 2 joined rows", file=sys.stderr)
        if args.json:
            _emit(json.dumps(table.to_dict(), sort_keys=True) + "\n", args.out)
        return EXIT_INVALID
    if args.json:
        _emit(json.dumps(table.to_dict(), sort_keys=True) + "\n", args.out)
    else:
        _emit(render_table(table, args.decimals), args.out)
    return EXIT_OK


def cmd_report(args) -> int:
    run_dir = Path(args.run)
    results = read_results(_results_path(args.run))
    failures = []
    failures_path = run_dir / "failures.jsonl" if run_dir.is_dir() else None
    if failures_path is not None and failures_path.exists():
        failures = [json.loads(line) for line in failures_path.read_text(encoding="utf-8").splitlines() if line]
    summary = summarize(results, failures, len(results) + len(failures))
    if args.json:
        _emit(json.dumps(summary, sort_keys=True) + "\n")
    else:
        _emit(_summary_table(summary))
    return EXIT_FAILURES if failures else EXIT_OK


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--json", action="store_true", help="machine-readable output")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging on stderr")


def _add_decomposition(p: argparse.ArgumentParser) -> None:
    defaults = DecompositionConfig()
    p.add_argument("--threshold", type=float, default=defaults.confidence_threshold)
    p.add_argument("--max-boxes", type=int, default=defaults.max_entity_boxes)
    p.add_argument("--min-region-side", type=int, default=defaults.min_region_side)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="compalign", description="Compositional text-to-image alignment scoring.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    rules = [r.value for r in EmptyGroupRule]

    p = sub.add_parser("decompose", help="prompt -> entity/relational/global questions")
    p.add_argument("--prompt")
    p.add_argument("--prompt-set")
    p.add_argument("--prompt-id", default="prompt")
    p.add_argument("--category", default="other")
    p.add_argument("--backend", default="oracle", choices=sorted(registry.GENERATORS))
    p.add_argument("--backend-opt", action="append", metavar="KEY=VALUE")
    p.add_argument("--template")
    p.add_argument("--max-retries", type=int, default=2)
    p.add_argument("--cache-dir")
    p.add_argument("--out")
    _add_common(p)
    p.set_defaults(func=cmd_decompose)

    p = sub.add_parser("detect", help="image -> entity and relational boxes")
    p.add_argument("--image", action="append", required=True)
    p.add_argument("--backend", default="oracle", choices=sorted(registry.DETECTORS))
    p.add_argument("--backend-opt", action="append", metavar="KEY=VALUE")
    _add_decomposition(p)
    p.add_argument("--cache-dir")
    p.add_argument("--out")
    _add_common(p)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("score", help="score one image against one prompt")
    p.add_argument("--image", required=True)
    p.add_argument("--prompt")
    p.add_argument("--questions", help="QuestionSet JSON from decompose")
    p.add_argument("--prompt-id", default="prompt")
    p.add_argument("--category", default="other")
    p.add_argument("--generator", default="oracle", choices=sorted(registry.GENERATORS))
    p.add_argument("--detector", default="oracle", choices=sorted(registry.DETECTORS))
    p.add_argument("--vqa", default="oracle", choices=sorted(registry.VQA))
    p.add_argument("--vqa-opt", action="append", metavar="KEY=VALUE")
    p.add_argument("--max-retries", type=int, default=2)
    p.add_argument("--empty-group-rule", default=EmptyGroupRule.DROP_TERM_RENORMALIZE.value, choices=rules)
    _add_decomposition(p)
    p.add_argument("--audit", help="write the per-group score matrices here")
    p.add_argument("--cache-dir")
    p.add_argument("--out")
    _add_common(p)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("evaluate", help="full run over a prompt set and image tree")
    p.add_argument("--config")
    p.add_argument("--prompt-set")
    p.add_argument("--image-root")
    p.add_argument("--output-dir")
    p.add_argument("--cache-dir")
    p.add_argument("--template")
    p.add_argument("--generator", choices=sorted(registry.GENERATORS))
    p.add_argument("--detector", choices=sorted(registry.DETECTORS))
    p.add_argument("--vqa", choices=sorted(registry.VQA))
    p.add_argument("--concurrency", type=int)
    p.add_argument("--max-retries", type=int)
    p.add_argument("--empty-group-rule", choices=rules)
    p.add_argument("--run-id")
    p.add_argument("--resume", action="store_true", help="continue the latest run with the same config")
    _add_common(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("correlate", help="rank correlation of metric scores with human ratings")
    p.add_argument("--results", required=True, help="results.jsonl or a run directory")
    p.add_argument("--human", required=True, help="JSONL of {prompt_id, image_id, human_score}")
    p.add_argument("--group-by", default="model,category")
    p.add_argument("--metric", default="overall", choices=["overall", "fine_grained", "coarse_grained"])
    p.add_argument("--decimals", type=int, default=4)
    p.add_argument("--out")
    _add_common(p)
    p.set_defaults(func=cmd_correlate)

    p = sub.add_parser("report", help="summary table for a finished run")
    p.add_argument("--run", required=True, help="run directory or results.jsonl")
    _add_common(p)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_INVALID
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_INVALID
    except BackendError as exc:
        print(f"fatal: {exc}", file=sys.stderr)
        return EXIT_FATAL
    except (CompalignError, ValueError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:  # noqa: BLE001
        log.debug("fatal error", exc_info=True)
        print(f"fatal: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FATAL


if __name__ == "__main__":
    sys.exit(main())
