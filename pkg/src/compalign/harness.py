"""End-to-end evaluation runs over a prompt set and an image tree.

Layout of a run directory ``<output_dir>/<run_id>/``:

    config.json      the RunConfig, verbatim
    results.jsonl    one EvalResult per line, appended as samples finish,
                     always in input order
    failures.jsonl   {prompt_id, image_id, error_type, error}
    summary.json     counts, per-category means, wall time

Images for prompt ``p`` are the png/jpg files in ``<image_root>/<p>/``; the
file stem becomes the image id.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import time
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable, Iterable, NamedTuple, Sequence

from . import backends as registry
from .aggregate import AggregationPolicy, aggregate
from .cache import CacheStore
from .core import (
    Category,
    DegeneracyFlag,
    EvalResult,
    PromptRecord,
    dumps,
    validate_prompt_set,
)
from .errors import CompalignError, ConfigError, InputError
from .questions import DEFAULT_TEMPLATE, GenerationTemplate, GeneratorBackend, decompose_prompt, load_template
from .regions import IMAGE_SUFFIXES, DecompositionConfig, DetectorBackend, build_box_set, load_image
from .scoring import VqaBackend, score_question_set
from .stats import Sample

log = logging.getLogger(__name__)


class PromptSetError(InputError):
    pass


def load_prompt_set(path: str | Path) -> list[PromptRecord]:
    """Parse a JSONL prompt set {id, text, category, human_score?}.

    Unknown categories are kept as ``other`` with a warning. Malformed lines
    and invariant violations raise PromptSetError.
    """
    path = Path(path)
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise PromptSetError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from exc
            if not isinstance(obj, dict):
                raise PromptSetError(f"{path}:{lineno}: expected a JSON object")
            missing = [k for k in ("id", "text") if k not in obj]
            if missing:
                raise PromptSetError(f"{path}:{lineno}: missing {', '.join(missing)}")
            category = obj.get("category", "other")
            try:
                category = Category(category)
            except ValueError:
                log.warning("%s:%d: unknown category %r, using 'other'", path, lineno, category)
                category = Category.OTHER
            human = obj.get("human_score")
            try:
                human = None if human is None else float(human)
            except (TypeError, ValueError):
                raise PromptSetError(f"{path}:{lineno}: human_score is not a number") from None
            records.append(PromptRecord(str(obj["id"]), str(obj["text"]), category, human))
    violations = validate_prompt_set(records)
    if violations:
        raise PromptSetError(f"{path}: " + "; ".join(violations))
    return records


def resolve_images(prompt: PromptRecord, image_root: str | Path) -> list[Path]:
    folder = Path(image_root) / prompt.id
    if not folder.is_dir():
        return []
    return sorted(p for p in folder.iterdir() if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES)


@dataclass(frozen=True)
class BackendChoice:
    name: str
    settings: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"name": self.name, "settings": dict(self.settings)}

    @classmethod
    def parse(cls, value: Any) -> "BackendChoice":
        if isinstance(value, str):
            return cls(value)
        return cls(str(value["name"]), dict(value.get("settings", {})))


@dataclass(frozen=True)
class RunConfig:
    prompt_set: Path
    image_root: Path
    output_dir: Path
    cache_dir: Path | None = None
    generator: BackendChoice = BackendChoice("oracle")
    detector: BackendChoice = BackendChoice("oracle")
    vqa: BackendChoice = BackendChoice("oracle")
    decomposition: DecompositionConfig = DecompositionConfig()
    aggregation: AggregationPolicy = AggregationPolicy()
    concurrency: int = 1
    max_retries: int = 2
    template: Path | None = None
    run_id: str | None = None

    def to_dict(self) -> dict:
        return {
            "prompt_set": str(self.prompt_set),
            "image_root": str(self.image_root),
            "output_dir": str(self.output_dir),
            "cache_dir": None if self.cache_dir is None else str(self.cache_dir),
            "generator": self.generator.to_dict(),
            "detector": self.detector.to_dict(),
            "vqa": self.vqa.to_dict(),
            "decomposition": self.decomposition.to_dict(),
            "aggregation": self.aggregation.to_dict(),
            "concurrency": self.concurrency,
            "max_retries": self.max_retries,
            "template": None if self.template is None else str(self.template),
            "run_id": self.run_id,
        }

    @classmethod
    def from_dict(cls, d: dict, base: Path | None = None) -> "RunConfig":
        """Relative paths are resolved against ``base`` (the config file's folder)."""

        def path(key, required=True):
            v = d.get(key)
            if v is None:
                if required:
                    raise ConfigError(f"config is missing {key!r}")
                return None
            p = Path(v)
            return p if p.is_absolute() or base is None else base / p

        try:
            return cls(
                prompt_set=path("prompt_set"),
                image_root=path("image_root"),
                output_dir=path("output_dir"),
                cache_dir=path("cache_dir", required=False),
                generator=BackendChoice.parse(d.get("generator", "oracle")),
                detector=BackendChoice.parse(d.get("detector", "oracle")),
                vqa=BackendChoice.parse(d.get("vqa", "oracle")),
                decomposition=DecompositionConfig(**d.get("decomposition", {})),
                aggregation=AggregationPolicy(**d.get("aggregation", {})),
                concurrency=int(d.get("concurrency", 1)),
                max_retries=int(d.get("max_retries", 2)),
                template=path("template", required=False),
                run_id=d.get("run_id"),
            )
        except (TypeError, ValueError, KeyError) as exc:
            raise ConfigError(f"invalid run config: {exc}") from exc

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        path = Path(path)
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: config must be a JSON object")
        return cls.from_dict(data, base=path.parent)

    def validate(self) -> None:
        if not self.prompt_set.is_file():
            raise ConfigError(f"prompt set {self.prompt_set} does not exist")
        if not self.image_root.is_dir():
            raise ConfigError(f"image root {self.image_root} does not exist")
        if self.template is not None and not self.template.is_file():
            raise ConfigError(f"template {self.template} does not exist")
        if self.concurrency < 1:
            raise ConfigError("concurrency must be >= 1")
        if self.max_retries < 0:
            raise ConfigError("max_retries must be >= 0")

    @property
    def config_hash(self) -> str:
        d = self.to_dict()
        d.pop("run_id")
        return hashlib.sha256(dumps(d).encode()).hexdigest()

    @property
    def effective_cache_dir(self) -> Path:
        return self.cache_dir if self.cache_dir is not None else self.output_dir / "cache"


class Backends(NamedTuple):
    generator: GeneratorBackend
    detector: DetectorBackend
    vqa: VqaBackend


def make_backends(config: RunConfig) -> Backends:
    return Backends(
        registry.make_generator(config.generator.name, config.generator.settings),
        registry.make_detector(config.detector.name, config.detector.settings),
        registry.make_vqa(config.vqa.name, config.vqa.settings),
    )


class SampleRef(NamedTuple):
    prompt: PromptRecord
    image: Path

    @property
    def key(self) -> tuple[str, str]:
        return self.prompt.id, self.image.stem


@dataclass
class RunResult:
    run_id: str
    run_dir: Path
    results: list[EvalResult]
    failures: list[dict]
    summary: dict

    @property
    def ok(self) -> bool:
        return not self.failures


def evaluate_sample(
    prompt: PromptRecord,
    image_path: Path,
    backends: Backends,
    config: RunConfig,
    cache: CacheStore | None,
    template: GenerationTemplate = DEFAULT_TEMPLATE,
) -> EvalResult:
    qs = decompose_prompt(prompt, backends.generator, template, config.max_retries, cache)
    image = load_image(image_path)
    boxes = build_box_set(image, backends.detector, config.decomposition, cache)
    scores = score_question_set(qs, image, boxes, backends.vqa, config.decomposition.min_region_side, cache)
    flags = set()
    if boxes.entity_fallback:
        flags.add(DegeneracyFlag.NO_ENTITIES_DETECTED)
    if boxes.relational_fallback:
        flags.add(DegeneracyFlag.NO_RELATIONAL_BOXES)
    return aggregate(
        prompt.id,
        image.image_id,
        scores.entity,
        scores.relational,
        scores.global_,
        config.aggregation,
        flags,
        prompt.category,
    )


def _failure(prompt_id: str, image_id: str, exc: BaseException | str) -> dict:
    if isinstance(exc, str):
        return {"prompt_id": prompt_id, "image_id": image_id, "error_type": "MissingImages", "error": exc}
    return {"prompt_id": prompt_id, "image_id": image_id, "error_type": type(exc).__name__, "error": str(exc)}


def read_results(path: str | Path, repair: bool = False) -> list[EvalResult]:
    """Load a results file; with ``repair`` a torn final line (from a kill) is cut off."""
    path = Path(path)
    if not path.exists():
        return []
    lines = path.read_text(encoding="utf-8").splitlines(keepends=True)
    out, good = [], []
    for i, line in enumerate(lines):
        if not line.strip():
            continue
        try:
            out.append(EvalResult.from_dict(json.loads(line)))
            good.append(line if line.endswith("\n") else line + "\n")
        except (json.JSONDecodeError, KeyError, ValueError, TypeError):
            if repair and i == len(lines) - 1:
                log.warning("dropping torn last line of %s", path)
                continue
            raise InputError(f"{path}:{i + 1}: malformed result line") from None
    if repair:
        path.write_text("".join(good), encoding="utf-8")
    return out


def _find_resumable(config: RunConfig) -> Path | None:
    if config.run_id:
        d = config.output_dir / config.run_id
        return d if d.is_dir() else None
    suffix = "-" + config.config_hash[:12]
    runs = sorted(p for p in config.output_dir.glob(f"*{suffix}") if p.is_dir())
    return runs[-1] if runs else None


def _new_run_id(config: RunConfig) -> str:
    if config.run_id:
        return config.run_id
    stamp = datetime.now(timezone.utc).strftime("%Y%m%dT%H%M%S%fZ")
    return f"{stamp}-{config.config_hash[:12]}"


def _mean(values: Sequence[float]) -> float | None:
    return math.fsum(values) / len(values) if values else None


def summarize(results: Sequence[EvalResult], failures: Sequence[dict], n_samples: int) -> dict:
    per_cat: dict[str, list[EvalResult]] = defaultdict(list)
    for r in results:
        per_cat[r.category.value].append(r)
    return {
        "counts": {"samples": n_samples, "results": len(results), "failures": len(failures)},
        "mean_overall": _mean([r.overall for r in results]),
        "per_category": {
            cat: {
                "n": len(rs),
                "overall": _mean([r.overall for r in rs]),
                "coarse_grained": _mean([r.coarse_grained for r in rs]),
                "fine_grained": _mean([r.fine_grained for r in rs if r.fine_grained is not None]),
            }
            for cat, rs in sorted(per_cat.items())
        },
    }


def run_evaluation(
    config: RunConfig,
    resume: bool = False,
    backends: Backends | None = None,
    on_sample: Callable[[int, EvalResult | dict], None] | None = None,
) -> RunResult:
    """Run the whole pipeline for every (prompt, image) pair.

    Per-sample errors land in failures; configuration problems raise before
    any work. ``on_sample(index, outcome)`` is called after each sample is
    persisted; an exception raised there aborts the run (used to simulate kills).
    """
    config.validate()
    prompts = load_prompt_set(config.prompt_set)
    template = load_template(config.template) if config.template else DEFAULT_TEMPLATE
    backends = backends or make_backends(config)
    cache = CacheStore(config.effective_cache_dir)

    run_dir = _find_resumable(config) if resume else None
    if run_dir is None:
        run_dir = config.output_dir / _new_run_id(config)
        run_dir.mkdir(parents=True, exist_ok=bool(config.run_id))
    else:
        log.info("resuming %s", run_dir)
    run_id = run_dir.name
    (run_dir / "config.json").write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n")

    results_path = run_dir / "results.jsonl"
    results = read_results(results_path, repair=True)
    done = {r.key for r in results}

    failures: list[dict] = []
    samples: list[SampleRef] = []
    n_samples = 0
    for prompt in prompts:
        images = resolve_images(prompt, config.image_root)
        if not images:
            n_samples += 1
            failures.append(_failure(prompt.id, "", f"missing images under {config.image_root / prompt.id}"))
            continue
        for img in images:
            n_samples += 1
            ref = SampleRef(prompt, img)
            if ref.key not in done:
                samples.append(ref)

    def work(ref: SampleRef):
        try:
            return evaluate_sample(ref.prompt, ref.image, backends, config, cache, template)
        except (CompalignError, OSError, ValueError, RuntimeError) as exc:
            log.warning("sample %s/%s failed: %s", ref.prompt.id, ref.image.stem, exc)
            return _failure(ref.prompt.id, ref.image.stem, exc)

    started = time.monotonic()
    pool = ThreadPoolExecutor(max_workers=config.concurrency)
    try:
        with open(results_path, "a", encoding="utf-8") as out:
            for i, outcome in enumerate(pool.map(work, samples)):
                if isinstance(outcome, EvalResult):
                    out.write(dumps(outcome) + "\n")
                    out.flush()
                    results.append(outcome)
                else:
                    failures.append(outcome)
                if on_sample is not None:
                    on_sample(i, outcome)
    finally:
        pool.shutdown(wait=True, cancel_futures=True)
        with open(run_dir / "failures.jsonl", "w", encoding="utf-8") as fh:
            for f in failures:
                fh.write(json.dumps(f, sort_keys=True) + "\n")

    summary = summarize(results, failures, n_samples)
    summary.update(
        {
            "run_id": run_id,
            "policy": config.aggregation.policy_id,
            "policy_description": config.aggregation.description,
            "wall_time_s": time.monotonic() - started,
            "finished_at": datetime.now(timezone.utc).isoformat(),
            "cache": {"hits": cache.hits, "misses": cache.misses},
        }
    )
    (run_dir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return RunResult(run_id, run_dir, results, failures, summary)


def load_human_ratings(path: str | Path) -> dict[tuple[str, str], float]:
    """JSONL {prompt_id, image_id, human_score} keyed by (prompt_id, image_id)."""
    ratings = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                ratings[(str(obj["prompt_id"]), str(obj["image_id"]))] = float(obj["human_score"])
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise InputError(f"{path}:{lineno}: bad human rating line ({exc})") from None
    return ratings


def join_for_correlation(
    results: Iterable[EvalResult],
    ratings: dict[tuple[str, str], float],
    metric: str = "overall",
) -> tuple[list[Sample], int]:
    """Pair metric scores with human scores; the image id stands for the model.

    Returns the joined samples and the number of unjoinable result rows.
    """
    if metric not in ("overall", "fine_grained", "coarse_grained"):
        raise InputError(f"unknown metric {metric!r}")
    samples, unjoined = [], 0
    for r in results:
        human = ratings.get(r.key)
        value = getattr(r, metric)
        if human is None or value is None:
            unjoined += 1
            continue
        samples.append(Sample(value, human, r.image_id, r.category.value))
    return samples, unjoined
