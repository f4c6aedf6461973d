"""Question-by-region scoring with a VQA backend and per-group max-matching.

Entity questions are matched only against entity regions, relational
questions only against relational regions, and global questions are asked
once of the full image.
"""

from __future__ import annotations

import json
import math
from abc import ABC, abstractmethod
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

from .cache import CacheStore, cache_key
from .core import BoxSet, Question, QuestionKind, QuestionScore, QuestionSet, ScoreMatrix, whole_image_box
from .errors import BackendError, DegenerateInputError, InputError
from .regions import Region, SourceImage, crop_region


class VqaBackend(ABC):
    backend_id: str = "vqa"
    model_version: str = "unversioned"

    @abstractmethod
    def yes_probability(self, region: Region, question: str) -> float:
        """Probability in [0, 1] that the answer to ``question`` about ``region`` is yes."""


def normalize_yes_probability(p_yes: float, p_no: float) -> float:
    """Renormalize yes/no token likelihoods: p_yes / (p_yes + p_no)."""
    if p_yes < 0 or p_no < 0 or math.isnan(p_yes) or math.isnan(p_no):
        raise InputError("token probabilities must be non-negative")
    total = p_yes + p_no
    if total == 0:
        raise DegenerateInputError("both yes and no probabilities are zero")
    return p_yes / total


def _text(q: Question | str) -> str:
    return q.text if isinstance(q, Question) else q


def _cell(region: Region, question: str, digest: str, backend: VqaBackend, cache: CacheStore | None) -> float:
    key = cache_key("vqa", backend.backend_id, backend.model_version, digest, question) if cache is not None else None
    if cache is not None:
        hit = cache.get(key)
        if hit is not None:
            return float(json.loads(hit))
    try:
        p = float(backend.yes_probability(region, question))
    except Exception as exc:
        raise BackendError(
            f"VQA backend {backend.backend_id} failed on question {question!r}, region {region.box.coords}: {exc}"
        ) from exc
    if math.isnan(p) or not 0.0 <= p <= 1.0:
        raise BackendError(f"VQA backend {backend.backend_id} returned {p!r} for {question!r}; expected [0, 1]")
    if cache is not None:
        cache.put(key, json.dumps(p).encode())
    return p


def build_score_matrix(
    questions: Sequence[Question | str],
    regions: Sequence[Region],
    backend: VqaBackend,
    cache: CacheStore | None = None,
    max_workers: int = 1,
) -> ScoreMatrix:
    """Evaluate every (question, region) cell; no early exit on a 1.0 cell."""
    if not questions:
        raise InputError("score matrix needs at least one question")
    if not regions:
        raise InputError("score matrix needs at least one region")
    texts = [_text(q) for q in questions]
    digests = [r.digest for r in regions]
    cells = [(i, j) for i in range(len(texts)) for j in range(len(regions))]

    def run(cell):
        i, j = cell
        return _cell(regions[j], texts[i], digests[j], backend, cache)

    if max_workers > 1 and len(cells) > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            flat = list(pool.map(run, cells))
    else:
        flat = [run(c) for c in cells]
    n = len(regions)
    values = tuple(tuple(flat[i * n : (i + 1) * n]) for i in range(len(texts)))
    return ScoreMatrix(tuple(texts), tuple(r.box for r in regions), values)


def _max_match(questions, regions, backend, cache, max_workers):
    if not questions:
        return [], None
    if not regions:
        raise InputError("no regions to match questions against")
    m = build_score_matrix(questions, regions, backend, cache, max_workers)
    return list(m.best), m


def score_entity_questions(qs, entity_regions, backend, cache=None, max_workers=1) -> list[tuple[float, int]]:
    """score(q) = max over entity regions of P(yes | q, region), with argmax."""
    return _max_match(qs, entity_regions, backend, cache, max_workers)[0]


def score_relational_questions(qs, relational_regions, backend, cache=None, max_workers=1) -> list[tuple[float, int]]:
    return _max_match(qs, relational_regions, backend, cache, max_workers)[0]


def score_global_questions(qs, image: SourceImage, backend, cache=None) -> list[float]:
    if not qs:
        return []
    region = crop_region(image, whole_image_box(image.width, image.height))
    m = build_score_matrix(qs, [region], backend, cache)
    return [row[0] for row in m.values]


@dataclass(frozen=True)
class QuestionScores:
    entity: tuple[QuestionScore, ...]
    relational: tuple[QuestionScore, ...]
    global_: tuple[QuestionScore, ...]
    matrices: dict[str, ScoreMatrix] = field(default_factory=dict, compare=False)

    @property
    def all(self) -> tuple[QuestionScore, ...]:
        return self.entity + self.relational + self.global_

    def audit_dump(self) -> dict:
        return {group: m.to_dict() for group, m in self.matrices.items()}


def score_question_set(
    qset: QuestionSet,
    image: SourceImage,
    boxes: BoxSet,
    backend: VqaBackend,
    min_region_side: int = 32,
    cache: CacheStore | None = None,
    max_workers: int = 1,
) -> QuestionScores:
    """Score all three question groups of ``qset`` against ``image``."""
    matrices: dict[str, ScoreMatrix] = {}
    groups = {}
    for name, questions, group_boxes in (
        ("entity", qset.entity, boxes.entity_boxes),
        ("relational", qset.relational, boxes.relational_boxes),
    ):
        regions = [crop_region(image, b, min_region_side) for b in group_boxes] if questions else []
        best, m = _max_match(questions, regions, backend, cache, max_workers)
        if m is not None:
            matrices[name] = m
        groups[name] = tuple(
            QuestionScore(q.text, q.kind, v, j) for q, (v, j) in zip(questions, best)
        )
    whole = crop_region(image, whole_image_box(image.width, image.height))
    if qset.global_:
        m = build_score_matrix(qset.global_, [whole], backend, cache, max_workers)
        matrices["global"] = m
        glob = tuple(QuestionScore(q.text, QuestionKind.GLOBAL, row[0]) for q, row in zip(qset.global_, m.values))
    else:
        glob = ()
    return QuestionScores(groups["entity"], groups["relational"], glob, matrices)
