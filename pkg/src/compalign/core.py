"""Domain types shared by every stage of the pipeline.

All types are frozen dataclasses holding tuples, so instances can be passed
between worker threads freely. Each type has ``to_dict``/``from_dict`` for its
canonical JSON encoding (snake_case field names, full float precision).
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Iterable, Mapping, Sequence

from .errors import InputError, SchemaError


class Category(str, Enum):
    COLOR = "color"
    SHAPE = "shape"
    TEXTURE = "texture"
    SPATIAL = "spatial"
    NON_SPATIAL = "non_spatial"
    COMPLEX = "complex"
    OTHER = "other"


class QuestionKind(str, Enum):
    ENTITY = "entity"
    RELATIONAL = "relational"
    GLOBAL = "global"


class BoxKind(str, Enum):
    ENTITY = "entity"
    RELATIONAL = "relational"
    WHOLE_IMAGE = "whole_image"


class DegeneracyFlag(str, Enum):
    NO_ENTITIES_DETECTED = "no_entities_detected"
    NO_RELATIONAL_BOXES = "no_relational_boxes"
    NO_ENTITY_QUESTIONS = "no_entity_questions"
    NO_RELATIONAL_QUESTIONS = "no_relational_questions"


def dumps(obj: Any) -> str:
    """Canonical single-line JSON: sorted keys, no whitespace, shortest round-trip floats."""
    if hasattr(obj, "to_dict"):
        obj = obj.to_dict()
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False, allow_nan=False)


def _unit(value: float, name: str) -> float:
    value = float(value)
    if math.isnan(value) or value < 0.0 or value > 1.0:
        raise InputError(f"{name} must lie in [0, 1], got {value!r}")
    return value


@dataclass(frozen=True)
class PromptRecord:
    id: str
    text: str
    category: Category = Category.OTHER
    human_score: float | None = None

    def to_dict(self) -> dict:
        d = {"id": self.id, "text": self.text, "category": self.category.value}
        if self.human_score is not None:
            d["human_score"] = self.human_score
        return d

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "PromptRecord":
        human = d.get("human_score")
        return cls(
            id=str(d["id"]),
            text=str(d["text"]),
            category=Category(d.get("category", "other")),
            human_score=None if human is None else float(human),
        )


def validate_prompt_set(records: Sequence[PromptRecord]) -> list[str]:
    """Return a list of invariant violations; an empty list means the set is valid."""
    report: list[str] = []
    counts = Counter(r.id for r in records)
    for rid, n in counts.items():
        if n > 1:
            report.append(f"duplicate id {rid!r} ({n} records)")
    for i, r in enumerate(records):
        if not r.id:
            report.append(f"record {i}: empty id")
        if not r.text or not r.text.strip():
            report.append(f"record {i} ({r.id!r}): empty text")
        if r.human_score is not None and not (0.0 <= r.human_score <= 1.0):
            report.append(f"record {i} ({r.id!r}): human_score {r.human_score!r} out of range [0, 1]")
    return report


@dataclass(frozen=True)
class Question:
    text: str
    kind: QuestionKind
    assertion_index: int | None = None
    subject_entities: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "subject_entities", tuple(self.subject_entities))
        if not self.text or not self.text.strip():
            raise InputError("question text must be nonempty")
        n = len(self.subject_entities)
        if self.kind is QuestionKind.RELATIONAL and n == 1:
            raise InputError(f"relational question {self.text!r} names a single entity")
        if self.kind is QuestionKind.ENTITY and n > 1:
            raise InputError(f"entity question {self.text!r} names {n} entities")

    def to_dict(self) -> dict:
        return {
            "text": self.text,
            "kind": self.kind.value,
            "assertion_index": self.assertion_index,
            "subject_entities": list(self.subject_entities),
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "Question":
        idx = d.get("assertion_index")
        return cls(
            text=str(d["text"]),
            kind=QuestionKind(d["kind"]),
            assertion_index=None if idx is None else int(idx),
            subject_entities=tuple(d.get("subject_entities") or ()),
        )


@dataclass(frozen=True)
class QuestionSet:
    prompt_id: str
    assertions: tuple[str, ...] = ()
    entity: tuple[Question, ...] = ()
    relational: tuple[Question, ...] = ()
    global_: tuple[Question, ...] = ()

    def __post_init__(self) -> None:
        for name in ("assertions", "entity", "relational", "global_"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        violations = self.violations()
        if violations:
            raise SchemaError(violations)

    def violations(self) -> list[str]:
        out = []
        expected = (
            ("entity", QuestionKind.ENTITY),
            ("relational", QuestionKind.RELATIONAL),
            ("global_", QuestionKind.GLOBAL),
        )
        for name, kind in expected:
            for i, q in enumerate(getattr(self, name)):
                if q.kind is not kind:
                    out.append(f"{name}[{i}] has kind {q.kind.value}")
                if q.assertion_index is not None and not 0 <= q.assertion_index < len(self.assertions):
                    out.append(f"{name}[{i}] assertion_index {q.assertion_index} out of range")
        if not self.global_:
            out.append("at least one global question is required")
        return out

    @property
    def counts(self) -> tuple[int, int, int]:
        return len(self.entity), len(self.relational), len(self.global_)

    def with_prompt_id(self, prompt_id: str) -> "QuestionSet":
        return QuestionSet(prompt_id, self.assertions, self.entity, self.relational, self.global_)

    def to_dict(self) -> dict:
        return {
            "prompt_id": self.prompt_id,
            "assertions": list(self.assertions),
            "entity": [q.to_dict() for q in self.entity],
            "relational": [q.to_dict() for q in self.relational],
            "global_": [q.to_dict() for q in self.global_],
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "QuestionSet":
        glob = d.get("global_", d.get("global", ()))
        return cls(
            prompt_id=str(d["prompt_id"]),
            assertions=tuple(d.get("assertions", ())),
            entity=tuple(Question.from_dict(q) for q in d.get("entity", ())),
            relational=tuple(Question.from_dict(q) for q in d.get("relational", ())),
            global_=tuple(Question.from_dict(q) for q in glob),
        )


@dataclass(frozen=True)
class Box:
    x0: int
    y0: int
    x1: int
    y1: int
    label: str = ""
    confidence: float = 1.0
    kind: BoxKind = BoxKind.ENTITY
    parents: tuple[int, int] | None = None

    def __post_init__(self) -> None:
        for name in ("x0", "y0", "x1", "y1"):
            v = getattr(self, name)
            if int(v) != v:
                raise InputError(f"box coordinate {name}={v!r} is not integral")
            object.__setattr__(self, name, int(v))
        if not (0 <= self.x0 < self.x1 and 0 <= self.y0 < self.y1):
            raise InputError(f"degenerate box {self.coords}")
        _unit(self.confidence, "box confidence")
        object.__setattr__(self, "kind", BoxKind(self.kind))
        if self.parents is not None:
            object.__setattr__(self, "parents", tuple(int(p) for p in self.parents))
        if self.kind is BoxKind.RELATIONAL and self.parents is None:
            raise InputError("relational box must record its two parent indices")

    @property
    def coords(self) -> tuple[int, int, int, int]:
        return self.x0, self.y0, self.x1, self.y1

    @property
    def width(self) -> int:
        return self.x1 - self.x0

    @property
    def height(self) -> int:
        return self.y1 - self.y0

    @property
    def area(self) -> int:
        return self.width * self.height

    def contains(self, other: "Box") -> bool:
        return self.x0 <= other.x0 and self.y0 <= other.y0 and self.x1 >= other.x1 and self.y1 >= other.y1

    def to_dict(self) -> dict:
        return {
            "x0": self.x0,
            "y0": self.y0,
            "x1": self.x1,
            "y1": self.y1,
            "label": self.label,
            "confidence": self.confidence,
            "kind": self.kind.value,
            "parents": None if self.parents is None else list(self.parents),
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "Box":
        parents = d.get("parents")
        return cls(
            x0=d["x0"],
            y0=d["y0"],
            x1=d["x1"],
            y1=d["y1"],
            label=str(d.get("label", "")),
            confidence=float(d.get("confidence", 1.0)),
            kind=BoxKind(d.get("kind", "entity")),
            parents=None if parents is None else tuple(parents),
        )


def whole_image_box(width: int, height: int) -> Box:
    return Box(0, 0, width, height, label="whole_image", confidence=1.0, kind=BoxKind.WHOLE_IMAGE)


@dataclass(frozen=True)
class BoxSet:
    image_id: str
    image_width: int
    image_height: int
    entity_boxes: tuple[Box, ...] = ()
    relational_boxes: tuple[Box, ...] = ()
    entity_fallback: bool = False
    relational_fallback: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "entity_boxes", tuple(self.entity_boxes))
        object.__setattr__(self, "relational_boxes", tuple(self.relational_boxes))
        for b in self.entity_boxes + self.relational_boxes:
            if b.x1 > self.image_width or b.y1 > self.image_height:
                raise InputError(f"box {b.coords} exceeds image {self.image_width}x{self.image_height}")

    @property
    def fallback_used(self) -> dict[str, bool]:
        return {"entity": self.entity_fallback, "relational": self.relational_fallback}

    def to_dict(self) -> dict:
        return {
            "image_id": self.image_id,
            "image_width": self.image_width,
            "image_height": self.image_height,
            "entity_boxes": [b.to_dict() for b in self.entity_boxes],
            "relational_boxes": [b.to_dict() for b in self.relational_boxes],
            "fallback_used": self.fallback_used,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "BoxSet":
        fb = d.get("fallback_used", {})
        return cls(
            image_id=str(d["image_id"]),
            image_width=int(d["image_width"]),
            image_height=int(d["image_height"]),
            entity_boxes=tuple(Box.from_dict(b) for b in d.get("entity_boxes", ())),
            relational_boxes=tuple(Box.from_dict(b) for b in d.get("relational_boxes", ())),
            entity_fallback=bool(fb.get("entity", False)),
            relational_fallback=bool(fb.get("relational", False)),
        )


def row_best(row: Sequence[float]) -> tuple[float, int]:
    """Max of a row and its argmax; ties go to the lowest index."""
    best_j = 0
    for j in range(1, len(row)):
        if row[j] > row[best_j]:
            best_j = j
    return row[best_j], best_j


@dataclass(frozen=True)
class ScoreMatrix:
    """Question-by-region yes-probabilities for one question group."""

    questions: tuple[str, ...]
    regions: tuple[Box, ...]
    values: tuple[tuple[float, ...], ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "questions", tuple(self.questions))
        object.__setattr__(self, "regions", tuple(self.regions))
        object.__setattr__(self, "values", tuple(tuple(float(v) for v in row) for row in self.values))
        if len(self.values) != len(self.questions):
            raise InputError("one row per question required")
        for row in self.values:
            if len(row) != len(self.regions):
                raise InputError("one column per region required")
            for v in row:
                _unit(v, "score matrix cell")

    @property
    def best(self) -> tuple[tuple[float, int], ...]:
        return tuple(row_best(row) for row in self.values if row)

    def to_dict(self) -> dict:
        return {
            "questions": list(self.questions),
            "regions": [b.to_dict() for b in self.regions],
            "values": [list(row) for row in self.values],
            "best": [{"value": v, "index": j} for v, j in self.best],
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "ScoreMatrix":
        return cls(
            questions=tuple(d["questions"]),
            regions=tuple(Box.from_dict(b) for b in d["regions"]),
            values=tuple(tuple(row) for row in d["values"]),
        )


@dataclass(frozen=True)
class QuestionScore:
    """Score for a single question; ``argmax`` is None for global questions."""

    text: str
    kind: QuestionKind
    score: float
    argmax: int | None = None

    def __post_init__(self) -> None:
        _unit(self.score, "question score")

    def to_dict(self) -> dict:
        return {"text": self.text, "kind": self.kind.value, "score": self.score, "argmax": self.argmax}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "QuestionScore":
        return cls(str(d["text"]), QuestionKind(d["kind"]), float(d["score"]), d.get("argmax"))


@dataclass(frozen=True)
class EvalResult:
    prompt_id: str
    image_id: str
    fine_grained: float | None
    coarse_grained: float
    overall: float
    per_question: tuple[QuestionScore, ...] = ()
    degeneracy_flags: frozenset[DegeneracyFlag] = field(default_factory=frozenset)
    policy: str = "drop_term_renormalize"
    category: Category = Category.OTHER

    def __post_init__(self) -> None:
        object.__setattr__(self, "per_question", tuple(self.per_question))
        object.__setattr__(self, "degeneracy_flags", frozenset(DegeneracyFlag(f) for f in self.degeneracy_flags))
        if self.fine_grained is not None:
            _unit(self.fine_grained, "fine_grained")
        _unit(self.coarse_grained, "coarse_grained")
        _unit(self.overall, "overall")

    @property
    def key(self) -> tuple[str, str]:
        return self.prompt_id, self.image_id

    def to_dict(self) -> dict:
        return {
            "prompt_id": self.prompt_id,
            "image_id": self.image_id,
            "category": self.category.value,
            "fine_grained": self.fine_grained,
            "coarse_grained": self.coarse_grained,
            "overall": self.overall,
            "per_question": [q.to_dict() for q in self.per_question],
            "degeneracy_flags": sorted(f.value for f in self.degeneracy_flags),
            "policy": self.policy,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "EvalResult":
        fine = d.get("fine_grained")
        return cls(
            prompt_id=str(d["prompt_id"]),
            image_id=str(d["image_id"]),
            fine_grained=None if fine is None else float(fine),
            coarse_grained=float(d["coarse_grained"]),
            overall=float(d["overall"]),
            per_question=tuple(QuestionScore.from_dict(q) for q in d.get("per_question", ())),
            degeneracy_flags=frozenset(DegeneracyFlag(f) for f in d.get("degeneracy_flags", ())),
            policy=str(d.get("policy", "drop_term_renormalize")),
            category=Category(d.get("category", "other")),
        )


def iter_jsonl(lines: Iterable[str]) -> Iterable[tuple[int, dict]]:
    """Yield (1-based line number, object) for nonblank JSON lines."""
    for lineno, line in enumerate(lines, start=1):
        if line.strip():
            yield lineno, json.loads(line)
