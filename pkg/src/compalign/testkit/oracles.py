"""Deterministic ground-truth stand-ins for the generator, detector and VQA models."""

from __future__ import annotations

import json
import re
import threading
from dataclasses import dataclass
from pathlib import Path

from ..core import Box, Question, QuestionKind, QuestionSet
from ..errors import BackendError, InputError, UnsupportedPromptError
from ..questions import GeneratorBackend, extract_target_prompt
from ..regions import Region, SidecarDetector, sidecar_path
from ..scoring import VqaBackend
from . import grammar
from .grammar import AND, PREDICATE_WORDS

__all__ = ["oracle_question_gen", "OracleGenerator", "OracleVqa", "SidecarDetector", "GroundTruthObject"]


def _mention(o: grammar.ObjectPhrase) -> str:
    return " ".join([*o.attributes, o.noun])


def _assertion(link: grammar.Link, objects) -> str:
    a, b = _mention(objects[link.left]), _mention(objects[link.right])
    if link.predicate == AND:
        return f"the {a} and the {b} are both present"
    return f"the {a} is {PREDICATE_WORDS[link.predicate]} the {b}"


def oracle_question_gen(prompt_text: str, prompt_id: str = "") -> QuestionSet:
    """Rule-based decomposition of a grammar prompt.

    One entity question per (object, attribute) pair, or an existence
    question for a bare noun; one relational question per link; one global
    question restating the prompt.
    """
    parsed = grammar.parse_prompt(prompt_text)
    objects = parsed.objects
    assertions = [f"there is {o.text()}" for o in objects]
    entity = []
    for i, o in enumerate(objects):
        if not o.attributes:
            entity.append(Question(f"Is this a {o.noun}?", QuestionKind.ENTITY, i, (o.noun,)))
        for attr in o.attributes:
            entity.append(Question(f"Is this {o.noun} {attr}?", QuestionKind.ENTITY, i, (o.noun,)))
    relational = []
    for link in parsed.links:
        a, b = objects[link.left], objects[link.right]
        if link.predicate == AND:
            text = f"Are the {a.noun} and the {b.noun} both present?"
        else:
            text = f"Is the {a.noun} {PREDICATE_WORDS[link.predicate]} the {b.noun}?"
        assertions.append(_assertion(link, objects))
        relational.append(Question(text, QuestionKind.RELATIONAL, len(assertions) - 1, (a.noun, b.noun)))
    glob = (Question(f"Does this image show {prompt_text.strip().rstrip('.')}?", QuestionKind.GLOBAL),)
    return QuestionSet(prompt_id, tuple(assertions), tuple(entity), tuple(relational), glob)


class OracleGenerator(GeneratorBackend):
    """Answers decomposition requests with :func:`oracle_question_gen` as JSON.

    Prompts outside the grammar get a prose refusal, which the parser rejects.
    """

    backend_id = "oracle-grammar"
    model_version = "1"

    def __init__(self) -> None:
        self.calls = 0
        self._lock = threading.Lock()

    def complete(self, request: str) -> str:
        with self._lock:
            self.calls += 1
        prompt = extract_target_prompt(request)
        try:
            qs = oracle_question_gen(prompt)
        except UnsupportedPromptError:
            return "Sorry, I can only decompose prompts from the scene grammar."

        def items(questions):
            return [
                {"text": q.text, "assertion_index": q.assertion_index, "subject_entities": list(q.subject_entities)}
                for q in questions
            ]

        return json.dumps(
            {
                "assertions": list(qs.assertions),
                "entity_questions": items(qs.entity),
                "relational_questions": items(qs.relational),
                "global_questions": items(qs.global_),
            },
            indent=2,
        )


@dataclass(frozen=True)
class GroundTruthObject:
    shape: str
    color: str
    texture: str
    box: Box


def load_ground_truth(image_path: str | Path) -> list[GroundTruthObject]:
    records = json.loads(sidecar_path(image_path).read_text(encoding="utf-8"))
    return [
        GroundTruthObject(
            r["label"], r.get("color", ""), r.get("texture", "solid"), Box(r["x0"], r["y0"], r["x1"], r["y1"])
        )
        for r in records
    ]


def _intersection(a: tuple[int, int, int, int], b: Box) -> int:
    w = min(a[2], b.x1) - max(a[0], b.x0)
    h = min(a[3], b.y1) - max(a[1], b.y0)
    return max(0, w) * max(0, h)


_ENTITY_EXISTS = re.compile(r"^Is this an? (\w+)\?$")
_ENTITY_ATTR = re.compile(r"^Is this (\w+) (\w+)\?$")
_RELATION = re.compile(r"^Is the ([a-z ]+?) (left of|right of|above|below|next to) the ([a-z ]+)\?$")
_PRESENT = re.compile(r"^Are the ([a-z ]+?) and the ([a-z ]+) both present\?$")
_GLOBAL = re.compile(r"^Does this image show (.+)\?$")
_PREDICATE_FROM_WORDS = {v: k for k, v in PREDICATE_WORDS.items()}


def _phrase(mention: str) -> grammar.ObjectPhrase:
    (obj,) = grammar.parse_prompt(f"a {mention}").objects
    return obj


class OracleVqa(VqaBackend):
    """Answers grammar questions from the sidecar annotations of the region's image.

    Only objects with at least half their area inside the region's crop are
    visible to the question. Hard mode answers 1.0/0.0; soft mode 0.95/0.05.
    """

    backend_id = "oracle-vqa"

    def __init__(self, soft: bool = False):
        self.soft = soft
        self.model_version = "1-soft" if soft else "1-hard"
        self.calls = 0
        self._lock = threading.Lock()
        self._truth: dict[Path, list[GroundTruthObject]] = {}

    def _objects(self, region: Region) -> list[GroundTruthObject]:
        if region.source is None or region.source.path is None:
            raise BackendError("oracle VQA needs regions cut from images on disk")
        path = region.source.path
        with self._lock:
            if path not in self._truth:
                self._truth[path] = load_ground_truth(path)
            objs = self._truth[path]
        return [o for o in objs if 2 * _intersection(region.rect, o.box) >= o.box.area]

    def answer(self, region: Region, question: str) -> bool:
        visible = self._objects(region)
        q = question.strip()
        if m := _ENTITY_EXISTS.match(q):
            return any(o.shape == m[1] for o in visible)
        if m := _RELATION.match(q):
            return grammar.exists_pair(visible, _phrase(m[1]), _phrase(m[3]), _PREDICATE_FROM_WORDS[m[2]])
        if m := _PRESENT.match(q):
            return grammar.exists_pair(visible, _phrase(m[1]), _phrase(m[2]), AND)
        if m := _GLOBAL.match(q):
            return grammar.satisfies(grammar.parse_prompt(m[1]), visible)
        if m := _ENTITY_ATTR.match(q):
            noun, attr = m[1], m[2]
            return any(o.shape == noun and attr in (o.color, o.texture) for o in visible)
        raise InputError(f"oracle VQA cannot parse question {question!r}")

    def yes_probability(self, region: Region, question: str) -> float:
        with self._lock:
            self.calls += 1
        yes = self.answer(region, question)
        if self.soft:
            return 0.95 if yes else 0.05
        return 1.0 if yes else 0.0
