"""Prompt decomposition into entity, relational and global yes/no questions.

A text-generation backend is asked, with a two-exemplar in-context template,
to return a JSON object::

    {"assertions": [...], "entity_questions": [...],
     "relational_questions": [...], "global_questions": [...]}

Question items are either plain strings or objects with ``text`` and the
optional ``assertion_index`` / ``subject_entities`` keys. Invalid replies are
re-asked with the violation list appended, up to ``max_retries`` times.
"""

from __future__ import annotations

import json
import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping

from .cache import CacheStore, cache_key
from .core import PromptRecord, Question, QuestionKind, QuestionSet
from .errors import DecompositionError, InputError, ParseError, SchemaError

log = logging.getLogger(__name__)

SCHEMA_KEYS = ("assertions", "entity_questions", "relational_questions", "global_questions")
_GROUPS = (
    ("entity_questions", QuestionKind.ENTITY),
    ("relational_questions", QuestionKind.RELATIONAL),
    ("global_questions", QuestionKind.GLOBAL),
)

TARGET_MARKER = "### Target\nPrompt: "
OUTPUT_MARKER = "\nOutput:"


class GeneratorBackend(ABC):
    """Text-completion model used to decompose prompts."""

    backend_id: str = "generator"
    model_version: str = "unversioned"

    @abstractmethod
    def complete(self, request: str) -> str:
        """Return the raw model response for ``request``."""


@dataclass(frozen=True)
class Exemplar:
    prompt: str
    output: str  # JSON text exactly as it should appear in the request


@dataclass(frozen=True)
class GenerationTemplate:
    template_id: str
    version: str
    instruction_text: str
    exemplars: tuple[Exemplar, ...]

    def to_dict(self) -> dict:
        return {
            "template_id": self.template_id,
            "version": self.version,
            "instruction_text": self.instruction_text,
            "exemplars": [{"prompt": e.prompt, "output": e.output} for e in self.exemplars],
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "GenerationTemplate":
        exemplars = []
        for e in d["exemplars"]:
            out = e["output"]
            if not isinstance(out, str):
                out = json.dumps(out, indent=2)
            exemplars.append(Exemplar(str(e["prompt"]), out))
        return cls(str(d["template_id"]), str(d["version"]), str(d["instruction_text"]), tuple(exemplars))


def load_template(path: str | Path) -> GenerationTemplate:
    return GenerationTemplate.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


_INSTRUCTION = """\
You decompose a text-to-image prompt into yes/no questions for checking a generated image.
1. Split the prompt into short atomic assertions.
2. For each assertion about a single object and its attributes, write entity questions \
about that one object ("Is this <object> <attribute>?").
3. For each assertion relating two or more objects, write relational questions \
("Is the <object A> <relation> the <object B>?").
4. Write 1 to 3 global questions about the whole prompt ("Does this image show ...?").
Every question must be answerable with yes or no.
Reply with a single JSON object and nothing else, using exactly the keys \
"assertions", "entity_questions", "relational_questions", "global_questions". \
Each question is an object with "text", "assertion_index" (index into assertions, \
or null for global questions) and "subject_entities" (object names the question is about)."""


def _q(text: str, idx: int | None, subjects: list[str]) -> dict:
    return {"text": text, "assertion_index": idx, "subject_entities": subjects}


_EXEMPLAR_1 = {
    "assertions": ["there is a brown dog", "there is a red sofa", "the dog is sleeping on the sofa"],
    "entity_questions": [_q("Is this dog brown?", 0, ["dog"]), _q("Is this sofa red?", 1, ["sofa"])],
    "relational_questions": [_q("Is the dog sleeping on the sofa?", 2, ["dog", "sofa"])],
    "global_questions": [_q("Does this image show a brown dog sleeping on a red sofa?", None, [])],
}
_EXEMPLAR_2 = {
    "assertions": [
        "there is a wooden chair",
        "there is a round glass table",
        "the chair is to the left of the table",
    ],
    "entity_questions": [
        _q("Is this chair wooden?", 0, ["chair"]),
        _q("Is this table round?", 1, ["table"]),
        _q("Is this table made of glass?", 1, ["table"]),
    ],
    "relational_questions": [_q("Is the chair to the left of the table?", 2, ["chair", "table"])],
    "global_questions": [
        _q("Does this image show a wooden chair to the left of a round glass table?", None, []),
        _q("Are there a chair and a table in this image?", None, []),
    ],
}

DEFAULT_TEMPLATE = GenerationTemplate(
    template_id="compositional-yesno",
    version="1",
    instruction_text=_INSTRUCTION,
    exemplars=(
        Exemplar("a brown dog sleeping on a red sofa", json.dumps(_EXEMPLAR_1, indent=2)),
        Exemplar("a wooden chair to the left of a round glass table", json.dumps(_EXEMPLAR_2, indent=2)),
    ),
)


def build_generation_request(prompt_text: str, template: GenerationTemplate = DEFAULT_TEMPLATE) -> str:
    """Instruction, then each exemplar in order, then the target prompt verbatim."""
    if not prompt_text or not prompt_text.strip():
        raise InputError("prompt text must be nonempty")
    parts = [template.instruction_text.rstrip("\n"), ""]
    for i, ex in enumerate(template.exemplars, start=1):
        parts += [f"### Example {i}", f"Prompt: {ex.prompt}", "Output:", ex.output, ""]
    parts.append(f"{TARGET_MARKER}{prompt_text}{OUTPUT_MARKER}")
    return "\n".join(parts)


def extract_target_prompt(request: str) -> str:
    """Inverse of the target section of :func:`build_generation_request`."""
    head, sep, tail = request.rpartition(TARGET_MARKER)
    if not sep:
        raise InputError("request has no target prompt section")
    prompt, sep, _ = tail.rpartition(OUTPUT_MARKER)
    if not sep:
        raise InputError("request has no output marker")
    return prompt


def _first_json_object(raw: str) -> dict:
    decoder = json.JSONDecoder()
    start = raw.find("{")
    while start != -1:
        try:
            obj, _ = decoder.raw_decode(raw, start)
        except json.JSONDecodeError:
            obj = None
        if isinstance(obj, dict):
            return obj
        start = raw.find("{", start + 1)
    raise ParseError("no JSON object found in generator output")


def _coerce_question(item: Any, where: str, kind: QuestionKind, n_assertions: int, violations: list[str]):
    if isinstance(item, str):
        item = {"text": item}
    if not isinstance(item, dict):
        violations.append(f"{where}: expected string or object, got {type(item).__name__}")
        return None
    text = item.get("text")
    if not isinstance(text, str) or not text.strip():
        violations.append(f"{where}: missing or empty 'text'")
        return None
    idx = item.get("assertion_index")
    if idx is not None and (isinstance(idx, bool) or not isinstance(idx, int) or not 0 <= idx < n_assertions):
        violations.append(f"{where}: assertion_index {idx!r} does not index assertions")
        return None
    subjects = item.get("subject_entities", item.get("entities", []))
    if subjects is None:
        subjects = []
    if not isinstance(subjects, list) or not all(isinstance(s, str) for s in subjects):
        violations.append(f"{where}: subject_entities must be a list of strings")
        return None
    if kind is QuestionKind.ENTITY and len(subjects) > 1:
        violations.append(f"{where}: entity question names {len(subjects)} entities")
        return None
    if kind is QuestionKind.RELATIONAL and len(subjects) == 1:
        violations.append(f"{where}: relational question names a single entity")
        return None
    return Question(text.strip(), kind, idx, tuple(subjects))


def parse_generator_output(raw: str, prompt_id: str = "") -> QuestionSet:
    """Extract and validate the first JSON object in ``raw``.

    Raises ParseError when no object is present and SchemaError (with the
    full violation list) when the object does not match the schema.
    """
    obj = _first_json_object(raw)
    violations: list[str] = []
    for key in SCHEMA_KEYS:
        if key not in obj:
            violations.append(f"missing key {key!r}")
        elif not isinstance(obj[key], list):
            violations.append(f"{key!r} must be a list")
    if violations:
        raise SchemaError(violations)

    assertions = obj["assertions"]
    if not all(isinstance(a, str) and a.strip() for a in assertions):
        violations.append("assertions must be nonempty strings")
    groups: dict[QuestionKind, list[Question]] = {}
    for key, kind in _GROUPS:
        qs = []
        for i, item in enumerate(obj[key]):
            q = _coerce_question(item, f"{key}[{i}]", kind, len(assertions), violations)
            if q is not None:
                qs.append(q)
        groups[kind] = qs
    if not obj["global_questions"]:
        violations.append("global_questions must contain at least one question")
    if violations:
        raise SchemaError(violations)
    return QuestionSet(
        prompt_id=prompt_id,
        assertions=tuple(a.strip() for a in assertions),
        entity=tuple(groups[QuestionKind.ENTITY]),
        relational=tuple(groups[QuestionKind.RELATIONAL]),
        global_=tuple(groups[QuestionKind.GLOBAL]),
    )


def repair_request(request: str, violations: list[str]) -> str:
    lines = "\n".join(f"- {v}" for v in violations)
    return (
        f"{request}\n\n### Repair\nYour previous reply could not be used:\n{lines}\n"
        "Reply again with only the corrected JSON object."
    )


def qgen_cache_key(backend: GeneratorBackend, template: GenerationTemplate, prompt_text: str) -> str:
    return cache_key(
        "qgen", backend.backend_id, backend.model_version, template.template_id, template.version, prompt_text
    )


def decompose_prompt(
    prompt: PromptRecord,
    backend: GeneratorBackend,
    template: GenerationTemplate = DEFAULT_TEMPLATE,
    max_retries: int = 2,
    cache: CacheStore | None = None,
) -> QuestionSet:
    if max_retries < 0:
        raise InputError("max_retries must be >= 0")
    key = qgen_cache_key(backend, template, prompt.text)
    if cache is None:
        return _generate(prompt, backend, template, max_retries)
    with cache.locks(key):
        hit = cache.get_json(key)
        if hit is not None:
            return QuestionSet.from_dict({**hit, "prompt_id": prompt.id})
        qs = _generate(prompt, backend, template, max_retries)
        payload = qs.to_dict()
        payload.pop("prompt_id")
        cache.put_json(key, payload)
        return qs


def _generate(prompt: PromptRecord, backend: GeneratorBackend, template: GenerationTemplate, max_retries: int):
    base = build_generation_request(prompt.text, template)
    request = base
    raw = None
    for attempt in range(max_retries + 1):
        raw = backend.complete(request)
        try:
            return parse_generator_output(raw, prompt_id=prompt.id)
        except ParseError as exc:
            violations = [str(exc)]
        except SchemaError as exc:
            violations = exc.violations
        log.info("prompt %s: attempt %d rejected: %s", prompt.id, attempt + 1, "; ".join(violations))
        request = repair_request(base, violations)
    raise DecompositionError(
        f"prompt {prompt.id!r}: no valid decomposition after {max_retries + 1} attempts",
        last_raw=raw,
        attempts=max_retries + 1,
    )
