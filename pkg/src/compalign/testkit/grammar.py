"""The fixed prompt grammar shared by synthetic scenes and oracle backends.

    prompt  := phrase (link phrase)*
    phrase  := ("a" | "an") attribute* noun
    link    := "and" | "left of" | "right of" | "above" | "below" | "next to"

A link relates the phrases immediately before and after it. "and" only
asserts that both objects are present.
"""

from __future__ import annotations

import itertools
import math
import re
from dataclasses import dataclass
from typing import Iterable, Sequence

from ..errors import UnsupportedPromptError

SHAPES = ("square", "circle", "triangle")
COLORS = ("red", "blue", "green", "yellow")
TEXTURES = ("solid", "striped")
PREDICATES = ("left_of", "right_of", "above", "below", "next_to")
AND = "and"

PREDICATE_WORDS = {
    "left_of": "left of",
    "right_of": "right of",
    "above": "above",
    "below": "below",
    "next_to": "next to",
}
_WORDS_TO_PREDICATE = {v: k for k, v in PREDICATE_WORDS.items()}
_FLIPPED = {"left_of": "right_of", "right_of": "left_of", "above": "below", "below": "above", "next_to": "next_to"}

# extra color words accepted by the parser so free-form prompts like
# "a red apple and a blue car" decompose; scenes only render COLORS
_EXTRA_COLORS = ("black", "white", "brown", "orange", "purple", "pink", "gray", "grey")
_COLOR_WORDS = frozenset(COLORS + _EXTRA_COLORS)
_TEXTURE_WORDS = frozenset(TEXTURES)
_RESERVED = frozenset({"a", "an", "and", "left", "right", "of", "above", "below", "next", "to", "the"})


@dataclass(frozen=True)
class ObjectPhrase:
    noun: str
    color: str | None = None
    texture: str | None = None

    @property
    def attributes(self) -> tuple[str, ...]:
        return tuple(a for a in (self.color, self.texture) if a is not None)

    def text(self) -> str:
        words = [*self.attributes, self.noun]
        article = "an" if words[0][0] in "aeiou" else "a"
        return " ".join([article, *words])


@dataclass(frozen=True)
class Link:
    left: int
    right: int
    predicate: str  # one of PREDICATES or AND


@dataclass(frozen=True)
class ParsedPrompt:
    objects: tuple[ObjectPhrase, ...]
    links: tuple[Link, ...]


def format_prompt(objects: Sequence[ObjectPhrase], connectors: Sequence[str]) -> str:
    """Inverse of :func:`parse_prompt`; ``connectors[i]`` joins objects i and i+1."""
    if len(connectors) != max(0, len(objects) - 1):
        raise ValueError("need exactly one connector between consecutive objects")
    parts = [objects[0].text()]
    for conn, obj in zip(connectors, objects[1:]):
        parts.append(AND if conn == AND else PREDICATE_WORDS[conn])
        parts.append(obj.text())
    return " ".join(parts)


_TOKEN = re.compile(r"[a-z]+")


def parse_prompt(text: str) -> ParsedPrompt:
    raw = text.strip().rstrip(".").lower()
    tokens = raw.split()
    if not tokens or any(not _TOKEN.fullmatch(t) for t in tokens):
        raise UnsupportedPromptError(f"prompt outside the grammar: {text!r}")
    objects: list[ObjectPhrase] = []
    links: list[Link] = []
    pos = 0
    pending: str | None = None

    def fail():
        raise UnsupportedPromptError(f"prompt outside the grammar: {text!r}")

    while pos < len(tokens):
        if tokens[pos] not in ("a", "an"):
            fail()
        pos += 1
        color = texture = None
        while pos < len(tokens) and (tokens[pos] in _COLOR_WORDS or tokens[pos] in _TEXTURE_WORDS):
            word = tokens[pos]
            if word in _COLOR_WORDS:
                if color is not None:
                    fail()
                color = word
            else:
                if texture is not None:
                    fail()
                texture = word
            pos += 1
        if pos >= len(tokens) or tokens[pos] in _RESERVED:
            fail()
        objects.append(ObjectPhrase(tokens[pos], color, texture))
        pos += 1
        if pending is not None:
            links.append(Link(len(objects) - 2, len(objects) - 1, pending))
            pending = None
        if pos == len(tokens):
            break
        for width in (2, 1):
            words = " ".join(tokens[pos : pos + width])
            if words == AND or words in _WORDS_TO_PREDICATE:
                pending = AND if words == AND else _WORDS_TO_PREDICATE[words]
                pos += width
                break
        else:
            fail()
    if pending is not None or not objects:
        fail()
    return ParsedPrompt(tuple(objects), tuple(links))


def center(box) -> tuple[float, float]:
    return (box.x0 + box.x1) / 2, (box.y0 + box.y1) / 2


def predicate_holds(predicate: str, a, b) -> bool:
    """Spatial predicate between the centers of boxes ``a`` and ``b``."""
    (ax, ay), (bx, by) = center(a), center(b)
    if predicate == "left_of":
        return ax < bx
    if predicate == "right_of":
        return ax > bx
    if predicate == "above":
        return ay < by
    if predicate == "below":
        return ay > by
    if predicate == "next_to":
        reach = (a.x1 - a.x0 + a.y1 - a.y0 + b.x1 - b.x0 + b.y1 - b.y0) / 2
        return math.hypot(ax - bx, ay - by) <= reach
    if predicate == AND:
        return True
    raise ValueError(f"unknown predicate {predicate!r}")


def flipped(predicate: str) -> str:
    return _FLIPPED[predicate]


def phrase_matches(phrase: ObjectPhrase, obj) -> bool:
    """``obj`` needs ``shape``, ``color``, ``texture`` attributes."""
    if phrase.noun != obj.shape:
        return False
    if phrase.color is not None and phrase.color != obj.color:
        return False
    if phrase.texture is not None and phrase.texture != obj.texture:
        return False
    return True


def satisfies(prompt: ParsedPrompt, objects: Sequence) -> bool:
    """True iff prompt objects map injectively onto ``objects`` with every link holding."""
    n = len(prompt.objects)
    candidates = [[k for k, o in enumerate(objects) if phrase_matches(p, o)] for p in prompt.objects]
    if any(not c for c in candidates):
        return False
    for assignment in itertools.product(*candidates):
        if len(set(assignment)) != n:
            continue
        if all(
            predicate_holds(l.predicate, objects[assignment[l.left]].box, objects[assignment[l.right]].box)
            for l in prompt.links
        ):
            return True
    return False


def exists_pair(objects: Iterable, a: ObjectPhrase, b: ObjectPhrase, predicate: str) -> bool:
    """Two distinct objects matching ``a`` and ``b`` with ``predicate`` holding between them."""
    objs = list(objects)
    for i, oa in enumerate(objs):
        if not phrase_matches(a, oa):
            continue
        for j, ob in enumerate(objs):
            if i != j and phrase_matches(b, ob) and predicate_holds(predicate, oa.box, ob.box):
                return True
    return False
