"""Deterministic synthetic scenes with ground-truth annotations."""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Sequence

from PIL import Image, ImageDraw

from ..core import Box, Category, PromptRecord
from ..errors import SpecError
from ..regions import sidecar_path
from . import grammar
from .grammar import AND, COLORS, PREDICATES, SHAPES, TEXTURES, ObjectPhrase

RGB = {
    "red": (220, 30, 30),
    "blue": (30, 60, 220),
    "green": (30, 170, 60),
    "yellow": (235, 200, 20),
}
BACKGROUND = (245, 245, 245)
STRIPE_PERIOD = 8
STRIPE_WIDTH = 3


@dataclass(frozen=True)
class SceneObject:
    shape: str
    color: str
    box: Box
    texture: str = "solid"

    def __post_init__(self) -> None:
        if self.shape not in SHAPES:
            raise SpecError(f"unknown shape {self.shape!r}")
        if self.color not in COLORS:
            raise SpecError(f"unknown color {self.color!r}")
        if self.texture not in TEXTURES:
            raise SpecError(f"unknown texture {self.texture!r}")

    def phrase(self) -> ObjectPhrase:
        return ObjectPhrase(self.shape, self.color, self.texture)

    def to_dict(self) -> dict:
        return {"shape": self.shape, "color": self.color, "texture": self.texture, "box": self.box.to_dict()}

    @classmethod
    def from_dict(cls, d) -> "SceneObject":
        return cls(d["shape"], d["color"], Box.from_dict(d["box"]), d.get("texture", "solid"))


@dataclass(frozen=True)
class Relation:
    subject: int
    predicate: str
    object: int

    def __post_init__(self) -> None:
        if self.predicate not in PREDICATES:
            raise SpecError(f"unknown predicate {self.predicate!r}")

    def to_dict(self) -> dict:
        return {"subject": self.subject, "predicate": self.predicate, "object": self.object}


def _overlaps(a: Box, b: Box) -> bool:
    return a.x0 < b.x1 and b.x0 < a.x1 and a.y0 < b.y1 and b.y0 < a.y1


def render_prompt(objects: Sequence[SceneObject], relations: Sequence[Relation]) -> str:
    """Prompt text for a scene whose relations link consecutive objects only."""
    if not objects:
        raise SpecError("a scene needs at least one object")
    connectors = [AND] * (len(objects) - 1)
    for r in relations:
        if r.object != r.subject + 1 or connectors[r.subject] != AND:
            raise SpecError("prompt grammar only relates consecutive objects, one relation per pair")
        connectors[r.subject] = r.predicate
    return grammar.format_prompt([o.phrase() for o in objects], connectors)


@dataclass(frozen=True)
class SceneSpec:
    width: int
    height: int
    objects: tuple[SceneObject, ...]
    relations: tuple[Relation, ...] = ()
    prompt_text: str = ""

    def __post_init__(self) -> None:
        object.__setattr__(self, "objects", tuple(self.objects))
        object.__setattr__(self, "relations", tuple(self.relations))
        for i, o in enumerate(self.objects):
            if o.box.x1 > self.width or o.box.y1 > self.height:
                raise SpecError(f"object {i} box {o.box.coords} outside the {self.width}x{self.height} canvas")
            for j in range(i):
                if _overlaps(o.box, self.objects[j].box):
                    raise SpecError(f"objects {j} and {i} overlap")
        for r in self.relations:
            if not (0 <= r.subject < len(self.objects) and 0 <= r.object < len(self.objects)):
                raise SpecError(f"relation {r} indexes a missing object")
            if r.subject == r.object:
                raise SpecError("relation must join two distinct objects")
            if not grammar.predicate_holds(r.predicate, self.objects[r.subject].box, self.objects[r.object].box):
                raise SpecError(f"relation {r} is false for the stated boxes")
        if not self.prompt_text:
            object.__setattr__(self, "prompt_text", render_prompt(self.objects, self.relations))

    @property
    def category(self) -> Category:
        if self.relations:
            return Category.SPATIAL
        if any(o.texture != "solid" for o in self.objects):
            return Category.TEXTURE
        return Category.COLOR

    def satisfies_prompt(self) -> bool:
        return grammar.satisfies(grammar.parse_prompt(self.prompt_text), self.objects)

    def to_dict(self) -> dict:
        return {
            "width": self.width,
            "height": self.height,
            "objects": [o.to_dict() for o in self.objects],
            "relations": [r.to_dict() for r in self.relations],
            "prompt_text": self.prompt_text,
        }

    @classmethod
    def from_dict(cls, d) -> "SceneSpec":
        return cls(
            d["width"],
            d["height"],
            tuple(SceneObject.from_dict(o) for o in d["objects"]),
            tuple(Relation(r["subject"], r["predicate"], r["object"]) for r in d.get("relations", ())),
            d.get("prompt_text", ""),
        )


def _shape_mask(size: tuple[int, int], obj: SceneObject) -> Image.Image:
    mask = Image.new("L", size, 0)
    draw = ImageDraw.Draw(mask)
    b = obj.box
    rect = (b.x0, b.y0, b.x1 - 1, b.y1 - 1)
    if obj.shape == "square":
        draw.rectangle(rect, fill=255)
    elif obj.shape == "circle":
        draw.ellipse(rect, fill=255)
    else:
        draw.polygon([((b.x0 + b.x1 - 1) / 2, b.y0), (b.x0, b.y1 - 1), (b.x1 - 1, b.y1 - 1)], fill=255)
    return mask


def render_image(spec: SceneSpec) -> Image.Image:
    size = (spec.width, spec.height)
    img = Image.new("RGB", size, BACKGROUND)
    stripes = Image.new("L", size, 0)
    sdraw = ImageDraw.Draw(stripes)
    for y in range(0, spec.height, STRIPE_PERIOD):
        sdraw.rectangle((0, y, spec.width - 1, y + STRIPE_WIDTH - 1), fill=255)
    white = Image.new("RGB", size, (255, 255, 255))
    for obj in spec.objects:
        mask = _shape_mask(size, obj)
        img.paste(Image.new("RGB", size, RGB[obj.color]), (0, 0), mask)
        if obj.texture == "striped":
            img.paste(white, (0, 0), Image.composite(stripes, Image.new("L", size, 0), mask))
    return img


def annotations(spec: SceneSpec) -> list[dict]:
    return [
        {
            "x0": o.box.x0,
            "y0": o.box.y0,
            "x1": o.box.x1,
            "y1": o.box.y1,
            "label": o.shape,
            "confidence": 1.0,
            "color": o.color,
            "texture": o.texture,
        }
        for o in spec.objects
    ]


def render_scene(spec: SceneSpec, path: str | Path) -> tuple[Path, Path]:
    """Write ``path`` (PNG) and its ``.boxes.json`` sidecar; both byte-deterministic."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    render_image(spec).save(path, format="PNG")
    side = sidecar_path(path)
    side.write_text(json.dumps(annotations(spec), indent=1) + "\n", encoding="utf-8")
    return path, side


class CorruptionKind(str, Enum):
    SWAP_COLORS = "swap_colors"
    SWAP_POSITIONS = "swap_positions"
    DROP_OBJECT = "drop_object"
    CHANGE_SHAPE = "change_shape"
    CHANGE_TEXTURE = "change_texture"


_ARITY = {
    CorruptionKind.SWAP_COLORS: 2,
    CorruptionKind.SWAP_POSITIONS: 2,
    CorruptionKind.DROP_OBJECT: 1,
    CorruptionKind.CHANGE_SHAPE: 1,
    CorruptionKind.CHANGE_TEXTURE: 1,
}


@dataclass(frozen=True)
class Corruption:
    kind: CorruptionKind
    targets: tuple[int, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", CorruptionKind(self.kind))
        object.__setattr__(self, "targets", tuple(self.targets))

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "targets": list(self.targets)}


def _refresh_relations(objects: Sequence[SceneObject], relations: Sequence[Relation]) -> tuple[Relation, ...]:
    """Keep relations that still hold, flip the ones that reversed, drop the rest."""
    out = []
    for r in relations:
        a, b = objects[r.subject].box, objects[r.object].box
        if grammar.predicate_holds(r.predicate, a, b):
            out.append(r)
        elif grammar.predicate_holds(grammar.flipped(r.predicate), a, b):
            out.append(Relation(r.subject, grammar.flipped(r.predicate), r.object))
    return tuple(out)


def _replacement_shape(shape: str, prompt_text: str) -> str:
    # a shape the prompt never names, so the new object cannot stand in for another phrase
    named = {o.noun for o in grammar.parse_prompt(prompt_text).objects}
    for candidate in SHAPES:
        if candidate != shape and candidate not in named:
            return candidate
    raise SpecError(f"every shape is named in {prompt_text!r}; no replacement for {shape}")


def corrupt(spec: SceneSpec, corruption: Corruption) -> SceneSpec:
    """Mutate the scene so that its image no longer matches ``spec.prompt_text``.

    The original prompt text is kept. Raises SpecError for bad targets or when
    the mutation would leave the prompt satisfied (e.g. swapping equal colors).
    """
    kind, targets = corruption.kind, corruption.targets
    n = len(spec.objects)
    if len(targets) != _ARITY[kind]:
        raise SpecError(f"{kind.value} takes {_ARITY[kind]} target(s), got {len(targets)}")
    if any(not 0 <= t < n for t in targets):
        raise SpecError(f"corruption target out of range for {n} objects: {targets}")
    if len(set(targets)) != len(targets):
        raise SpecError("corruption targets must be distinct")
    objs = list(spec.objects)
    relations = spec.relations
    if kind is CorruptionKind.SWAP_COLORS:
        i, j = targets
        objs[i], objs[j] = replace(objs[i], color=objs[j].color), replace(objs[j], color=objs[i].color)
    elif kind is CorruptionKind.SWAP_POSITIONS:
        i, j = targets
        objs[i], objs[j] = replace(objs[i], box=objs[j].box), replace(objs[j], box=objs[i].box)
    elif kind is CorruptionKind.DROP_OBJECT:
        (i,) = targets
        del objs[i]
        shift = lambda k: k - 1 if k > i else k  # noqa: E731
        relations = tuple(
            Relation(shift(r.subject), r.predicate, shift(r.object))
            for r in relations
            if i not in (r.subject, r.object)
        )
    elif kind is CorruptionKind.CHANGE_SHAPE:
        (i,) = targets
        objs[i] = replace(objs[i], shape=_replacement_shape(objs[i].shape, spec.prompt_text))
    else:
        (i,) = targets
        objs[i] = replace(objs[i], texture="solid" if objs[i].texture == "striped" else "striped")
    out = SceneSpec(spec.width, spec.height, tuple(objs), _refresh_relations(objs, relations), spec.prompt_text)
    if out.satisfies_prompt():
        raise SpecError(f"{kind.value}{targets} leaves the prompt satisfied")
    return out


def applicable_corruptions(spec: SceneSpec) -> list[Corruption]:
    """Every single corruption that breaks the scene's prompt."""
    out = []
    n = len(spec.objects)
    for kind, arity in _ARITY.items():
        if arity == 1:
            candidates = [(i,) for i in range(n)]
        else:
            candidates = [(i, j) for i in range(n) for j in range(i + 1, n)]
        for t in candidates:
            c = Corruption(kind, t)
            try:
                corrupt(spec, c)
            except SpecError:
                continue
            out.append(c)
    return out


CANVAS = 256
GRID = 3


def random_scene(rng: random.Random, n_objects: int | None = None, canvas: int = CANVAS) -> SceneSpec:
    """Objects on a jittered 3x3 grid; consecutive objects are related or joined by "and".

    Shapes are distinct within a scene so that shape nouns identify objects.
    """
    n = n_objects if n_objects is not None else rng.randint(1, len(SHAPES))
    if not 1 <= n <= len(SHAPES):
        raise SpecError(f"scenes hold 1 to {len(SHAPES)} objects, got {n}")
    cell = canvas // GRID
    cells = rng.sample(range(GRID * GRID), n)
    shapes = rng.sample(SHAPES, n)
    objects = []
    for c, shape in zip(cells, shapes):
        side = rng.randint(44, min(64, cell - 4))
        slack = cell - side
        x0 = (c % GRID) * cell + rng.randint(0, slack)
        y0 = (c // GRID) * cell + rng.randint(0, slack)
        objects.append(
            SceneObject(
                shape=shape,
                color=rng.choice(COLORS),
                box=Box(x0, y0, x0 + side, y0 + side, label="", confidence=1.0),
                texture="striped" if rng.random() < 0.35 else "solid",
            )
        )
    objects = [replace(o, box=replace(o.box, label=o.shape)) for o in objects]
    relations = []
    for i in range(n - 1):
        if rng.random() < 0.3:
            continue
        true_preds = [p for p in PREDICATES if grammar.predicate_holds(p, objects[i].box, objects[i + 1].box)]
        if true_preds:
            relations.append(Relation(i, rng.choice(true_preds), i + 1))
    return SceneSpec(canvas, canvas, tuple(objects), tuple(relations))


@dataclass(frozen=True)
class SuiteCase:
    scene_id: str
    level: int
    spec: SceneSpec
    corruptions: tuple[Corruption, ...] = field(default=())

    @property
    def image_id(self) -> str:
        return f"c{self.level}"

    def to_dict(self) -> dict:
        return {
            "scene_id": self.scene_id,
            "level": self.level,
            "spec": self.spec.to_dict(),
            "corruptions": [c.to_dict() for c in self.corruptions],
        }


def corruption_chain(spec: SceneSpec, rng: random.Random, depth: int) -> tuple[SceneSpec, tuple[Corruption, ...]] | None:
    """Apply ``depth`` corruptions with pairwise disjoint targets, each breaking the prompt."""
    current, used, chain = spec, set(), []
    for _ in range(depth):
        options = [c for c in applicable_corruptions(current) if not used & set(c.targets)]
        # dropping an object shifts indices, so only drop as the final step
        if len(chain) < depth - 1:
            options = [c for c in options if c.kind is not CorruptionKind.DROP_OBJECT]
        if not options:
            return None
        c = rng.choice(options)
        current = corrupt(current, c)
        used |= set(c.targets)
        chain.append(c)
    return current, tuple(chain)


def generate_suite(
    n_scenes: int = 50, seed: int = 0, levels: Sequence[int] = (0, 1, 2), n_objects: int = 2
) -> list[SuiteCase]:
    """``n_scenes`` scenes, each rendered clean and at every requested corruption level.

    Levels are cumulative: level k applies the first k corruptions of one
    chain, so a scene's level-2 image is its level-1 image corrupted once
    more. Scenes that cannot take the deepest chain are redrawn.
    """
    rng = random.Random(seed)
    cases: list[SuiteCase] = []
    depth = max(levels)
    made = 0
    while made < n_scenes:
        spec = random_scene(rng, n_objects)
        got = corruption_chain(spec, rng, depth)
        if got is None:
            continue
        chain = got[1]
        scene_id = f"scene{made:03d}"
        for level in sorted(levels):
            current = spec
            for c in chain[:level]:
                current = corrupt(current, c)
            cases.append(SuiteCase(scene_id, level, current, chain[:level]))
        made += 1
    return cases


def write_suite(cases: Sequence[SuiteCase], root: str | Path) -> tuple[Path, Path]:
    """Lay out a suite for the harness.

    Writes ``<root>/prompts.jsonl``, ``<root>/images/<scene_id>/c<level>.png``
    (with sidecars) and ``<root>/scenes.jsonl`` describing every case.
    """
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    images = root / "images"
    prompts: dict[str, PromptRecord] = {}
    with open(root / "scenes.jsonl", "w", encoding="utf-8") as fh:
        for case in cases:
            render_scene(case.spec, images / case.scene_id / f"{case.image_id}.png")
            fh.write(json.dumps(case.to_dict(), sort_keys=True) + "\n")
            if case.level == 0 or case.scene_id not in prompts:
                prompts[case.scene_id] = PromptRecord(case.scene_id, case.spec.prompt_text, case.spec.category)
    prompt_path = root / "prompts.jsonl"
    with open(prompt_path, "w", encoding="utf-8") as fh:
        for rec in prompts.values():
            fh.write(json.dumps(rec.to_dict(), sort_keys=True) + "\n")
    return prompt_path, images
