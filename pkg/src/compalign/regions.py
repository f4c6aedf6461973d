"""Image decomposition into entity boxes, pairwise relational boxes and crops."""

from __future__ import annotations

import hashlib
import io
import json
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass
from itertools import combinations
from pathlib import Path
from typing import Sequence

from PIL import Image, UnidentifiedImageError

from .cache import CacheStore, cache_key
from .core import Box, BoxKind, BoxSet, whole_image_box
from .errors import BackendError, InputError

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")


@dataclass(frozen=True, eq=False)
class SourceImage:
    """A decoded image plus the encoded bytes that identify it in caches."""

    image_id: str
    pixels: Image.Image
    data: bytes
    path: Path | None = None

    @property
    def width(self) -> int:
        return self.pixels.width

    @property
    def height(self) -> int:
        return self.pixels.height

    @property
    def digest(self) -> str:
        return hashlib.sha256(self.data).hexdigest()


def load_image(path: str | Path, image_id: str | None = None) -> SourceImage:
    path = Path(path)
    try:
        data = path.read_bytes()
        img = Image.open(io.BytesIO(data))
        img.load()
    except (OSError, UnidentifiedImageError, SyntaxError) as exc:
        raise InputError(f"cannot decode image {path}: {exc}") from exc
    return SourceImage(image_id or path.stem, img.convert("RGB"), data, path)


def image_from_pil(img: Image.Image, image_id: str = "image") -> SourceImage:
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return SourceImage(image_id, img.convert("RGB"), buf.getvalue())


@dataclass(frozen=True)
class Detection:
    x0: float
    y0: float
    x1: float
    y1: float
    label: str
    confidence: float


class DetectorBackend(ABC):
    backend_id: str = "detector"
    model_version: str = "unversioned"

    @abstractmethod
    def detect(self, image: SourceImage) -> list[Detection]:
        ...


@dataclass(frozen=True)
class DecompositionConfig:
    confidence_threshold: float = 0.25
    max_entity_boxes: int = 10
    min_region_side: int = 32

    def __post_init__(self) -> None:
        if not 0.0 <= self.confidence_threshold <= 1.0:
            raise InputError("confidence_threshold must lie in [0, 1]")
        if self.max_entity_boxes < 1:
            raise InputError("max_entity_boxes must be >= 1")
        if self.min_region_side < 1:
            raise InputError("min_region_side must be >= 1")

    def to_dict(self) -> dict:
        return {
            "confidence_threshold": self.confidence_threshold,
            "max_entity_boxes": self.max_entity_boxes,
            "min_region_side": self.min_region_side,
        }


def _clamp_detection(d: Detection, width: int, height: int) -> Box | None:
    x0 = max(0, min(width, math.floor(d.x0)))
    y0 = max(0, min(height, math.floor(d.y0)))
    x1 = max(0, min(width, math.ceil(d.x1)))
    y1 = max(0, min(height, math.ceil(d.y1)))
    if x0 >= x1 or y0 >= y1:
        return None
    conf = min(1.0, max(0.0, float(d.confidence)))
    return Box(x0, y0, x1, y1, label=d.label, confidence=conf, kind=BoxKind.ENTITY)


def detect_entities(
    image: SourceImage,
    backend: DetectorBackend,
    config: DecompositionConfig = DecompositionConfig(),
    cache: CacheStore | None = None,
) -> list[Box]:
    """Threshold, sort by confidence (stable), truncate and clamp detections."""
    key = cache_key(
        "detect",
        backend.backend_id,
        backend.model_version,
        image.data,
        json.dumps(config.to_dict(), sort_keys=True),
    )
    if cache is not None:
        with cache.locks(key):
            hit = cache.get_json(key)
            if hit is not None:
                return [Box.from_dict(b) for b in hit]
            boxes = _detect(image, backend, config)
            cache.put_json(key, [b.to_dict() for b in boxes])
            return boxes
    return _detect(image, backend, config)


def _detect(image: SourceImage, backend: DetectorBackend, config: DecompositionConfig) -> list[Box]:
    try:
        raw = backend.detect(image)
    except (InputError, BackendError):
        raise
    except Exception as exc:
        raise BackendError(f"detector {backend.backend_id} failed on {image.image_id}: {exc}") from exc
    kept = [d for d in raw if d.confidence >= config.confidence_threshold]
    kept.sort(key=lambda d: -d.confidence)
    boxes = []
    for d in kept:
        if len(boxes) == config.max_entity_boxes:
            break
        box = _clamp_detection(d, image.width, image.height)
        if box is not None:
            boxes.append(box)
    return boxes


def pair_relational_boxes(entity_boxes: Sequence[Box]) -> list[Box]:
    """Union rectangle for every unordered pair i < j, parents recorded."""
    out = []
    for i, j in combinations(range(len(entity_boxes)), 2):
        a, b = entity_boxes[i], entity_boxes[j]
        out.append(
            Box(
                min(a.x0, b.x0),
                min(a.y0, b.y0),
                max(a.x1, b.x1),
                max(a.y1, b.y1),
                label=f"{a.label}+{b.label}",
                confidence=min(a.confidence, b.confidence),
                kind=BoxKind.RELATIONAL,
                parents=(i, j),
            )
        )
    return out


def assemble_box_set(image_id: str, width: int, height: int, entity_boxes: Sequence[Box]) -> BoxSet:
    """Pair the entity boxes and apply the whole-image fallback to empty groups."""
    entity = list(entity_boxes)
    relational = pair_relational_boxes(entity)
    entity_fallback = relational_fallback = False
    if not entity:
        entity = [whole_image_box(width, height)]
        entity_fallback = True
    if not relational:
        relational = [whole_image_box(width, height)]
        relational_fallback = True
    return BoxSet(image_id, width, height, tuple(entity), tuple(relational), entity_fallback, relational_fallback)


def build_box_set(
    image: SourceImage,
    backend: DetectorBackend,
    config: DecompositionConfig = DecompositionConfig(),
    cache: CacheStore | None = None,
) -> BoxSet:
    boxes = detect_entities(image, backend, config, cache)
    return assemble_box_set(image.image_id, image.width, image.height, boxes)


@dataclass(frozen=True, eq=False)
class Region:
    """A cropped image region handed to the VQA backend.

    ``rect`` is the crop actually taken (after min-side expansion); ``box`` is
    the box it was derived from.
    """

    pixels: Image.Image
    box: Box
    rect: tuple[int, int, int, int]
    source: SourceImage | None = None

    @property
    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(f"{self.pixels.mode}:{self.pixels.width}x{self.pixels.height}:".encode())
        h.update(self.pixels.tobytes())
        return h.hexdigest()


def _expand(lo: int, hi: int, min_side: int, limit: int) -> tuple[int, int]:
    if hi - lo >= min_side:
        return lo, hi
    side = min(min_side, limit)
    start = math.floor((lo + hi) / 2 - side / 2)
    start = min(max(start, 0), limit - side)
    return start, start + side


def crop_region(image: SourceImage, box: Box, min_region_side: int = 32) -> Region:
    w, h = image.width, image.height
    if box.kind is BoxKind.WHOLE_IMAGE:
        return Region(image.pixels, box, (0, 0, w, h), image)
    x0, y0 = max(0, box.x0), max(0, box.y0)
    x1, y1 = min(w, box.x1), min(h, box.y1)
    if x0 >= x1 or y0 >= y1:
        raise InputError(f"box {box.coords} has zero area inside {w}x{h} image")
    x0, x1 = _expand(x0, x1, min_region_side, w)
    y0, y1 = _expand(y0, y1, min_region_side, h)
    return Region(image.pixels.crop((x0, y0, x1, y1)), box, (x0, y0, x1, y1), image)


def sidecar_path(image_path: str | Path) -> Path:
    image_path = Path(image_path)
    return image_path.with_name(image_path.name + ".boxes.json")


class SidecarDetector(DetectorBackend):
    """Ground-truth detector reading ``<image>.boxes.json`` next to the image."""

    backend_id = "oracle-sidecar"
    model_version = "1"

    def detect(self, image: SourceImage) -> list[Detection]:
        if image.path is None:
            raise BackendError("sidecar detector needs an image loaded from disk")
        path = sidecar_path(image.path)
        try:
            records = json.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError as exc:
            raise BackendError(f"missing annotations {path}") from exc
        return [
            Detection(r["x0"], r["y0"], r["x1"], r["y1"], str(r.get("label", "")), float(r.get("confidence", 1.0)))
            for r in records
        ]
