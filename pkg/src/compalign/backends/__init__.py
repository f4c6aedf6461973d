"""Backend registry: maps config names to generator, detector and VQA factories."""

from __future__ import annotations

from typing import Any, Callable

from ..errors import ConfigError
from ..questions import GeneratorBackend
from ..regions import DetectorBackend, SidecarDetector
from ..scoring import VqaBackend


def _oracle_generator(**kw):
    from ..testkit.oracles import OracleGenerator

    return OracleGenerator(**kw)


def _chat_generator(**kw):
    from .chat import ChatCompletionGenerator

    return ChatCompletionGenerator(**kw)


def _oracle_vqa(**kw):
    from ..testkit.oracles import OracleVqa

    return OracleVqa(**kw)


def _blip(**kw):
    from .blip import BlipVqa

    return BlipVqa(**kw)


def _yolo(**kw):
    from .yolo import YoloDetector

    return YoloDetector(**kw)


GENERATORS: dict[str, Callable[..., GeneratorBackend]] = {"oracle": _oracle_generator, "chat": _chat_generator}
DETECTORS: dict[str, Callable[..., DetectorBackend]] = {"oracle": SidecarDetector, "yolo": _yolo}
VQA: dict[str, Callable[..., VqaBackend]] = {"oracle": _oracle_vqa, "blip": _blip}


def _make(registry: dict, role: str, name: str, settings: dict[str, Any] | None):
    try:
        factory = registry[name]
    except KeyError:
        raise ConfigError(f"unknown {role} backend {name!r}; choose from {sorted(registry)}") from None
    try:
        return factory(**(settings or {}))
    except TypeError as exc:
        raise ConfigError(f"bad settings for {role} backend {name!r}: {exc}") from exc


def make_generator(name: str, settings: dict | None = None) -> GeneratorBackend:
    return _make(GENERATORS, "generator", name, settings)


def make_detector(name: str, settings: dict | None = None) -> DetectorBackend:
    return _make(DETECTORS, "detector", name, settings)


def make_vqa(name: str, settings: dict | None = None) -> VqaBackend:
    return _make(VQA, "vqa", name, settings)
