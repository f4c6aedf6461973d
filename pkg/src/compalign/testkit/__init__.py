"""Synthetic scenes and oracle backends for model-free pipeline testing."""

from .oracles import OracleGenerator, OracleVqa, SidecarDetector, oracle_question_gen
from .scenes import (
    Corruption,
    CorruptionKind,
    Relation,
    SceneObject,
    SceneSpec,
    SuiteCase,
    applicable_corruptions,
    corrupt,
    generate_suite,
    random_scene,
    render_image,
    render_scene,
    write_suite,
)

__all__ = [
    "Corruption",
    "CorruptionKind",
    "OracleGenerator",
    "OracleVqa",
    "Relation",
    "SceneObject",
    "SceneSpec",
    "SidecarDetector",
    "SuiteCase",
    "applicable_corruptions",
    "corrupt",
    "generate_suite",
    "oracle_question_gen",
    "random_scene",
    "render_image",
    "render_scene",
    "write_suite",
]
