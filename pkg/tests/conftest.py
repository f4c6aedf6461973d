from __future__ import annotations

from pathlib import Path

import pytest

from compalign.harness import RunConfig
from compalign.testkit.scenes import generate_suite, write_suite


@pytest.fixture(scope="session")
def small_suite(tmp_path_factory) -> Path:
    """Eight scenes at corruption levels 0-2, laid out for the harness."""
    root = tmp_path_factory.mktemp("suite")
    write_suite(generate_suite(n_scenes=8, seed=3), root)
    return root


@pytest.fixture
def suite_config(small_suite, tmp_path) -> RunConfig:
    return RunConfig(small_suite / "prompts.jsonl", small_suite / "images", tmp_path / "runs")

