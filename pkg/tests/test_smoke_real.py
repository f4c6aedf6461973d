"""Optional run against real backends. Not part of the default suite.

    COMPALIGN_SMOKE=1 COMPALIGN_SMOKE_PROMPTS=prompts.jsonl COMPALIGN_SMOKE_IMAGES=images/ \\
        COMPALIGN_LLM_API_KEY=... pytest -m realmodels tests/test_smoke_real.py

Needs torch, transformers and ultralytics plus downloadable weights.
"""

import os
from pathlib import Path

import pytest

from compalign.harness import BackendChoice, RunConfig, load_prompt_set, run_evaluation

pytestmark = [
    pytest.mark.realmodels,
    pytest.mark.skipif(os.environ.get("COMPALIGN_SMOKE") != "1", reason="set COMPALIGN_SMOKE=1 to run"),
]


def test_real_backends_cover_the_score_range(tmp_path):
    prompts = Path(os.environ["COMPALIGN_SMOKE_PROMPTS"])
    images = Path(os.environ["COMPALIGN_SMOKE_IMAGES"])
    assert len(load_prompt_set(prompts)) >= 20
    cfg = RunConfig(
        prompts,
        images,
        tmp_path / "runs",
        generator=BackendChoice("chat"),
        detector=BackendChoice("yolo"),
        vqa=BackendChoice("blip"),
    )
    run = run_evaluation(cfg)
    assert run.failures == []
    scores = [r.overall for r in run.results]
    assert min(scores) <= 0.2 and max(scores) >= 0.9, (min(scores), max(scores))
