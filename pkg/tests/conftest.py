"""Shared fixtures. Scene generation is deterministic, so expensive fixtures
are session-scoped and reused across files."""

import numpy as np
import pytest

from pl3d.synth import SynthSpec, gen_scene, render_predictions, synth_bundle
from pl3d.types import PipelineConfig


@pytest.fixture(scope="session")
def default_spec():
    return SynthSpec()


@pytest.fixture(scope="session")
def default_cfg():
    return PipelineConfig()


@pytest.fixture(scope="session")
def clean_bundle(default_spec):
    """Default scene with ideal (uncorrupted) predictions attached."""
    return synth_bundle(default_spec)


@pytest.fixture(scope="session")
def scene_and_gt(default_spec):
    """Geometry-only scene plus the ground-truth point mask."""
    return gen_scene(default_spec)


@pytest.fixture(scope="session")
def clean_predictions(scene_and_gt, default_spec):
    scene, gt = scene_and_gt
    return render_predictions(scene, gt, default_spec)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
