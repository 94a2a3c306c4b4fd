import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from anchordist.data import SynthConfig, generate_synthetic_scene, usable_objects

# Desk-scale synthetic corpus shared by clustering and training tests.
# Near-heavy sampling mimics real driving data, where close cars
# dominate; the tight dimension spread keeps box size an informative
# distance cue at render resolution.
DESK_SYNTH = dict(
    z_sampling="near_heavy",
    dim_spreads=(0.03, 0.03, 0.1),
    count_range=(2, 6),
)


def make_scenes(n, seed0=0, **overrides):
    cfg = SynthConfig(**{**DESK_SYNTH, **overrides})
    return [generate_synthetic_scene(seed0 + i, cfg) for i in range(n)]


@pytest.fixture(scope="session")
def synth_labels():
    """A flat list of labeled objects from 300 synthetic scenes."""
    scenes = make_scenes(300)
    return [o for s in scenes for o in usable_objects(s)]


@pytest.fixture(scope="session")
def synth_scenes_small():
    return make_scenes(40, seed0=1000)


@pytest.fixture()
def rng():
    return np.random.default_rng(12345)
