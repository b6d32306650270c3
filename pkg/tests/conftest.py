"""Shared fixtures: a small scene and dataset sized for fast unit tests.

The small scene keeps the mandatory 12x12 control grid (mask patterns are
defined on it) but shrinks everything else: 8 loudspeakers, a 5x5 monitor
grid, 16 frequency bins and a low image order.
"""
from __future__ import annotations

import numpy as np
import pytest

from pszsim.dataio import generate_dataset
from pszsim.scene import SceneConfig, make_scene

TINY_CONFIG_KWARGS = dict(
    room_dims=(6.0, 7.0, 3.0),
    rt60=0.2,
    num_loudspeakers=8,
    array_radius=1.5,
    zone_width=0.4,
    zone_height=0.4,
    zone_gap=1.0,
    control_n=12,
    monitor_n=5,
    plane_height=1.4,
    num_freqs=16,
    f_max=2000.0,
    vsrc_r_min=1.6,
    vsrc_r_max=2.4,
    ism_max_order=3,
    seed=1234,
)


@pytest.fixture(scope="session")
def tiny_config():
    return SceneConfig(**TINY_CONFIG_KWARGS)


@pytest.fixture(scope="session")
def tiny_scene(tiny_config):
    return make_scene(tiny_config)


@pytest.fixture(scope="session")
def tiny_dataset(tiny_scene, tmp_path_factory):
    root = tmp_path_factory.mktemp("tiny-dataset")
    return generate_dataset(tiny_scene, n_samples=30, seed=tiny_scene.config.seed, out_dir=root)


@pytest.fixture()
def rng():
    return np.random.default_rng(20240817)
