"""Shared pytest fixtures for the event-graph inference test suite."""

from __future__ import annotations

import numpy as np
import pytest

from eagr.config import Settings
from eagr.events.stream import EventStream, SensorGeometry
from eagr.graph.event_graph import build_graph
from eagr.models import ModelSize
from eagr.network.architecture import ModelConfig
from eagr.network.model import Model, build_model


def clustered_stream(
    geometry: SensorGeometry,
    n: int,
    seed: int = 0,
    box: tuple[int, int, int, int] = (20, 44, 16, 34),
    max_dt: int = 400,
) -> EventStream:
    """Random events inside a pixel box with increasing timestamps.

    The box is small enough that most events have neighbors.
    """
    rng = np.random.default_rng(seed)
    x0, x1, y0, y1 = box
    x = rng.integers(x0, x1, n)
    y = rng.integers(y0, y1, n)
    t = np.cumsum(rng.integers(0, max_dt, n)) + 1
    p = rng.choice([-1, 1], n)
    return EventStream.from_arrays(geometry, x, y, t, p)


@pytest.fixture(scope="session")
def test_settings(tmp_path_factory) -> Settings:
    """Settings configured for testing."""
    tmp = tmp_path_factory.mktemp("eagr_test")
    settings = Settings(runs_dir=tmp / "runs")
    settings.ensure_dirs()
    return settings


@pytest.fixture
def settings(test_settings: Settings) -> Settings:
    """Alias for test_settings with function scope."""
    return test_settings


@pytest.fixture(scope="session")
def geometry() -> SensorGeometry:
    return SensorGeometry(304, 240)


@pytest.fixture(scope="session")
def small_geometry() -> SensorGeometry:
    return SensorGeometry(64, 48)


@pytest.fixture(scope="session")
def nano_config(small_geometry: SensorGeometry) -> ModelConfig:
    """Nano model on a 64x48 sensor; the larger radius keeps input graphs connected."""
    return ModelConfig(
        size=ModelSize.NANO,
        width=small_geometry.width,
        height=small_geometry.height,
        radius=0.05,
        c_input=8,
        c_early=8,
    )


@pytest.fixture(scope="session")
def nano_model(nano_config: ModelConfig) -> Model:
    return build_model(nano_config, 0)


@pytest.fixture
def stream(small_geometry: SensorGeometry) -> EventStream:
    """120 clustered events on the small sensor."""
    return clustered_stream(small_geometry, 120, seed=3)


@pytest.fixture
def warm_graph(stream: EventStream, nano_config: ModelConfig):
    """Graph over the first 80 events of ``stream``."""
    cfg = nano_config
    return build_graph(stream.head(80), cfg.radius, cfg.max_neighbors, cfg.beta)
