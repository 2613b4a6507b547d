"""Experiments built from repeated asynchronous runs."""

from __future__ import annotations

from collections.abc import Iterable

import numpy as np
import pandas as pd

from eagr.asynch.engine import AsyncSession, EngineOptions
from eagr.events.stream import EventStream
from eagr.graph.event_graph import build_graph
from eagr.metrics.stats import RunStats, aggregate_stats
from eagr.models import CostMode, InsertionReport
from eagr.network.architecture import ModelConfig
from eagr.network.model import Model, build_model

FIRST_POOL_CHANNELS = (8, 16, 24, 32)

# (label, message cost, engine options)
ABLATION_ROWS = (
    ("3D spline, no pruning", CostMode.SPLINE3D, EngineOptions(False, False)),
    ("2D spline, no pruning", CostMode.SPLINE, EngineOptions(False, False)),
    ("LUT, no pruning", CostMode.LUT, EngineOptions(False, False)),
    ("LUT, pruning", CostMode.LUT, EngineOptions(True, False)),
    ("LUT, pruning + rounding", CostMode.LUT, EngineOptions(True, True)),
)


def stream_reports(
    model: Model, stream: EventStream, warmup: int = 0, options: EngineOptions | None = None
) -> list[InsertionReport]:
    """Initialize on the first ``warmup`` events, then insert the rest one by one."""
    cfg = model.config
    graph = build_graph(stream.head(warmup), cfg.radius, cfg.max_neighbors, cfg.beta)
    session = AsyncSession(model, graph, options)
    return session.run(stream.slice(warmup), start=warmup)


def channel_sweep(
    stream: EventStream,
    sizes: tuple[int, ...] = FIRST_POOL_CHANNELS,
    seed: int | Iterable[int] = 0,
    warmup: int = 0,
    config: ModelConfig | None = None,
) -> dict[int, float]:
    """Pass-through fraction at the first pooling layer per first-block channel count.

    With several seeds, each gets its own random weights and the fractions are averaged.
    """
    seeds = [seed] if isinstance(seed, int) else list(seed)
    if not seeds:
        raise ValueError("channel_sweep needs at least one seed")
    base = config or ModelConfig(width=stream.geometry.width, height=stream.geometry.height)
    out = {}
    for c in sizes:
        cfg = base.model_copy(update={"c_input": c})
        phis = [
            aggregate_stats(stream_reports(build_model(cfg, s), stream, warmup)).phi for s in seeds
        ]
        out[c] = float(np.mean(phis))
    return out


def non_decreasing(values: dict[int, float], slack: float = 0.0) -> bool:
    """True when values, ordered by key, never drop by more than ``slack``."""
    ordered = [values[k] for k in sorted(values)]
    return all(b >= a - slack for a, b in zip(ordered, ordered[1:]))


def ablation(model: Model, stream: EventStream, warmup: int = 0) -> pd.DataFrame:
    """Mean FLOPs per event for each cost/pruning variant, relative to the first row."""
    runs: dict[tuple[bool, bool], list[InsertionReport]] = {}
    rows = []
    for label, mode, options in ABLATION_ROWS:
        key = (options.pruning, options.position_rounding)
        if key not in runs:
            runs[key] = stream_reports(model, stream, warmup, options)
        stats: RunStats = aggregate_stats(runs[key], mode)
        rows.append({"variant": label, "mean_flops": stats.mean_flops, "phi": stats.phi})
    frame = pd.DataFrame(rows)
    base = frame["mean_flops"].iloc[0]
    frame["relative"] = frame["mean_flops"] / base if base else 0.0
    return frame
