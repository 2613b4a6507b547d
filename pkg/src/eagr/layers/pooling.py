"""Voxel max pooling with floor-rounded centroid positions.

Node positions are split into g_x x g_y x g_t voxels. Each non-empty voxel becomes one
output node whose feature is the componentwise maximum of its members and whose position
is the floor of the members' mean position in (px, px, µs). Output edges are the
deduplicated union of member edges between distinct voxels, so A -> B and B -> A may both
appear.

Output nodes are numbered by first appearance, i.e. by their lowest member index.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from eagr.events.stream import SensorGeometry
from eagr.graph.layer_graph import LayerGraph

POOL_GRIDS = ((56, 40), (28, 20), (14, 10), (7, 5))
TEMPORAL_GRIDS = (8, 4, 2, 1)

VoxelKey = tuple[int, int, int]


@dataclass(frozen=True)
class PoolSpec:
    g_x: int
    g_y: int
    g_t: int
    c_out: int
    # time span mapped onto the g_t cells; only read when g_t > 1
    time_window_us: int | None = None

    def __post_init__(self) -> None:
        if min(self.g_x, self.g_y, self.g_t, self.c_out) <= 0:
            raise ValueError(f"Pool dimensions must be positive: {self}")
        if self.g_t > 1 and not self.time_window_us:
            raise ValueError("A temporal grid g_t > 1 needs time_window_us")

    @property
    def grid(self) -> tuple[int, int]:
        return self.g_x, self.g_y

    def voxel(self, position: tuple[int, int, int], geometry: SensorGeometry) -> VoxelKey:
        x, y, t = position
        vx = min(self.g_x - 1, x * self.g_x // geometry.width)
        vy = min(self.g_y - 1, y * self.g_y // geometry.height)
        vt = 0 if self.g_t == 1 else min(self.g_t - 1, t * self.g_t // self.time_window_us)
        return vx, vy, vt


def pool_schedule(
    channels: list[int], temporal: bool = False, time_window_us: int | None = None
) -> list[PoolSpec]:
    """Specs for pooling layers i = 0..3: (56, 40, 1) / 2^i, or g_t = 8 / 2^i if temporal."""
    specs = []
    for i, c in enumerate(channels):
        gx, gy = POOL_GRIDS[i]
        gt = TEMPORAL_GRIDS[i] if temporal else 1
        specs.append(PoolSpec(gx, gy, gt, c, time_window_us if gt > 1 else None))
    return specs


@dataclass
class PoolCache:
    """What a pooling layer remembers to update itself one change at a time."""

    voxel_of: list[int] = field(default_factory=list)  # input node -> output node
    keys: list[VoxelKey] = field(default_factory=list)  # output node -> voxel
    registry: dict[VoxelKey, int] = field(default_factory=dict)  # occupied voxels
    members: list[list[int]] = field(default_factory=list)
    argmax: np.ndarray = field(default_factory=lambda: np.zeros((0, 0), dtype=np.int64))
    pos_sum: list[list[int]] = field(default_factory=list)
    count: list[int] = field(default_factory=list)

    def rounded(self, voxel: int) -> tuple[int, int, int]:
        n = self.count[voxel]
        return tuple(s // n for s in self.pos_sum[voxel])


@dataclass
class PooledLevel:
    graph: LayerGraph
    features: np.ndarray
    cache: PoolCache


def voxel_keys(spec: PoolSpec, positions: np.ndarray, geometry: SensorGeometry) -> np.ndarray:
    pos = np.asarray(positions, dtype=np.int64).reshape(-1, 3)
    vx = np.minimum(spec.g_x - 1, pos[:, 0] * spec.g_x // geometry.width)
    vy = np.minimum(spec.g_y - 1, pos[:, 1] * spec.g_y // geometry.height)
    if spec.g_t == 1:
        vt = np.zeros(len(pos), dtype=np.int64)
    else:
        vt = np.minimum(spec.g_t - 1, pos[:, 2] * spec.g_t // spec.time_window_us)
    return np.column_stack([vx, vy, vt])


def max_pool(spec: PoolSpec, graph: LayerGraph, features: np.ndarray) -> PooledLevel:
    """Pool a whole level from scratch."""
    x = np.asarray(features, dtype=np.float64)
    geometry = graph.geometry
    pos = graph.positions_px()
    cache = PoolCache()
    for n, key in enumerate(map(tuple, voxel_keys(spec, pos, geometry).tolist())):
        v = cache.registry.get(key)
        if v is None:
            v = cache.registry[key] = len(cache.keys)
            cache.keys.append(key)
            cache.members.append([])
            cache.pos_sum.append([0, 0, 0])
            cache.count.append(0)
        cache.voxel_of.append(v)
        cache.members[v].append(n)
        cache.count[v] += 1
        total = cache.pos_sum[v]
        for axis in range(3):
            total[axis] += int(pos[n, axis])

    n_out = len(cache.keys)
    channels = x.shape[1] if x.ndim == 2 else spec.c_out
    pooled = np.zeros((n_out, channels))
    cache.argmax = np.zeros((n_out, channels), dtype=np.int64)
    out = LayerGraph(geometry)
    for v in range(n_out):
        members = np.asarray(cache.members[v], dtype=np.int64)
        rows = x[members]
        pooled[v] = rows.max(axis=0)
        # np.argmax returns the first hit, i.e. the lowest member index on ties
        cache.argmax[v] = members[rows.argmax(axis=0)]
        out.add_node(cache.rounded(v))

    for src, dst in graph.edges():
        a, b = cache.voxel_of[src], cache.voxel_of[dst]
        if a != b:
            out.add_edge(a, b)
    return PooledLevel(out, pooled, cache)
