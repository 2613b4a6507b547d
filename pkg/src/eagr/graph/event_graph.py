"""Directed spatiotemporal event graph.

An edge j -> i exists when node j precedes node i in the stream and their normalized
positions (x/W, y/H, beta*t) differ by less than R in every component. Each node keeps at
most ``max_neighbors`` incoming edges, chosen as the most recent sources.
"""

from __future__ import annotations

import math
from collections import deque

import numpy as np

from eagr.events.stream import Event, EventStream, SensorGeometry, StreamOrderError
from eagr.graph.layer_graph import LayerGraph
from eagr.models import GraphStats

DEFAULT_RADIUS = 0.01
DEFAULT_MAX_NEIGHBORS = 16
DEFAULT_BETA = 1e-6


def within_radius(
    a: tuple[int, int, int], b: tuple[int, int, int], geometry: SensorGeometry, radius: float,
    beta: float,
) -> bool:
    """Infinity-norm test on normalized positions."""
    return (
        abs(a[0] - b[0]) / geometry.width < radius
        and abs(a[1] - b[1]) / geometry.height < radius
        and abs(a[2] - b[2]) * beta < radius
    )


class SpatialHash:
    """Voxel hash with cell edge R per normalized axis and time-ordered eviction.

    Candidates for a query come from the 3x3x3 block of cells around it. Cells whose time
    index trails the newest insertion by two or more are dropped; nothing in them can be
    within R in time of any later node.
    """

    def __init__(self, geometry: SensorGeometry, radius: float, beta: float):
        self.geometry = geometry
        self.radius = radius
        self.beta = beta
        self._cells: dict[tuple[int, int, int], list[int]] = {}
        self._created: deque[tuple[int, tuple[int, int, int]]] = deque()

    def cell(self, position: tuple[int, int, int]) -> tuple[int, int, int]:
        x, y, t = position
        return (
            math.floor(x / self.geometry.width / self.radius),
            math.floor(y / self.geometry.height / self.radius),
            math.floor(t * self.beta / self.radius),
        )

    def evict_before(self, cell_t: int) -> None:
        while self._created and self._created[0][0] < cell_t - 1:
            _, key = self._created.popleft()
            self._cells.pop(key, None)

    def candidates(self, position: tuple[int, int, int]) -> list[int]:
        cx, cy, ct = self.cell(position)
        out: list[int] = []
        for dt in (-1, 0, 1):
            for dy in (-1, 0, 1):
                for dx in (-1, 0, 1):
                    out.extend(self._cells.get((cx + dx, cy + dy, ct + dt), ()))
        return out

    def add(self, node: int, position: tuple[int, int, int]) -> None:
        key = self.cell(position)
        bucket = self._cells.get(key)
        if bucket is None:
            bucket = self._cells[key] = []
            self._created.append((key[2], key))
        bucket.append(node)

    def __len__(self) -> int:
        return sum(len(b) for b in self._cells.values())


class EventGraph(LayerGraph):
    """Input-level graph built one event at a time."""

    def __init__(
        self,
        geometry: SensorGeometry,
        radius: float = DEFAULT_RADIUS,
        max_neighbors: int = DEFAULT_MAX_NEIGHBORS,
        beta: float = DEFAULT_BETA,
    ):
        if radius <= 0:
            raise ValueError(f"Radius must be positive, got {radius}")
        if max_neighbors < 1:
            raise ValueError(f"max_neighbors must be >= 1, got {max_neighbors}")
        super().__init__(geometry)
        self.radius = radius
        self.max_neighbors = max_neighbors
        self.beta = beta
        self.polarity: list[int] = []
        self._index = SpatialHash(geometry, radius, beta)
        self._t_max: int | None = None

    def insert_event(self, event: Event) -> tuple[int, list[tuple[int, int]]]:
        """Append one event; returns its node index and its new incoming edges."""
        if self._t_max is not None and event.t < self._t_max:
            raise StreamOrderError(
                f"Event at t={event.t} precedes latest graph timestamp {self._t_max}"
            )
        geo = self.geometry
        if not (0 <= event.x < geo.width and 0 <= event.y < geo.height):
            raise ValueError(f"Event ({event.x}, {event.y}) outside {geo.width}x{geo.height}")
        if event.p not in (-1, 1):
            raise ValueError(f"Polarity must be -1 or +1, got {event.p}")

        pos = (event.x, event.y, event.t)
        self._index.evict_before(self._index.cell(pos)[2])
        sources = [
            j
            for j in self._index.candidates(pos)
            if within_radius(self._pos[j], pos, geo, self.radius, self.beta)
        ]
        # most recent first: larger t, then later in stream order
        sources.sort(key=lambda j: (self._pos[j][2], j), reverse=True)
        sources = sorted(sources[: self.max_neighbors])

        node = self.add_node(pos)
        self.polarity.append(int(event.p))
        for j in sources:
            self.add_edge(j, node)
        self._index.add(node, pos)
        self._t_max = event.t
        return node, [(j, node) for j in sources]

    def features(self) -> np.ndarray:
        """Input features: one channel holding the polarity."""
        return np.asarray(self.polarity, dtype=np.float64).reshape(-1, 1)

    def stats(self) -> GraphStats:
        hist = self.degree_histogram()
        n = self.num_nodes
        return GraphStats(
            nodes=n,
            edges=self.num_edges,
            max_in_degree=max(hist) if hist else 0,
            mean_in_degree=self.num_edges / n if n else 0.0,
            degree_histogram={str(k): v for k, v in hist.items()},
        )


def build_graph(
    stream: EventStream,
    radius: float = DEFAULT_RADIUS,
    max_neighbors: int = DEFAULT_MAX_NEIGHBORS,
    beta: float = DEFAULT_BETA,
) -> EventGraph:
    """Insert every event of a stream in order."""
    graph = EventGraph(stream.geometry, radius=radius, max_neighbors=max_neighbors, beta=beta)
    for event in stream:
        graph.insert_event(event)
    return graph
