"""Directed graph over integer-positioned nodes, shared by every network level."""

from __future__ import annotations

import numpy as np

from eagr.events.stream import SensorGeometry

Position = tuple[int, int, int]


class LayerGraph:
    """Nodes at integer (px, px, µs) positions with deduplicated directed edges.

    The input event graph and every pooled graph use this structure. Incoming adjacency
    is kept in insertion order; message sums run over it in that order.
    """

    def __init__(self, geometry: SensorGeometry):
        self.geometry = geometry
        self._pos: list[Position] = []
        self._in: list[list[int]] = []
        self._out: list[list[int]] = []
        self._edges: set[tuple[int, int]] = set()

    def __len__(self) -> int:
        return len(self._pos)

    @property
    def num_nodes(self) -> int:
        return len(self._pos)

    @property
    def num_edges(self) -> int:
        return len(self._edges)

    def _check(self, node: int) -> None:
        if not 0 <= node < len(self._pos):
            raise IndexError(f"Node {node} out of range for graph with {len(self._pos)} nodes")

    def add_node(self, position: Position) -> int:
        self._pos.append(tuple(int(v) for v in position))
        self._in.append([])
        self._out.append([])
        return len(self._pos) - 1

    def add_edge(self, src: int, dst: int) -> bool:
        """Add src -> dst; returns False if the edge already exists."""
        self._check(src)
        self._check(dst)
        if src == dst:
            raise ValueError(f"Self-loop on node {src}")
        if (src, dst) in self._edges:
            return False
        self._edges.add((src, dst))
        self._in[dst].append(src)
        self._out[src].append(dst)
        return True

    def has_edge(self, src: int, dst: int) -> bool:
        return (src, dst) in self._edges

    def position(self, node: int) -> Position:
        self._check(node)
        return self._pos[node]

    def set_position(self, node: int, position: Position) -> None:
        self._check(node)
        self._pos[node] = tuple(int(v) for v in position)

    def neighbors_in(self, node: int) -> list[int]:
        """Source neighbors: every j with an edge j -> node."""
        self._check(node)
        return list(self._in[node])

    def neighbors_out(self, node: int) -> list[int]:
        """Destination neighbors: every i with an edge node -> i."""
        self._check(node)
        return list(self._out[node])

    def in_degree(self, node: int) -> int:
        self._check(node)
        return len(self._in[node])

    def edges(self) -> list[tuple[int, int]]:
        """All edges, grouped by destination, sources in adjacency order."""
        return [(j, i) for i in range(len(self._in)) for j in self._in[i]]

    def edge_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        pairs = self.edges()
        if not pairs:
            empty = np.zeros(0, dtype=np.int64)
            return empty, empty.copy()
        arr = np.asarray(pairs, dtype=np.int64)
        return arr[:, 0], arr[:, 1]

    def positions_px(self) -> np.ndarray:
        if not self._pos:
            return np.zeros((0, 3), dtype=np.int64)
        return np.asarray(self._pos, dtype=np.int64)

    def normalized_positions(self, beta: float) -> np.ndarray:
        """(x/W, y/H, beta*t) per node."""
        px = self.positions_px().astype(np.float64)
        scale = np.array([1.0 / self.geometry.width, 1.0 / self.geometry.height, beta])
        return px * scale

    def degree_histogram(self) -> dict[int, int]:
        hist: dict[int, int] = {}
        for srcs in self._in:
            hist[len(srcs)] = hist.get(len(srcs), 0) + 1
        return dict(sorted(hist.items()))
