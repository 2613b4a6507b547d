"""Unit tests for the layer graph and the incremental event graph."""

import numpy as np
import pytest

from eagr.events.stream import Event, EventStream, SensorGeometry, StreamOrderError
from eagr.graph.event_graph import EventGraph, build_graph, within_radius
from eagr.graph.layer_graph import LayerGraph
from tests.conftest import clustered_stream


def brute_force_edges(stream: EventStream, radius: float, max_neighbors: int, beta: float):
    """All-pairs radius test with the most-recent truncation."""
    events = list(stream)
    edges = set()
    for i, e in enumerate(events):
        pos = (e.x, e.y, e.t)
        sources = [
            j
            for j in range(i)
            if within_radius(
                (events[j].x, events[j].y, events[j].t), pos, stream.geometry, radius, beta
            )
        ]
        sources.sort(key=lambda j: (events[j].t, j), reverse=True)
        edges.update((j, i) for j in sources[:max_neighbors])
    return edges


class TestLayerGraph:
    def test_two_node_adjacency(self):
        g = LayerGraph(SensorGeometry(8, 8))
        a, b = g.add_node((0, 0, 0)), g.add_node((1, 1, 1))
        assert g.add_edge(a, b)
        assert g.neighbors_in(b) == [a]
        assert g.neighbors_out(a) == [b]

    def test_isolated_node(self):
        g = LayerGraph(SensorGeometry(8, 8))
        n = g.add_node((3, 3, 0))
        assert g.neighbors_in(n) == []
        assert g.neighbors_out(n) == []

    def test_duplicate_edge_ignored(self):
        g = LayerGraph(SensorGeometry(8, 8))
        g.add_node((0, 0, 0))
        g.add_node((1, 0, 0))
        assert g.add_edge(0, 1)
        assert not g.add_edge(0, 1)
        assert g.num_edges == 1

    def test_self_loop_rejected(self):
        g = LayerGraph(SensorGeometry(8, 8))
        g.add_node((0, 0, 0))
        with pytest.raises(ValueError):
            g.add_edge(0, 0)

    def test_unknown_node(self):
        g = LayerGraph(SensorGeometry(8, 8))
        with pytest.raises(IndexError):
            g.neighbors_in(0)

    def test_random_adjacency_matches_edge_scan(self):
        rng = np.random.default_rng(0)
        g = LayerGraph(SensorGeometry(8, 8))
        for _ in range(50):
            g.add_node((0, 0, 0))
        pairs = []
        for _ in range(300):
            s, d = rng.integers(0, 50, 2)
            if s != d:
                g.add_edge(int(s), int(d))
                pairs.append((int(s), int(d)))
        unique = set(pairs)
        for i in range(50):
            assert set(g.neighbors_in(i)) == {s for s, d in unique if d == i}
            assert set(g.neighbors_out(i)) == {d for s, d in unique if s == i}
        assert g.num_edges == len(unique)


class TestEventGraph:
    def test_edge_within_radius(self, geometry):
        g = EventGraph(geometry)
        g.insert_event(Event(100, 100, 0, 1))
        node, edges = g.insert_event(Event(102, 101, 5000, 1))
        assert node == 1
        assert edges == [(0, 1)]

    def test_no_edge_outside_time_radius(self, geometry):
        g = EventGraph(geometry)
        g.insert_event(Event(100, 100, 0, 1))
        _, edges = g.insert_event(Event(102, 101, 20000, 1))
        assert edges == []

    def test_single_event(self, geometry):
        stream = EventStream.from_events(geometry, [Event(5, 5, 0, 1)])
        g = build_graph(stream)
        assert (g.num_nodes, g.num_edges) == (1, 0)

    def test_empty_graph_insert(self, geometry):
        g = EventGraph(geometry)
        assert g.insert_event(Event(1, 1, 0, -1)) == (0, [])

    def test_isolated_insert(self, geometry):
        g = EventGraph(geometry)
        g.insert_event(Event(10, 10, 0, 1))
        _, edges = g.insert_event(Event(200, 200, 50000, 1))
        assert edges == []

    def test_time_going_backwards(self, geometry):
        g = EventGraph(geometry)
        g.insert_event(Event(10, 10, 100, 1))
        with pytest.raises(StreamOrderError):
            g.insert_event(Event(10, 10, 99, 1))

    def test_features_hold_polarity(self, geometry):
        g = EventGraph(geometry)
        g.insert_event(Event(1, 1, 0, -1))
        g.insert_event(Event(2, 1, 1, 1))
        assert g.features().tolist() == [[-1.0], [1.0]]

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_brute_force(self, small_geometry, seed):
        stream = clustered_stream(small_geometry, 150, seed=seed)
        g = build_graph(stream, radius=0.05, max_neighbors=16)
        assert set(g.edges()) == brute_force_edges(stream, 0.05, 16, 1e-6)

    def test_degree_cap(self, small_geometry):
        stream = clustered_stream(small_geometry, 200, seed=1, box=(10, 14, 10, 13))
        g = build_graph(stream, radius=0.05, max_neighbors=4)
        assert max(g.in_degree(i) for i in range(g.num_nodes)) == 4

    def test_stats(self, small_geometry):
        stream = clustered_stream(small_geometry, 60, seed=2)
        stats = build_graph(stream, radius=0.05).stats()
        assert stats.nodes == 60
        assert sum(stats.degree_histogram.values()) == 60
        assert stats.max_in_degree <= 16

    def test_acyclic(self, small_geometry):
        # equal timestamps included: max_dt draws may be 0
        stream = clustered_stream(small_geometry, 200, seed=3, max_dt=3)
        g = build_graph(stream, radius=0.05)
        indegree = [g.in_degree(i) for i in range(g.num_nodes)]
        ready = [i for i, d in enumerate(indegree) if d == 0]
        seen = 0
        while ready:
            node = ready.pop()
            seen += 1
            for nxt in g.neighbors_out(node):
                indegree[nxt] -= 1
                if indegree[nxt] == 0:
                    ready.append(nxt)
        assert seen == g.num_nodes
        assert all(src < dst for src, dst in g.edges())
