"""Unit tests for voxel max pooling."""

import numpy as np
import pytest

from eagr.events.stream import SensorGeometry
from eagr.graph.layer_graph import LayerGraph
from eagr.layers.pooling import POOL_GRIDS, PoolSpec, max_pool, pool_schedule


def two_voxel_graph() -> LayerGraph:
    g = LayerGraph(SensorGeometry(8, 8))
    for pos in [(0, 0, 0), (1, 1, 0), (5, 5, 0), (6, 6, 0)]:
        g.add_node(pos)
    return g


class TestMaxPool:
    def test_componentwise_max(self):
        g = LayerGraph(SensorGeometry(304, 240))
        g.add_node((10, 10, 0))
        g.add_node((10, 11, 0))
        out = max_pool(PoolSpec(56, 40, 1, 2), g, np.array([[1.0, 5.0], [3.0, 2.0]]))
        assert out.features.tolist() == [[3.0, 5.0]]
        assert out.cache.argmax.tolist() == [[1, 0]]

    def test_floored_mean_position(self):
        g = LayerGraph(SensorGeometry(304, 240))
        g.add_node((10, 10, 1000))
        g.add_node((11, 13, 3000))
        out = max_pool(PoolSpec(14, 10, 1, 1), g, np.zeros((2, 1)))
        assert out.graph.position(0) == (10, 11, 2000)

    def test_bidirectional_edges(self):
        g = two_voxel_graph()
        g.add_edge(0, 2)
        g.add_edge(3, 1)
        out = max_pool(PoolSpec(2, 2, 1, 1), g, np.zeros((4, 1)))
        assert out.graph.num_nodes == 2
        assert set(out.graph.edges()) == {(0, 1), (1, 0)}

    def test_intra_voxel_edges_dropped(self):
        g = two_voxel_graph()
        g.add_edge(0, 1)
        out = max_pool(PoolSpec(2, 2, 1, 1), g, np.zeros((4, 1)))
        assert out.graph.num_edges == 0

    def test_nodes_numbered_by_first_member(self):
        g = LayerGraph(SensorGeometry(8, 8))
        for pos in [(6, 6, 0), (0, 0, 0), (7, 7, 0)]:
            g.add_node(pos)
        out = max_pool(PoolSpec(2, 2, 1, 1), g, np.zeros((3, 1)))
        assert out.cache.keys == [(1, 1, 0), (0, 0, 0)]
        assert out.cache.voxel_of == [0, 1, 0]

    def test_member_counts_partition_nodes(self):
        rng = np.random.default_rng(0)
        g = LayerGraph(SensorGeometry(64, 48))
        for _ in range(100):
            g.add_node((int(rng.integers(0, 64)), int(rng.integers(0, 48)), 0))
        out = max_pool(PoolSpec(7, 5, 1, 2), g, rng.normal(size=(100, 2)))
        assert sum(out.cache.count) == 100
        assert sorted(m for members in out.cache.members for m in members) == list(range(100))

    def test_ties_pick_lowest_member(self):
        g = LayerGraph(SensorGeometry(8, 8))
        g.add_node((0, 0, 0))
        g.add_node((1, 0, 0))
        out = max_pool(PoolSpec(1, 1, 1, 1), g, np.array([[2.0], [2.0]]))
        assert out.cache.argmax.tolist() == [[0]]

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_member_order_does_not_matter(self, seed):
        rng = np.random.default_rng(seed)
        geometry = SensorGeometry(64, 48)
        positions = [
            (int(rng.integers(0, 64)), int(rng.integers(0, 48)), int(rng.integers(0, 10_000)))
            for _ in range(80)
        ]
        edges = {(int(a), int(b)) for a, b in rng.integers(0, 80, (200, 2)) if a != b}
        x = rng.normal(size=(80, 4))
        perm = rng.permutation(80)
        inverse = np.argsort(perm)

        g, shuffled = LayerGraph(geometry), LayerGraph(geometry)
        for pos in positions:
            g.add_node(pos)
        for old in perm:
            shuffled.add_node(positions[old])
        for a, b in edges:
            g.add_edge(a, b)
            shuffled.add_edge(int(inverse[a]), int(inverse[b]))

        spec = PoolSpec(7, 5, 1, 4)
        a, b = max_pool(spec, g, x), max_pool(spec, shuffled, x[perm])
        assert set(a.cache.keys) == set(b.cache.keys)
        for key, va in a.cache.registry.items():
            vb = b.cache.registry[key]
            assert np.array_equal(a.features[va], b.features[vb])
            assert a.graph.position(va) == b.graph.position(vb)
        edges_a = {(a.cache.keys[s], a.cache.keys[d]) for s, d in a.graph.edges()}
        edges_b = {(b.cache.keys[s], b.cache.keys[d]) for s, d in b.graph.edges()}
        assert edges_a == edges_b

    def test_empty_graph(self):
        g = LayerGraph(SensorGeometry(8, 8))
        out = max_pool(PoolSpec(2, 2, 1, 3), g, np.zeros((0, 3)))
        assert out.graph.num_nodes == 0
        assert out.features.shape == (0, 3)


class TestSchedule:
    def test_grids(self):
        specs = pool_schedule([16, 16, 64, 64])
        assert [s.grid for s in specs] == [(56, 40), (28, 20), (14, 10), (7, 5)]
        assert all(s.g_t == 1 for s in specs)

    def test_temporal(self):
        specs = pool_schedule([8, 8, 8, 8], temporal=True, time_window_us=80_000)
        assert [s.g_t for s in specs] == [8, 4, 2, 1]
        assert specs[0].voxel((0, 0, 79_999), SensorGeometry(56, 40)) == (0, 0, 7)

    def test_temporal_needs_window(self):
        with pytest.raises(ValueError):
            PoolSpec(2, 2, 4, 1)

    def test_grid_constants(self):
        assert POOL_GRIDS[2][0] * POOL_GRIDS[2][1] == 140
        assert POOL_GRIDS[3][0] * POOL_GRIDS[3][1] == 35
