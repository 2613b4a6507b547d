"""Regression tests pinning the engine's headline numbers and exactness guarantees."""

import numpy as np
import pytest

from eagr.asynch.changes import ChangeRecord, ChangeSet
from eagr.asynch.engine import AsyncSession
from eagr.asynch.propagate import propagate_pool
from eagr.events.stream import SensorGeometry
from eagr.events.synthetic import burst_stream, jitter_stream, voxel_anchors
from eagr.graph.event_graph import build_graph
from eagr.graph.layer_graph import LayerGraph
from eagr.layers.conv import edge_offsets
from eagr.layers.lut import input_offsets
from eagr.layers.pooling import PoolSpec, max_pool
from eagr.metrics.costs import flops_per_message
from eagr.metrics.stats import aggregate_stats
from eagr.metrics.sweeps import channel_sweep, non_decreasing, stream_reports
from eagr.models import CostMode, ModelSize
from eagr.network.architecture import ModelConfig
from eagr.network.model import build_model, dense_forward

pytestmark = [pytest.mark.regression]


class TestHeadlineConstants:
    def test_input_lut_size(self):
        assert len(input_offsets(SensorGeometry(304, 240), 0.01)) == 35

    def test_default_depth(self):
        assert build_model(ModelConfig(size=ModelSize.NANO, c_input=4, c_early=4)).depth == 13

    def test_head_capacities(self):
        (a, b), (c, d) = ModelConfig().head_grids
        assert (a * b, c * d) == (140, 35)

    def test_spline_over_lut_ratio(self):
        ratio = flops_per_message(CostMode.SPLINE, 16, 32) / flops_per_message(CostMode.LUT, 16, 32)
        assert ratio == pytest.approx(4576 / 992)


class TestInputStage:
    @pytest.mark.parametrize("convs", [1, 2, 3])
    def test_messages_equal_in_degree(self, nano_config, stream, convs):
        model = build_model(nano_config.model_copy(update={"input_convs": convs}), 0)
        reports = stream_reports(model, stream, warmup=80)
        for report in reports:
            first = [s for s in report.layers if s.layer.startswith("block1.conv")]
            assert len(first) == convs
            assert all(s.messages == report.in_degree for s in first)


class TestPruning:
    def test_repeated_bursts_prune_at_first_pool(self):
        geometry = SensorGeometry(304, 240)
        anchors = voxel_anchors(geometry, (56, 40), every=8)
        assert len(anchors) == 35
        stream = burst_stream(geometry, anchors, repeats=10, period_us=3500)
        model = build_model(ModelConfig(size=ModelSize.NANO), 0)
        stats = aggregate_stats(stream_reports(model, stream, warmup=5 * len(anchors)))
        assert stats.insertions == 175
        assert stats.full_tree_prune_rate > 0.5
        assert stats.phi < 0.5

    def test_argmax_holders_stay_valid(self, nano_model, warm_graph, stream):
        session = AsyncSession(nano_model, warm_graph)
        session.run(stream.slice(80), start=80)
        for level, spec in zip(session.cache.state.levels[1:], nano_model.pools):
            cache = level.pool
            assert cache.argmax.shape[1] == spec.c_out
            for v, members in enumerate(cache.members):
                assert set(cache.argmax[v].tolist()) <= set(members)
                assert len(set(cache.argmax[v].tolist())) <= spec.c_out


class TestPoolFuzz:
    def test_incremental_max_pool_matches_scratch(self):
        rng = np.random.default_rng(2024)
        geometry = SensorGeometry(8, 8)
        spec = PoolSpec(2, 2, 1, 3)
        graph = LayerGraph(geometry)
        for px, py, pt in rng.integers(0, [8, 8, 99], (12, 3)).tolist():
            graph.add_node((px, py, pt))
        x = rng.integers(0, 3, (12, 3)).astype(np.float64)
        level = max_pool(spec, graph, x)

        for step in range(10_000):
            k = int(rng.integers(0, 12))
            if rng.random() < 0.6:
                old = x[k].copy()
                x[k] = rng.integers(0, 3, 3)
                rec = ChangeRecord(feature_changed=True, old_feature=old)
            else:
                px, py, pt = graph.position(k)
                # stay inside the 4x4 voxel
                nx = px - px % 4 + int(rng.integers(0, 4))
                ny = py - py % 4 + int(rng.integers(0, 4))
                graph.set_position(k, (nx, ny, pt + int(rng.integers(0, 50))))
                rec = ChangeRecord(
                    position_changed=True, old_position=(px, py, pt), old_feature=x[k].copy()
                )
            upd = propagate_pool(
                spec, graph, x, level.cache, level.graph, level.features,
                ChangeSet(records={k: rec}),
            )
            level.features = upd.features
            fresh = max_pool(spec, graph, x)
            assert np.array_equal(level.features, fresh.features), f"step {step}"
            for v in range(fresh.graph.num_nodes):
                assert level.graph.position(v) == fresh.graph.position(v), f"step {step}"
            for v, members in enumerate(level.cache.members):
                holders = level.cache.argmax[v]
                assert np.array_equal(x[holders, np.arange(3)], level.features[v])
                assert set(holders.tolist()) <= set(members)


class TestTableMemory:
    @pytest.mark.parametrize("size", list(ModelSize))
    def test_pooled_tables_start_empty(self, size):
        model = build_model(ModelConfig(size=size), 0)
        pooled = [s.path for s in model.specs if not s.root_only and s.level > 0]
        assert pooled
        assert all(len(model.lut.layer(path)) == 0 for path in pooled)
        assert model.table_bytes < 4 * 2**20

    def test_tables_hold_only_offsets_in_use(self, geometry):
        model = build_model(ModelConfig(size=ModelSize.SMALL), 0)
        cfg = model.config
        anchors = voxel_anchors(geometry, (56, 40), every=4)
        stream = jitter_stream(geometry, anchors, 1500, spread=(3, 3), seed=0)
        out = dense_forward(model, build_graph(stream, cfg.radius, cfg.max_neighbors, cfg.beta))
        for spec in model.specs:
            if spec.root_only or spec.level == 0:
                continue
            layer = model.lut.layer(spec.path)
            g = out.levels[spec.level].graph
            dx, dy = edge_offsets(g, *g.edge_arrays())
            rx, ry = layer.reach
            used = set(zip(np.clip(dx, -rx, rx).tolist(), np.clip(dy, -ry, ry).tolist()))
            assert set(layer.table) == used, spec.path
        assert model.table_bytes < 256 * 2**20


@pytest.mark.slow
class TestSweeps:
    def test_phi_rises_with_first_pool_channels(self, geometry):
        anchors = voxel_anchors(geometry, (56, 40), every=8)[:6]
        stream = jitter_stream(geometry, anchors, 480, seed=11)
        config = ModelConfig(size=ModelSize.NANO)
        phi = channel_sweep(stream, seed=range(4), warmup=120, config=config)
        assert sorted(phi) == [8, 16, 24, 32]
        assert all(0.0 <= v <= 1.0 for v in phi.values())
        assert phi[32] > phi[8]
        assert non_decreasing(phi, slack=0.05)


@pytest.mark.slow
class TestMultiSeedEquivalence:
    @pytest.mark.parametrize("seed", range(20))
    def test_streams_stay_equivalent(self, geometry, seed):
        config = ModelConfig(size=ModelSize.SMALL)
        anchors = voxel_anchors(geometry, (56, 40), every=6)
        stream = jitter_stream(geometry, anchors, 1000, spread=(3, 3), seed=seed)
        model = build_model(config, seed)
        warm = len(stream) * 4 // 5
        graph = build_graph(stream.head(warm), config.radius, config.max_neighbors, config.beta)
        session = AsyncSession(model, graph)
        for i, event in enumerate(stream.slice(warm)):
            session.insert(event, index=warm + i)
            fresh = dense_forward(model, session.graph)
            for mine, ref in zip(session.outputs, fresh.outputs):
                assert np.array_equal(mine.voxels, ref.voxels)
                np.testing.assert_allclose(mine.reg, ref.reg, rtol=1e-4, atol=1e-4)
                np.testing.assert_allclose(mine.cls, ref.cls, rtol=1e-4, atol=1e-4)
                np.testing.assert_allclose(mine.obj, ref.obj, rtol=1e-4, atol=1e-4)
        assert session.audit() == []
