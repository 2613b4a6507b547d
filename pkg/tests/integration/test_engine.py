"""Integration tests for the asynchronous engine against dense recomputation."""

import numpy as np
import pytest

import eagr.asynch.engine as engine_module
import eagr.asynch.propagate as propagate_module
from eagr.asynch.engine import AsyncSession, EngineOptions, audit_cache, init_cache
from eagr.events.stream import Event, StreamOrderError
from eagr.graph.event_graph import build_graph
from eagr.graph.layer_graph import LayerGraph
from eagr.metrics.stats import aggregate_stats
from eagr.models import LayerKind
from eagr.network.model import build_model, dense_forward


@pytest.fixture
def session(nano_model, warm_graph):
    return AsyncSession(nano_model, warm_graph)


@pytest.fixture
def tail(stream):
    """The 40 events after the warm-up prefix."""
    return stream.slice(80)


class FlopShadow:
    """Prices the message and root evaluations the engine actually performs.

    Messages inside ``full_sum`` are recomputations; messages while iterating a node's
    out-neighbors are destination updates (a position swap evaluates two per
    destination, a feature delta one); any other message comes from a new edge.
    """

    def __init__(self, monkeypatch):
        self.flops: dict[str, int] = {}
        self.calls = {"recompute": 0, "swap": 0, "feature": 0, "edge": 0}
        self._layer = None
        self._n_old = 0
        self._phase = None
        self._delta_pending = False
        self._inner = 0
        self._parity = 0
        real_conv = propagate_module.propagate_conv
        real_sum = propagate_module.full_sum
        real_message = propagate_module._message
        real_matvec = propagate_module.rowwise_matvec
        real_out = LayerGraph.neighbors_out
        shadow = self

        def propagate_conv(layer, graph, x, pre, post, cs, compare=True):
            shadow._layer, shadow._n_old, shadow._phase = layer, pre.shape[0], None
            shadow.flops[layer.name] = 0
            return real_conv(layer, graph, x, pre, post, cs, compare)

        def full_sum(layer, graph, x, node):
            shadow._phase, shadow._inner = "recompute", 0
            value = real_sum(layer, graph, x, node)
            n = shadow._inner
            c_in, c_out = layer.c_in, layer.c_out
            cost = (2 * c_in + 1) * c_out if node >= shadow._n_old else 0
            if n:
                cost += n * (2 * c_in - 1) * c_out + (n - 1) * c_out
            shadow.flops[layer.name] += cost
            shadow._phase = None
            return value

        def message(layer, src, dst, feature):
            msg = (2 * layer.c_in - 1) * layer.c_out
            phase = shadow._phase or "edge"
            shadow.calls[phase] += 1
            if phase == "recompute":
                shadow._inner += 1
            elif phase == "swap":
                if shadow._parity == 0:
                    shadow.flops[layer.name] += msg + 2 * layer.c_out
                shadow._parity ^= 1
            elif phase == "feature":
                shadow.flops[layer.name] += msg + 2 * layer.c_out
            else:
                shadow.flops[layer.name] += msg + layer.c_out
            return real_message(layer, src, dst, feature)

        def rowwise_matvec(mats, vecs):
            layer = shadow._layer
            if layer is not None and np.shares_memory(mats, layer.root):
                shadow.flops[layer.name] += (2 * layer.c_in + 1) * layer.c_out
                shadow._delta_pending = True
            return real_matvec(mats, vecs)

        def neighbors_out(graph, node):
            shadow._phase = "feature" if shadow._delta_pending else "swap"
            shadow._delta_pending, shadow._parity = False, 0
            yield from real_out(graph, node)
            shadow._phase = None

        monkeypatch.setattr(engine_module, "propagate_conv", propagate_conv)
        monkeypatch.setattr(propagate_module, "full_sum", full_sum)
        monkeypatch.setattr(propagate_module, "_message", message)
        monkeypatch.setattr(propagate_module, "rowwise_matvec", rowwise_matvec)
        monkeypatch.setattr(LayerGraph, "neighbors_out", neighbors_out)


class TestInitialCache:
    def test_audit_clean_after_init(self, session):
        assert session.audit() == []

    def test_empty_graph_session(self, nano_model, stream):
        session = AsyncSession(nano_model)
        assert session.graph.num_nodes == 0
        session.run(stream.head(10))
        assert session.audit() == []


class TestEquivalence:
    def test_audit_after_every_insertion(self, session, tail):
        for i, event in enumerate(tail):
            session.insert(event, index=80 + i)
            assert session.audit() == [], f"diverged after insertion {i}"

    def test_head_outputs_match_dense(self, nano_model, session, tail):
        session.run(tail, start=80)
        fresh = dense_forward(nano_model, session.graph)
        for mine, ref in zip(session.outputs, fresh.outputs):
            assert np.array_equal(mine.voxels, ref.voxels)
            np.testing.assert_allclose(mine.reg, ref.reg, rtol=1e-4, atol=1e-4)
            np.testing.assert_allclose(mine.cls, ref.cls, rtol=1e-4, atol=1e-4)
            np.testing.assert_allclose(mine.obj, ref.obj, rtol=1e-4, atol=1e-4)

    def test_graph_matches_batch_construction(self, nano_config, session, stream, tail):
        session.run(tail, start=80)
        cfg = nano_config
        batch = build_graph(stream, cfg.radius, cfg.max_neighbors, cfg.beta)
        assert set(session.graph.edges()) == set(batch.edges())

    def test_new_node_first_conv_bit_identical(self, nano_model, session, tail):
        report = session.insert(tail[0], index=80)
        fresh = dense_forward(nano_model, session.graph)
        node = report.node
        cached = session.cache.state.levels[0].block.pre[0][node]
        assert np.array_equal(cached, fresh.levels[0].block.pre[0][node])

    @pytest.mark.parametrize(
        "options", [EngineOptions(False, False), EngineOptions(True, False)], ids=str
    )
    def test_variants_stay_exact(self, nano_model, warm_graph, tail, options):
        session = AsyncSession(nano_model, warm_graph, options)
        session.run(tail, start=80)
        assert session.audit() == []


class TestAudit:
    def test_detects_corruption(self, session):
        session.cache.state.levels[0].block.pre[0][3] += 1.0
        found = session.audit()
        assert [(d.layer, d.node) for d in found] == [("block1.conv1", 3)]
        assert found[0].max_abs_error == pytest.approx(1.0)

    def test_tolerance_is_relative(self, nano_model, warm_graph):
        cache = init_cache(nano_model, warm_graph)
        pre = cache.state.levels[0].block.pre[0]
        pre[0] += 1e-6 * np.maximum(1.0, np.abs(pre[0]))
        assert audit_cache(nano_model, cache, 1e-4) == []
        assert audit_cache(nano_model, cache, 1e-8) != []


class TestReports:
    def test_indices_and_callback(self, session, tail):
        seen = []
        reports = session.run(tail.head(5), start=80, on_report=seen.append)
        assert [r.index for r in reports] == [80, 81, 82, 83, 84]
        assert seen == reports
        assert [r.node for r in reports] == [80, 81, 82, 83, 84]

    def test_flops_match_counted_evaluations(self, session, tail, monkeypatch):
        shadow = FlopShadow(monkeypatch)
        for i, event in enumerate(tail):
            report = session.insert(event, index=80 + i)
            for stats in report.layers:
                if stats.kind is LayerKind.CONV:
                    assert stats.flops == shadow.flops.get(stats.layer, 0), (i, stats.layer)
        assert shadow.calls["recompute"] > 0
        assert shadow.calls["feature"] > 0

    def test_change_never_skips_a_pool(self, session, tail):
        pools = ["pool0", "pool1", "pool2", "pool3"]
        for report in session.run(tail, start=80):
            entering = [report.layer(name) for name in pools]
            changed = [
                s.new_nodes + s.new_edges + s.position_changed + s.feature_changed > 0
                for s in entering
            ]
            assert changed == sorted(changed, reverse=True)

    def test_change_probability_falls_across_pools(self, session, tail):
        frame = aggregate_stats(session.run(tail, start=80)).to_frame().set_index("layer")
        p = [frame.loc[f"pool{i}", "p_change"] for i in range(4)]
        assert p[0] == 1.0
        assert all(a >= b for a, b in zip(p, p[1:]))

    def test_first_block_messages_equal_in_degree(self, session, tail):
        for report in session.run(tail, start=80):
            for stats in report.layers:
                if stats.layer.startswith("block1.conv"):
                    assert stats.messages == report.in_degree

    def test_pruned_at_names_a_pool(self, session, tail):
        for report in session.run(tail, start=80):
            assert report.pruned_at in (None, "pool0", "pool1", "pool2", "pool3")
            if report.pruned_at is not None:
                assert report.layer(report.pruned_at).output_empty

    def test_no_pruning_reaches_heads(self, nano_model, warm_graph, tail):
        session = AsyncSession(nano_model, warm_graph, EngineOptions(False, False))
        for report in session.run(tail, start=80):
            assert report.pruned_at is None
            assert all(not s.voxels_pruned for s in report.layers)

    def test_layer_order(self, session, tail):
        (report,) = session.run(tail.head(1), start=80)
        names = [s.layer for s in report.layers]
        assert names[0] == "block1.conv1"
        assert names.index("pool0") < names.index("block2.conv1")
        assert names.index("head1.stem") < names.index("block5.conv1")
        assert names[-1] == "head2.reg_pred"


class TestOrdering:
    def test_older_event_rejected(self, session, stream):
        last = stream[79]
        with pytest.raises(StreamOrderError):
            session.insert(Event(x=last.x, y=last.y, t=last.t - 1, p=1))

    def test_equal_timestamp_accepted(self, session, stream):
        last = stream[79]
        session.insert(Event(x=last.x, y=last.y, t=last.t, p=-1))
        assert session.audit() == []


class TestTemporalPooling:
    def test_dense_only(self, nano_config, warm_graph):
        model = build_model(nano_config.model_copy(update={"temporal_pooling": True}), 0)
        assert len(dense_forward(model, warm_graph).outputs) == 2
        with pytest.raises(ValueError, match="Temporal"):
            AsyncSession(model, warm_graph)
