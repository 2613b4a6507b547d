"""Asynchronous per-event inference.

The cache is the full dense state of the network on the current graph. Each insertion
adds one event to the graph and pushes the resulting change sets through every layer,
leaving the cache equal (up to summation order) to a dense pass on the grown graph.
"""

from __future__ import annotations

import threading
from collections.abc import Callable, Iterable
from dataclasses import dataclass

import numpy as np
from rich.console import Console

from eagr.asynch.changes import ChangeSet
from eagr.asynch.propagate import (
    grow,
    propagate_concat,
    propagate_conv,
    propagate_pool,
    propagate_root,
    residual_add,
)
from eagr.config import Settings
from eagr.events.stream import Event, EventStream
from eagr.graph.event_graph import EventGraph
from eagr.layers.blocks import ResidualBlock
from eagr.metrics.costs import tally_flops
from eagr.models import CostTally, Discrepancy, InsertionReport, LayerKind, LayerStats
from eagr.network.model import (
    DenseOutput,
    Head,
    HeadActivations,
    LevelState,
    Model,
    dense_forward,
    head_output,
)

_console = Console(stderr=True)

DEFAULT_TOLERANCE = 1e-4


def _vlog(settings: Settings | None, message: str) -> None:
    if settings is not None and settings.verbose:
        _console.print(f"[dim]{message}[/dim]")


@dataclass
class EngineOptions:
    pruning: bool = True
    position_rounding: bool = True


@dataclass
class ActivationCache:
    """Dense state of the network on ``graph``, kept current by insertions."""

    graph: EventGraph
    state: DenseOutput
    insertions: int = 0


def init_cache(model: Model, graph: EventGraph) -> ActivationCache:
    if model.config.temporal_pooling:
        # pooled times drift, so a node could change time cell at the next level
        raise ValueError("Temporal pooling is only supported by dense_forward")
    return ActivationCache(graph, dense_forward(model, graph))


class _Recorder:
    """Collects per-layer statistics for one insertion."""

    def __init__(self) -> None:
        self.layers: list[LayerStats] = []

    def conv(
        self, name: str, kind: LayerKind, c_in: int, c_out: int, cs: ChangeSet, tally: CostTally
    ) -> None:
        self.layers.append(
            LayerStats(
                layer=name,
                kind=kind,
                c_in=c_in,
                c_out=c_out,
                new_nodes=len(cs.new_nodes),
                new_edges=len(cs.new_edges),
                position_changed=cs.position_changed,
                feature_changed=cs.feature_changed,
                flops=tally_flops(tally, c_in, c_out),
                messages=tally.recomp_messages + tally.dest_updates + tally.new_edges,
                tally=tally,
            )
        )

    def pool(
        self, name: str, c: int, cs: ChangeSet, out: ChangeSet, touched: int, pruned: int
    ) -> None:
        self.layers.append(
            LayerStats(
                layer=name,
                kind=LayerKind.POOL,
                c_in=c,
                c_out=c,
                new_nodes=len(cs.new_nodes),
                new_edges=len(cs.new_edges),
                position_changed=cs.position_changed,
                feature_changed=cs.feature_changed,
                voxels_touched=touched,
                voxels_pruned=pruned,
                output_empty=out.empty,
            )
        )


def _propagate_block(
    block: ResidualBlock, level: LevelState, cs: ChangeSet, rec: _Recorder, compare: bool
) -> ChangeSet:
    graph, acts, x = level.graph, level.block, level.features
    acts.concat, h_cs = propagate_concat(graph, x, acts.concat, cs, compare)
    h = acts.concat
    last = len(block.convs) - 1
    for i, conv in enumerate(block.convs):
        act = i < last
        upd = propagate_conv(
            conv, graph, h, acts.pre[i], acts.post[i] if act else None, h_cs, compare
        )
        acts.pre[i] = upd.pre
        if act:
            acts.post[i] = upd.post
        rec.conv(conv.name, LayerKind.CONV, conv.c_in, conv.c_out, h_cs, upd.tally)
        h = upd.post if act else upd.pre
        h_cs = upd.out

    if block.skip is None:
        acts.skip = x
        skip_old = {k: r.old_feature for k, r in cs.records.items() if r.feature_changed}
        skip_tally = CostTally()
    else:
        acts.skip, skip_old, skip_tally = propagate_root(block.skip, x, acts.skip, cs)
    acts.out_pre, acts.out, out_cs, adds = residual_add(
        acts.pre[-1], acts.skip, acts.out_pre, acts.out, h_cs, skip_old, cs, compare
    )
    skip_tally.adds = adds
    rec.conv(f"{block.name}.skip", LayerKind.SKIP, block.c_in, block.c_out, cs, skip_tally)
    return out_cs


def _propagate_head(
    head: Head,
    level: LevelState,
    acts: HeadActivations,
    cs: ChangeSet,
    rec: _Recorder,
    compare: bool,
) -> tuple[int, float]:
    """Returns (output nodes whose predictions changed, largest absolute change)."""
    graph = level.graph

    def step(name: str, x: np.ndarray, cs_in: ChangeSet, act: bool) -> ChangeSet:
        layer = getattr(head, name)
        upd = propagate_conv(
            layer, graph, x, acts.pre[name], acts.post[name] if act else None, cs_in, compare
        )
        acts.pre[name] = upd.pre
        acts.post[name] = upd.post if act else upd.pre
        rec.conv(layer.name, LayerKind.CONV, layer.c_in, layer.c_out, cs_in, upd.tally)
        return upd.out

    stem_cs = step("stem", level.block.out, cs, True)
    changed: set[int] = set()
    delta = 0.0
    for branch in ("cls", "reg"):
        conv, pred = f"{branch}_conv", f"{branch}_pred"
        conv_cs = step(conv, acts.post["stem"], stem_cs, True)
        pred_cs = step(pred, acts.post[conv], conv_cs, False)
        changed.update(pred_cs.new_nodes)
        for k, r in pred_cs.records.items():
            if r.feature_changed:
                changed.add(k)
                delta = max(delta, float(np.max(np.abs(acts.pre[pred][k] - r.old_feature))))
    return len(changed), delta


def insert_and_update(
    model: Model,
    cache: ActivationCache,
    event: Event,
    options: EngineOptions | None = None,
    index: int | None = None,
) -> InsertionReport:
    """Insert one event into the cache's graph and bring every layer up to date.

    Raises:
        StreamOrderError: The event is older than the newest event in the graph.
    """
    options = options or EngineOptions()
    compare = options.pruning
    graph = cache.graph
    state = cache.state
    node, edges = graph.insert_event(event)

    level0 = state.levels[0]
    level0.features = grow(level0.features, graph.num_nodes)
    level0.features[node, 0] = float(event.p)
    cs = ChangeSet(new_nodes=[node], new_edges=edges)

    rec = _Recorder()
    net = model.lut
    pruned_at = None
    head_changes: dict[str, int] = {}
    head_delta = 0.0
    for li, block in enumerate(net.blocks):
        level = state.levels[li]
        cs = _propagate_block(block, level, cs, rec, compare)
        for h, head in enumerate(net.heads):
            if head.level == li:
                head_changes[head.name], d = _propagate_head(
                    head, level, state.heads[h], cs, rec, compare
                )
                head_delta = max(head_delta, d)
                state.outputs[h] = head_output(head, state.heads[h], level.pool)
        if li < len(model.pools):
            spec = model.pools[li]
            nxt = state.levels[li + 1]
            upd = propagate_pool(
                spec,
                level.graph,
                level.block.out,
                nxt.pool,
                nxt.graph,
                nxt.features,
                cs,
                pruning=options.pruning,
                position_rounding=options.position_rounding,
            )
            nxt.features = upd.features
            name = f"pool{li}"
            rec.pool(name, spec.c_out, cs, upd.out, upd.touched, upd.pruned)
            if pruned_at is None and upd.out.empty:
                pruned_at = name
            cs = upd.out

    cache.insertions += 1
    return InsertionReport(
        index=cache.insertions - 1 if index is None else index,
        node=node,
        in_degree=len(edges),
        layers=rec.layers,
        pruned_at=pruned_at,
        total_flops=sum(s.flops for s in rec.layers),
        head_changes=head_changes,
        head_max_delta=head_delta,
    )


def _close(a: np.ndarray, b: np.ndarray, tolerance: float) -> np.ndarray:
    """Row mask of |a - b| <= tol * max(1, |a|, |b|) on every channel."""
    bound = tolerance * np.maximum(1.0, np.maximum(np.abs(a), np.abs(b)))
    return np.all(np.abs(a - b) <= bound, axis=tuple(range(1, a.ndim)))


def _structural(layer: str, node: int, detail: str) -> Discrepancy:
    return Discrepancy(layer=layer, node=node, max_abs_error=float("inf"), detail=detail)


def _diff(
    name: str, cached: np.ndarray, fresh: np.ndarray, tolerance: float
) -> list[Discrepancy]:
    if cached.shape != fresh.shape:
        return [_structural(name, -1, f"shape {cached.shape} != {fresh.shape}")]
    bad = np.flatnonzero(~_close(cached, fresh, tolerance))
    return [
        Discrepancy(
            layer=name, node=int(i), max_abs_error=float(np.max(np.abs(cached[i] - fresh[i])))
        )
        for i in bad
    ]


def audit_cache(
    model: Model, cache: ActivationCache, tolerance: float = DEFAULT_TOLERANCE
) -> list[Discrepancy]:
    """Diff every cached array against a fresh dense pass on the cache's graph."""
    fresh = dense_forward(model, cache.graph)
    found: list[Discrepancy] = []
    net = model.lut
    for li, (mine, ref) in enumerate(zip(cache.state.levels, fresh.levels)):
        block = net.blocks[li]
        if li:
            pool = f"pool{li - 1}"
            found += _diff(pool, mine.features, ref.features, tolerance)
            g, r = mine.graph, ref.graph
            if g.num_nodes != r.num_nodes:
                found.append(_structural(pool, -1, f"{g.num_nodes} nodes, expected {r.num_nodes}"))
                continue
            for i in range(g.num_nodes):
                if g.position(i) != r.position(i):
                    detail = f"position {g.position(i)} != {r.position(i)}"
                    found.append(_structural(pool, i, detail))
            if set(g.edges()) != set(r.edges()):
                found.append(_structural(pool, -1, "edge sets differ"))
        for i, conv in enumerate(block.convs):
            found += _diff(conv.name, mine.block.pre[i], ref.block.pre[i], tolerance)
        if block.skip is not None:
            found += _diff(block.skip.name, mine.block.skip, ref.block.skip, tolerance)
        found += _diff(f"{block.name}.out", mine.block.out_pre, ref.block.out_pre, tolerance)
    for head, mine, ref in zip(net.heads, cache.state.heads, fresh.heads):
        for name, arr in mine.pre.items():
            found += _diff(f"{head.name}.{name}", arr, ref.pre[name], tolerance)
    return found


class AsyncSession:
    """One graph and its cache; insertions are serialized."""

    def __init__(
        self,
        model: Model,
        graph: EventGraph | None = None,
        options: EngineOptions | None = None,
        settings: Settings | None = None,
    ):
        cfg = model.config
        if graph is None:
            graph = EventGraph(cfg.geometry, cfg.radius, cfg.max_neighbors, cfg.beta)
        self.model = model
        self.options = options or EngineOptions()
        self.settings = settings
        self._lock = threading.Lock()
        self.cache = init_cache(model, graph)
        _vlog(settings, f"Cache initialized on {graph.num_nodes} nodes")

    @property
    def graph(self) -> EventGraph:
        return self.cache.graph

    @property
    def outputs(self):
        return self.cache.state.outputs

    def insert(self, event: Event, index: int | None = None) -> InsertionReport:
        with self._lock:
            return insert_and_update(self.model, self.cache, event, self.options, index)

    def run(
        self,
        events: EventStream | Iterable[Event],
        start: int = 0,
        on_report: Callable[[InsertionReport], None] | None = None,
    ) -> list[InsertionReport]:
        reports = []
        for offset, event in enumerate(events):
            report = self.insert(event, index=start + offset)
            reports.append(report)
            if on_report is not None:
                on_report(report)
        _vlog(self.settings, f"Streamed {len(reports)} events")
        return reports

    def audit(self, tolerance: float = DEFAULT_TOLERANCE) -> list[Discrepancy]:
        with self._lock:
            return audit_cache(self.model, self.cache, tolerance)
