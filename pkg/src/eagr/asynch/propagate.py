"""Per-layer update rules of the asynchronous engine.

Each function takes the change set entering a layer, brings that layer's cached arrays
up to date in place (returning regrown arrays when new nodes appeared) and returns the
change set leaving it together with the operations it performed.

Convolution rules, for a node k entering with changes:
  new or moved k     full incoming sum recomputed
  moved k            each destination i swaps T(old offset) x_old for T(new offset) x_new
  feature-only k     root term and each destination get T(offset) (x_new - x_old)
  new edge s -> d    d gains T(offset) x_s
Destinations that are recomputed anyway, or reached over a new edge, are skipped.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from eagr.asynch.changes import ChangeRecord, ChangeSet
from eagr.graph.layer_graph import LayerGraph, Position
from eagr.layers.blocks import relu
from eagr.layers.conv import root_term, rowwise_matvec
from eagr.layers.lut import LutConvLayer, RootLinear
from eagr.layers.pooling import PoolCache, PoolSpec
from eagr.models import CostTally


def grow(arr: np.ndarray, rows: int) -> np.ndarray:
    """Zero-extend ``arr`` to ``rows`` rows."""
    if arr.shape[0] >= rows:
        return arr
    pad = np.zeros((rows - arr.shape[0],) + arr.shape[1:], dtype=arr.dtype)
    return np.concatenate([arr, pad])


def _message(
    layer: LutConvLayer, src: Position, dst: Position, feature: np.ndarray
) -> np.ndarray:
    mat = layer.lookup(src[0] - dst[0], src[1] - dst[1])
    return rowwise_matvec(mat[None], feature[None])[0]


def full_sum(layer: LutConvLayer, graph: LayerGraph, x: np.ndarray, node: int) -> np.ndarray:
    """Root term plus every incoming message, in adjacency order."""
    value = root_term(layer, x[[node]])[0]
    pos = graph.position(node)
    for j in graph.neighbors_in(node):
        value = value + _message(layer, graph.position(j), pos, x[j])
    return value


def _planar_row(graph: LayerGraph, node: int) -> np.ndarray:
    x, y, _ = graph.position(node)
    return np.array([x / graph.geometry.width, y / graph.geometry.height])


def _passthrough(cs: ChangeSet) -> ChangeSet:
    return ChangeSet(
        new_nodes=list(cs.new_nodes), new_edges=list(cs.new_edges), retimed=dict(cs.retimed)
    )


def propagate_concat(
    graph: LayerGraph, x: np.ndarray, concat: np.ndarray, cs: ChangeSet, compare: bool = True
) -> tuple[np.ndarray, ChangeSet]:
    """Position concatenation: a moved node's row changes with its position.

    With ``compare`` off every incoming record is forwarded as feature-changed.
    """
    concat = grow(concat, graph.num_nodes)
    out = _passthrough(cs)
    for k in cs.new_nodes:
        concat[k] = np.concatenate([x[k], _planar_row(graph, k)])
    for k in sorted(cs.records):
        rec = cs.records[k]
        old = concat[k].copy()
        concat[k] = np.concatenate([x[k], _planar_row(graph, k)])
        changed = not compare or not np.array_equal(old, concat[k])
        if not (changed or rec.position_changed):
            continue
        out.records[k] = ChangeRecord(
            position_changed=rec.position_changed,
            feature_changed=changed,
            old_position=rec.old_position,
            old_feature=old,
        )
    return concat, out


@dataclass
class ConvUpdate:
    pre: np.ndarray
    post: np.ndarray | None
    out: ChangeSet
    tally: CostTally


def propagate_conv(
    layer: LutConvLayer,
    graph: LayerGraph,
    x: np.ndarray,
    pre: np.ndarray,
    post: np.ndarray | None,
    cs: ChangeSet,
    compare: bool = True,
) -> ConvUpdate:
    """Update one convolution's cached sums.

    ``post`` is the cached ReLU output, or None for a layer without activation; change
    detection compares post-activation values, or flags every touched node when
    ``compare`` is off.
    """
    n_old = pre.shape[0]
    n = graph.num_nodes
    pre = grow(pre, n)
    tally = CostTally()
    records = cs.records
    new = set(cs.new_nodes)
    recompute = list(cs.new_nodes) + sorted(k for k, r in records.items() if r.position_changed)
    skip = set(recompute)
    fresh_edges = set(cs.new_edges)
    before: dict[int, np.ndarray] = {}

    def touch(i: int) -> None:
        if i < n_old and i not in before:
            before[i] = pre[i].copy()

    for k in recompute:
        touch(k)
        pre[k] = full_sum(layer, graph, x, k)
        n_src = graph.in_degree(k)
        tally.recomp_messages += n_src
        tally.recomp_nodes += 1 if n_src else 0
        if k in new:
            tally.root_updates += 1

    for k in sorted(records):
        rec = records[k]
        if rec.position_changed:
            pos_k = graph.position(k)
            x_old = x[k] if rec.old_feature is None else rec.old_feature
            for i in graph.neighbors_out(k):
                if i in skip or (k, i) in fresh_edges:
                    continue
                touch(i)
                pos_i = graph.position(i)
                swap = _message(layer, pos_k, pos_i, x[k]) - _message(
                    layer, rec.old_position, pos_i, x_old
                )
                pre[i] = pre[i] + swap
                tally.dest_updates += 1
        elif rec.feature_changed:
            delta = x[k] - rec.old_feature
            touch(k)
            pre[k] = pre[k] + rowwise_matvec(layer.root[None], delta[None])[0]
            tally.root_updates += 1
            pos_k = graph.position(k)
            for i in graph.neighbors_out(k):
                if i in skip or (k, i) in fresh_edges:
                    continue
                touch(i)
                pre[i] = pre[i] + _message(layer, pos_k, graph.position(i), delta)
                tally.dest_updates += 1

    for s, d in cs.new_edges:
        if d in skip:
            continue
        touch(d)
        pre[d] = pre[d] + _message(layer, graph.position(s), graph.position(d), x[s])
        tally.new_edges += 1

    out = _passthrough(cs)
    if post is not None:
        post = grow(post, n)
        for k in cs.new_nodes:
            post[k] = relu(pre[k])
    for i in sorted(before):
        if post is not None:
            old = post[i].copy()
            post[i] = relu(pre[i])
            new_value = post[i]
        else:
            old, new_value = before[i], pre[i]
        rec = records.get(i)
        moved = rec is not None and rec.position_changed
        changed = not compare or not np.array_equal(old, new_value)
        if changed or moved:
            out.records[i] = ChangeRecord(
                position_changed=moved,
                feature_changed=changed,
                old_position=rec.old_position if moved else None,
                old_feature=old,
            )
    return ConvUpdate(pre, post, out, tally)


def propagate_root(
    layer: RootLinear, x: np.ndarray, values: np.ndarray, cs: ChangeSet
) -> tuple[np.ndarray, dict[int, np.ndarray], CostTally]:
    """Root-only map: recompute rows whose input changed. Returns old rows of changed nodes."""
    values = grow(values, x.shape[0])
    tally = CostTally()
    for k in cs.new_nodes:
        values[k] = root_term(layer, x[[k]])[0]
        tally.root_updates += 1
    old: dict[int, np.ndarray] = {}
    for k in sorted(cs.records):
        if cs.records[k].feature_changed:
            old[k] = values[k].copy()
            values[k] = root_term(layer, x[[k]])[0]
            tally.root_updates += 1
    return values, old, tally


def residual_add(
    conv_out: np.ndarray,
    skip: np.ndarray,
    out_pre: np.ndarray,
    out: np.ndarray,
    conv_cs: ChangeSet,
    skip_old: dict[int, np.ndarray],
    block_cs: ChangeSet,
    compare: bool = True,
) -> tuple[np.ndarray, np.ndarray, ChangeSet, int]:
    """ReLU(conv + skip) on every node either side changed. Returns the add count last."""
    n = conv_out.shape[0]
    out_pre = grow(out_pre, n)
    out = grow(out, n)
    result = _passthrough(conv_cs)
    for k in conv_cs.new_nodes:
        out_pre[k] = conv_out[k] + skip[k]
        out[k] = relu(out_pre[k])
    affected = (set(conv_cs.records) | set(skip_old)) - set(conv_cs.new_nodes)
    for k in sorted(affected):
        old = out[k].copy()
        out_pre[k] = conv_out[k] + skip[k]
        out[k] = relu(out_pre[k])
        rec = block_cs.records.get(k)
        moved = rec is not None and rec.position_changed
        changed = not compare or not np.array_equal(old, out[k])
        if changed or moved:
            result.records[k] = ChangeRecord(
                position_changed=moved,
                feature_changed=changed,
                old_position=rec.old_position if moved else None,
                old_feature=old,
            )
    return out_pre, out, result, len(affected) + len(conv_cs.new_nodes)


@dataclass
class PoolUpdate:
    features: np.ndarray
    out: ChangeSet
    touched: int
    pruned: int


def _new_voxel(cache: PoolCache, key, channels: int) -> int:
    v = cache.registry[key] = len(cache.keys)
    cache.keys.append(key)
    cache.members.append([])
    cache.pos_sum.append([0, 0, 0])
    cache.count.append(0)
    cache.argmax = grow(cache.argmax.reshape(-1, channels), v + 1)
    return v


def _refresh_max(cache: PoolCache, v: int, x: np.ndarray) -> np.ndarray:
    members = np.asarray(cache.members[v], dtype=np.int64)
    rows = x[members]
    cache.argmax[v] = members[rows.argmax(axis=0)]
    return rows.max(axis=0)


def propagate_pool(
    spec: PoolSpec,
    graph: LayerGraph,
    x: np.ndarray,
    cache: PoolCache,
    out_graph: LayerGraph,
    pooled: np.ndarray,
    cs: ChangeSet,
    pruning: bool = True,
    position_rounding: bool = True,
) -> PoolUpdate:
    """Max pooling with update pruning.

    An existing voxel is left alone when, for every member whose feature changed or which
    just joined, (i) the member holds no channel's maximum, (ii) its feature does not
    exceed the voxel maximum on any channel, and (iii) the floored spatial mean position
    is unchanged. Anything else recomputes the voxel's maximum and/or position.

    With ``pruning`` off every touched voxel is forwarded as feature-changed; with
    ``position_rounding`` off any membership or member-position change is forwarded as a
    position change.
    """
    channels = x.shape[1]
    geometry = graph.geometry
    created: list[int] = []
    candidates: dict[int, list[int]] = {}
    shifted: set[int] = set()
    timed: set[int] = set()

    for k in cs.new_nodes:
        if k != len(cache.voxel_of):
            raise ValueError(f"New node {k} is not the next node ({len(cache.voxel_of)})")
        pos = graph.position(k)
        key = spec.voxel(pos, geometry)
        v = cache.registry.get(key)
        if v is None:
            v = _new_voxel(cache, key, channels)
            out_graph.add_node(pos)
            created.append(v)
        else:
            candidates.setdefault(v, []).append(k)
            shifted.add(v)
        cache.voxel_of.append(v)
        cache.members[v].append(k)
        cache.count[v] += 1
        for axis in range(3):
            cache.pos_sum[v][axis] += pos[axis]

    for k, old in cs.moved().items():
        v = cache.voxel_of[k]
        new = graph.position(k)
        for axis in range(3):
            cache.pos_sum[v][axis] += new[axis] - old[axis]
        (timed if k in cs.retimed else shifted).add(v)

    for k, rec in cs.records.items():
        if rec.feature_changed:
            candidates.setdefault(cache.voxel_of[k], []).append(k)

    pooled = grow(pooled.reshape(-1, channels), len(cache.keys))
    out = ChangeSet()
    for v in created:
        pooled[v] = _refresh_max(cache, v, x)
        out_graph.set_position(v, cache.rounded(v))
        out.new_nodes.append(v)

    touched = sorted((set(candidates) | shifted | timed) - set(created))
    pruned = 0
    for v in touched:
        old_feature = pooled[v].copy()
        old_pos = out_graph.position(v)
        feature_changed = not pruning
        members = candidates.get(v, [])
        if members:
            unused = all(
                not np.any(cache.argmax[v] == m) and np.all(x[m] <= pooled[v]) for m in members
            )
            if not (pruning and unused):
                pooled[v] = _refresh_max(cache, v, x)
                feature_changed = feature_changed or not np.array_equal(pooled[v], old_feature)
        new_pos = cache.rounded(v)
        moved = new_pos[:2] != old_pos[:2] or (not position_rounding and v in shifted)
        if new_pos != old_pos:
            out_graph.set_position(v, new_pos)
            if not moved:
                out.retimed[v] = old_pos
        if moved or feature_changed:
            out.records[v] = ChangeRecord(
                position_changed=moved,
                feature_changed=feature_changed,
                old_position=old_pos if moved else None,
                old_feature=old_feature,
            )
        else:
            pruned += 1

    for s, d in cs.new_edges:
        a, b = cache.voxel_of[s], cache.voxel_of[d]
        if a != b and out_graph.add_edge(a, b):
            out.new_edges.append((a, b))
    return PoolUpdate(pooled, out, len(touched) + len(created), pruned)
