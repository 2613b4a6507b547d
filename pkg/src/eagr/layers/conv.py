"""Graph convolution forward passes.

x'_i = W_root x_i + b + sum_{(j, i) in E} W(offset_ji) x_j

Every matrix-vector product goes through ``rowwise_matvec`` and messages are summed per
destination in adjacency order. The asynchronous engine evaluates new nodes with the
same two primitives, which keeps its results bit-identical to a dense pass for them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from eagr.graph.layer_graph import LayerGraph
from eagr.layers.lut import LutConvLayer, RootLinear
from eagr.layers.spline import BatchNormParams, SplineKernel, edge_attribute, spline_weights

EDGE_CHUNK = 8192


def rowwise_matvec(mats: np.ndarray, vecs: np.ndarray) -> np.ndarray:
    """Row-by-row products: (n, c_out, c_in) x (n, c_in) -> (n, c_out)."""
    return (mats * vecs[:, None, :]).sum(axis=-1)


def root_term(layer: LutConvLayer | RootLinear, rows: np.ndarray) -> np.ndarray:
    """W_root x + b for each row of ``rows``."""
    mats = np.broadcast_to(layer.root, (rows.shape[0],) + layer.root.shape)
    return rowwise_matvec(mats, rows) + layer.bias


def edge_offsets(graph: LayerGraph, src: np.ndarray, dst: np.ndarray) -> tuple:
    pos = graph.positions_px()
    if not len(src):
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    return pos[src, 0] - pos[dst, 0], pos[src, 1] - pos[dst, 1]


def lut_messages(layer: LutConvLayer, dx, dy, sources: np.ndarray) -> np.ndarray:
    """Messages for edges with offsets (dx, dy) carrying source features ``sources``."""
    return rowwise_matvec(layer.gather(dx, dy), sources)


def conv_forward(layer: LutConvLayer, graph: LayerGraph, features: np.ndarray) -> np.ndarray:
    """Dense LUT convolution over all nodes; returns pre-activation sums."""
    x = np.asarray(features, dtype=np.float64)
    if x.shape[1] != layer.c_in:
        raise ValueError(f"{layer.name}: expected {layer.c_in} input channels, got {x.shape[1]}")
    out = root_term(layer, x)
    src, dst = graph.edge_arrays()
    if not len(src):
        return out
    dx, dy = edge_offsets(graph, src, dst)
    msgs = np.empty((len(src), layer.c_out))
    for start in range(0, len(src), EDGE_CHUNK):
        sl = slice(start, start + EDGE_CHUNK)
        msgs[sl] = lut_messages(layer, dx[sl], dy[sl], x[src[sl]])
    np.add.at(out, dst, msgs)
    return out


def root_forward(layer: RootLinear, features: np.ndarray) -> np.ndarray:
    x = np.asarray(features, dtype=np.float64)
    if x.shape[1] != layer.c_in:
        raise ValueError(f"{layer.name}: expected {layer.c_in} input channels, got {x.shape[1]}")
    return root_term(layer, x)


@dataclass(frozen=True, eq=False)
class SplineConvLayer:
    """Unfinalized convolution: spline evaluated per edge, batch norm applied after.

    Kept as the reference the LUT path is checked against.
    """

    name: str
    kernel: SplineKernel
    bn: BatchNormParams
    scale: tuple[float, float]

    @property
    def c_in(self) -> int:
        return self.kernel.c_in

    @property
    def c_out(self) -> int:
        return self.kernel.c_out

    def forward(self, graph: LayerGraph, features: np.ndarray) -> np.ndarray:
        x = np.asarray(features, dtype=np.float64)
        raw = x @ self.kernel.root.astype(np.float64).T
        if not self.kernel.root_only:
            src, dst = graph.edge_arrays()
            if len(src):
                geo = graph.geometry
                pos = graph.normalized_positions(beta=1.0)
                # same attribute as the integer-offset table, computed in normalized units
                e = edge_attribute(
                    pos[src, 0] - pos[dst, 0],
                    pos[src, 1] - pos[dst, 1],
                    self.scale[0] / geo.width,
                    self.scale[1] / geo.height,
                )
                weights = spline_weights(self.kernel, e)
                np.add.at(raw, dst, rowwise_matvec(weights, x[src]))
        return self.bn.apply(raw)
