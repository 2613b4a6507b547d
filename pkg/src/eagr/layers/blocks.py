"""Position concatenation and residual blocks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from eagr.graph.layer_graph import LayerGraph
from eagr.layers.conv import SplineConvLayer, conv_forward, root_forward
from eagr.layers.lut import LutConvLayer, RootLinear


class ChannelMismatchError(ValueError):
    """Features do not have the channel count a layer was built for."""


def relu(values: np.ndarray) -> np.ndarray:
    return np.maximum(values, 0.0)


def planar_positions(graph: LayerGraph) -> np.ndarray:
    """(x/W, y/H) per node."""
    pos = graph.positions_px()
    return np.column_stack([pos[:, 0] / graph.geometry.width, pos[:, 1] / graph.geometry.height])


def concat_position(features: np.ndarray, positions: np.ndarray) -> np.ndarray:
    """Append the first two position components to every feature row."""
    x = np.asarray(features, dtype=np.float64)
    pos = np.asarray(positions, dtype=np.float64)
    if x.shape[0] != pos.shape[0]:
        raise ChannelMismatchError(f"{x.shape[0]} feature rows but {pos.shape[0]} positions")
    return np.hstack([x.reshape(x.shape[0], -1), pos[:, :2]])


def _apply(layer, graph: LayerGraph, x: np.ndarray) -> np.ndarray:
    if isinstance(layer, SplineConvLayer):
        return layer.forward(graph, x)
    if isinstance(layer, RootLinear):
        return root_forward(layer, x)
    return conv_forward(layer, graph, x)


@dataclass(frozen=True, eq=False)
class ResidualBlock:
    """ReLU(conv_n(...ReLU(conv_1(concat_pos(x)))) + skip(x)).

    ``skip`` is None for an identity shortcut (c_in == c_out) and a root-only map
    otherwise. Layers are LUT layers after finalization or spline layers on the
    reference path.
    """

    name: str
    convs: tuple
    skip: RootLinear | SplineConvLayer | None
    c_in: int
    c_out: int

    def __post_init__(self) -> None:
        if self.skip is None and self.c_in != self.c_out:
            raise ChannelMismatchError(f"{self.name}: identity skip needs c_in == c_out")


@dataclass
class BlockActivations:
    concat: np.ndarray
    pre: list[np.ndarray]  # conv outputs before ReLU, one per conv
    post: list[np.ndarray]  # ReLU(pre) for every conv but the last
    skip: np.ndarray
    out_pre: np.ndarray
    out: np.ndarray


def residual_block(
    block: ResidualBlock, graph: LayerGraph, features: np.ndarray
) -> BlockActivations:
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != block.c_in:
        got = x.shape[1] if x.ndim == 2 else x.shape
        raise ChannelMismatchError(f"{block.name}: expected {block.c_in} channels, got {got}")
    xc = concat_position(x, planar_positions(graph))
    pre: list[np.ndarray] = []
    post: list[np.ndarray] = []
    h = xc
    for i, conv in enumerate(block.convs):
        p = _apply(conv, graph, h)
        pre.append(p)
        if i < len(block.convs) - 1:
            h = relu(p)
            post.append(h)
    skip = x if block.skip is None else _apply(block.skip, graph, x)
    out_pre = pre[-1] + skip
    return BlockActivations(xc, pre, post, skip, out_pre, relu(out_pre))


def conv_relu(layer: LutConvLayer | SplineConvLayer, graph: LayerGraph, x: np.ndarray, act: bool):
    """One head layer: returns (pre, post)."""
    pre = _apply(layer, graph, x)
    return pre, relu(pre) if act else pre
