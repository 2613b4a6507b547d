"""Finalized model and the dense forward pass.

``build_model`` turns weights into two parallel networks: the LUT network used for
inference and the direct spline network kept as the reference it is tested against.
``dense_forward`` runs every level from scratch and retains every intermediate array;
the asynchronous engine starts from exactly this state.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from eagr.graph.layer_graph import LayerGraph
from eagr.layers.blocks import BlockActivations, ResidualBlock, conv_relu, residual_block
from eagr.layers.conv import SplineConvLayer
from eagr.layers.lut import (
    build_lut,
    build_root,
    input_offsets,
    input_scale,
    pooled_lut,
    pooled_scale,
)
from eagr.layers.pooling import POOL_GRIDS, PoolCache, PoolSpec, max_pool
from eagr.network.architecture import (
    HEAD_LAYERS,
    LayerSpec,
    ModelConfig,
    conv_depth,
    layer_specs,
)
from eagr.network.weights import ModelWeights, check_weights, init_weights


@dataclass(frozen=True, eq=False)
class Head:
    """Detection head: stem, then a class branch and a box/objectness branch."""

    name: str
    index: int
    level: int
    grid: tuple[int, int]
    stem: object
    cls_conv: object
    cls_pred: object
    reg_conv: object
    reg_pred: object

    def layers(self) -> dict[str, object]:
        return {name: getattr(self, name) for name in HEAD_LAYERS}


@dataclass(frozen=True, eq=False)
class Network:
    blocks: tuple[ResidualBlock, ...]
    heads: tuple[Head, ...]

    def layer(self, path: str):
        owner, _, name = path.partition(".")
        for block in self.blocks:
            if block.name == owner:
                if name == "skip":
                    return block.skip
                return block.convs[int(name.removeprefix("conv")) - 1]
        for head in self.heads:
            if head.name == owner:
                return getattr(head, name)
        raise KeyError(path)


class Model:
    """Immutable after construction; safe to share between sessions."""

    def __init__(self, config: ModelConfig, weights: ModelWeights, lut: Network, spline: Network):
        self.config = config
        self.weights = weights
        self.lut = lut
        self.spline = spline
        self.pools: list[PoolSpec] = config.pool_specs
        self.specs: list[LayerSpec] = layer_specs(config)

    @property
    def depth(self) -> int:
        return conv_depth(self.config)

    @property
    def conv_layers(self) -> int:
        return sum(1 for s in self.specs if not s.root_only)

    @property
    def parameter_count(self) -> int:
        return self.weights.parameter_count()

    @property
    def table_bytes(self) -> int:
        """Bytes held by the fused offset tables so far; pooled tables grow on use."""
        return sum(self.lut.layer(s.path).nbytes for s in self.specs if not s.root_only)

    def spec(self, path: str) -> LayerSpec:
        for s in self.specs:
            if s.path == path:
                return s
        raise KeyError(path)


def level_scale(config: ModelConfig, level: int) -> tuple[float, float]:
    if level == 0:
        return input_scale(config.geometry, config.radius)
    return pooled_scale(config.geometry, POOL_GRIDS[level - 1])


def _finalize(spec: LayerSpec, weights: ModelWeights, config: ModelConfig):
    kernel, bn = weights.kernels[spec.path], weights.norms[spec.path]
    if spec.root_only:
        return build_root(kernel, bn, name=spec.path)
    scale = level_scale(config, spec.level)
    if spec.level == 0:
        offsets = input_offsets(config.geometry, config.radius)
        return build_lut(kernel, bn, offsets, scale, saturate=False, name=spec.path)
    return pooled_lut(kernel, bn, scale, name=spec.path)


def _reference(spec: LayerSpec, weights: ModelWeights, config: ModelConfig) -> SplineConvLayer:
    return SplineConvLayer(
        spec.path,
        weights.kernels[spec.path],
        weights.norms[spec.path],
        level_scale(config, spec.level),
    )


def _assemble(config: ModelConfig, layers: dict[str, object]) -> Network:
    blocks = []
    for index, (c_in, c_out) in enumerate(config.block_channels, start=1):
        name = f"block{index}"
        convs = tuple(
            layer for path, layer in layers.items() if path.startswith(f"{name}.conv")
        )
        blocks.append(ResidualBlock(name, convs, layers.get(f"{name}.skip"), c_in, c_out))
    heads = []
    for index, grid in enumerate(config.head_grids, start=1):
        name = f"head{index}"
        heads.append(
            Head(
                name,
                index,
                3 if index == 1 else 4,
                grid,
                *(layers[f"{name}.{part}"] for part in HEAD_LAYERS),
            )
        )
    return Network(tuple(blocks), tuple(heads))


def build_model(config: ModelConfig, weights: ModelWeights | int | None = None) -> Model:
    """Finalize a model from weights, or from a random seed (default 0)."""
    if weights is None or isinstance(weights, int):
        weights = init_weights(config, seed=weights or 0)
    check_weights(weights, config)
    specs = layer_specs(config)
    lut = _assemble(config, {s.path: _finalize(s, weights, config) for s in specs})
    spline = _assemble(config, {s.path: _reference(s, weights, config) for s in specs})
    return Model(config, weights, lut, spline)


@dataclass
class LevelState:
    """One level: its graph, the features entering its block, and the block's arrays.

    ``pool`` is the cache of the pooling layer that produced this level (None at level 0).
    """

    graph: LayerGraph
    features: np.ndarray
    block: BlockActivations
    pool: PoolCache | None = None


@dataclass
class HeadActivations:
    pre: dict[str, np.ndarray]
    post: dict[str, np.ndarray]


@dataclass
class HeadOutput:
    name: str
    index: int
    grid: tuple[int, int]
    voxels: np.ndarray  # (M, 2) voxel coordinates per output node
    reg: np.ndarray  # (M, 4)
    cls: np.ndarray  # (M, n_cls)
    obj: np.ndarray  # (M,)

    def __len__(self) -> int:
        return len(self.voxels)


@dataclass
class DenseOutput:
    levels: list[LevelState]
    heads: list[HeadActivations]
    outputs: list[HeadOutput]


def run_head(head: Head, graph: LayerGraph, x: np.ndarray) -> HeadActivations:
    pre: dict[str, np.ndarray] = {}
    post: dict[str, np.ndarray] = {}
    pre["stem"], post["stem"] = conv_relu(head.stem, graph, x, True)
    for branch in ("cls", "reg"):
        conv, pred = f"{branch}_conv", f"{branch}_pred"
        pre[conv], post[conv] = conv_relu(getattr(head, conv), graph, post["stem"], True)
        pre[pred], post[pred] = conv_relu(getattr(head, pred), graph, post[conv], False)
    return HeadActivations(pre, post)


def head_output(head: Head, acts: HeadActivations, cache: PoolCache) -> HeadOutput:
    voxels = np.asarray([key[:2] for key in cache.keys], dtype=np.int64).reshape(-1, 2)
    reg = acts.pre["reg_pred"]
    return HeadOutput(
        head.name, head.index, head.grid, voxels, reg[:, :4], acts.pre["cls_pred"], reg[:, 4]
    )


def dense_forward(
    model: Model,
    graph: LayerGraph,
    features: np.ndarray | None = None,
    use_lut: bool = True,
) -> DenseOutput:
    """Full forward pass from scratch.

    Args:
        model: Finalized model.
        graph: Input-level graph.
        features: Input features (N, 1); defaults to the event graph's polarities.
        use_lut: Run the LUT network, or the direct spline reference when False.
    """
    net = model.lut if use_lut else model.spline
    x = graph.features() if features is None else np.asarray(features, dtype=np.float64)
    if x.ndim == 1:
        x = x.reshape(-1, 1)
    levels: list[LevelState] = []
    g, cache = graph, None
    for i, block in enumerate(net.blocks):
        acts = residual_block(block, g, x)
        levels.append(LevelState(g, x, acts, cache))
        if i < len(model.pools):
            pooled = max_pool(model.pools[i], g, acts.out)
            g, x, cache = pooled.graph, pooled.features, pooled.cache
    heads, outputs = [], []
    for head in net.heads:
        level = levels[head.level]
        acts = run_head(head, level.graph, level.block.out)
        heads.append(acts)
        outputs.append(head_output(head, acts, level.pool))
    return DenseOutput(levels, heads, outputs)
