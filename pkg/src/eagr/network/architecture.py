"""Model configuration and the layer plan shared by weights, finalization and the engine.

Level layout (level = graph a layer runs on):
  0  raw event graph        block1 (input stage, stacked convolutions)
  1  pool0  56 x 40         block2
  2  pool1  28 x 20         block3
  3  pool2  14 x 10         block4, head1
  4  pool3   7 x  5         block5, head2
"""

from __future__ import annotations

from dataclasses import dataclass

from pydantic import BaseModel, Field

from eagr.events.stream import SensorGeometry
from eagr.layers.pooling import POOL_GRIDS, PoolSpec, pool_schedule
from eagr.layers.spline import KERNEL_SIZE
from eagr.models import ModelSize

WIDE_CHANNELS = {
    ModelSize.NANO: 32,
    ModelSize.SMALL: 64,
    ModelSize.MEDIUM: 92,
    ModelSize.LARGE: 128,
}

HEAD_LAYERS = ("stem", "cls_conv", "cls_pred", "reg_conv", "reg_pred")
REG_OUTPUTS = 5  # 4 box values + objectness


class ModelConfig(BaseModel):
    """Architecture hyper-parameters."""

    size: ModelSize = ModelSize.SMALL
    n_cls: int = Field(default=2, ge=1)
    width: int = Field(default=304, gt=0)
    height: int = Field(default=240, gt=0)
    radius: float = Field(default=0.01, gt=0)
    max_neighbors: int = Field(default=16, ge=1)
    beta: float = Field(default=1e-6, gt=0)
    c_early: int = Field(default=16, ge=1, description="Channels of block 2")
    c_input: int = Field(default=16, ge=1, description="Channels of block 1 (first pool c_out)")
    input_convs: int = Field(default=2, ge=1, le=3, description="Stacked convs in block 1")
    temporal_pooling: bool = Field(default=False, description="g_t = 8/2^i instead of 1")
    time_window_us: int = Field(default=100_000, gt=0)
    bn_eps: float = Field(default=1e-5, gt=0)

    @property
    def c_wide(self) -> int:
        return WIDE_CHANNELS[self.size]

    @property
    def geometry(self) -> SensorGeometry:
        return SensorGeometry(self.width, self.height)

    @property
    def block_channels(self) -> list[tuple[int, int]]:
        """(c_in, c_out) of blocks 1..5, c_in before position concatenation."""
        w = self.c_wide
        return [(1, self.c_input), (self.c_input, self.c_early), (self.c_early, w), (w, w), (w, w)]

    @property
    def pool_specs(self) -> list[PoolSpec]:
        channels = [c_out for _, c_out in self.block_channels[:4]]
        return pool_schedule(channels, self.temporal_pooling, self.time_window_us)

    @property
    def head_grids(self) -> tuple[tuple[int, int], tuple[int, int]]:
        return POOL_GRIDS[2], POOL_GRIDS[3]


@dataclass(frozen=True)
class LayerSpec:
    path: str
    c_in: int
    c_out: int
    level: int
    root_only: bool = False
    relu: bool = True


def block_layers(config: ModelConfig, index: int) -> list[LayerSpec]:
    """Layers of block ``index`` (1-based): convs then the projection skip if any."""
    c_in, c_out = config.block_channels[index - 1]
    n_convs = config.input_convs if index == 1 else 2
    level = index - 1
    specs = []
    for i in range(n_convs):
        first = i == 0
        specs.append(
            LayerSpec(
                f"block{index}.conv{i + 1}",
                c_in + 2 if first else c_out,
                c_out,
                level,
                relu=i < n_convs - 1,
            )
        )
    if c_in != c_out:
        skip = LayerSpec(f"block{index}.skip", c_in, c_out, level, root_only=True, relu=False)
        specs.append(skip)
    return specs


def head_layers(config: ModelConfig, index: int) -> list[LayerSpec]:
    w = config.c_wide
    level = 3 if index == 1 else 4
    name = f"head{index}"
    return [
        LayerSpec(f"{name}.stem", w, w, level),
        LayerSpec(f"{name}.cls_conv", w, w, level),
        LayerSpec(f"{name}.cls_pred", w, config.n_cls, level, relu=False),
        LayerSpec(f"{name}.reg_conv", w, w, level),
        LayerSpec(f"{name}.reg_pred", w, REG_OUTPUTS, level, relu=False),
    ]


def layer_specs(config: ModelConfig) -> list[LayerSpec]:
    """Every weighted layer in execution order."""
    specs: list[LayerSpec] = []
    for index in range(1, 6):
        specs.extend(block_layers(config, index))
        if index == 4:
            specs.extend(head_layers(config, 1))
    specs.extend(head_layers(config, 2))
    return specs


def conv_depth(config: ModelConfig) -> int:
    """Convolution layers on the deepest input-to-output path, 13 by default.

    Not the total: ``Model.conv_layers`` counts every convolution, both heads included.
    """
    # blocks 1..5, then head stem -> branch conv -> predictor
    return config.input_convs + 4 * 2 + 3


def kernel_shape(spec: LayerSpec) -> tuple[int, int, int, int]:
    return KERNEL_SIZE, KERNEL_SIZE, spec.c_out, spec.c_in
