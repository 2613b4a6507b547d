"""Unit tests for position concatenation and residual blocks."""

import numpy as np
import pytest

from eagr.events.stream import SensorGeometry
from eagr.graph.event_graph import build_graph
from eagr.layers.blocks import (
    ChannelMismatchError,
    ResidualBlock,
    concat_position,
    planar_positions,
    relu,
    residual_block,
)
from eagr.layers.conv import conv_forward, root_forward
from eagr.layers.lut import build_lut, build_root, input_offsets, input_scale
from eagr.layers.spline import BatchNormParams, SplineKernel
from tests.conftest import clustered_stream
from tests.unit.test_spline_lut import random_bn, random_kernel


def zero_lut(c_in: int, c_out: int, name: str = ""):
    k = SplineKernel(
        np.zeros((5, 5, c_out, c_in), dtype=np.float32), np.zeros((c_out, c_in), dtype=np.float32)
    )
    return build_lut(k, BatchNormParams.identity(c_out), [(0, 0)], (2.0, 2.0), True, name)


class TestConcatPosition:
    def test_appends_xy(self):
        out = concat_position(np.array([[0.3]]), np.array([[0.25, 0.5, 7.0]]))
        assert out.tolist() == [[0.3, 0.25, 0.5]]

    def test_zero_length_feature(self):
        out = concat_position(np.zeros((1, 0)), np.array([[0.0, 0.0]]))
        assert out.tolist() == [[0.0, 0.0]]

    def test_twice(self):
        pos = np.array([[0.1, 0.2]])
        out = concat_position(concat_position(np.array([[1.0]]), pos), pos)
        assert out.tolist() == [[1.0, 0.1, 0.2, 0.1, 0.2]]

    def test_row_mismatch(self):
        with pytest.raises(ChannelMismatchError):
            concat_position(np.zeros((2, 1)), np.zeros((3, 2)))

    def test_planar_positions(self):
        g = build_graph(clustered_stream(SensorGeometry(64, 48), 3, seed=0))
        pos = g.positions_px()
        expected = np.column_stack([pos[:, 0] / 64, pos[:, 1] / 48])
        assert np.array_equal(planar_positions(g), expected)


class TestResidualBlock:
    def test_zero_weights_identity_skip(self):
        block = ResidualBlock("b", (zero_lut(5, 3), zero_lut(3, 3)), None, 3, 3)
        g = build_graph(clustered_stream(SensorGeometry(64, 48), 10, seed=1))
        x = np.random.default_rng(0).normal(size=(10, 3))
        acts = residual_block(block, g, x)
        assert np.array_equal(acts.out, relu(x))

    def test_matches_composition(self, geometry):
        g = build_graph(clustered_stream(geometry, 30, seed=5, box=(100, 110, 60, 66)))
        scale = input_scale(geometry, 0.01)
        offsets = input_offsets(geometry, 0.01)
        conv1 = build_lut(random_kernel(3, 4, 1), random_bn(4, 2), offsets, scale, name="c1")
        conv2 = build_lut(random_kernel(4, 4, 3), random_bn(4, 4), offsets, scale, name="c2")
        skip = build_root(SplineKernel(None, random_kernel(1, 4, 5).root), random_bn(4, 6))
        block = ResidualBlock("b", (conv1, conv2), skip, 1, 4)
        x = np.random.default_rng(7).choice([-1.0, 1.0], size=(30, 1))

        acts = residual_block(block, g, x)
        h = concat_position(x, planar_positions(g))
        h1 = relu(conv_forward(conv1, g, h))
        expected = relu(conv_forward(conv2, g, h1) + root_forward(skip, x))
        assert np.array_equal(acts.out, expected)
        assert len(acts.pre) == 2 and len(acts.post) == 1

    def test_isolated_node(self):
        g = build_graph(clustered_stream(SensorGeometry(64, 48), 1, seed=0))
        conv1 = build_lut(random_kernel(3, 2, 1), random_bn(2, 2), [(0, 0)], (2.0, 2.0))
        conv2 = build_lut(random_kernel(2, 2, 3), random_bn(2, 4), [(0, 0)], (2.0, 2.0))
        skip = build_root(SplineKernel(None, random_kernel(1, 2, 5).root), random_bn(2, 6))
        block = ResidualBlock("b", (conv1, conv2), skip, 1, 2)
        x = np.array([[1.0]])
        h = concat_position(x, planar_positions(g))[0]
        h1 = relu(conv1.root @ h + conv1.bias)
        expected = relu(conv2.root @ h1 + conv2.bias + skip.root @ x[0] + skip.bias)
        np.testing.assert_allclose(residual_block(block, g, x).out[0], expected, rtol=1e-12)

    def test_identity_skip_requires_equal_channels(self):
        with pytest.raises(ChannelMismatchError):
            ResidualBlock("b", (zero_lut(3, 4),), None, 1, 4)

    def test_wrong_input_channels(self):
        block = ResidualBlock("b", (zero_lut(5, 3),), None, 3, 3)
        g = build_graph(clustered_stream(SensorGeometry(64, 48), 4, seed=1))
        with pytest.raises(ChannelMismatchError):
            residual_block(block, g, np.zeros((4, 2)))
