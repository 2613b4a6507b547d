"""Look-up-table form of spline convolutions.

Node positions sit on the integer pixel grid at every level, so the set of relative
offsets an edge can have is finite. Each offset's spline weight is evaluated once,
multiplied by the batch-norm scale, and kept; the root weight and bias are fused the
same way.

Input-level tables are small (35 offsets at 304x240, R = 0.01) and are filled when the
layer is built. Pooled-level tables span every offset up to saturation, which at the
coarse grids is tens of thousands of entries per layer, so they are filled on first
lookup and only hold the offsets that actually occur.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field

import numpy as np

from eagr.events.stream import SensorGeometry
from eagr.layers.spline import BatchNormParams, SplineKernel, edge_attribute, spline_weights


class LutCoverageError(KeyError):
    """Offset outside a non-saturating table: the table was sized for another layer."""


def input_scale(geometry: SensorGeometry, radius: float) -> tuple[float, float]:
    """Layer scale r in pixels for the raw event graph."""
    return float(math.ceil(radius * geometry.width)), float(math.ceil(radius * geometry.height))


def pooled_scale(geometry: SensorGeometry, grid: tuple[int, int]) -> tuple[float, float]:
    """Layer scale r in pixels after pooling onto a (g_x, g_y) grid: twice the voxel pitch."""
    return 2.0 * geometry.width / grid[0], 2.0 * geometry.height / grid[1]


def input_offsets(geometry: SensorGeometry, radius: float) -> list[tuple[int, int]]:
    """Every integer offset an input-level edge can have."""
    rx = math.ceil(radius * geometry.width)
    ry = math.ceil(radius * geometry.height)
    xs = [dx for dx in range(-rx, rx + 1) if abs(dx) / geometry.width < radius]
    ys = [dy for dy in range(-ry, ry + 1) if abs(dy) / geometry.height < radius]
    return [(dx, dy) for dx in xs for dy in ys]


def pooled_reach(scale: tuple[float, float]) -> tuple[int, int]:
    """First offset whose attribute saturates in each axis."""
    return math.ceil(scale[0]), math.ceil(scale[1])


@dataclass(frozen=True, eq=False)
class LutConvLayer:
    """Finalized convolution: offset-keyed fused matrices, fused root and bias.

    A saturating layer accepts any offset inside ``reach`` (larger ones are clamped to
    the edge) and computes missing matrices on demand. A non-saturating layer only knows
    the offsets it was built with and raises ``LutCoverageError`` for anything else.
    """

    name: str
    kernel: SplineKernel = field(repr=False)
    bn_scale: np.ndarray = field(repr=False)  # (c_out,)
    root: np.ndarray  # (c_out, c_in)
    bias: np.ndarray  # (c_out,)
    scale: tuple[float, float]
    reach: tuple[int, int]
    saturate: bool = False
    _filled: dict[int, np.ndarray] = field(default_factory=dict, init=False, repr=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, init=False, repr=False)

    @property
    def c_in(self) -> int:
        return self.root.shape[1]

    @property
    def c_out(self) -> int:
        return self.root.shape[0]

    def _key(self, dx, dy):
        return (np.asarray(dx, dtype=np.int64) + self.reach[0]) * (2 * self.reach[1] + 1) + (
            np.asarray(dy, dtype=np.int64) + self.reach[1]
        )

    def _offset(self, key: int) -> tuple[int, int]:
        qx, qy = divmod(int(key), 2 * self.reach[1] + 1)
        return qx - self.reach[0], qy - self.reach[1]

    @property
    def table(self) -> dict[tuple[int, int], np.ndarray]:
        """Matrices computed so far, keyed by offset."""
        return {self._offset(k): m for k, m in sorted(self._filled.items())}

    @property
    def nbytes(self) -> int:
        return int(sum(m.nbytes for m in self._filled.values()))

    def __len__(self) -> int:
        return len(self._filled)

    def fill(self, offsets) -> None:
        """Compute and keep the matrices for in-range offsets not yet in the table."""
        offsets = list(offsets)
        if not offsets:
            return
        dx = np.array([o[0] for o in offsets], dtype=np.int64)
        dy = np.array([o[1] for o in offsets], dtype=np.int64)
        inside = (np.abs(dx) <= self.reach[0]) & (np.abs(dy) <= self.reach[1])
        dx, dy = dx[inside], dy[inside]
        keys = self._key(dx, dy)
        with self._lock:
            keys, first = np.unique(keys, return_index=True)
            todo = np.array([k not in self._filled for k in keys.tolist()], dtype=bool)
            if not np.any(todo):
                return
            sel = first[todo]
            attr = edge_attribute(dx[sel], dy[sel], self.scale[0], self.scale[1])
            mats = spline_weights(self.kernel, attr) * self.bn_scale[None, :, None]
            for key, mat in zip(keys[todo].tolist(), mats):
                mat.flags.writeable = False
                self._filled[key] = mat

    def gather(self, dx, dy) -> np.ndarray:
        """Matrices for arrays of offsets, shape (E, c_out, c_in)."""
        dx = np.asarray(dx, dtype=np.int64).reshape(-1)
        dy = np.asarray(dy, dtype=np.int64).reshape(-1)
        if dx.size == 0:
            return np.zeros((0, self.c_out, self.c_in))
        rx, ry = self.reach
        if self.saturate:
            dx = np.clip(dx, -rx, rx)
            dy = np.clip(dy, -ry, ry)
        inside = (np.abs(dx) <= rx) & (np.abs(dy) <= ry)
        if not np.all(inside):
            bad = int(np.flatnonzero(~inside)[0])
            raise LutCoverageError(f"{self.name}: offset ({dx[bad]}, {dy[bad]}) not in table")
        keys, inverse = np.unique(self._key(dx, dy), return_inverse=True)
        missing = [k for k in keys.tolist() if k not in self._filled]
        if missing:
            if not self.saturate:
                dx0, dy0 = self._offset(missing[0])
                raise LutCoverageError(f"{self.name}: offset ({dx0}, {dy0}) not in table")
            self.fill(self._offset(k) for k in missing)
        return np.stack([self._filled[k] for k in keys.tolist()])[inverse.reshape(-1)]

    def lookup(self, dx: int, dy: int) -> np.ndarray:
        return self.gather(np.array([dx]), np.array([dy]))[0]


@dataclass(frozen=True, eq=False)
class RootLinear:
    """Fused root-only map: no neighbor messages."""

    name: str
    root: np.ndarray
    bias: np.ndarray

    @property
    def c_in(self) -> int:
        return self.root.shape[1]

    @property
    def c_out(self) -> int:
        return self.root.shape[0]


def _fused_layer(
    kernel: SplineKernel,
    bn: BatchNormParams,
    scale: tuple[float, float],
    reach: tuple[int, int],
    saturate: bool,
    name: str,
) -> LutConvLayer:
    s = bn.scale()
    return LutConvLayer(
        name=name,
        kernel=kernel,
        bn_scale=s,
        root=kernel.root.astype(np.float64) * s[:, None],
        bias=bn.shift(),
        scale=scale,
        reach=reach,
        saturate=saturate,
    )


def build_lut(
    kernel: SplineKernel,
    bn: BatchNormParams,
    offsets,
    scale: tuple[float, float],
    saturate: bool = False,
    name: str = "",
) -> LutConvLayer:
    """Evaluate and fuse one matrix per offset.

    Args:
        kernel: Spline kernel with control grid.
        bn: Batch norm following the convolution.
        offsets: Integer (dx, dy) offsets reachable at this layer; the table's reach is
            their largest magnitude in each axis.
        scale: Layer scale (r_x, r_y) in pixels.
        saturate: Clamp out-of-range lookups to the table edge instead of raising.
        name: Layer path used in messages.
    """
    offsets = sorted({(int(dx), int(dy)) for dx, dy in offsets})
    if not offsets:
        raise ValueError(f"{name or 'layer'}: empty offset set")
    reach = (max(abs(o[0]) for o in offsets), max(abs(o[1]) for o in offsets))
    layer = _fused_layer(kernel, bn, scale, reach, saturate, name)
    layer.fill(offsets)
    return layer


def pooled_lut(
    kernel: SplineKernel, bn: BatchNormParams, scale: tuple[float, float], name: str = ""
) -> LutConvLayer:
    """Saturating table for a pooled level, filled on first lookup of each offset."""
    return _fused_layer(kernel, bn, scale, pooled_reach(scale), True, name)


def build_root(kernel: SplineKernel, bn: BatchNormParams, name: str = "") -> RootLinear:
    s = bn.scale()
    return RootLinear(name=name, root=kernel.root.astype(np.float64) * s[:, None], bias=bn.shift())
