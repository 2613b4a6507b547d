"""Degree-1 B-spline kernels over 2D edge attributes, and batch-norm parameters.

A kernel holds a k x k grid of (c_out x c_in) control matrices with knots at i/(k-1).
The weight for an edge attribute e in [0,1]^2 is the bilinear interpolation of the four
surrounding control matrices. Edge attributes come from signed pixel offsets:
e = offset / (2 r) + 1/2, clamped to [0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

KERNEL_SIZE = 5
DEGREE = 1
DIMS = 2


@dataclass(frozen=True, eq=False)
class SplineKernel:
    """Control grid (k, k, c_out, c_in) plus root weight (c_out, c_in).

    ``control`` is None for root-only layers (residual projections).
    """

    control: np.ndarray | None
    root: np.ndarray

    def __post_init__(self) -> None:
        if self.root.ndim != 2:
            raise ValueError(f"Root weight must be 2D, got shape {self.root.shape}")
        if self.control is not None:
            k = self.control.shape[0]
            if self.control.ndim != 4 or self.control.shape[1] != k:
                shape = self.control.shape
                raise ValueError(f"Control grid must be (k, k, c_out, c_in), got {shape}")
            if self.control.shape[2:] != self.root.shape:
                raise ValueError(
                    f"Control matrices {self.control.shape[2:]} and root {self.root.shape} differ"
                )

    @property
    def c_out(self) -> int:
        return self.root.shape[0]

    @property
    def c_in(self) -> int:
        return self.root.shape[1]

    @property
    def k(self) -> int:
        return 0 if self.control is None else self.control.shape[0]

    @property
    def root_only(self) -> bool:
        return self.control is None


@dataclass(frozen=True, eq=False)
class BatchNormParams:
    gamma: np.ndarray
    beta: np.ndarray
    mean: np.ndarray
    var: np.ndarray
    eps: float = 1e-5

    def __post_init__(self) -> None:
        if np.any(self.var < 0):
            raise ValueError("Batch-norm running variance must be non-negative")
        if self.eps <= 0:
            raise ValueError(f"Batch-norm epsilon must be positive, got {self.eps}")

    @classmethod
    def identity(cls, channels: int, eps: float = 1e-5) -> BatchNormParams:
        return cls(
            gamma=np.ones(channels, dtype=np.float32),
            beta=np.zeros(channels, dtype=np.float32),
            mean=np.zeros(channels, dtype=np.float32),
            var=np.ones(channels, dtype=np.float32),
            eps=eps,
        )

    def scale(self) -> np.ndarray:
        """gamma / sqrt(var + eps), applied to fused weights."""
        return self.gamma.astype(np.float64) / np.sqrt(self.var.astype(np.float64) + self.eps)

    def shift(self) -> np.ndarray:
        """beta - gamma * mean / sqrt(var + eps), the fused bias."""
        return self.beta.astype(np.float64) - self.scale() * self.mean.astype(np.float64)

    def apply(self, values: np.ndarray) -> np.ndarray:
        mean = self.mean.astype(np.float64)
        std = np.sqrt(self.var.astype(np.float64) + self.eps)
        return (values - mean) / std * self.gamma.astype(np.float64) + self.beta.astype(np.float64)


def edge_attribute(dx, dy, r_x: float, r_y: float) -> np.ndarray:
    """Signed offsets to clamped spline coordinates, shape (..., 2)."""
    e = np.stack(
        [
            np.asarray(dx, dtype=np.float64) / (2.0 * r_x),
            np.asarray(dy, dtype=np.float64) / (2.0 * r_y),
        ],
        axis=-1,
    )
    return np.clip(e + 0.5, 0.0, 1.0)


def spline_weights(kernel: SplineKernel, e: np.ndarray) -> np.ndarray:
    """Bilinear interpolation of the control grid at attributes e of shape (n, 2).

    Returns (n, c_out, c_in).
    """
    if kernel.control is None:
        raise ValueError("Root-only kernel has no spline weights")
    k = kernel.k
    control = kernel.control.astype(np.float64)
    u = np.clip(np.asarray(e, dtype=np.float64), 0.0, 1.0) * (k - 1)
    lo = np.clip(np.floor(u).astype(np.int64), 0, k - 2)
    frac = u - lo
    fx = frac[:, 0][:, None, None]
    fy = frac[:, 1][:, None, None]
    ix, iy = lo[:, 0], lo[:, 1]
    return (
        (1 - fx) * (1 - fy) * control[ix, iy]
        + fx * (1 - fy) * control[ix + 1, iy]
        + (1 - fx) * fy * control[ix, iy + 1]
        + fx * fy * control[ix + 1, iy + 1]
    )


def spline_weight(kernel: SplineKernel, e) -> np.ndarray:
    """Weight matrix (c_out, c_in) for a single edge attribute."""
    return spline_weights(kernel, np.asarray(e, dtype=np.float64).reshape(1, 2))[0]
