"""Model weights, random initialization and the `.eagw` container.

Container layout (little-endian):
  magic "EAGW", tensor count uint32, batch-norm epsilon float64
  per tensor: name length uint16, name utf-8, rank uint8, dims uint32 x rank, offset uint64
  tensor data as float32, each at its absolute byte offset
Tensor names are ``<layer path>.<field>`` with fields control, root, bn.gamma, bn.beta,
bn.mean and bn.var.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from eagr.layers.spline import KERNEL_SIZE, BatchNormParams, SplineKernel
from eagr.network.architecture import LayerSpec, ModelConfig, kernel_shape, layer_specs

MAGIC = b"EAGW"
FIELDS = ("control", "root", "bn.gamma", "bn.beta", "bn.mean", "bn.var")


class WeightFormatError(ValueError):
    """Corrupt container, duplicate tensor, or tensor with no place in the model."""


class ShapeMismatchError(ValueError):
    """A tensor's shape disagrees with the model configuration."""

    def __init__(self, path: str, expected: tuple, got: tuple):
        super().__init__(f"Shape mismatch at {path}: expected {expected}, got {got}")
        self.path = path


@dataclass
class ModelWeights:
    """Per-layer spline kernels and batch norms keyed by layer path."""

    kernels: dict[str, SplineKernel] = field(default_factory=dict)
    norms: dict[str, BatchNormParams] = field(default_factory=dict)

    def tensors(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for path, kernel in self.kernels.items():
            if kernel.control is not None:
                out[f"{path}.control"] = kernel.control
            out[f"{path}.root"] = kernel.root
            bn = self.norms[path]
            out[f"{path}.bn.gamma"] = bn.gamma
            out[f"{path}.bn.beta"] = bn.beta
            out[f"{path}.bn.mean"] = bn.mean
            out[f"{path}.bn.var"] = bn.var
        return out

    @classmethod
    def from_tensors(cls, tensors: dict[str, np.ndarray], eps: float = 1e-5) -> ModelWeights:
        grouped: dict[str, dict[str, np.ndarray]] = {}
        for name, arr in tensors.items():
            for suffix in FIELDS:
                if name.endswith("." + suffix):
                    grouped.setdefault(name[: -len(suffix) - 1], {})[suffix] = arr
                    break
            else:
                raise WeightFormatError(f"Unrecognized tensor name {name!r}")
        weights = cls()
        for path, parts in grouped.items():
            missing = [f for f in FIELDS[1:] if f not in parts]
            if missing:
                raise WeightFormatError(f"Layer {path} lacks tensors {missing}")
            weights.kernels[path] = SplineKernel(parts.get("control"), parts["root"])
            weights.norms[path] = BatchNormParams(
                parts["bn.gamma"], parts["bn.beta"], parts["bn.mean"], parts["bn.var"], eps
            )
        return weights

    def parameter_count(self) -> int:
        return int(sum(arr.size for arr in self.tensors().values()))

    def eps(self) -> float:
        """The batch-norm epsilon shared by every layer."""
        values = {bn.eps for bn in self.norms.values()}
        if len(values) > 1:
            raise WeightFormatError(f"Layers use different batch-norm epsilons: {sorted(values)}")
        return values.pop() if values else 1e-5

    def equals(self, other: ModelWeights) -> bool:
        a, b = self.tensors(), other.tensors()
        if a.keys() != b.keys():
            return False
        same = all(a[k].dtype == b[k].dtype and np.array_equal(a[k], b[k]) for k in a)
        return same and all(bn.eps == other.norms[p].eps for p, bn in self.norms.items())


def init_weights(config: ModelConfig, seed: int = 0, gain: float = 1.0) -> ModelWeights:
    """Uniform weights in +/- gain * sqrt(1 / (c_in k^2)); batch norm at identity."""
    rng = np.random.default_rng(seed)
    weights = ModelWeights()
    for spec in layer_specs(config):
        bound = gain * np.sqrt(1.0 / (spec.c_in * KERNEL_SIZE**2))
        control = None
        if not spec.root_only:
            control = rng.uniform(-bound, bound, kernel_shape(spec)).astype(np.float32)
        root = rng.uniform(-bound, bound, (spec.c_out, spec.c_in)).astype(np.float32)
        weights.kernels[spec.path] = SplineKernel(control, root)
        weights.norms[spec.path] = BatchNormParams.identity(spec.c_out, config.bn_eps)
    return weights


def _expected_shapes(spec: LayerSpec) -> dict[str, tuple]:
    shapes = {"root": (spec.c_out, spec.c_in)}
    if not spec.root_only:
        shapes["control"] = kernel_shape(spec)
    for f in FIELDS[2:]:
        shapes[f] = (spec.c_out,)
    return shapes


def check_weights(weights: ModelWeights, config: ModelConfig) -> None:
    """Raise on the first layer (in execution order) that does not fit the config."""
    specs = layer_specs(config)
    known = {s.path for s in specs}
    unknown = sorted(set(weights.kernels) - known)
    if unknown:
        raise WeightFormatError(f"Unknown layer path {unknown[0]!r}")
    for spec in specs:
        if spec.path not in weights.kernels:
            raise WeightFormatError(f"Missing layer {spec.path!r}")
        kernel, bn = weights.kernels[spec.path], weights.norms[spec.path]
        got = {"root": kernel.root.shape}
        if kernel.control is not None:
            got["control"] = kernel.control.shape
        got.update({"bn.gamma": bn.gamma.shape, "bn.beta": bn.beta.shape})
        got.update({"bn.mean": bn.mean.shape, "bn.var": bn.var.shape})
        for name, expected in _expected_shapes(spec).items():
            if got.get(name) != expected:
                raise ShapeMismatchError(spec.path, expected, got.get(name))


def save_weights(weights: ModelWeights, path: Path) -> None:
    tensors = weights.tensors()
    entries = []
    for name, arr in tensors.items():
        encoded = name.encode("utf-8")
        entries.append((encoded, np.ascontiguousarray(arr, dtype="<f4")))
    table_size = 16 + sum(2 + len(n) + 1 + 4 * a.ndim + 8 for n, a in entries)
    header = bytearray(MAGIC + struct.pack("<Id", len(entries), weights.eps()))
    blobs = []
    offset = table_size
    for name, arr in entries:
        header += struct.pack("<H", len(name)) + name + struct.pack("<B", arr.ndim)
        header += struct.pack(f"<{arr.ndim}I", *arr.shape) + struct.pack("<Q", offset)
        blobs.append(arr.tobytes())
        offset += arr.nbytes
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(bytes(header) + b"".join(blobs))


def load_weights(path: Path) -> ModelWeights:
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise WeightFormatError(f"{path}: bad magic {data[:4]!r}")
    try:
        count, eps = struct.unpack_from("<Id", data, 4)
        pos = 16
        tensors: dict[str, np.ndarray] = {}
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", data, pos)
            name = data[pos + 2 : pos + 2 + name_len].decode("utf-8")
            pos += 2 + name_len
            (rank,) = struct.unpack_from("<B", data, pos)
            dims = struct.unpack_from(f"<{rank}I", data, pos + 1)
            (offset,) = struct.unpack_from("<Q", data, pos + 1 + 4 * rank)
            pos += 1 + 4 * rank + 8
            if name in tensors:
                raise WeightFormatError(f"{path}: duplicated tensor {name!r}")
            size = int(np.prod(dims, dtype=np.int64)) * 4
            if offset + size > len(data):
                raise WeightFormatError(f"{path}: tensor {name!r} runs past end of file")
            arr = np.frombuffer(data, dtype="<f4", count=size // 4, offset=offset)
            tensors[name] = arr.reshape(dims).astype(np.float32)
    except (struct.error, UnicodeDecodeError) as e:
        raise WeightFormatError(f"{path}: truncated or corrupt tensor table") from e
    if not eps > 0:
        raise WeightFormatError(f"{path}: batch-norm epsilon must be positive, got {eps}")
    return ModelWeights.from_tensors(tensors, eps)
