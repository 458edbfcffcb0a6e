"""Layer assemblies, parameter containers, and weight initializers.

A :class:`Network` is an ordered stack of layers built from
:class:`LayerSpec` descriptors.  Parameters and buffers are exposed as flat
name-to-tensor maps with stable insertion ordering, which is the contract the
checkpoint container and the optimizers rely on.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from . import tensor as T
from .tensor import Rng, RunningStats, ShapeError, Tensor

DEFAULT_LEAKY_SLOPE = 0.02  # configurable; rather shallow compared to the usual 0.2


# --------------------------------------------------------------------------
# initializers
# --------------------------------------------------------------------------


def init_uniform(shape, fan_in: int, rng: Rng) -> np.ndarray:
    """I.i.d. uniform on [-1/sqrt(fan_in), +1/sqrt(fan_in)]."""
    if fan_in < 1:
        raise ValueError(f"fan_in must be >= 1, got {fan_in}")
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(shape, -bound, bound)


def init_orthogonal(shape, rng: Rng, rows_axis: int = 0) -> np.ndarray:
    """Orthonormal rows (or columns when rows > columns) after flattening.

    The tensor is viewed as a matrix with ``shape[rows_axis]`` rows and the
    remaining extents flattened into columns; the Gram matrix of the smaller
    side is the identity.
    """
    shape = tuple(shape)
    rows = shape[rows_axis]
    cols = int(np.prod(shape)) // rows
    gauss = rng.normal((max(rows, cols), min(rows, cols))).astype(np.float64)
    q, r = np.linalg.qr(gauss)
    q *= np.sign(np.diag(r))  # fix the sign ambiguity for determinism
    mat = q.T if rows <= cols else q
    mat = mat.reshape((rows,) + tuple(s for i, s in enumerate(shape) if i != rows_axis))
    if rows_axis != 0:
        mat = np.moveaxis(mat, 0, rows_axis)
    return np.ascontiguousarray(mat, dtype=T.default_dtype())


# --------------------------------------------------------------------------
# layer descriptors
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class LayerSpec:
    """One row of an architecture table."""

    kind: str  # conv | tconv
    in_channels: int
    out_channels: int
    kernel: int = 4
    stride: int = 2
    padding: int = 1
    batchnorm: bool = False
    activation: str = "none"  # relu | leaky_relu | tanh | sigmoid | none
    act_param: float = DEFAULT_LEAKY_SLOPE

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "in": self.in_channels,
            "out": self.out_channels,
            "kernel": self.kernel,
            "stride": self.stride,
            "padding": self.padding,
            "batchnorm": self.batchnorm,
            "activation": self.activation,
            "act_param": self.act_param,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LayerSpec":
        return cls(
            kind=d["kind"],
            in_channels=d["in"],
            out_channels=d["out"],
            kernel=d["kernel"],
            stride=d["stride"],
            padding=d["padding"],
            batchnorm=d["batchnorm"],
            activation=d["activation"],
            act_param=d.get("act_param", DEFAULT_LEAKY_SLOPE),
        )


_ACTIVATIONS = {
    "relu": lambda x, p: T.relu(x),
    "leaky_relu": lambda x, p: T.leaky_relu(x, p),
    "tanh": lambda x, p: T.tanh(x),
    "sigmoid": lambda x, p: T.sigmoid(x),
    "none": lambda x, p: x,
}


class ConvBlock:
    """Conv or transposed conv with optional batch norm and a nonlinearity."""

    def __init__(self, spec: LayerSpec, rng: Rng, init: str = "uniform"):
        self.spec = spec
        k = spec.kernel
        if spec.kind == "conv":
            wshape = (spec.out_channels, spec.in_channels, k, k)
        elif spec.kind == "tconv":
            wshape = (spec.in_channels, spec.out_channels, k, k)
        else:
            raise ValueError(f"unknown layer kind {spec.kind!r}")
        fan_in = spec.in_channels * k * k
        if init == "uniform":
            wdata = init_uniform(wshape, fan_in, rng)
        elif init == "orthogonal":
            rows_axis = 0 if spec.kind == "conv" else 1
            wdata = init_orthogonal(wshape, rng, rows_axis=rows_axis)
        else:
            raise ValueError(f"unknown init {init!r}")
        self.weight = Tensor(wdata, requires_grad=True)
        self.bias = Tensor(np.zeros(spec.out_channels), requires_grad=True)
        if spec.batchnorm:
            self.gamma = Tensor(np.ones(spec.out_channels), requires_grad=True)
            self.beta = Tensor(np.zeros(spec.out_channels), requires_grad=True)
            self.running = RunningStats(spec.out_channels)
        else:
            self.gamma = self.beta = self.running = None

    def params(self) -> Iterator[tuple[str, Tensor]]:
        yield "weight", self.weight
        yield "bias", self.bias
        if self.gamma is not None:
            yield "gamma", self.gamma
            yield "beta", self.beta

    def buffers(self) -> Iterator[tuple[str, np.ndarray]]:
        if self.running is not None:
            yield "running_mean", self.running.mean
            yield "running_var", self.running.var

    def forward(self, x: Tensor, training: bool) -> Tensor:
        s = self.spec
        if s.kind == "conv":
            out = T.conv2d(x, self.weight, s.stride, s.padding)
        else:
            out = T.tconv2d(x, self.weight, s.stride, s.padding)
        out = T.add(out, T.reshape(self.bias, (1, s.out_channels, 1, 1)))
        if s.batchnorm:
            out = T.batchnorm2d(out, self.gamma, self.beta, self.running, training=training)
        return _ACTIVATIONS[s.activation](out, s.act_param)


class Network:
    """Sequential stack of conv blocks with named parameters."""

    def __init__(self, specs: list[LayerSpec], rng: Rng, init: str = "uniform", name: str = "net"):
        self.name = name
        self.specs = list(specs)
        self.init = init
        self.blocks = [ConvBlock(s, rng, init) for s in self.specs]

    def named_params(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for i, blk in enumerate(self.blocks):
            for pname, p in blk.params():
                out[f"{i}.{pname}"] = p
        return out

    def named_buffers(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for i, blk in enumerate(self.blocks):
            for bname, b in blk.buffers():
                out[f"{i}.{bname}"] = b
        return out

    def param_count(self) -> int:
        return sum(p.size for p in self.named_params().values())

    def descriptor(self) -> dict:
        return {"name": self.name, "init": self.init, "layers": [s.to_dict() for s in self.specs]}

    @classmethod
    def from_descriptor(cls, desc: dict, rng: Rng) -> "Network":
        specs = [LayerSpec.from_dict(d) for d in desc["layers"]]
        return cls(specs, rng, init=desc.get("init", "uniform"), name=desc.get("name", "net"))

    def forward(self, x: Tensor, training: bool = False, stats_out: list | None = None) -> Tensor:
        for i, blk in enumerate(self.blocks):
            try:
                x = blk.forward(x, training)
            except ShapeError as err:
                raise ShapeError(f"{self.name} layer {i} ({blk.spec.kind}): {err}") from err
            if stats_out is not None:
                stats_out.append(
                    {
                        "layer": f"{self.name}.{i}",
                        "mean": float(x.data.mean()),
                        "std": float(x.data.std()),
                    }
                )
        return x

    def __call__(self, x: Tensor, training: bool = False) -> Tensor:
        return self.forward(x, training)


def load_params(net, tensors: dict[str, np.ndarray], prefix: str = "") -> None:
    """Overwrite a network's parameters and buffers from named arrays."""
    for name, p in net.named_params().items():
        src = tensors[prefix + name]
        if src.shape != p.shape:
            raise ShapeError(f"parameter {prefix + name}: shape {src.shape} != {p.shape}")
        p.data = src.astype(p.data.dtype, copy=True)
    for name, b in net.named_buffers().items():
        src = tensors[prefix + name]
        b[...] = src.astype(b.dtype)
