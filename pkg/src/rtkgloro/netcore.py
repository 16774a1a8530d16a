"""Feedforward min-max networks: layers, forward evaluation, model files."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Union

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

FORMAT_VERSION = 1


class ShapeError(ValueError):
    """Input or layer shapes do not chain."""


@dataclass
class Dense:
    weights: Tensor  # (out, in)
    bias: Tensor  # (out,)

    def __post_init__(self):
        self.weights, self.bias = ad.as_tensor(self.weights), ad.as_tensor(self.bias)
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[0],):
            raise ShapeError(f"dense weights {self.weights.shape} and bias {self.bias.shape} disagree")

    @property
    def params(self) -> list[Tensor]:
        return [self.weights, self.bias]

    def out_shape(self, in_shape: tuple[int, ...]) -> tuple[int, ...]:
        if math.prod(in_shape) != self.weights.shape[1]:
            raise ShapeError(f"dense layer expects {self.weights.shape[1]} inputs, got shape {in_shape}")
        return (self.weights.shape[0],)

    def __call__(self, x: Tensor) -> Tensor:
        x = x.reshape(x.shape[0], -1) if x.ndim > 2 else x
        return x @ self.weights.T + self.bias


@dataclass
class Conv:
    kernel: Tensor  # (out_ch, in_ch, kh, kw)
    bias: Tensor  # (out_ch,)
    stride: int = 1
    padding: str = "same"

    def __post_init__(self):
        self.kernel, self.bias = ad.as_tensor(self.kernel), ad.as_tensor(self.bias)
        if self.kernel.ndim != 4 or self.bias.shape != (self.kernel.shape[0],):
            raise ShapeError(f"conv kernel {self.kernel.shape} and bias {self.bias.shape} disagree")
        if self.stride < 1:
            raise ShapeError("conv stride must be positive")

    @property
    def params(self) -> list[Tensor]:
        return [self.kernel, self.bias]

    def out_shape(self, in_shape: tuple[int, ...]) -> tuple[int, ...]:
        if len(in_shape) != 3 or in_shape[2] != self.kernel.shape[1]:
            raise ShapeError(f"conv expects H x W x {self.kernel.shape[1]} input, got {in_shape}")
        Ho, Wo, _ = ad._conv_geometry(in_shape[:2], self.kernel.shape, self.stride, self.padding)
        return (Ho, Wo, self.kernel.shape[0])

    def __call__(self, x: Tensor) -> Tensor:
        return ad.conv2d(x, self.kernel, self.stride, self.padding) + self.bias


@dataclass
class MinMax:
    @property
    def params(self) -> list[Tensor]:
        return []

    def out_shape(self, in_shape):
        return tuple(in_shape)

    def __call__(self, x: Tensor) -> Tensor:
        if x.ndim == 2:
            return ad.minmax(x)
        return ad.minmax(x.reshape(x.shape[0], -1)).reshape(x.shape)


@dataclass
class InvertibleDownsample:
    factor: int = 2

    @property
    def params(self) -> list[Tensor]:
        return []

    def out_shape(self, in_shape):
        if len(in_shape) != 3:
            raise ShapeError(f"downsample expects H x W x C input, got {in_shape}")
        H, W, C = in_shape
        s = self.factor
        if s < 1 or H % s or W % s:
            raise ShapeError(f"downsample factor {s} must divide {H}x{W}")
        return (H // s, W // s, C * s * s)

    def __call__(self, x: Tensor) -> Tensor:
        return ad.space_to_depth(x, self.factor)

    def inverse(self, y: np.ndarray) -> np.ndarray:
        return ad.depth_to_space_numpy(y, self.factor)


Layer = Union[Dense, Conv, MinMax, InvertibleDownsample]


@dataclass
class Network:
    layers: list[Layer]
    input_shape: tuple[int, ...]
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.input_shape = tuple(int(s) for s in self.input_shape)
        if not self.layers or not isinstance(self.layers[-1], Dense):
            raise ShapeError("the final layer must be dense")
        self.layer_input_shapes()

    @property
    def num_classes(self) -> int:
        return self.layers[-1].weights.shape[0]

    @property
    def params(self) -> list[Tensor]:
        return [p for layer in self.layers for p in layer.params]

    def layer_input_shapes(self) -> list[tuple[int, ...]]:
        shapes, shape = [], self.input_shape
        for layer in self.layers:
            shapes.append(shape)
            shape = layer.out_shape(shape)
        return shapes

    def is_linear(self) -> bool:
        return len(self.layers) == 1

    def copy(self) -> "Network":
        return network_from_dict(network_to_dict(self))


def forward_tensor(net: Network, x: Tensor) -> Tensor:
    """Batched forward pass; ``x`` has shape (B, *input_shape)."""
    for layer in net.layers:
        x = layer(x)
    return x


def forward(net: Network, x) -> np.ndarray:
    """Logits for one point (shape ``input_shape``) or a batch (B, *input_shape)."""
    x = np.asarray(x, dtype=np.float64)
    single = x.shape == net.input_shape
    if single:
        x = x[None]
    if x.shape[1:] != net.input_shape:
        raise ShapeError(f"input shape {x.shape} does not match network input {net.input_shape}")
    out = forward_tensor(net, Tensor(x)).data
    return out[0] if single else out


def minmax(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    return ad.minmax(Tensor(v)).data


def topk_order(logits: np.ndarray) -> np.ndarray:
    """Class indices by decreasing logit; ties go to the lower index."""
    return np.argsort(-np.asarray(logits), axis=-1, kind="stable")


def class_ranks(logits: np.ndarray) -> np.ndarray:
    """``ranks[..., c]`` is the position of class ``c`` in :func:`topk_order`."""
    order = topk_order(logits)
    ranks = np.empty_like(order)
    np.put_along_axis(ranks, order, np.arange(order.shape[-1]) * np.ones_like(order), axis=-1)
    return ranks


def predict_topk(logits, k: int) -> frozenset[int]:
    logits = np.asarray(logits, dtype=np.float64)
    C = logits.shape[-1]
    if not 1 <= k <= C:
        raise ValueError(f"k must be in 1..{C}, got {k}")
    return frozenset(int(c) for c in topk_order(logits)[:k])


# ---------------------------------------------------------------- construction


def _uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    limit = math.sqrt(3.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape)


def dense_network(
    input_dim: int, hidden: list[int], num_classes: int, seed: int = 0, metadata: dict | None = None
) -> Network:
    """Dense -> MinMax blocks followed by a dense logit layer."""
    rng = np.random.default_rng(seed)
    layers: list[Layer] = []
    fan_in = input_dim
    for width in hidden:
        layers.append(Dense(_uniform(rng, (width, fan_in), fan_in), np.zeros(width)))
        layers.append(MinMax())
        fan_in = width
    layers.append(Dense(_uniform(rng, (num_classes, fan_in), fan_in), np.zeros(num_classes)))
    meta = {"init_seed": seed}
    meta.update(metadata or {})
    return Network(layers, (input_dim,), meta)


def conv_network(
    input_shape: tuple[int, int, int],
    channels: list[int],
    dense_hidden: list[int],
    num_classes: int,
    kernel_size: int = 3,
    downsample: int = 2,
    seed: int = 0,
) -> Network:
    """Conv -> MinMax -> InvertibleDownsample blocks, then dense MinMax layers."""
    rng = np.random.default_rng(seed)
    layers: list[Layer] = []
    c_in = input_shape[2]
    for c_out in channels:
        fan_in = c_in * kernel_size * kernel_size
        kernel = _uniform(rng, (c_out, c_in, kernel_size, kernel_size), fan_in)
        layers += [Conv(kernel, np.zeros(c_out)), MinMax(), InvertibleDownsample(downsample)]
        c_in = c_out * downsample * downsample
    shape = tuple(input_shape)
    for layer in layers:
        shape = layer.out_shape(shape)
    fan_in = math.prod(shape)
    for width in dense_hidden:
        layers += [Dense(_uniform(rng, (width, fan_in), fan_in), np.zeros(width)), MinMax()]
        fan_in = width
    layers.append(Dense(_uniform(rng, (num_classes, fan_in), fan_in), np.zeros(num_classes)))
    return Network(layers, tuple(input_shape), {"init_seed": seed})


# ---------------------------------------------------------------- model files


def _layer_to_dict(layer: Layer) -> dict:
    if isinstance(layer, Dense):
        return {
            "type": "dense",
            "shape": list(layer.weights.shape),
            "weights": layer.weights.data.ravel().tolist(),
            "bias": layer.bias.data.tolist(),
        }
    if isinstance(layer, Conv):
        return {
            "type": "conv",
            "shape": list(layer.kernel.shape),
            "stride": layer.stride,
            "padding": layer.padding,
            "weights": layer.kernel.data.ravel().tolist(),
            "bias": layer.bias.data.tolist(),
        }
    if isinstance(layer, MinMax):
        return {"type": "minmax"}
    return {"type": "downsample", "factor": layer.factor}


def _layer_from_dict(d: dict) -> Layer:
    kind = d["type"]
    if kind == "dense":
        return Dense(np.array(d["weights"], dtype=np.float64).reshape(d["shape"]), np.array(d["bias"]))
    if kind == "conv":
        kernel = np.array(d["weights"], dtype=np.float64).reshape(d["shape"])
        return Conv(kernel, np.array(d["bias"]), int(d.get("stride", 1)), d.get("padding", "same"))
    if kind == "minmax":
        return MinMax()
    if kind == "downsample":
        return InvertibleDownsample(int(d["factor"]))
    raise ValueError(f"unknown layer type {kind!r}")


def network_to_dict(net: Network) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "input_shape": list(net.input_shape),
        "layers": [_layer_to_dict(layer) for layer in net.layers],
        "metadata": net.metadata,
    }


def network_from_dict(d: dict) -> Network:
    if d.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported model format_version {d.get('format_version')!r}")
    layers = [_layer_from_dict(ld) for ld in d["layers"]]
    return Network(layers, tuple(d["input_shape"]), dict(d.get("metadata", {})))


def save_network(net: Network, path) -> None:
    # json writes floats with repr(), the shortest round-trip form
    Path(path).write_text(json.dumps(network_to_dict(net), indent=1))


def load_network(path) -> Network:
    return network_from_dict(json.loads(Path(path).read_text()))
