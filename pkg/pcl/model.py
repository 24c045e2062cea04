"""
Network assembly for Pairwise Continual.

Builds the benchmark architectures (MLP and CNN backbones with a pairwise or
fully connected head), initializes their parameters and runs whole-network
forward and backward passes.

Layer order is always ``backbone -> GELU -> k-WTA -> head``; every backbone
block already ends in a GELU, so the activation before k-WTA is doubled.
"""

from __future__ import annotations

import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .errors import ConfigError
from .layers import (
    ParamTensor,
    PairwiseConnections,
    build_pairwise_connections,
    check_finite,
    conv2d_backward,
    conv2d_forward,
    conv_output_size,
    dense_backward,
    dense_forward,
    gelu,
    gelu_backward,
    kwta_backward,
    kwta_forward,
    max_connections,
    pairwise_backward,
    pairwise_forward,
    resolve_k,
)


BACKBONES = ("mlp", "cnn")
HEADS = ("pairwise", "fc")

# Default k-WTA density per head type, in percent of the head input width.
DEFAULT_DENSITY = {"fc": 10.0, "pairwise": 20.0}

MNIST_INPUT_SHAPE = (1, 28, 28)


class ModelStateError(Exception):
    """Raised when the network is used out of order (e.g. backward without forward)."""
    pass


@dataclass(frozen=True)
class ConvSpec:
    """One convolution block: kernel size, stride, padding and output channels."""
    kernel: int
    stride: int
    padding: int
    channels: int

    def to_dict(self) -> dict[str, int]:
        return {
            "kernel": self.kernel,
            "stride": self.stride,
            "padding": self.padding,
            "channels": self.channels,
        }


@dataclass
class ArchitectureSpec:
    """Declarative description of a network.

    Attributes:
        backbone: ``"mlp"`` or ``"cnn"``.
        widths: Hidden widths of the MLP blocks.
        conv_layers: Convolution blocks of the CNN.
        head: ``"pairwise"`` or ``"fc"``.
        pairwise_budget: Number of pairwise connections (pairwise head only).
        density_pct: k-WTA density before the head; defaults per head type.
        input_shape: Input image shape ``(C, H, W)``.
        n_classes: Number of output classes.
        pairwise_bias: Whether the pairwise head has an output bias.
    """
    backbone: str = "mlp"
    widths: list[int] = field(default_factory=list)
    conv_layers: list[ConvSpec] = field(default_factory=list)
    head: str = "fc"
    pairwise_budget: int | None = None
    density_pct: float | None = None
    input_shape: tuple[int, int, int] = MNIST_INPUT_SHAPE
    n_classes: int = 10
    pairwise_bias: bool = False

    def __post_init__(self) -> None:
        self.input_shape = tuple(int(v) for v in self.input_shape)
        self.conv_layers = [
            c if isinstance(c, ConvSpec) else ConvSpec(**c) for c in self.conv_layers
        ]
        if self.density_pct is None and self.head in DEFAULT_DENSITY:
            self.density_pct = DEFAULT_DENSITY[self.head]

    @property
    def input_width(self) -> int:
        return math.prod(self.input_shape)

    def feature_shapes(self) -> list[tuple[int, ...]]:
        """Output shape of every backbone block, starting with the input."""
        shapes: list[tuple[int, ...]] = [self.input_shape]
        if self.backbone == "mlp":
            for width in self.widths:
                shapes.append((width,))
        else:
            channels, height, width = self.input_shape
            for conv in self.conv_layers:
                height = conv_output_size(height, conv.kernel, conv.stride, conv.padding)
                width = conv_output_size(width, conv.kernel, conv.stride, conv.padding)
                channels = conv.channels
                shapes.append((channels, height, width))
        return shapes

    @property
    def head_width(self) -> int:
        """Width d of the k-WTA layer and of the head input."""
        return math.prod(self.feature_shapes()[-1])

    def validate(self) -> list[str]:
        """Return a list of problems with this spec (empty when valid)."""
        errors: list[str] = []
        if self.backbone not in BACKBONES:
            errors.append(f"backbone must be one of {BACKBONES}, got {self.backbone!r}")
        if self.head not in HEADS:
            errors.append(f"head must be one of {HEADS}, got {self.head!r}")
        if len(self.input_shape) != 3 or any(v <= 0 for v in self.input_shape):
            errors.append(f"input_shape must be three positive sizes, got {self.input_shape}")
        if self.n_classes < 2:
            errors.append(f"n_classes must be at least 2, got {self.n_classes}")
        if self.density_pct is None or not 0 < self.density_pct <= 100:
            errors.append(f"density_pct must be in (0, 100], got {self.density_pct}")

        if self.backbone == "mlp":
            if self.conv_layers:
                errors.append("mlp backbone does not take conv_layers")
            if any(w <= 0 for w in self.widths):
                errors.append(f"widths must be positive, got {self.widths}")
        elif self.backbone == "cnn":
            if self.widths:
                errors.append("cnn backbone does not take widths")
            if not self.conv_layers:
                errors.append("cnn backbone needs at least one conv layer")
            for conv in self.conv_layers:
                if min(conv.kernel, conv.stride, conv.channels) <= 0 or conv.padding < 0:
                    errors.append(f"invalid conv layer {conv.to_dict()}")
            if not errors:
                for shape in self.feature_shapes()[1:]:
                    if min(shape) < 1:
                        errors.append(f"conv layers shrink the input to an empty map {shape}")
                        break

        if self.head == "pairwise" and not errors:
            limit = max_connections(self.head_width, self.n_classes)
            if self.pairwise_budget is None or self.pairwise_budget <= 0:
                errors.append("pairwise head needs a positive pairwise_budget")
            elif self.pairwise_budget > limit:
                errors.append(
                    f"pairwise_budget {self.pairwise_budget} exceeds the maximum of "
                    f"{limit} for head width {self.head_width}"
                )
        elif self.head == "fc" and self.pairwise_budget is not None:
            errors.append("fc head does not take pairwise_budget")
        return errors

    def to_dict(self) -> dict[str, Any]:
        """Convert spec to dictionary for serialization."""
        return {
            "backbone": self.backbone,
            "widths": list(self.widths),
            "conv_layers": [c.to_dict() for c in self.conv_layers],
            "head": self.head,
            "pairwise_budget": self.pairwise_budget,
            "density_pct": self.density_pct,
            "input_shape": list(self.input_shape),
            "n_classes": self.n_classes,
            "pairwise_bias": self.pairwise_bias,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> ArchitectureSpec:
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"Unknown architecture field(s): {', '.join(sorted(unknown))}")
        return cls(**data)


def _mlp(widths: list[int], head: str, budget: int | None = None) -> ArchitectureSpec:
    return ArchitectureSpec(backbone="mlp", widths=widths, head=head, pairwise_budget=budget)


CNN1_LAYERS = [ConvSpec(kernel=7, stride=4, padding=0, channels=8)]
CNN2_LAYERS = CNN1_LAYERS + [ConvSpec(kernel=5, stride=2, padding=2, channels=16)]

# Named benchmark architectures. Pairwise budgets are the benchmark totals
# minus the backbone parameters; the 2-layer CNN budget is the full triple
# space of its 144-wide feature map.
ARCHITECTURE_PRESETS: dict[str, ArchitectureSpec] = {
    "mlp_1x700_pairwise": _mlp([700], "pairwise", 244_650),
    "mlp_1x1000_fc": _mlp([1000], "fc"),
    "mlp_1x3000_pairwise": _mlp([3000], "pairwise", 5_045_000),
    "mlp_1x5000_fc": _mlp([5000], "fc"),
    "mlp_1x10000_fc": _mlp([10000], "fc"),
    "mlp_3x700_pairwise": _mlp([700, 700, 700], "pairwise", 1_270_000),
    "mlp_3x1000_fc": _mlp([1000, 1000, 1000], "fc"),
    "cnn_1_pairwise": ArchitectureSpec(
        backbone="cnn", conv_layers=CNN1_LAYERS, head="pairwise", pairwise_budget=100_000,
    ),
    "cnn_1_fc": ArchitectureSpec(backbone="cnn", conv_layers=CNN1_LAYERS, head="fc"),
    "cnn_2_pairwise": ArchitectureSpec(
        backbone="cnn", conv_layers=CNN2_LAYERS, head="pairwise", pairwise_budget=102_960,
    ),
    "cnn_2_fc": ArchitectureSpec(backbone="cnn", conv_layers=CNN2_LAYERS, head="fc"),
}


def resolve_architecture(value: str | dict[str, Any] | ArchitectureSpec) -> ArchitectureSpec:
    """Turn a preset name, a dictionary or a spec into an ArchitectureSpec.

    A dictionary may name a ``preset`` and override individual fields.
    """
    if isinstance(value, ArchitectureSpec):
        return value
    if isinstance(value, str):
        if value not in ARCHITECTURE_PRESETS:
            raise ConfigError(
                f"Unknown architecture preset {value!r}; "
                f"choose from {', '.join(sorted(ARCHITECTURE_PRESETS))}"
            )
        return ArchitectureSpec.from_dict(ARCHITECTURE_PRESETS[value].to_dict())
    if isinstance(value, dict):
        data = dict(value)
        preset = data.pop("preset", None)
        if preset is not None:
            base = resolve_architecture(preset).to_dict()
            if "head" in data and data["head"] != base["head"]:
                base["density_pct"] = None
                base["pairwise_budget"] = None
            base.update(data)
            data = base
        return ArchitectureSpec.from_dict(data)
    raise ConfigError(f"architecture must be a preset name or an object, got {type(value).__name__}")


# ============================================================================
# Layers
# ============================================================================

class Layer(ABC):
    """A network stage with cached forward state for one backward pass."""

    name: str = "layer"

    def params(self) -> list[ParamTensor]:
        return []

    @abstractmethod
    def forward(self, x: np.ndarray, train: bool) -> np.ndarray:
        ...

    @abstractmethod
    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        ...

    def clear(self) -> None:
        self._cache = None

    def _take_cache(self) -> Any:
        cache = getattr(self, "_cache", None)
        if cache is None:
            raise ModelStateError(f"{self.name}: backward called without a training forward")
        return cache

    def describe(self) -> str:
        return self.name


class Flatten(Layer):
    name = "flatten"

    def forward(self, x: np.ndarray, train: bool) -> np.ndarray:
        if train:
            self._cache = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        return grad_out.reshape(self._take_cache())


class Dense(Layer):
    def __init__(self, W: ParamTensor, bias: ParamTensor, name: str = "dense"):
        self.W = W
        self.bias = bias
        self.name = name
        self._cache = None

    def params(self) -> list[ParamTensor]:
        return [self.W, self.bias]

    def forward(self, x: np.ndarray, train: bool) -> np.ndarray:
        y, cache = dense_forward(x, self.W, self.bias)
        if train:
            self._cache = cache
        return y

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        return dense_backward(self._take_cache(), grad_out)

    def describe(self) -> str:
        return f"{self.name}: Dense {self.W.shape[0]} -> {self.W.shape[1]}"


class Conv2d(Layer):
    def __init__(
        self, kernels: ParamTensor, bias: ParamTensor, stride: int, padding: int,
        name: str = "conv",
    ):
        self.kernels = kernels
        self.bias = bias
        self.stride = stride
        self.padding = padding
        self.name = name
        self._cache = None

    def params(self) -> list[ParamTensor]:
        return [self.kernels, self.bias]

    def forward(self, x: np.ndarray, train: bool) -> np.ndarray:
        y, cache = conv2d_forward(x, self.kernels, self.bias, self.stride, self.padding)
        if train:
            self._cache = cache
        return y

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        return conv2d_backward(self._take_cache(), grad_out)

    def describe(self) -> str:
        c_out, c_in, k, _ = self.kernels.shape
        return (
            f"{self.name}: Conv2d {c_in} -> {c_out}, {k}x{k}, "
            f"stride {self.stride}, padding {self.padding}"
        )


class Gelu(Layer):
    def __init__(self, name: str = "gelu"):
        self.name = name
        self._cache = None

    def forward(self, x: np.ndarray, train: bool) -> np.ndarray:
        y, cache = gelu(x)
        if train:
            self._cache = cache
        return y

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        return gelu_backward(self._take_cache(), grad_out)

    def describe(self) -> str:
        return f"{self.name}: GELU"


class Kwta(Layer):
    def __init__(self, k: int, name: str = "kwta"):
        self.k = k
        self.name = name
        self._cache = None

    def forward(self, x: np.ndarray, train: bool) -> np.ndarray:
        y, cache = kwta_forward(x, self.k)
        if train:
            self._cache = cache
        return y

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        return kwta_backward(self._take_cache(), grad_out)

    def describe(self) -> str:
        return f"{self.name}: k-WTA k={self.k}"


class PairwiseHead(Layer):
    def __init__(self, conn: PairwiseConnections, name: str = "pairwise"):
        self.conn = conn
        self.name = name
        self._cache = None

    def params(self) -> list[ParamTensor]:
        if self.conn.bias is not None:
            return [self.conn.weights, self.conn.bias]
        return [self.conn.weights]

    def forward(self, x: np.ndarray, train: bool) -> np.ndarray:
        y, cache = pairwise_forward(x, self.conn)
        if train:
            self._cache = cache
        return y

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        return pairwise_backward(self._take_cache(), grad_out)

    def describe(self) -> str:
        return (
            f"{self.name}: Pairwise d={self.conn.input_width} -> {self.conn.n_outputs}, "
            f"{self.conn.n_connections} connections"
        )


# ============================================================================
# Network
# ============================================================================

class Network:
    """An ordered stack of layers with a single backward pass per forward.

    Attributes:
        layers: Layers in forward order.
        spec: The architecture the network was built from, if any.
        debug: Check every layer output for NaN/Inf.
    """

    def __init__(
        self,
        layers: list[Layer],
        spec: ArchitectureSpec | None = None,
        debug: bool = False,
    ):
        self.layers = layers
        self.spec = spec
        self.debug = debug
        self.last_logits: np.ndarray | None = None
        self.last_batch: np.ndarray | None = None
        self._has_cache = False

    def params(self) -> list[ParamTensor]:
        return [p for layer in self.layers for p in layer.params()]

    @property
    def kwta(self) -> Kwta:
        for layer in self.layers:
            if isinstance(layer, Kwta):
                return layer
        raise ModelStateError("network has no k-WTA layer")

    def zero_grad(self) -> None:
        for p in self.params():
            p.zero_grad()

    def astype(self, dtype: np.dtype | type) -> Network:
        for p in self.params():
            p.astype(dtype)
        return self

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        """Compute logits for a batch.

        With ``train=True`` every layer caches what its backward pass needs;
        with ``train=False`` the caches of the last training forward are left
        untouched.
        """
        if self.spec is not None and tuple(x.shape[1:]) != self.spec.input_shape:
            raise ConfigError(f"input {x.shape[1:]} does not match {self.spec.input_shape}")
        out = x
        for layer in self.layers:
            out = layer.forward(out, train)
            if self.debug:
                check_finite(layer.name, out)
        if train:
            self.last_logits = out
            self.last_batch = x
            self._has_cache = True
        return out

    def backward(self, grad_logits: np.ndarray, retain_cache: bool = False) -> None:
        """Fill every ParamTensor.grad with the gradient for ``grad_logits``.

        Gradients are reset first. Unless ``retain_cache`` is set the
        forward caches are released, so a second backward needs a new
        training forward.
        """
        if not self._has_cache:
            raise ModelStateError("backward called without a preceding forward(train=True)")
        self.zero_grad()
        grad = grad_logits
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
            if self.debug:
                check_finite(f"{layer.name} gradient", grad)
        if not retain_cache:
            self.clear()

    def clear(self) -> None:
        for layer in self.layers:
            layer.clear()
        self.last_logits = None
        self.last_batch = None
        self._has_cache = False

    def param_count(self) -> int:
        return sum(p.size for p in self.params())

    def describe(self) -> list[str]:
        return [layer.describe() for layer in self.layers]


def _he_normal(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    return (rng.standard_normal(shape) * math.sqrt(2.0 / fan_in)).astype(np.float32)


def build_network(spec: ArchitectureSpec, seed: int, debug: bool = False) -> Network:
    """Build and initialize a network from a spec.

    Backbone and FC head weights are He-normal (fan-in), biases zero, and
    pairwise weights N(0, 0.001^2). The same seed gives identical weights.

    Raises:
        ConfigError: If the architecture is invalid.
    """
    errors = spec.validate()
    if errors:
        raise ConfigError(f"Invalid architecture: {'; '.join(errors)}")

    rng = np.random.default_rng(seed)
    layers: list[Layer] = []
    shapes = spec.feature_shapes()

    if spec.backbone == "mlp":
        layers.append(Flatten())
        fan_in = spec.input_width
        for i, width in enumerate(spec.widths):
            W = ParamTensor(f"dense{i}.W", _he_normal(rng, (fan_in, width), fan_in))
            b = ParamTensor(f"dense{i}.bias", np.zeros(width, dtype=np.float32))
            layers += [Dense(W, b, name=f"dense{i}"), Gelu(name=f"gelu{i}")]
            fan_in = width
    else:
        c_in = spec.input_shape[0]
        for i, conv in enumerate(spec.conv_layers):
            fan_in = c_in * conv.kernel * conv.kernel
            shape = (conv.channels, c_in, conv.kernel, conv.kernel)
            K = ParamTensor(f"conv{i}.kernels", _he_normal(rng, shape, fan_in))
            b = ParamTensor(f"conv{i}.bias", np.zeros(conv.channels, dtype=np.float32))
            layers += [
                Conv2d(K, b, conv.stride, conv.padding, name=f"conv{i}"),
                Gelu(name=f"gelu{i}"),
            ]
            c_in = conv.channels
        layers.append(Flatten())

    d = math.prod(shapes[-1])
    layers.append(Gelu(name="gelu_pre_kwta"))
    layers.append(Kwta(resolve_k(spec.density_pct, d)))

    if spec.head == "fc":
        W = ParamTensor("head.W", _he_normal(rng, (d, spec.n_classes), d))
        b = ParamTensor("head.bias", np.zeros(spec.n_classes, dtype=np.float32))
        layers.append(Dense(W, b, name="head"))
    else:
        pairwise_seed = int(rng.integers(0, 2**63 - 1))
        conn = build_pairwise_connections(
            d, spec.n_classes, spec.pairwise_budget, pairwise_seed, with_bias=spec.pairwise_bias,
        )
        layers.append(PairwiseHead(conn, name="head"))

    return Network(layers, spec=spec, debug=debug)


def param_count(net: Network) -> int:
    """Number of trainable scalars in the network."""
    return net.param_count()
