"""
Differentiable building blocks with explicit forward and backward passes.

Every forward op returns ``(output, cache)`` and every backward op takes that
cache plus the upstream gradient, returns the gradient with respect to the
op's input and accumulates parameter gradients into ``ParamTensor.grad``.
Ops keep the dtype of their inputs, so the same code runs in float32 for
training and float64 for gradient checks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numpy.typing import NDArray
from scipy import sparse
from scipy.special import erf

from .errors import ConfigError, ProtocolError


Tensor = NDArray[np.floating]

PAIRWISE_INIT_STD = 0.001

# Connections processed per block when gathering pairwise weight gradients.
PAIRWISE_GRAD_CHUNK = 1 << 16

_SQRT_2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


class NumericalError(Exception):
    """Raised in debug mode when an op produces NaN or Inf."""
    pass


def check_finite(name: str, values: np.ndarray) -> None:
    """Raise NumericalError if ``values`` contains NaN or Inf."""
    if not np.all(np.isfinite(values)):
        bad = int(np.count_nonzero(~np.isfinite(values)))
        raise NumericalError(f"{name}: {bad} non-finite value(s)")


@dataclass
class ParamTensor:
    """A trainable parameter with its gradient and importance buffers.

    Attributes:
        name: Human-readable identifier (e.g. ``"dense0.W"``).
        theta: Parameter values.
        grad: Loss gradient, same shape as theta.
        omega: Accumulated importance, same shape, never negative.
    """
    name: str
    theta: np.ndarray
    grad: np.ndarray = field(init=False, repr=False)
    omega: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self.grad = np.zeros_like(self.theta)
        self.omega = np.zeros_like(self.theta)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.theta.shape

    @property
    def size(self) -> int:
        return int(self.theta.size)

    def zero_grad(self) -> None:
        self.grad.fill(0)

    def astype(self, dtype: np.dtype | type) -> None:
        """Convert all three buffers in place to ``dtype``."""
        self.theta = self.theta.astype(dtype)
        self.grad = self.grad.astype(dtype)
        self.omega = self.omega.astype(dtype)


def resolve_k(density_pct: float, width: int) -> int:
    """Number of k-WTA winners for a density percentage of ``width``.

    Rounds half up and clamps to ``[1, width]``.
    """
    if not 0 < density_pct <= 100:
        raise ConfigError(f"density_pct must be in (0, 100], got {density_pct}")
    if width < 1:
        raise ConfigError(f"k-WTA width must be positive, got {width}")
    k = int(math.floor(density_pct / 100.0 * width + 0.5))
    return min(max(k, 1), width)


@dataclass(frozen=True)
class KwtaSpec:
    """k-WTA sparsity given as a percentage of the layer width."""
    density_pct: float

    def resolve(self, width: int) -> int:
        return resolve_k(self.density_pct, width)


@dataclass(frozen=True, eq=False)
class ClassMask:
    """Classes a softmax may choose from."""
    allowed: np.ndarray

    def __post_init__(self) -> None:
        allowed = np.asarray(self.allowed, dtype=bool)
        if allowed.ndim != 1 or not allowed.any():
            raise ConfigError("ClassMask must be a 1-D array allowing at least one class")
        object.__setattr__(self, "allowed", allowed)

    @classmethod
    def full(cls, n_classes: int) -> ClassMask:
        return cls(np.ones(n_classes, dtype=bool))

    @classmethod
    def of(cls, classes: Sequence[int], n_classes: int) -> ClassMask:
        allowed = np.zeros(n_classes, dtype=bool)
        allowed[list(classes)] = True
        return cls(allowed)

    @property
    def n_classes(self) -> int:
        return int(self.allowed.size)

    @property
    def classes(self) -> list[int]:
        return [int(c) for c in np.flatnonzero(self.allowed)]


# ============================================================================
# Dense
# ============================================================================

@dataclass
class DenseCache:
    x: np.ndarray
    W: ParamTensor
    bias: ParamTensor


def dense_forward(
    x: np.ndarray, W: ParamTensor, bias: ParamTensor
) -> tuple[np.ndarray, DenseCache]:
    """Affine map ``y = xW + bias`` for ``x`` of shape [B, in]."""
    if x.ndim != 2 or W.theta.ndim != 2 or x.shape[1] != W.shape[0]:
        raise ConfigError(f"dense: input {x.shape} does not match weights {W.shape}")
    if bias.shape != (W.shape[1],):
        raise ConfigError(f"dense: bias {bias.shape} does not match weights {W.shape}")
    y = x @ W.theta + bias.theta
    return y, DenseCache(x=x, W=W, bias=bias)


def dense_backward(cache: DenseCache, grad_out: np.ndarray) -> np.ndarray:
    if grad_out.shape != (cache.x.shape[0], cache.W.shape[1]):
        raise ConfigError(f"dense: gradient {grad_out.shape} does not match output")
    cache.W.grad += cache.x.T @ grad_out
    cache.bias.grad += grad_out.sum(axis=0)
    return grad_out @ cache.W.theta.T


# ============================================================================
# Conv2d (cross-correlation, no pooling)
# ============================================================================

def conv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


@dataclass
class Conv2dCache:
    windows: np.ndarray
    input_shape: tuple[int, ...]
    kernels: ParamTensor
    bias: ParamTensor
    stride: int
    padding: int


def _windows(x_padded: np.ndarray, kernel: int, stride: int) -> np.ndarray:
    # [B, C, H', W', K, K] view over the padded input
    view = np.lib.stride_tricks.sliding_window_view(x_padded, (kernel, kernel), axis=(2, 3))
    return view[:, :, ::stride, ::stride]


def conv2d_forward(
    x: np.ndarray,
    kernels: ParamTensor,
    bias: ParamTensor,
    stride: int,
    padding: int,
) -> tuple[np.ndarray, Conv2dCache]:
    """2-D cross-correlation of ``x`` [B, C_in, H, W] with kernels [C_out, C_in, K, K]."""
    if x.ndim != 4 or kernels.theta.ndim != 4:
        raise ConfigError(f"conv2d: expected 4-D input and kernels, got {x.shape} and {kernels.shape}")
    c_out, c_in, k_h, k_w = kernels.shape
    if k_h != k_w:
        raise ConfigError(f"conv2d: only square kernels are supported, got {k_h}x{k_w}")
    if x.shape[1] != c_in:
        raise ConfigError(f"conv2d: input has {x.shape[1]} channels, kernels expect {c_in}")
    if bias.shape != (c_out,):
        raise ConfigError(f"conv2d: bias {bias.shape} does not match {c_out} output channels")
    if stride < 1 or padding < 0:
        raise ConfigError(f"conv2d: invalid stride {stride} or padding {padding}")

    h_out = conv_output_size(x.shape[2], k_h, stride, padding)
    w_out = conv_output_size(x.shape[3], k_h, stride, padding)
    if h_out < 1 or w_out < 1:
        raise ConfigError(
            f"conv2d: input {x.shape[2]}x{x.shape[3]} with kernel {k_h}, "
            f"stride {stride}, padding {padding} gives an empty output"
        )

    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    windows = _windows(x, k_h, stride)[:, :, :h_out, :w_out]

    # [B, H', W', C_out] -> [B, C_out, H', W']
    y = np.tensordot(windows, kernels.theta, axes=([1, 4, 5], [1, 2, 3]))
    y = y.transpose(0, 3, 1, 2) + bias.theta[None, :, None, None]
    cache = Conv2dCache(
        windows=windows,
        input_shape=(x.shape[0], c_in, x.shape[2] - 2 * padding, x.shape[3] - 2 * padding),
        kernels=kernels,
        bias=bias,
        stride=stride,
        padding=padding,
    )
    return np.ascontiguousarray(y), cache


def conv2d_backward(cache: Conv2dCache, grad_out: np.ndarray) -> np.ndarray:
    kernels = cache.kernels
    _, _, kernel, _ = kernels.shape
    batch, c_in, height, width = cache.input_shape
    h_out, w_out = grad_out.shape[2], grad_out.shape[3]
    if grad_out.shape[:2] != (batch, kernels.shape[0]):
        raise ConfigError(f"conv2d: gradient {grad_out.shape} does not match output")

    kernels.grad += np.tensordot(grad_out, cache.windows, axes=([0, 2, 3], [0, 2, 3]))
    cache.bias.grad += grad_out.sum(axis=(0, 2, 3))

    s = cache.stride
    p = cache.padding
    grad_padded = np.zeros((batch, c_in, height + 2 * p, width + 2 * p), dtype=grad_out.dtype)
    for i in range(kernel):
        for j in range(kernel):
            # [B, C_out, H', W'] x [C_out, C_in] -> [B, C_in, H', W']
            contrib = np.einsum("bohw,oc->bchw", grad_out, kernels.theta[:, :, i, j])
            grad_padded[:, :, i:i + s * h_out:s, j:j + s * w_out:s] += contrib
    if p:
        return grad_padded[:, :, p:-p, p:-p]
    return grad_padded


# ============================================================================
# GELU (exact erf form)
# ============================================================================

def gelu(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """``0.5 * x * (1 + erf(x / sqrt(2)))``; the cache is the input."""
    cdf = 0.5 * (1.0 + erf(x / _SQRT_2))
    return (x * cdf).astype(x.dtype, copy=False), x


def gelu_backward(cache: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    x = cache
    cdf = 0.5 * (1.0 + erf(x / _SQRT_2))
    pdf = _INV_SQRT_2PI * np.exp(-0.5 * x * x)
    return (grad_out * (cdf + x * pdf)).astype(grad_out.dtype, copy=False)


# ============================================================================
# k-WTA with subtraction
# ============================================================================

def kwta_threshold(x: np.ndarray, k: int) -> np.ndarray:
    """Per-row (k+1)-th largest value of ``x`` [B, d], or 0 when k >= d."""
    d = x.shape[1]
    if k >= d:
        return np.zeros((x.shape[0], 1), dtype=x.dtype)
    # ascending position d-k-1 holds the (k+1)-th largest value
    return np.partition(x, d - k - 1, axis=1)[:, d - k - 1:d - k]


def kwta_forward(x: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Subtract each row's (k+1)-th largest value, then apply ReLU.

    Entries tied with the threshold become zero, so a row can have fewer
    than ``k`` winners. The cache is the boolean winner mask.
    """
    if x.ndim != 2:
        raise ConfigError(f"kwta: expected [B, d] input, got {x.shape}")
    if not 1 <= k <= x.shape[1]:
        raise ConfigError(f"kwta: k={k} outside [1, {x.shape[1]}]")
    shifted = x - kwta_threshold(x, k)
    winners = shifted > 0
    return np.where(winners, shifted, 0).astype(x.dtype, copy=False), winners


def kwta_backward(cache: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    # threshold is a constant: gradient flows only through winners
    return np.where(cache, grad_out, 0).astype(grad_out.dtype, copy=False)


# ============================================================================
# Pairwise interaction layer
# ============================================================================

def max_connections(d: int, n_outputs: int) -> int:
    """Size of the (a, b, o) triple space with a < b."""
    return d * (d - 1) // 2 * n_outputs


def _row_starts(d: int) -> np.ndarray:
    """Index of the first cross (a, a+1) for each a in row-major a<b order."""
    a = np.arange(d, dtype=np.int64)
    return a * (2 * d - a - 1) // 2


def decode_triples(indices: np.ndarray, d: int, n_outputs: int) -> tuple[np.ndarray, ...]:
    """Map flat triple indices to ``(a, b, o)`` using integer arithmetic only."""
    pair = indices // n_outputs
    o = indices % n_outputs
    starts = _row_starts(d)
    a = np.searchsorted(starts, pair, side="right") - 1
    b = pair - starts[a] + a + 1
    return a, b, o


def _sample_without_replacement(rng: np.random.Generator, space: int, count: int) -> np.ndarray:
    """Uniformly sample ``count`` distinct integers from ``range(space)``."""
    if count * 2 > space:
        return rng.permutation(space)[:count]
    # sequential draws with rejection of repeats
    chosen = np.empty(0, dtype=np.int64)
    while chosen.size < count:
        draws = rng.integers(0, space, size=count - chosen.size + 1024, dtype=np.int64)
        merged = np.concatenate([chosen, draws])
        _, first = np.unique(merged, return_index=True)
        chosen = merged[np.sort(first)][:count]
    return chosen


@dataclass
class PairwiseConnections:
    """Sparse wiring from pairwise cross features to outputs.

    Connection ``i`` multiplies inputs ``a[i]`` and ``b[i]`` and adds the
    product, scaled by ``weights.theta[i]``, to output ``o[i]``. Connections
    are stored sorted by ``(a, b, o)``, which is also the CSR order of
    ``matrix()``.
    """
    a: np.ndarray
    b: np.ndarray
    o: np.ndarray
    weights: ParamTensor
    input_width: int
    n_outputs: int
    bias: ParamTensor | None = None
    _indptr: np.ndarray = field(init=False, repr=False)
    _columns: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self.a = np.asarray(self.a, dtype=np.int64)
        self.b = np.asarray(self.b, dtype=np.int64)
        self.o = np.asarray(self.o, dtype=np.int64)
        n = self.a.size
        if not (self.b.size == n and self.o.size == n and self.weights.size == n):
            raise ConfigError("pairwise: a, b, o and weights must have equal length")
        if n and (np.any(self.a < 0) or np.any(self.a >= self.b) or np.any(self.b >= self.input_width)):
            raise ConfigError("pairwise: every connection needs 0 <= a < b < input_width")
        if n and (np.any(self.o < 0) or np.any(self.o >= self.n_outputs)):
            raise ConfigError("pairwise: output index out of range")
        columns = self.b * self.n_outputs + self.o
        flat = self.a * (self.input_width * self.n_outputs) + columns
        if n > 1 and np.any(np.diff(flat) <= 0):
            order = np.argsort(flat, kind="stable")
            if np.any(np.diff(flat[order]) == 0):
                raise ConfigError("pairwise: duplicate (a, b, o) connections")
            self.a, self.b, self.o = self.a[order], self.b[order], self.o[order]
            self.weights.theta = np.ascontiguousarray(self.weights.theta[order])
            self.weights.grad = np.zeros_like(self.weights.theta)
            self.weights.omega = np.zeros_like(self.weights.theta)
            columns = columns[order]
        self._columns = columns
        self._indptr = np.searchsorted(self.a, np.arange(self.input_width + 1)).astype(np.int64)

    @property
    def n_connections(self) -> int:
        return int(self.a.size)

    def matrix(self) -> sparse.csr_matrix:
        """[d, d * n_outputs] CSR matrix with entry (a, b*n_outputs + o) = weight."""
        return sparse.csr_matrix(
            (self.weights.theta, self._columns, self._indptr),
            shape=(self.input_width, self.input_width * self.n_outputs),
        )


def build_pairwise_connections(
    d: int,
    n_outputs: int,
    budget: int,
    seed: int,
    with_bias: bool = False,
    dtype: np.dtype | type = np.float32,
) -> PairwiseConnections:
    """Randomly wire ``budget`` distinct (a, b, o) triples.

    Triples are sampled uniformly without replacement from all a < b < d and
    o < n_outputs; weights are drawn from N(0, 0.001^2).
    """
    space = max_connections(d, n_outputs)
    if budget <= 0:
        raise ConfigError(f"pairwise budget must be positive, got {budget}")
    if budget > space:
        raise ConfigError(
            f"pairwise budget {budget} exceeds the triple space of d={d}, "
            f"n_outputs={n_outputs}: at most {space} connections"
        )
    rng = np.random.default_rng(seed)
    indices = np.sort(_sample_without_replacement(rng, space, budget))
    a, b, o = decode_triples(indices, d, n_outputs)
    weights = ParamTensor(
        "pairwise.W",
        (rng.standard_normal(budget) * PAIRWISE_INIT_STD).astype(dtype),
    )
    bias = ParamTensor("pairwise.bias", np.zeros(n_outputs, dtype=dtype)) if with_bias else None
    return PairwiseConnections(
        a=a, b=b, o=o, weights=weights, input_width=d, n_outputs=n_outputs, bias=bias,
    )


@dataclass
class PairwiseCache:
    x: np.ndarray
    expanded: np.ndarray
    conn: PairwiseConnections


def pairwise_forward(
    x: np.ndarray, conn: PairwiseConnections
) -> tuple[np.ndarray, PairwiseCache]:
    """``logits[b, o] = sum_i w_i * x[b, a_i] * x[b, b_i]`` over connections into o."""
    if x.ndim != 2 or x.shape[1] != conn.input_width:
        raise ConfigError(f"pairwise: input {x.shape} does not match width {conn.input_width}")
    batch, d = x.shape
    # expanded[b, j, o] = sum_a x[b, a] * W(a, j, o)
    expanded = np.asarray((conn.matrix().T @ x.T).T, dtype=x.dtype)
    expanded = expanded.reshape(batch, d, conn.n_outputs)
    logits = np.einsum("bjo,bj->bo", expanded, x)
    if conn.bias is not None:
        logits = logits + conn.bias.theta
    return logits, PairwiseCache(x=x, expanded=expanded, conn=conn)


def pairwise_backward(cache: PairwiseCache, grad_out: np.ndarray) -> np.ndarray:
    x, conn = cache.x, cache.conn
    batch, d = x.shape
    if grad_out.shape != (batch, conn.n_outputs):
        raise ConfigError(f"pairwise: gradient {grad_out.shape} does not match output")

    # outer[b, j*n_outputs + o] = x[b, j] * grad_out[b, o]
    outer = (x[:, :, None] * grad_out[:, None, :]).reshape(batch, d * conn.n_outputs)

    weight_grad = conn.weights.grad
    columns = conn._columns
    for start in range(0, conn.n_connections, PAIRWISE_GRAD_CHUNK):
        stop = start + PAIRWISE_GRAD_CHUNK
        weight_grad[start:stop] += np.einsum(
            "bn,bn->n", x[:, conn.a[start:stop]], outer[:, columns[start:stop]]
        )
    if conn.bias is not None:
        conn.bias.grad += grad_out.sum(axis=0)

    grad_from_a = np.asarray((conn.matrix() @ outer.T).T, dtype=x.dtype)
    grad_from_b = np.einsum("bjo,bo->bj", cache.expanded, grad_out)
    return grad_from_a + grad_from_b


# ============================================================================
# Masked softmax cross-entropy
# ============================================================================

def masked_softmax_xent(
    logits: np.ndarray, labels: np.ndarray, mask: ClassMask
) -> tuple[float, np.ndarray]:
    """Mean cross-entropy of a softmax restricted to the mask's classes.

    Returns:
        The mean loss and its gradient with respect to ``logits`` (zero on
        disallowed classes).

    Raises:
        ProtocolError: If a label is not an allowed class.
    """
    batch, n_classes = logits.shape
    if mask.n_classes != n_classes:
        raise ConfigError(f"mask has {mask.n_classes} classes, logits have {n_classes}")
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (batch,):
        raise ConfigError(f"labels {labels.shape} do not match batch of {batch}")
    if np.any(labels < 0) or np.any(labels >= n_classes) or not np.all(mask.allowed[labels]):
        raise ProtocolError(f"labels {sorted(set(labels.tolist()))} not all in mask {mask.classes}")

    allowed = mask.allowed
    masked = np.where(allowed, logits, -np.inf)
    shifted = masked - masked.max(axis=1, keepdims=True)
    exp = np.where(allowed, np.exp(shifted), 0)
    probs = exp / exp.sum(axis=1, keepdims=True)

    rows = np.arange(batch)
    log_probs = shifted[rows, labels] - np.log(exp.sum(axis=1))
    loss = float(-log_probs.mean())

    grad = probs
    grad[rows, labels] -= 1
    grad /= batch
    return loss, grad.astype(logits.dtype, copy=False)


def masked_argmax(logits: np.ndarray, mask: ClassMask | None = None) -> np.ndarray:
    """Predicted class per row, optionally restricted to the mask."""
    if mask is None:
        return np.argmax(logits, axis=1)
    return np.argmax(np.where(mask.allowed, logits, -np.inf), axis=1)
