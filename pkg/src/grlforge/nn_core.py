"""Dense float64 neural-network kernel with hand-written backward passes.

Tensors are plain ``numpy.ndarray`` objects of dtype float64. Every layer is a
pair of pure functions (forward, backward); :class:`Network` chains them over a
list of :class:`LayerSpec` and keeps parameters in a :class:`ParamSet`.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Any, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

LAYER_KINDS = ("linear", "conv2d", "relu", "maxpool", "flatten")


class ShapeError(ValueError):
    """Raised when tensor shapes do not conform to an operation."""


class ConfigError(ValueError):
    """Raised for invalid layer or training hyperparameters."""


def _as_f64(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


# ---------------------------------------------------------------------------
# Linear
# ---------------------------------------------------------------------------

def linear_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Affine map ``x @ w + b`` for x of shape (B, I), w (I, O), b (O,)."""
    x, w, b = _as_f64(x), _as_f64(w), _as_f64(b)
    if x.ndim != 2 or w.ndim != 2 or b.ndim != 1:
        raise ShapeError(f"linear expects x 2-D, w 2-D, b 1-D; got {x.shape}, {w.shape}, {b.shape}")
    if x.shape[1] != w.shape[0]:
        raise ShapeError(f"linear input width {x.shape[1]} != weight rows {w.shape[0]}")
    if b.shape[0] != w.shape[1]:
        raise ShapeError(f"linear bias length {b.shape[0]} != weight columns {w.shape[1]}")
    return x @ w + b


def linear_backward(x: np.ndarray, w: np.ndarray, grad_out: np.ndarray):
    """Return ``(grad_x, grad_w, grad_b)`` for :func:`linear_forward`."""
    x, w, grad_out = _as_f64(x), _as_f64(w), _as_f64(grad_out)
    if grad_out.ndim != 2 or grad_out.shape != (x.shape[0], w.shape[1]):
        raise ShapeError(
            f"linear grad_out shape {grad_out.shape} != expected {(x.shape[0], w.shape[1])}"
        )
    return grad_out @ w.T, x.T @ grad_out, grad_out.sum(axis=0)


# ---------------------------------------------------------------------------
# Convolution (cross-correlation, zero padding)
# ---------------------------------------------------------------------------

def conv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    span = size + 2 * padding - kernel
    if span < 0 or span % stride != 0:
        raise ConfigError(
            f"conv/pool output size ({size}+2*{padding}-{kernel})/{stride}+1 is not a positive integer"
        )
    return span // stride + 1


def _windows(xp: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    # (B, C, H', W', kh, kw) read-only view
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    return win[:, :, ::stride, ::stride]


def _pad(x: np.ndarray, padding: int) -> np.ndarray:
    if padding == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))


def conv2d_forward(x, kernels, bias, stride: int = 1, padding: int = 0) -> np.ndarray:
    """Batched 2-D cross-correlation.

    Args:
        x: input of shape (B, C, H, W).
        kernels: filters of shape (K, C, kh, kw).
        bias: per-filter offsets of shape (K,).
        stride: step between windows, >= 1.
        padding: zeros added on each spatial border, >= 0.

    Returns:
        Array of shape (B, K, H', W') with H' = (H + 2p - kh) / stride + 1.
    """
    x, kernels, bias = _as_f64(x), _as_f64(kernels), _as_f64(bias)
    if x.ndim != 4 or kernels.ndim != 4:
        raise ShapeError(f"conv2d expects 4-D x and kernels; got {x.shape}, {kernels.shape}")
    if x.shape[1] != kernels.shape[1]:
        raise ShapeError(f"conv2d input channels {x.shape[1]} != kernel channels {kernels.shape[1]}")
    if bias.shape != (kernels.shape[0],):
        raise ShapeError(f"conv2d bias shape {bias.shape} != ({kernels.shape[0]},)")
    if stride < 1 or padding < 0:
        raise ConfigError(f"conv2d needs stride >= 1 and padding >= 0; got {stride}, {padding}")
    kh, kw = kernels.shape[2:]
    conv_output_size(x.shape[2], kh, stride, padding)
    conv_output_size(x.shape[3], kw, stride, padding)
    win = _windows(_pad(x, padding), kh, kw, stride)
    out = np.tensordot(win, kernels, axes=([1, 4, 5], [1, 2, 3]))  # (B, H', W', K)
    out = out.transpose(0, 3, 1, 2) + bias[None, :, None, None]
    return np.ascontiguousarray(out)


def conv2d_backward(x, kernels, grad_out, stride: int = 1, padding: int = 0):
    """Return ``(grad_x, grad_kernels, grad_bias)`` for :func:`conv2d_forward`."""
    x, kernels, grad_out = _as_f64(x), _as_f64(kernels), _as_f64(grad_out)
    B, C, H, W = x.shape
    K, _, kh, kw = kernels.shape
    Ho = conv_output_size(H, kh, stride, padding)
    Wo = conv_output_size(W, kw, stride, padding)
    if grad_out.shape != (B, K, Ho, Wo):
        raise ShapeError(f"conv2d grad_out shape {grad_out.shape} != expected {(B, K, Ho, Wo)}")
    xp = _pad(x, padding)
    win = _windows(xp, kh, kw, stride)
    grad_k = np.tensordot(grad_out, win, axes=([0, 2, 3], [0, 2, 3]))  # (K, C, kh, kw)
    grad_b = grad_out.sum(axis=(0, 2, 3))
    cols = np.tensordot(grad_out, kernels, axes=([1], [0]))  # (B, Ho, Wo, C, kh, kw)
    cols = cols.transpose(0, 3, 4, 5, 1, 2)  # (B, C, kh, kw, Ho, Wo)
    gxp = np.zeros_like(xp)
    for u in range(kh):
        for v in range(kw):
            gxp[:, :, u:u + stride * Ho:stride, v:v + stride * Wo:stride] += cols[:, :, u, v]
    if padding:
        gxp = gxp[:, :, padding:-padding, padding:-padding]
    return np.ascontiguousarray(gxp), grad_k, grad_b


# ---------------------------------------------------------------------------
# Activations, pooling
# ---------------------------------------------------------------------------

def relu(x) -> np.ndarray:
    x = _as_f64(x)
    return np.where(x > 0, x, 0.0)


def relu_backward(x, grad_out) -> np.ndarray:
    """Pass gradient where ``x > 0``; the subgradient at exactly 0 is 0."""
    x, grad_out = _as_f64(x), _as_f64(grad_out)
    if x.shape != grad_out.shape:
        raise ShapeError(f"relu grad_out shape {grad_out.shape} != input shape {x.shape}")
    return np.where(x > 0, grad_out, 0.0)


def maxpool2d(x, window: int, stride: int | None = None):
    """Max pooling over (window x window) patches.

    Returns ``(out, indices)`` where ``indices`` holds, for every output cell,
    the flat index into ``x`` of the selected element. Ties go to the first
    position in row-major window order.
    """
    x = _as_f64(x)
    stride = window if stride is None else stride
    if x.ndim != 4:
        raise ShapeError(f"maxpool expects 4-D input; got {x.shape}")
    if window < 1 or stride < 1:
        raise ConfigError(f"maxpool needs window, stride >= 1; got {window}, {stride}")
    B, C, H, W = x.shape
    Ho = conv_output_size(H, window, stride, 0)
    Wo = conv_output_size(W, window, stride, 0)
    win = _windows(x, window, window, stride).reshape(B, C, Ho, Wo, window * window)
    local = win.argmax(axis=-1)
    out = np.take_along_axis(win, local[..., None], axis=-1)[..., 0]
    du, dv = np.divmod(local, window)
    rows = np.arange(Ho)[:, None] * stride + du
    cols = np.arange(Wo)[None, :] * stride + dv
    base = (np.arange(B)[:, None] * C + np.arange(C)[None, :]) * (H * W)
    indices = base[:, :, None, None] + rows * W + cols
    return np.ascontiguousarray(out), indices


def maxpool2d_backward(indices, grad_out, input_shape: Sequence[int]) -> np.ndarray:
    """Route each output gradient to the input element that won its window."""
    indices = np.asarray(indices)
    grad_out = _as_f64(grad_out)
    if indices.shape != grad_out.shape:
        raise ShapeError(f"maxpool grad_out shape {grad_out.shape} != indices shape {indices.shape}")
    size = int(np.prod(input_shape))
    flat = np.bincount(indices.ravel(), weights=grad_out.ravel(), minlength=size)
    return flat.reshape(tuple(input_shape))


# ---------------------------------------------------------------------------
# Loss
# ---------------------------------------------------------------------------

def softmax_cross_entropy(logits, labels):
    """Mean softmax cross-entropy and its gradient with respect to ``logits``."""
    logits = _as_f64(logits)
    labels = np.asarray(labels)
    if logits.ndim != 2:
        raise ShapeError(f"logits must be 2-D; got {logits.shape}")
    B, C = logits.shape
    if labels.shape != (B,):
        raise ShapeError(f"labels shape {labels.shape} != ({B},)")
    if labels.size and (not np.issubdtype(labels.dtype, np.integer) or labels.min() < 0 or labels.max() >= C):
        raise ValueError(f"labels must be integers in [0, {C}); got {labels.tolist()}")
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_p = shifted - log_z
    rows = np.arange(B)
    loss = float(-log_p[rows, labels].sum() / B)
    grad = np.exp(log_p)
    grad[rows, labels] -= 1.0
    grad /= B
    return loss, grad


# ---------------------------------------------------------------------------
# Layers, parameters, networks
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LayerSpec:
    """One layer of a sequential network.

    Only the fields relevant to ``kind`` are read: ``in_features`` and
    ``out_features`` for linear; channels, ``kernel``, ``stride`` and
    ``padding`` for conv2d; ``window`` and ``stride`` for maxpool.
    """

    kind: str
    in_features: int = 0
    out_features: int = 0
    in_channels: int = 0
    out_channels: int = 0
    kernel: int = 0
    stride: int = 1
    padding: int = 0
    window: int = 0

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ConfigError(f"unknown layer kind {self.kind!r}")
        if self.kind == "linear" and min(self.in_features, self.out_features) < 1:
            raise ConfigError("linear widths must be >= 1")
        if self.kind == "conv2d" and min(self.in_channels, self.out_channels, self.kernel, self.stride) < 1:
            raise ConfigError("conv2d channels, kernel and stride must be >= 1")
        if self.kind == "maxpool" and min(self.window, self.stride) < 1:
            raise ConfigError("maxpool window and stride must be >= 1")
        if self.padding < 0:
            raise ConfigError("padding must be >= 0")

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "LayerSpec":
        return cls(**d)


def linear(i: int, o: int) -> LayerSpec:
    return LayerSpec("linear", in_features=i, out_features=o)


def conv2d(cin: int, cout: int, kernel: int, stride: int = 1, padding: int = 0) -> LayerSpec:
    return LayerSpec("conv2d", in_channels=cin, out_channels=cout, kernel=kernel, stride=stride, padding=padding)


def maxpool(window: int, stride: int | None = None) -> LayerSpec:
    return LayerSpec("maxpool", window=window, stride=window if stride is None else stride)


RELU = LayerSpec("relu")
FLATTEN = LayerSpec("flatten")


@dataclass
class ParamSet:
    """Named parameter tensors with parallel gradient and momentum buffers."""

    params: dict[str, np.ndarray] = field(default_factory=dict)
    grads: dict[str, np.ndarray] = field(default_factory=dict)
    velocity: dict[str, np.ndarray] = field(default_factory=dict)

    def add(self, name: str, value: np.ndarray) -> None:
        value = np.ascontiguousarray(value, dtype=np.float64)
        self.params[name] = value
        self.grads[name] = np.zeros_like(value)
        self.velocity[name] = np.zeros_like(value)

    def zero_grad(self) -> None:
        for g in self.grads.values():
            g.fill(0.0)

    def __len__(self) -> int:
        return len(self.params)

    def num_values(self) -> int:
        return sum(p.size for p in self.params.values())


LR_SCHEDULES = ("constant", "annealed")
LR_DECAY_ALPHA = 10.0
LR_DECAY_BETA = 0.75


@dataclass(frozen=True)
class TrainConfig:
    """Optimiser and loop settings. ``lr_schedule="annealed"`` decays the
    rate as ``lr / (1 + 10 p) ** 0.75`` over training progress ``p``."""

    lr: float = 0.01
    momentum: float = 0.9
    batch_size: int = 32
    epochs: int = 1
    seed: int = 0
    lr_schedule: str = "constant"

    def __post_init__(self):
        if self.lr_schedule not in LR_SCHEDULES:
            raise ConfigError(f"lr_schedule must be one of {LR_SCHEDULES}; got {self.lr_schedule!r}")
        if not (self.lr >= 0 and math.isfinite(self.lr)):
            raise ConfigError(f"learning rate must be finite and non-negative; got {self.lr}")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError(f"momentum must lie in [0, 1); got {self.momentum}")
        if self.batch_size < 1 or self.epochs < 1:
            raise ConfigError("batch_size and epochs must be >= 1")
        if not 0 <= self.seed < 2**64:
            raise ConfigError(f"seed must be a 64-bit unsigned integer; got {self.seed}")


def lr_at(config: TrainConfig, progress: float) -> float:
    if config.lr_schedule == "constant":
        return config.lr
    return config.lr / (1.0 + LR_DECAY_ALPHA * progress) ** LR_DECAY_BETA


def sgd_step(params: ParamSet | Sequence[ParamSet], config: TrainConfig) -> None:
    """Momentum SGD: ``v = mu*v + g; p -= lr*v``, then gradients are zeroed."""
    sets = [params] if isinstance(params, ParamSet) else list(params)
    for ps in sets:
        for name, p in ps.params.items():
            v = ps.velocity[name]
            v *= config.momentum
            v += ps.grads[name]
            p -= config.lr * v
        ps.zero_grad()


def glorot_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def _out_shape(spec: LayerSpec, shape: tuple[int, ...]) -> tuple[int, ...]:
    k = spec.kind
    if k == "linear":
        if len(shape) != 1 or shape[0] != spec.in_features:
            raise ShapeError(f"linear expects ({spec.in_features},) input, got {shape}")
        return (spec.out_features,)
    if k == "conv2d":
        if len(shape) != 3 or shape[0] != spec.in_channels:
            raise ShapeError(f"conv2d expects ({spec.in_channels}, H, W) input, got {shape}")
        h = conv_output_size(shape[1], spec.kernel, spec.stride, spec.padding)
        w = conv_output_size(shape[2], spec.kernel, spec.stride, spec.padding)
        return (spec.out_channels, h, w)
    if k == "maxpool":
        if len(shape) != 3:
            raise ShapeError(f"maxpool expects (C, H, W) input, got {shape}")
        h = conv_output_size(shape[1], spec.window, spec.stride, 0)
        w = conv_output_size(shape[2], spec.window, spec.stride, 0)
        return (shape[0], h, w)
    if k == "flatten":
        return (int(np.prod(shape)),)
    return shape


class Network:
    """Sequential stack of layers sharing one :class:`ParamSet`.

    Shape compatibility of consecutive specs is checked against
    ``input_shape`` (per-sample, without the batch axis) at construction.
    """

    def __init__(self, specs: Sequence[LayerSpec], input_shape: Sequence[int], rng: np.random.Generator | None = None):
        self.specs = list(specs)
        self.input_shape = tuple(int(s) for s in input_shape)
        self.shapes = [self.input_shape]
        for spec in self.specs:
            self.shapes.append(_out_shape(spec, self.shapes[-1]))
        self.params = ParamSet()
        rng = rng if rng is not None else np.random.default_rng(0)
        for i, spec in enumerate(self.specs):
            if spec.kind == "linear":
                w = glorot_uniform(rng, (spec.in_features, spec.out_features), spec.in_features, spec.out_features)
                self.params.add(f"{i}.w", w)
                self.params.add(f"{i}.b", np.zeros(spec.out_features))
            elif spec.kind == "conv2d":
                area = spec.kernel * spec.kernel
                shape = (spec.out_channels, spec.in_channels, spec.kernel, spec.kernel)
                w = glorot_uniform(rng, shape, spec.in_channels * area, spec.out_channels * area)
                self.params.add(f"{i}.w", w)
                self.params.add(f"{i}.b", np.zeros(spec.out_channels))

    @property
    def output_shape(self) -> tuple[int, ...]:
        return self.shapes[-1]

    def forward(self, x: np.ndarray):
        """Run all layers; returns ``(output, cache)`` for :meth:`backward`."""
        x = _as_f64(x)
        if x.shape[1:] != self.input_shape:
            raise ShapeError(f"network expects per-sample shape {self.input_shape}, got {x.shape[1:]}")
        cache = []
        p = self.params.params
        for i, spec in enumerate(self.specs):
            k = spec.kind
            if k == "linear":
                cache.append(x)
                x = linear_forward(x, p[f"{i}.w"], p[f"{i}.b"])
            elif k == "conv2d":
                cache.append(x)
                x = conv2d_forward(x, p[f"{i}.w"], p[f"{i}.b"], spec.stride, spec.padding)
            elif k == "relu":
                cache.append(x)
                x = relu(x)
            elif k == "maxpool":
                out, idx = maxpool2d(x, spec.window, spec.stride)
                cache.append((x.shape, idx))
                x = out
            else:
                cache.append(x.shape)
                x = x.reshape(x.shape[0], -1)
        return x, cache

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)[0]

    def backward(self, grad_out: np.ndarray, cache) -> np.ndarray:
        """Accumulate parameter gradients into ``self.params.grads``; return the input gradient."""
        g = _as_f64(grad_out)
        p, grads = self.params.params, self.params.grads
        for i in range(len(self.specs) - 1, -1, -1):
            spec, c = self.specs[i], cache[i]
            k = spec.kind
            if k == "linear":
                g, gw, gb = linear_backward(c, p[f"{i}.w"], g)
                grads[f"{i}.w"] += gw
                grads[f"{i}.b"] += gb
            elif k == "conv2d":
                g, gw, gb = conv2d_backward(c, p[f"{i}.w"], g, spec.stride, spec.padding)
                grads[f"{i}.w"] += gw
                grads[f"{i}.b"] += gb
            elif k == "relu":
                g = relu_backward(c, g)
            elif k == "maxpool":
                shape, idx = c
                g = maxpool2d_backward(idx, g, shape)
            else:
                g = g.reshape(c)
        return g

    def spec_dicts(self) -> list[dict[str, Any]]:
        return [s.to_dict() for s in self.specs]


# ---------------------------------------------------------------------------
# Finite-difference checking
# ---------------------------------------------------------------------------

def relative_error(analytic, numeric) -> float:
    """``max |a - n| / max(1, |a|, |n|)`` over all entries (0 for empty input)."""
    a, n = _as_f64(analytic), _as_f64(numeric)
    if a.size == 0:
        return 0.0
    denom = np.maximum(1.0, np.maximum(np.abs(a), np.abs(n)))
    return float(np.max(np.abs(a - n) / denom))


def numeric_gradient(f, x: np.ndarray, epsilon: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of scalar ``f()`` with respect to ``x`` (perturbed in place)."""
    grad = np.zeros_like(x)
    flat, gflat = x.reshape(-1), grad.reshape(-1)
    for j in range(flat.size):
        orig = flat[j]
        flat[j] = orig + epsilon
        fp = f()
        flat[j] = orig - epsilon
        fm = f()
        flat[j] = orig
        gflat[j] = (fp - fm) / (2.0 * epsilon)
    return grad


def grad_check(network: Network, x, labels, epsilon: float = 1e-5) -> float:
    """Max relative error between backprop and central differences of the
    softmax cross-entropy loss, over every parameter of ``network``.

    Returns 0.0 for a network without parameters.
    """
    if not 1e-7 <= epsilon <= 1e-3:
        raise ConfigError(f"epsilon must lie in [1e-7, 1e-3]; got {epsilon}")
    if len(network.params) == 0:
        return 0.0
    x = _as_f64(x)
    labels = np.asarray(labels)
    network.params.zero_grad()
    out, cache = network.forward(x)
    _, g = softmax_cross_entropy(out, labels)
    network.backward(g, cache)
    analytic = {k: v.copy() for k, v in network.params.grads.items()}
    network.params.zero_grad()

    def loss():
        return softmax_cross_entropy(network(x), labels)[0]

    worst = 0.0
    for name, p in network.params.params.items():
        worst = max(worst, relative_error(analytic[name], numeric_gradient(loss, p, epsilon)))
    return worst
