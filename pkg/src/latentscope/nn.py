"""Minimal 1-D network layers with hand-written backward passes.

Tensors are float64 with shape ``(batch, channels, length)`` for the
convolutional path and ``(batch, features)`` for dense layers.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

MAGIC = b"LSNN"
FORMAT_VERSION = 1


# ---------------------------------------------------------------------------
# kernels


def conv1d(x, w, b, stride=1):
    """Valid cross-correlation. x: (N, C_in, L), w: (C_out, C_in, K), b: (C_out,)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3 or w.ndim != 3 or x.shape[1] != w.shape[1]:
        raise ValueError(f"conv1d shape mismatch: input {x.shape}, kernel {w.shape}")
    if w.shape[2] > x.shape[2]:
        raise ValueError("kernel longer than input")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    cols = sliding_window_view(x, w.shape[2], axis=2)[:, :, ::stride, :]
    return np.einsum("nclk,ock->nol", cols, w, optimize=True) + b[None, :, None]


def conv1d_backward(grad, x, w, stride=1):
    """Returns (grad_input, grad_weight, grad_bias) for ``conv1d``."""
    k = w.shape[2]
    cols = sliding_window_view(x, k, axis=2)[:, :, ::stride, :]
    gw = np.einsum("nol,nclk->ock", grad, cols, optimize=True)
    gb = grad.sum(axis=(0, 2))
    gx = np.zeros_like(x)
    span = stride * (grad.shape[2] - 1) + 1
    for j in range(k):
        gx[:, :, j:j + span:stride] += np.einsum("nol,oc->ncl", grad, w[:, :, j])
    return gx, gw, gb


def conv1d_transpose(x, w, b, stride=1):
    """Adjoint of ``conv1d`` with shared weights. x: (N, C_in, L), w: (C_in, C_out, K).

    Output length is ``(L - 1) * stride + K``.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3 or w.ndim != 3 or x.shape[1] != w.shape[0]:
        raise ValueError(f"conv1d_transpose shape mismatch: input {x.shape}, kernel {w.shape}")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    n, _, length = x.shape
    k = w.shape[2]
    out = np.zeros((n, w.shape[1], (length - 1) * stride + k))
    span = stride * (length - 1) + 1
    for j in range(k):
        out[:, :, j:j + span:stride] += np.einsum("ncl,co->nol", x, w[:, :, j])
    return out + b[None, :, None]


def conv1d_transpose_backward(grad, x, w, stride=1):
    gx = conv1d(grad, w, np.zeros(w.shape[0]), stride)
    cols = sliding_window_view(grad, w.shape[2], axis=2)[:, :, ::stride, :]
    gw = np.einsum("ncl,nolk->cok", x, cols, optimize=True)
    gb = grad.sum(axis=(0, 2))
    return gx, gw, gb


def maxpool(x, window):
    """Non-overlapping max-pool over the last axis; ties go to the lowest index.

    Returns the pooled values and the flat argmax index (into the last axis)
    of every window. A trailing remainder shorter than ``window`` is dropped.
    """
    x = np.asarray(x, dtype=np.float64)
    if window < 1:
        raise ValueError("window must be >= 1")
    if window > x.shape[-1]:
        raise ValueError(f"window {window} exceeds length {x.shape[-1]}")
    n_out = x.shape[-1] // window
    blocks = x[..., :n_out * window].reshape(*x.shape[:-1], n_out, window)
    local = blocks.argmax(axis=-1)
    idx = local + window * np.arange(n_out)
    return np.take_along_axis(blocks, local[..., None], axis=-1)[..., 0], idx


def maxpool_backward(grad, idx, input_shape):
    gx = np.zeros(input_shape)
    np.put_along_axis(gx, idx, grad, axis=-1)
    return gx


def dense(x, w, b):
    """Affine map. x: (N, in), w: (out, in), b: (out,)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != w.shape[1] or b.shape != (w.shape[0],):
        raise ValueError(f"dense shape mismatch: input {x.shape}, weight {w.shape}")
    return x @ w.T + b


def dense_backward(grad, x, w):
    return grad @ w, grad.T @ x, grad.sum(axis=0)


def dropout(x, rate, training, rng=None):
    """Inverted dropout. Returns (output, scale mask); the mask is None when inactive."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    x = np.asarray(x, dtype=np.float64)
    if not training or rate == 0.0:
        return x, None
    keep = rng.random(x.shape) >= rate
    mask = keep / (1.0 - rate)
    return x * mask, mask


def relu(x):
    return np.maximum(x, 0.0)


def glorot_uniform(rng, shape, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


# ---------------------------------------------------------------------------
# layers


class Layer:
    """Base layer. Parameters live in ``params``; ``grads`` mirrors it after backward."""

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self._cache = None

    def forward(self, x, training=False, rng=None):
        raise NotImplementedError

    def backward(self, grad):
        raise NotImplementedError

    def _take_cache(self):
        if self._cache is None:
            raise RuntimeError(f"{type(self).__name__}.backward called without a matching forward")
        cache, self._cache = self._cache, None
        return cache


class Conv1d(Layer):
    def __init__(self, c_in, c_out, kernel, stride=1, rng=None):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        self.stride = stride
        self.params["weight"] = glorot_uniform(rng, (c_out, c_in, kernel), c_in * kernel, c_out * kernel)
        self.params["bias"] = np.zeros(c_out)

    def forward(self, x, training=False, rng=None):
        self._cache = x
        return conv1d(x, self.params["weight"], self.params["bias"], self.stride)

    def backward(self, grad):
        x = self._take_cache()
        gx, self.grads["weight"], self.grads["bias"] = conv1d_backward(grad, x, self.params["weight"], self.stride)
        return gx


class ConvTranspose1d(Layer):
    def __init__(self, c_in, c_out, kernel, stride=1, rng=None):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        self.stride = stride
        self.params["weight"] = glorot_uniform(rng, (c_in, c_out, kernel), c_in * kernel, c_out * kernel)
        self.params["bias"] = np.zeros(c_out)

    def forward(self, x, training=False, rng=None):
        self._cache = x
        return conv1d_transpose(x, self.params["weight"], self.params["bias"], self.stride)

    def backward(self, grad):
        x = self._take_cache()
        gx, self.grads["weight"], self.grads["bias"] = conv1d_transpose_backward(
            grad, x, self.params["weight"], self.stride
        )
        return gx


class Dense(Layer):
    def __init__(self, n_in, n_out, rng=None):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        self.params["weight"] = glorot_uniform(rng, (n_out, n_in), n_in, n_out)
        self.params["bias"] = np.zeros(n_out)

    def forward(self, x, training=False, rng=None):
        self._cache = x
        return dense(x, self.params["weight"], self.params["bias"])

    def backward(self, grad):
        x = self._take_cache()
        gx, self.grads["weight"], self.grads["bias"] = dense_backward(grad, x, self.params["weight"])
        return gx


class MaxPool1d(Layer):
    def __init__(self, window):
        super().__init__()
        self.window = window

    def forward(self, x, training=False, rng=None):
        out, idx = maxpool(x, self.window)
        self._cache = (idx, x.shape)
        return out

    def backward(self, grad):
        idx, shape = self._take_cache()
        return maxpool_backward(grad, idx, shape)


class Dropout(Layer):
    def __init__(self, rate):
        super().__init__()
        if not 0.0 <= rate < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = rate

    def forward(self, x, training=False, rng=None):
        out, mask = dropout(x, self.rate, training, rng)
        self._cache = (mask,)
        return out

    def backward(self, grad):
        (mask,) = self._take_cache()
        return grad if mask is None else grad * mask


class ReLU(Layer):
    def forward(self, x, training=False, rng=None):
        self._cache = x > 0
        return np.where(self._cache, x, 0.0)

    def backward(self, grad):
        return grad * self._take_cache()


class Reshape(Layer):
    """Reshape the non-batch axes; ``shape=(-1,)`` flattens."""

    def __init__(self, shape):
        super().__init__()
        self.shape = tuple(shape)

    def forward(self, x, training=False, rng=None):
        self._cache = x.shape
        return x.reshape(x.shape[0], *self.shape)

    def backward(self, grad):
        return grad.reshape(self._take_cache())


class Crop(Layer):
    """Keep the first ``length`` samples of the last axis."""

    def __init__(self, length):
        super().__init__()
        self.length = length

    def forward(self, x, training=False, rng=None):
        if x.shape[-1] < self.length:
            raise ValueError(f"cannot crop length {x.shape[-1]} to {self.length}")
        self._cache = x.shape
        return x[..., :self.length]

    def backward(self, grad):
        shape = self._take_cache()
        gx = np.zeros(shape)
        gx[..., :self.length] = grad
        return gx


class Sequential(Layer):
    def __init__(self, layers):
        super().__init__()
        self.layers = list(layers)

    def forward(self, x, training=False, rng=None):
        for layer in self.layers:
            x = layer.forward(x, training=training, rng=rng)
        return x

    def backward(self, grad):
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return grad

    def named_params(self, prefix=""):
        for i, layer in enumerate(self.layers):
            for name, value in layer.params.items():
                yield f"{prefix}{i}.{name}", layer, name, value


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class OptimizerConfig:
    learning_rate: float = 0.001
    clip_norm: float = 1.0

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        if self.clip_norm <= 0:
            raise ValueError("clip_norm must be positive")


def global_norm(arrays) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in arrays)))


def sgd_step(params, grads, config: OptimizerConfig) -> float:
    """In-place SGD update with global-norm clipping.

    ``params`` and ``grads`` are parallel sequences of arrays. Returns the
    gradient norm measured before clipping.
    """
    params, grads = list(params), list(grads)
    if len(params) != len(grads) or any(p.shape != g.shape for p, g in zip(params, grads)):
        raise ValueError("params and grads must have matching shapes")
    norm = global_norm(grads)
    if not np.isfinite(norm):
        raise FloatingPointError("non-finite gradient; aborting update")
    scale = config.clip_norm / norm if norm > config.clip_norm else 1.0
    for p, g in zip(params, grads):
        p -= config.learning_rate * scale * g
    return norm


# ---------------------------------------------------------------------------
# serialization


def save_params(path, tensors: dict[str, np.ndarray]) -> None:
    """Write named tensors in the LSNN binary format (little-endian float64)."""
    chunks = [MAGIC, struct.pack("<I", FORMAT_VERSION)]
    for name, value in tensors.items():
        value = np.ascontiguousarray(value, dtype="<f8")
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<I", value.ndim))
        chunks.append(struct.pack(f"<{value.ndim}I", *value.shape))
        chunks.append(value.tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_params(path) -> dict[str, np.ndarray]:
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise ValueError(f"{path}: not an LSNN weights file")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported LSNN version {version}")
    pos, out = 8, {}
    while pos < len(data):
        (n,) = struct.unpack_from("<I", data, pos)
        pos += 4
        name = data[pos:pos + n].decode("utf-8")
        pos += n
        (rank,) = struct.unpack_from("<I", data, pos)
        pos += 4
        shape = struct.unpack_from(f"<{rank}I", data, pos)
        pos += 4 * rank
        count = int(np.prod(shape, dtype=np.int64))
        out[name] = np.frombuffer(data, dtype="<f8", count=count, offset=pos).reshape(shape).copy()
        pos += 8 * count
    return out
