"""Small numpy neural-network kernel: 1-D convolution, dense, activations, Adam.

Arrays are float64 throughout. Layers cache what they need in ``forward`` and
consume it in ``backward``; gradients accumulate into ``layer.grads`` keyed like
``layer.params``.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ncae.errors import DataError

DTYPE = np.float64


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def xavier_init(shape, fan_in: int, fan_out: int, rng: np.random.Generator) -> np.ndarray:
    if fan_in <= 0 or fan_out <= 0:
        raise ValueError("fan_in and fan_out must be positive")
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape).astype(DTYPE)


# ---------------------------------------------------------------- convolution

def _out_len(length: int, stride: int) -> int:
    return (length + stride - 1) // stride


def _columns(x: np.ndarray, kernel: int, stride: int) -> np.ndarray:
    """(N, C, S) -> (N, S_out, C*k) patches under same zero padding."""
    pad = (kernel - 1) // 2
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad)))
    win = np.lib.stride_tricks.sliding_window_view(xp, kernel, axis=2)[:, :, ::stride]
    n, c, s_out, k = win.shape
    return win.transpose(0, 2, 1, 3).reshape(n, s_out, c * k)


def conv1d_forward(x: np.ndarray, weight: np.ndarray, bias: np.ndarray, stride: int = 1):
    """Cross-correlation with same zero padding. Returns (output, columns)."""
    if x.ndim != 3:
        raise ValueError(f"conv1d expects (N, C, S) input, got {x.shape}")
    c_out, c_in, k = weight.shape
    if x.shape[1] != c_in:
        raise ValueError(f"channel mismatch: input has {x.shape[1]}, layer expects {c_in}")
    if k % 2 == 0:
        raise ValueError("kernel must be odd")
    cols = _columns(x, k, stride)
    y = cols @ weight.reshape(c_out, -1).T + bias
    return y.transpose(0, 2, 1), cols


def conv1d_backward(grad_out: np.ndarray, cols: np.ndarray, x_shape, weight: np.ndarray, stride: int = 1):
    """Gradients of :func:`conv1d_forward` given its cached patch matrix.

    Returns ``(grad_input, grad_weight, grad_bias)``.
    """
    c_out, c_in, k = weight.shape
    n, _, s = x_shape
    s_out = _out_len(s, stride)
    if grad_out.shape != (n, c_out, s_out):
        raise ValueError(f"grad_out shape {grad_out.shape} != expected {(n, c_out, s_out)}")
    g = grad_out.transpose(0, 2, 1).reshape(n * s_out, c_out)
    grad_w = (g.T @ cols.reshape(n * s_out, c_in * k)).reshape(weight.shape)
    grad_b = g.sum(axis=0)
    gcols = (g @ weight.reshape(c_out, -1)).reshape(n, s_out, c_in, k)
    pad = (k - 1) // 2
    gxp = np.zeros((n, c_in, s + 2 * pad), dtype=DTYPE)
    for j in range(k):
        gxp[:, :, j : j + stride * s_out : stride] += gcols[:, :, :, j].transpose(0, 2, 1)
    return gxp[:, :, pad : pad + s], grad_w, grad_b


# ---------------------------------------------------------------- layers

class Layer:
    params: dict[str, np.ndarray]
    grads: dict[str, np.ndarray]

    def __init__(self):
        self.params, self.grads = {}, {}

    def forward(self, x):
        raise NotImplementedError

    def backward(self, grad):
        raise NotImplementedError

    def zero_grad(self):
        for key, p in self.params.items():
            self.grads[key] = np.zeros_like(p)

    def spec(self) -> dict:
        return {"type": type(self).__name__}


class Conv1d(Layer):
    def __init__(self, c_in: int, c_out: int, kernel: int, stride: int = 1, rng=None):
        super().__init__()
        if kernel % 2 == 0 or kernel < 1:
            raise ValueError("kernel must be odd")
        self.c_in, self.c_out, self.kernel, self.stride = c_in, c_out, kernel, stride
        rng = rng if rng is not None else make_rng(0)
        self.params["weight"] = xavier_init((c_out, c_in, kernel), c_in * kernel, c_out * kernel, rng)
        self.params["bias"] = np.zeros(c_out, dtype=DTYPE)
        self.zero_grad()

    def forward(self, x):
        y, self._cols = conv1d_forward(x, self.params["weight"], self.params["bias"], self.stride)
        self._x_shape = x.shape
        return y

    def backward(self, grad):
        gx, gw, gb = conv1d_backward(grad, self._cols, self._x_shape, self.params["weight"], self.stride)
        self.grads["weight"] += gw
        self.grads["bias"] += gb
        return gx

    def output_len(self, length: int) -> int:
        return _out_len(length, self.stride)

    def spec(self):
        return {"type": "Conv1d", "c_in": self.c_in, "c_out": self.c_out,
                "kernel": self.kernel, "stride": self.stride}


class Dense(Layer):
    def __init__(self, n_in: int, n_out: int, rng=None):
        super().__init__()
        self.n_in, self.n_out = n_in, n_out
        rng = rng if rng is not None else make_rng(0)
        self.params["weight"] = xavier_init((n_out, n_in), n_in, n_out, rng)
        self.params["bias"] = np.zeros(n_out, dtype=DTYPE)
        self.zero_grad()

    def forward(self, x):
        self._x = x
        return x @ self.params["weight"].T + self.params["bias"]

    def backward(self, grad):
        self.grads["weight"] += grad.T @ self._x
        self.grads["bias"] += grad.sum(axis=0)
        return grad @ self.params["weight"]

    def spec(self):
        return {"type": "Dense", "n_in": self.n_in, "n_out": self.n_out}


def activation_forward(x: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return np.maximum(x, 0.0)
    if kind == "sigmoid":
        # split by sign so exp never overflows
        out = np.empty_like(x)
        pos = x >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        out[~pos] = ex / (1.0 + ex)
        return out
    if kind == "identity":
        return x.copy()
    raise ValueError(f"unknown activation {kind!r}")


def activation_backward(x: np.ndarray, grad: np.ndarray, kind: str, y: np.ndarray | None = None) -> np.ndarray:
    """Chain ``grad`` through the activation evaluated at ``x`` (``y`` is its cached output)."""
    if kind == "relu":
        return grad * (x > 0)
    if kind == "sigmoid":
        y = activation_forward(x, "sigmoid") if y is None else y
        return grad * y * (1.0 - y)
    if kind == "identity":
        return grad.copy()
    raise ValueError(f"unknown activation {kind!r}")


class Activation(Layer):
    def __init__(self, kind: str):
        super().__init__()
        activation_forward(np.zeros(1), kind)  # validates kind
        self.kind = kind

    def forward(self, x):
        self._x = x
        self._y = activation_forward(x, self.kind)
        return self._y

    def backward(self, grad):
        return activation_backward(self._x, grad, self.kind, self._y)

    def spec(self):
        return {"type": "Activation", "kind": self.kind}


class Upsample(Layer):
    """Nearest-neighbour x2 along the last axis, cropped to ``length``."""

    def __init__(self, length: int):
        super().__init__()
        self.length = length

    def forward(self, x):
        self._s = x.shape[2]
        if 2 * self._s < self.length:
            raise ValueError(f"cannot upsample length {self._s} to {self.length}")
        return np.repeat(x, 2, axis=2)[:, :, : self.length]

    def backward(self, grad):
        n, c, _ = grad.shape
        full = np.zeros((n, c, 2 * self._s), dtype=DTYPE)
        full[:, :, : self.length] = grad
        return full.reshape(n, c, self._s, 2).sum(axis=3)

    def spec(self):
        return {"type": "Upsample", "length": self.length}


class Reshape(Layer):
    def __init__(self, shape):
        super().__init__()
        self.shape = tuple(shape)

    def forward(self, x):
        self._in = x.shape
        return x.reshape((x.shape[0],) + self.shape)

    def backward(self, grad):
        return grad.reshape(self._in)

    def spec(self):
        return {"type": "Reshape", "shape": list(self.shape)}


class Sequential:
    def __init__(self, layers: list[Layer]):
        self.layers = list(layers)

    def forward(self, x):
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def backward(self, grad):
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return grad

    def zero_grad(self):
        for layer in self.layers:
            layer.zero_grad()

    def named_params(self):
        """``[(name, array, grad_array)]`` in a stable order."""
        out = []
        for i, layer in enumerate(self.layers):
            for key in sorted(layer.params):
                out.append((f"{i}.{key}", layer.params[key], layer.grads[key]))
        return out


# ---------------------------------------------------------------- optimiser

class Adam:
    """Adam with bias correction; updates arrays in place."""

    def __init__(self, learning_rate: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
                 epsilon: float = 1e-8):
        self.learning_rate, self.beta1, self.beta2, self.epsilon = learning_rate, beta1, beta2, epsilon
        self.step_count = 0
        self.m: list[np.ndarray] | None = None
        self.v: list[np.ndarray] | None = None

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> list[np.ndarray]:
        if len(params) != len(grads):
            raise ValueError("params and grads differ in length")
        for p, g in zip(params, grads):
            if p.shape != g.shape:
                raise ValueError(f"param shape {p.shape} != grad shape {g.shape}")
        if self.m is None:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1 ** t
        c2 = 1.0 - self.beta2 ** t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.learning_rate * (m / c1) / (np.sqrt(v / c2) + self.epsilon)
        return params


# ---------------------------------------------------------------- serialization
#
# Little-endian layout:
#   magic  b"NCAEWTS1"
#   u32    version (=1)
#   u32    manifest byte length, then UTF-8 JSON manifest
#   u32    tensor count
#   per tensor: u16 name length, UTF-8 name, u8 ndim, ndim x u32 dims, float64 data (C order)

WEIGHTS_MAGIC = b"NCAEWTS1"
WEIGHTS_VERSION = 1


def save_weights(path, tensors: list[tuple[str, np.ndarray]], manifest: dict) -> None:
    blob = json.dumps(manifest, sort_keys=True, indent=1).encode()
    parts = [WEIGHTS_MAGIC, struct.pack("<II", WEIGHTS_VERSION, len(blob)), blob,
             struct.pack("<I", len(tensors))]
    for name, arr in tensors:
        raw = name.encode()
        arr = np.ascontiguousarray(arr, dtype="<f8")
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_weights(path) -> tuple[list[tuple[str, np.ndarray]], dict]:
    path = Path(path)
    buf = path.read_bytes()
    try:
        if buf[:8] != WEIGHTS_MAGIC:
            raise DataError(f"{path}: not a weights file (bad magic)")
        version, mlen = struct.unpack_from("<II", buf, 8)
        if version != WEIGHTS_VERSION:
            raise DataError(f"{path}: unsupported weights version {version}")
        off = 16
        manifest = json.loads(buf[off : off + mlen].decode())
        off += mlen
        (count,) = struct.unpack_from("<I", buf, off)
        off += 4
        tensors = []
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", buf, off)
            off += 2
            name = buf[off : off + nlen].decode()
            off += nlen
            (ndim,) = struct.unpack_from("<B", buf, off)
            off += 1
            shape = struct.unpack_from(f"<{ndim}I", buf, off)
            off += 4 * ndim
            size = int(np.prod(shape)) * 8
            if off + size > len(buf):
                raise DataError(f"{path}: truncated tensor {name!r}")
            arr = np.frombuffer(buf, dtype="<f8", count=size // 8, offset=off).reshape(shape).copy()
            off += size
            tensors.append((name, arr))
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataError(f"{path}: corrupt weights file ({exc})") from exc
    return tensors, manifest
