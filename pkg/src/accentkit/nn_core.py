"""Minimal layer substrate with hand-written backward passes.

Tensors are plain numpy arrays. Spatial layers accept either a single
``[C, H, W]`` sample or a batch ``[N, C, H, W]``. Every layer caches what its
backward pass needs during ``forward`` and writes parameter gradients into the
``grad`` buffers of its :class:`Param` objects.

Randomness comes from ``numpy.random.Generator(PCG64(seed))`` so a seed
reproduces the same weights on every platform numpy supports.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import CheckpointError, LabelOutOfRange, OddSpatialDims, ShapeMismatch


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


@dataclass
class Param:
    value: np.ndarray
    grad: np.ndarray = None
    velocity: np.ndarray = None

    def __post_init__(self):
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        if self.velocity is None:
            self.velocity = np.zeros_like(self.value)

    @property
    def size(self):
        return self.value.size


@dataclass
class LayerParams:
    kind: str  # "conv2d" or "dense"
    weights: Param
    bias: Param

    def __post_init__(self):
        w, b = self.weights.value, self.bias.value
        expected_ndim = {"conv2d": 4, "dense": 2}.get(self.kind)
        if expected_ndim is None:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if w.ndim != expected_ndim or b.shape != (w.shape[0],):
            raise ShapeMismatch(f"{self.kind} weights {w.shape} / bias {b.shape}")

    @classmethod
    def from_arrays(cls, kind, weights, bias):
        return cls(kind, Param(np.asarray(weights)), Param(np.asarray(bias)))

    @property
    def params(self):
        return [self.weights, self.bias]


def kaiming_uniform(rng, shape, fan_in, dtype=np.float32):
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def init_conv2d(rng, in_channels, out_channels, kernel=3, dtype=np.float32) -> LayerParams:
    fan_in = in_channels * kernel * kernel
    w = kaiming_uniform(rng, (out_channels, in_channels, kernel, kernel), fan_in, dtype)
    return LayerParams("conv2d", Param(w), Param(np.zeros(out_channels, dtype=dtype)))


def init_dense(rng, in_features, out_features, dtype=np.float32) -> LayerParams:
    w = kaiming_uniform(rng, (out_features, in_features), in_features, dtype)
    return LayerParams("dense", Param(w), Param(np.zeros(out_features, dtype=dtype)))


# ---------------------------------------------------------------- conv2d


def _as_batch(x):
    x = np.asarray(x)
    if x.ndim == 3:
        return x[None], True
    if x.ndim == 4:
        return x, False
    raise ShapeMismatch(f"expected [C,H,W] or [N,C,H,W], got shape {x.shape}")


def _conv_out_dims(h, w, kh, kw, stride, padding):
    num_h = h + 2 * padding - kh
    num_w = w + 2 * padding - kw
    if num_h < 0 or num_w < 0 or num_h % stride or num_w % stride:
        raise ShapeMismatch(
            f"input {h}x{w} with kernel {kh}x{kw}, stride {stride}, padding {padding} "
            "does not give an integral output size")
    return num_h // stride + 1, num_w // stride + 1


def _im2col(x, kh, kw, stride, padding):
    """Columns shaped ``[N, C*kh*kw, OH*OW]``; the middle axis follows the
    ``(c, i, j)`` order of the weight tensor."""
    n, c, h, w = x.shape
    oh, ow = _conv_out_dims(h, w, kh, kw, stride, padding)
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    cols = np.empty((n, c, kh, kw, oh, ow), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = x[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride]
    return cols.reshape(n, c * kh * kw, oh * ow), (oh, ow)


def _col2im(dcols, x_shape, kh, kw, stride, padding, out_hw):
    n, c, h, w = x_shape
    oh, ow = out_hw
    d = dcols.reshape(n, c, kh, kw, oh, ow)
    dx = np.zeros((n, c, h + 2 * padding, w + 2 * padding), dtype=dcols.dtype)
    for i in range(kh):
        for j in range(kw):
            dx[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride] += d[:, :, i, j]
    if padding:
        dx = dx[:, :, padding:-padding, padding:-padding]
    return dx


def _check_conv_input(x, params):
    w = params.weights.value
    if x.shape[1] != w.shape[1]:
        raise ShapeMismatch(f"input has {x.shape[1]} channels, kernel expects {w.shape[1]}")


def _conv_apply(cols, w, b, n, out_hw):
    f = w.shape[0]
    out = np.matmul(w.reshape(f, -1), cols)
    out += b[:, None]
    return out.reshape(n, f, *out_hw)


def conv2d_forward(x, params: LayerParams, stride: int = 1, padding: int = 0):
    """Cross-correlation of ``x`` with ``params.weights`` plus per-channel bias."""
    xb, single = _as_batch(x)
    _check_conv_input(xb, params)
    w = params.weights.value
    cols, out_hw = _im2col(xb, w.shape[2], w.shape[3], stride, padding)
    out = _conv_apply(cols, w, params.bias.value, xb.shape[0], out_hw)
    return out[0] if single else out


def conv2d_backward(grad_out, x, params: LayerParams, stride: int = 1, padding: int = 0):
    """Return ``(grad_input, grad_weights, grad_bias)`` for :func:`conv2d_forward`."""
    xb, single = _as_batch(x)
    _check_conv_input(xb, params)
    w = params.weights.value
    cols, out_hw = _im2col(xb, w.shape[2], w.shape[3], stride, padding)
    return _conv2d_backward_cols(grad_out, cols, xb.shape, w, stride, padding, out_hw, single)


def _conv2d_backward_cols(grad_out, cols, x_shape, w, stride, padding, out_hw, single):
    f, _, kh, kw = w.shape
    g = grad_out[None] if single else grad_out
    if g.shape != (x_shape[0], f) + tuple(out_hw):
        raise ShapeMismatch(f"grad_out shape {np.shape(grad_out)} does not match forward output")
    g = g.reshape(x_shape[0], f, -1)
    grad_w = np.zeros((f, cols.shape[1]), dtype=np.result_type(g, cols))
    for k in range(x_shape[0]):
        grad_w += g[k] @ cols[k].T
    grad_b = g.sum(axis=(0, 2))
    dcols = np.matmul(w.reshape(f, -1).T, g)
    dx = _col2im(dcols, x_shape, kh, kw, stride, padding, out_hw)
    return (dx[0] if single else dx), grad_w.reshape(w.shape), grad_b


# ---------------------------------------------------------------- relu / pool / dense


def relu(x):
    return np.maximum(x, 0)


def relu_backward(grad_out, x):
    return grad_out * (x > 0)


def _quadrants(x):
    return x[:, :, 0::2, 0::2], x[:, :, 0::2, 1::2], x[:, :, 1::2, 0::2], x[:, :, 1::2, 1::2]


def maxpool2(x):
    """2x2 non-overlapping max pool. Returns ``(output, argmax)``; ``argmax``
    holds the winning position 0..3 (row-major) inside each window, ties
    going to the lowest position."""
    xb, single = _as_batch(x)
    n, c, h, w = xb.shape
    if h % 2 or w % 2:
        raise OddSpatialDims(f"maxpool2 needs even spatial dims, got {h}x{w}")
    q = _quadrants(xb)
    out = np.maximum(np.maximum(q[0], q[1]), np.maximum(q[2], q[3]))
    idx = np.full(out.shape, 3, dtype=np.uint8)
    for k in (2, 1, 0):
        idx[q[k] == out] = k
    if single:
        return out[0], idx[0]
    return out, idx


def maxpool2_backward(grad_out, argmax):
    gb, single = _as_batch(grad_out)
    ib = argmax[None] if single else argmax
    n, c, h2, w2 = gb.shape
    dx = np.zeros((n, c, 2 * h2, 2 * w2), dtype=gb.dtype)
    for k, view in enumerate(_quadrants(dx)):
        view[...] = gb * (ib == k)
    return dx[0] if single else dx


def dense_forward(x, params: LayerParams):
    w = params.weights.value
    if np.shape(x)[-1] != w.shape[1]:
        raise ShapeMismatch(f"dense expects {w.shape[1]} inputs, got {np.shape(x)[-1]}")
    return x @ w.T + params.bias.value


def dense_backward(grad_out, x, params: LayerParams):
    """Return ``(W^T g, g (x) x, g)``, summed over the batch when batched."""
    w = params.weights.value
    if np.shape(grad_out)[-1] != w.shape[0]:
        raise ShapeMismatch("grad_out does not match dense output width")
    grad_in = grad_out @ w
    if np.ndim(x) == 1:
        return grad_in, np.outer(grad_out, x), np.asarray(grad_out).copy()
    return grad_in, grad_out.T @ x, grad_out.sum(axis=0)


def softmax(logits):
    z = logits - np.max(logits, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits, label):
    """Loss ``-log p[label]`` and its gradient ``p - onehot(label)``.

    With batched logits ``[N, C]`` and labels ``[N]`` the loss and gradient
    are averaged over the batch.
    """
    logits = np.asarray(logits)
    labels = np.atleast_1d(np.asarray(label))
    batched = logits.ndim == 2
    lg = logits if batched else logits[None]
    n_classes = lg.shape[1]
    if labels.shape[0] != lg.shape[0]:
        raise ShapeMismatch("one label per row of logits required")
    if np.any(labels < 0) or np.any(labels >= n_classes):
        raise LabelOutOfRange(f"labels must lie in [0, {n_classes})")
    z = lg - lg.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(lg.shape[0])
    losses = log_norm - z[rows, labels]
    grad = np.exp(z - log_norm[:, None])
    grad[rows, labels] -= 1.0
    if batched:
        return float(losses.mean()), grad / lg.shape[0]
    return float(losses[0]), grad[0]


# ---------------------------------------------------------------- layer objects


class Conv2D:
    def __init__(self, params: LayerParams, stride=1, padding=1):
        self.p = params
        self.stride = stride
        self.padding = padding
        self._cache = None

    def forward(self, x):
        xb, single = _as_batch(x)
        _check_conv_input(xb, self.p)
        w = self.p.weights.value
        cols, out_hw = _im2col(xb, w.shape[2], w.shape[3], self.stride, self.padding)
        self._cache = (cols, xb.shape, out_hw, single)
        out = _conv_apply(cols, w, self.p.bias.value, xb.shape[0], out_hw)
        return out[0] if single else out

    def backward(self, grad_out):
        cols, x_shape, out_hw, single = self._cache
        dx, gw, gb = _conv2d_backward_cols(grad_out, cols, x_shape, self.p.weights.value,
                                           self.stride, self.padding, out_hw, single)
        self.p.weights.grad += gw
        self.p.bias.grad += gb
        self._cache = None
        return dx

    def params(self):
        return self.p.params


class Dense:
    def __init__(self, params: LayerParams):
        self.p = params
        self._x = None

    def forward(self, x):
        self._x = x
        return dense_forward(x, self.p)

    def backward(self, grad_out):
        dx, gw, gb = dense_backward(grad_out, self._x, self.p)
        self.p.weights.grad += gw
        self.p.bias.grad += gb
        self._x = None
        return dx

    def params(self):
        return self.p.params


class ReLU:
    def forward(self, x):
        self._x = x
        return relu(x)

    def backward(self, grad_out):
        return relu_backward(grad_out, self._x)

    def params(self):
        return []


class MaxPool2:
    def forward(self, x):
        out, self._idx = maxpool2(x)
        return out

    def backward(self, grad_out):
        return maxpool2_backward(grad_out, self._idx)

    def params(self):
        return []


class Flatten:
    def forward(self, x):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad_out):
        return grad_out.reshape(self._shape)

    def params(self):
        return []


class Sequential:
    def __init__(self, layers):
        self.layers = list(layers)

    def forward(self, x):
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def backward(self, grad_out):
        for layer in reversed(self.layers):
            grad_out = layer.backward(grad_out)
        return grad_out

    def params(self):
        return [p for layer in self.layers for p in layer.params()]

    def layer_params(self):
        return [layer.p for layer in self.layers if isinstance(layer, (Conv2D, Dense))]

    def zero_grad(self):
        for p in self.params():
            p.grad[...] = 0


def sgd_step(params, lr: float, momentum: float = 0.0):
    """Momentum SGD: ``v <- momentum*v - lr*grad``, ``w <- w + v``; grads are zeroed.

    ``params`` is an iterable of :class:`Param` or :class:`LayerParams`.
    """
    if not 0 <= momentum < 1:
        raise ValueError("momentum must lie in [0, 1)")
    flat = []
    for p in params:
        flat.extend(p.params if isinstance(p, LayerParams) else [p])
    for p in flat:
        p.velocity *= momentum
        p.velocity -= lr * p.grad
        p.value += p.velocity
        p.grad[...] = 0


# ---------------------------------------------------------------- gradient checking


def numeric_gradient(f, x, eps=1e-5):
    """Central-difference gradient of scalar ``f()`` w.r.t. array ``x`` (perturbed in place)."""
    grad = np.zeros(x.shape, dtype=np.float64)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        up = f()
        flat[i] = orig - eps
        down = f()
        flat[i] = orig
        gflat[i] = (up - down) / (2 * eps)
    return grad


def relative_error(analytic, numeric):
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0


def gradient_check(layer, x, eps=1e-5, seed=0):
    """Max relative error between ``layer.backward`` and central differences.

    The scalar probed is ``sum(forward(x) * G)`` for a fixed random ``G``;
    input and every parameter of the layer are checked.
    """
    x = np.array(x, dtype=np.float64)
    g = make_rng(seed).standard_normal(np.shape(layer.forward(x)))

    def loss():
        return float(np.sum(layer.forward(x) * g))

    for p in layer.params():
        p.grad[...] = 0
    layer.forward(x)
    analytic_x = layer.backward(g)
    analytic_p = [p.grad.copy() for p in layer.params()]

    errors = [relative_error(analytic_x, numeric_gradient(loss, x, eps))]
    for p, a in zip(layer.params(), analytic_p):
        errors.append(relative_error(a, numeric_gradient(loss, p.value, eps)))
    for p in layer.params():
        p.grad[...] = 0
    return max(errors)


# ---------------------------------------------------------------- checkpoint container

CHECKPOINT_MAGIC = b"AKCK"
CHECKPOINT_VERSION = 1


def save_checkpoint(path, arrays: dict, meta: dict) -> Path:
    """Write named arrays plus a JSON metadata block.

    Layout: ``b"AKCK"``, uint32 version, uint32 header length, UTF-8 JSON
    header, then the raw little-endian array bytes in header order. The header
    holds ``meta`` and, under ``"arrays"``, each array's name, dtype, shape and
    byte offset into the payload.
    """
    entries = []
    blobs = []
    offset = 0
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        b = le.tobytes()
        entries.append({"name": name, "dtype": le.dtype.str, "shape": list(arr.shape),
                        "offset": offset, "nbytes": len(b)})
        blobs.append(b)
        offset += len(b)
    header = json.dumps({"meta": meta, "arrays": entries}, sort_keys=True).encode("utf-8")
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC + struct.pack("<II", CHECKPOINT_VERSION, len(header)))
        fh.write(header)
        for b in blobs:
            fh.write(b)
    return path


def load_checkpoint(path):
    data = Path(path).read_bytes()
    if data[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    version, hlen = struct.unpack_from("<II", data, 4)
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(data[12:12 + hlen].decode("utf-8"))
    base = 12 + hlen
    arrays = {}
    for e in header["arrays"]:
        start = base + e["offset"]
        buf = data[start:start + e["nbytes"]]
        arrays[e["name"]] = np.frombuffer(buf, dtype=np.dtype(e["dtype"])).reshape(e["shape"]).copy()
    return arrays, header["meta"]
