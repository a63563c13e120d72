"""Reverse-mode automatic differentiation over dense numpy arrays.

Small, explicit and CPU-only: every op computes its value eagerly and
registers a closure that routes the upstream gradient to its inputs.
float64 is the default dtype; the test suite relies on it for
finite-difference headroom.
"""

from __future__ import annotations

import json
import struct

import numpy as np

DEFAULT_DTYPE = np.float64


class ShapeError(ValueError):
    """Raised when an op receives incompatibly shaped inputs."""


class Tensor:
    """A dense array plus (optionally) a gradient buffer and backward hook."""

    __slots__ = ("values", "grad", "requires_grad", "_parents", "_backward_fn")

    def __init__(self, values, requires_grad=False):
        self.values = np.asarray(values, dtype=DEFAULT_DTYPE)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward_fn = None

    @property
    def shape(self):
        return self.values.shape

    @property
    def ndim(self):
        return self.values.ndim

    def zero_grad(self):
        self.grad = None

    def backward(self):
        """Accumulate gradients of this scalar into every upstream tensor."""
        if self.values.size != 1:
            raise ShapeError(f"backward: expected scalar, got shape {self.shape}")
        order = _toposort(self)
        self.grad = np.ones_like(self.values)
        for node in reversed(order):
            if node._backward_fn is not None and node.grad is not None:
                node._backward_fn(node.grad)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def _toposort(root):
    """Iterative post-order over the graph rooted at `root`."""
    order = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _accumulate(t, g):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.values)
    t.grad += g


def _make(values, parents, backward_fn):
    out = Tensor(values)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward_fn = backward_fn
    return out


def _unbroadcast(grad, shape):
    """Sum `grad` down to `shape` (inverse of numpy broadcasting)."""
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# elementwise and linear-algebra ops


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    try:
        values = a.values + b.values
    except ValueError:
        raise ShapeError(f"add: cannot broadcast {a.shape} with {b.shape}")

    def backward(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(g, b.shape))

    return _make(values, (a, b), backward)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    try:
        values = a.values - b.values
    except ValueError:
        raise ShapeError(f"sub: cannot broadcast {a.shape} with {b.shape}")

    def backward(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, -_unbroadcast(g, b.shape))

    return _make(values, (a, b), backward)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    try:
        values = a.values * b.values
    except ValueError:
        raise ShapeError(f"mul: cannot broadcast {a.shape} with {b.shape}")

    def backward(g):
        _accumulate(a, _unbroadcast(g * b.values, a.shape))
        _accumulate(b, _unbroadcast(g * a.values, b.shape))

    return _make(values, (a, b), backward)


def add_n(tensors):
    """Elementwise sum of equal-shape tensors."""
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("add_n: empty input")
    shape = tensors[0].shape
    for t in tensors:
        if t.shape != shape:
            raise ShapeError(f"add_n: mixed shapes {shape} and {t.shape}")
    values = tensors[0].values.copy()
    for t in tensors[1:]:
        values += t.values

    def backward(g):
        for t in tensors:
            _accumulate(t, g)

    return _make(values, tensors, backward)


def matmul(a, b):
    """Matrix product; inputs may carry identical leading batch dims."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul: need >=2-d operands, got {a.shape} x {b.shape}")
    if a.shape[-1] != b.shape[-2] or a.shape[:-2] != b.shape[:-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} x {b.shape}")
    values = np.matmul(a.values, b.values)

    def backward(g):
        _accumulate(a, np.matmul(g, np.swapaxes(b.values, -1, -2)))
        _accumulate(b, np.matmul(np.swapaxes(a.values, -1, -2), g))

    return _make(values, (a, b), backward)


def transpose_last2(x):
    x = as_tensor(x)
    if x.ndim < 2:
        raise ShapeError(f"transpose_last2: need >=2-d input, got {x.shape}")
    values = np.swapaxes(x.values, -1, -2)

    def backward(g):
        _accumulate(x, np.swapaxes(g, -1, -2))

    return _make(values, (x,), backward)


def tanh(x):
    x = as_tensor(x)
    values = np.tanh(x.values)

    def backward(g):
        _accumulate(x, g * (1.0 - values * values))

    return _make(values, (x,), backward)


def sigmoid(x):
    x = as_tensor(x)
    v = x.values
    values = np.where(v >= 0, 1.0 / (1.0 + np.exp(-np.abs(v))),
                      np.exp(-np.abs(v)) / (1.0 + np.exp(-np.abs(v))))

    def backward(g):
        _accumulate(x, g * values * (1.0 - values))

    return _make(values, (x,), backward)


def softmax(x):
    """Softmax over the last axis."""
    x = as_tensor(x)
    shifted = x.values - x.values.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    values = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        inner = (g * values).sum(axis=-1, keepdims=True)
        _accumulate(x, values * (g - inner))

    return _make(values, (x,), backward)


def concat(tensors, axis):
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat: empty input")
    try:
        values = np.concatenate([t.values for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError(
            f"concat: incompatible shapes {[t.shape for t in tensors]} on axis {axis}")
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            _accumulate(t, piece)

    return _make(values, tensors, backward)


def reshape(x, shape):
    x = as_tensor(x)
    values = x.values.reshape(shape)

    def backward(g):
        _accumulate(x, g.reshape(x.shape))

    return _make(values, (x,), backward)


def slice_axis(x, axis, start, stop):
    """Contiguous slice [start:stop) along one axis."""
    x = as_tensor(x)
    index = [slice(None)] * x.ndim
    index[axis] = slice(start, stop)
    index = tuple(index)
    values = x.values[index]

    def backward(g):
        if x.requires_grad:
            if x.grad is None:
                x.grad = np.zeros_like(x.values)
            x.grad[index] += g

    return _make(values, (x,), backward)


def take_rows(x, indices):
    """Gather rows along axis 0 (also the embedding-lookup primitive)."""
    x = as_tensor(x)
    indices = np.asarray(indices, dtype=np.intp)
    values = x.values[indices]

    def backward(g):
        if x.requires_grad:
            if x.grad is None:
                x.grad = np.zeros_like(x.values)
            np.add.at(x.grad, indices, g)

    return _make(values, (x,), backward)


def masked_mean(x, mask, axis):
    """Mean over `axis` weighted by a constant {0,1} mask.

    `mask.shape` must equal `x.shape[:axis+1]`; every mask row needs at
    least one nonzero entry.
    """
    x = as_tensor(x)
    mask = np.asarray(mask, dtype=DEFAULT_DTYPE)
    if mask.shape != x.shape[:axis + 1]:
        raise ShapeError(
            f"masked_mean: mask shape {mask.shape} does not match {x.shape} on axis {axis}")
    totals = mask.sum(axis=axis, keepdims=True)
    if np.any(totals == 0):
        raise ShapeError("masked_mean: a mask row is entirely zero")
    weights = mask / totals
    wexp = weights.reshape(weights.shape + (1,) * (x.ndim - mask.ndim))
    values = (x.values * wexp).sum(axis=axis)

    def backward(g):
        _accumulate(x, np.expand_dims(g, axis) * wexp)

    return _make(values, (x,), backward)


def dropout(x, rate, training, rng):
    """Inverted dropout: identity when not training or rate == 0."""
    x = as_tensor(x)
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout: rate {rate} outside [0, 1)")
    if not training or rate == 0.0:
        return x
    keep = (rng.random(x.shape) >= rate).astype(DEFAULT_DTYPE) / (1.0 - rate)
    values = x.values * keep

    def backward(g):
        _accumulate(x, g * keep)

    return _make(values, (x,), backward)


def sum_all(x):
    x = as_tensor(x)
    values = np.asarray(x.values.sum())

    def backward(g):
        _accumulate(x, np.broadcast_to(g, x.shape).copy())

    return _make(values, (x,), backward)


def bce_loss(predictions, labels):
    """Mean clamped binary cross-entropy; labels are constant."""
    predictions = as_tensor(predictions)
    labels = np.asarray(labels, dtype=DEFAULT_DTYPE)
    if labels.shape != predictions.shape:
        raise ShapeError(
            f"bce_loss: predictions {predictions.shape} vs labels {labels.shape}")
    p = np.clip(predictions.values, 1e-7, 1.0 - 1e-7)
    n = p.size
    values = np.asarray(-(labels * np.log(p) + (1.0 - labels) * np.log1p(-p)).mean())
    unclamped = (predictions.values > 1e-7) & (predictions.values < 1.0 - 1e-7)

    def backward(g):
        dp = (p - labels) / (p * (1.0 - p)) / n
        _accumulate(predictions, g * dp * unclamped)

    return _make(values, (predictions,), backward)


# ---------------------------------------------------------------------------
# parameters, initializers, optimizer


class Parameter:
    """A trainable tensor plus its Adam moment buffers."""

    __slots__ = ("tensor", "m", "v")

    def __init__(self, values):
        self.tensor = Tensor(values, requires_grad=True)
        self.m = np.zeros_like(self.tensor.values)
        self.v = np.zeros_like(self.tensor.values)

    @property
    def values(self):
        return self.tensor.values

    @property
    def shape(self):
        return self.tensor.values.shape


def uniform_init(rng, shape, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(DEFAULT_DTYPE)


def dense_params(rng, n_in, n_out, prefix):
    """Weight and bias for one fully connected layer."""
    return {
        f"{prefix}.w": Parameter(uniform_init(rng, (n_in, n_out), n_in, n_out)),
        f"{prefix}.b": Parameter(np.zeros(n_out, dtype=DEFAULT_DTYPE)),
    }


def dense(x, params, prefix, activation=tanh):
    out = add(matmul(x, params[f"{prefix}.w"].tensor), params[f"{prefix}.b"].tensor)
    return activation(out) if activation is not None else out


def lstm_params(rng, n_in, hidden, prefix):
    """Gate-stacked weights for one bidirectional LSTM layer.

    Gate order along the last axis is (input, forget, candidate, output);
    the forget-gate bias starts at +1.
    """
    params = {}
    for direction in ("fw", "bw"):
        bias = np.zeros(4 * hidden, dtype=DEFAULT_DTYPE)
        bias[hidden:2 * hidden] = 1.0
        params[f"{prefix}.{direction}.w"] = Parameter(
            uniform_init(rng, (n_in, 4 * hidden), n_in, 4 * hidden))
        params[f"{prefix}.{direction}.u"] = Parameter(
            uniform_init(rng, (hidden, 4 * hidden), hidden, 4 * hidden))
        params[f"{prefix}.{direction}.b"] = Parameter(bias)
    return params


def _lstm_direction(x, mask, w, u, b, hidden, reverse):
    n, t_len, _ = x.shape
    h_prev = Tensor(np.zeros((n, hidden)))
    c_prev = Tensor(np.zeros((n, hidden)))
    zero_out = Tensor(np.zeros((n, hidden)))
    steps = range(t_len - 1, -1, -1) if reverse else range(t_len)
    outputs = [None] * t_len
    for t in steps:
        m_col = mask[:, t]
        if not m_col.any():
            outputs[t] = zero_out
            continue
        x_t = reshape(slice_axis(x, 1, t, t + 1), (n, x.shape[2]))
        z = add(add(matmul(x_t, w), matmul(h_prev, u)), b)
        gate_i = sigmoid(slice_axis(z, 1, 0, hidden))
        gate_f = sigmoid(slice_axis(z, 1, hidden, 2 * hidden))
        gate_g = tanh(slice_axis(z, 1, 2 * hidden, 3 * hidden))
        gate_o = sigmoid(slice_axis(z, 1, 3 * hidden, 4 * hidden))
        c_new = add(mul(gate_f, c_prev), mul(gate_i, gate_g))
        h_new = mul(gate_o, tanh(c_new))
        if m_col.all():
            h_prev, c_prev = h_new, c_new
            outputs[t] = h_new
        else:
            m = Tensor(m_col[:, None])
            inv = Tensor(1.0 - m_col[:, None])
            h_prev = add(mul(m, h_new), mul(inv, h_prev))
            c_prev = add(mul(m, c_new), mul(inv, c_prev))
            outputs[t] = mul(m, h_new)
    return concat([reshape(o, (n, 1, hidden)) for o in outputs], axis=1)


def bilstm_forward(inputs, mask, params, prefix):
    """Bidirectional LSTM over (T, d) or batched (N, T, d) inputs.

    Masked steps carry the previous state through and emit zero rows.
    Returns per-step forward/backward hidden states concatenated, so the
    output is (..., T, 2*hidden).
    """
    inputs = as_tensor(inputs)
    single = inputs.ndim == 2
    if single:
        inputs = reshape(inputs, (1,) + inputs.shape)
    if inputs.ndim != 3:
        raise ShapeError(f"bilstm_forward: expected (N, T, d) input, got {inputs.shape}")
    if inputs.shape[1] == 0:
        raise ShapeError("bilstm_forward: zero-length sequence")
    mask = np.asarray(mask, dtype=DEFAULT_DTYPE)
    if mask.ndim == 1:
        mask = mask[None, :]
    if mask.shape != inputs.shape[:2]:
        raise ShapeError(
            f"bilstm_forward: mask shape {mask.shape} does not match input {inputs.shape}")
    hidden = params[f"{prefix}.fw.u"].shape[0]
    fw = _lstm_direction(inputs, mask, params[f"{prefix}.fw.w"].tensor,
                         params[f"{prefix}.fw.u"].tensor,
                         params[f"{prefix}.fw.b"].tensor, hidden, reverse=False)
    bw = _lstm_direction(inputs, mask, params[f"{prefix}.bw.w"].tensor,
                         params[f"{prefix}.bw.u"].tensor,
                         params[f"{prefix}.bw.b"].tensor, hidden, reverse=True)
    out = concat([fw, bw], axis=2)
    if single:
        out = reshape(out, out.shape[1:])
    return out


class Adam:
    """Standard bias-corrected Adam over a named parameter dict."""

    def __init__(self, params, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0

    def zero_grad(self):
        for p in self.params.values():
            p.tensor.zero_grad()

    def clip_gradients(self, max_norm):
        """Scale all gradients so their global L2 norm is at most max_norm."""
        total = 0.0
        for p in self.params.values():
            if p.tensor.grad is not None:
                total += float((p.tensor.grad ** 2).sum())
        norm = np.sqrt(total)
        if norm > max_norm:
            factor = max_norm / (norm + 1e-12)
            for p in self.params.values():
                if p.tensor.grad is not None:
                    p.tensor.grad *= factor
        return norm

    def step(self, lr):
        self.step_count += 1
        t = self.step_count
        for name in sorted(self.params):
            p = self.params[name]
            g = p.tensor.grad
            if g is None:
                g = 0.0
            p.m = self.beta1 * p.m + (1.0 - self.beta1) * g
            p.v = self.beta2 * p.v + (1.0 - self.beta2) * (g * g)
            m_hat = p.m / (1.0 - self.beta1 ** t)
            v_hat = p.v / (1.0 - self.beta2 ** t)
            p.tensor.values -= lr * m_hat / (np.sqrt(v_hat) + self.eps)


# ---------------------------------------------------------------------------
# checkpoint container

_MAGIC = b"TCAD"
FORMAT_VERSION = 1


def save_arrays(path, arrays):
    """Write named arrays to a self-describing little-endian container."""
    entries = []
    blobs = []
    offset = 0
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name])
        if arr.dtype.byteorder == ">":
            arr = arr.astype(arr.dtype.newbyteorder("<"))
        raw = arr.tobytes()
        entries.append({
            "name": name,
            "shape": list(arr.shape),
            "dtype": np.dtype(arr.dtype).newbyteorder("<").str,
            "offset": offset,
            "nbytes": len(raw),
        })
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps({"format_version": FORMAT_VERSION, "tensors": entries},
                        sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for raw in blobs:
            fh.write(raw)


def load_arrays(path):
    """Read a container written by save_arrays; returns name -> ndarray."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _MAGIC:
            raise ValueError(f"{path}: not a tensor container (magic {magic!r})")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported container version {version}")
        (header_len,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(header_len).decode("utf-8"))
        body = fh.read()
    out = {}
    for entry in header["tensors"]:
        raw = body[entry["offset"]:entry["offset"] + entry["nbytes"]]
        arr = np.frombuffer(raw, dtype=np.dtype(entry["dtype"]))
        out[entry["name"]] = arr.reshape(entry["shape"]).copy()
    return out
