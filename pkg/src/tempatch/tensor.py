"""Dense tensors with reverse-mode automatic differentiation.

Minimal op set backing the encoder stack: linear algebra, activations,
gather/scatter, segment reductions, masked softmax and layer norm. Every
op records a backward closure; ``backward`` walks the graph in reverse
topological order. Reductions run in a fixed order (input order through
the kernels module), so forward passes are bit-deterministic.

Default precision is float32; switch to float64 for finite-difference
suites via ``set_default_dtype``.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from . import kernels
from .errors import ShapeError

_DEFAULT_DTYPE = np.float32
_GRAD_ENABLED = True


def set_default_dtype(dtype) -> None:
    global _DEFAULT_DTYPE
    dtype = np.dtype(dtype)
    if dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ShapeError(f"unsupported dtype {dtype}; use float32 or float64")
    _DEFAULT_DTYPE = dtype.type


def get_default_dtype():
    return _DEFAULT_DTYPE


class no_grad:
    """Context manager disabling tape recording inside the block."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        if isinstance(data, (np.ndarray, np.floating)) and \
                data.dtype in (np.float32, np.float64):
            arr = np.asarray(data)
        else:
            # python scalars/lists land in the working precision
            arr = np.asarray(data)
            if arr.dtype not in (np.float32, np.float64):
                arr = arr.astype(_DEFAULT_DTYPE)
            elif not isinstance(data, np.ndarray):
                arr = arr.astype(_DEFAULT_DTYPE, copy=False)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = None
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self):
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # operator sugar; scalars are allowed on either side
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __sub__(self, other):
        a, b = _coerce_pair(self, other)
        return add(a, neg(b))

    def __rsub__(self, other):
        a, b = _coerce_pair(other, self)
        return add(a, neg(b))

    def __truediv__(self, other):
        return div(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        return reshape(self, shape)


def _as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    if isinstance(x, (int, float, np.number)):
        # keep python scalars in the working precision
        return Tensor(np.asarray(x, dtype=_DEFAULT_DTYPE))
    return Tensor(np.asarray(x))


def _coerce_pair(a, b) -> tuple[Tensor, Tensor]:
    """Wrap both operands; bare scalars adopt the other operand's dtype
    so float64 graphs are not polluted by float32-rounded constants."""
    if isinstance(a, Tensor) and isinstance(b, (int, float, np.number)):
        return a, Tensor(np.asarray(b, dtype=a.dtype))
    if isinstance(b, Tensor) and isinstance(a, (int, float, np.number)):
        return Tensor(np.asarray(a, dtype=b.dtype)), b
    return _as_tensor(a), _as_tensor(b)


def _make(data, parents, backward) -> Tensor:
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == tuple(shape):
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, (gs, ss) in enumerate(zip(g.shape, shape)):
        if ss == 1 and gs != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise / linear algebra


def add(a, b) -> Tensor:
    a, b = _coerce_pair(a, b)
    data = a.data + b.data

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = _coerce_pair(a, b)
    data = a.data * b.data

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(data, (a, b), backward)


def div(a, b) -> Tensor:
    a, b = _coerce_pair(a, b)
    data = a.data / b.data

    def backward(g):
        ga = _unbroadcast(g / b.data, a.shape)
        gb = _unbroadcast(-g * a.data / (b.data * b.data), b.shape)
        return ga, gb

    return _make(data, (a, b), backward)


def neg(a) -> Tensor:
    a = _as_tensor(a)
    return _make(-a.data, (a,), lambda g: (-g,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs ndim>=2 operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    data = np.matmul(a.data, b.data)

    def backward(g):
        ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return ga, gb

    return _make(data, (a, b), backward)


def relu(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    data = np.maximum(a.data, 0)

    def backward(g):
        return (g * (a.data > 0),)

    return _make(data, (a,), backward)


def exp(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    data = np.exp(a.data)
    return _make(data, (a,), lambda g: (g * data,))


def log(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    data = np.log(a.data)
    return _make(data, (a,), lambda g: (g / a.data,))


def sin(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    data = np.sin(a.data)
    return _make(data, (a,), lambda g: (g * np.cos(a.data),))


def sigmoid(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    # overflow in exp saturates to inf and the quotient to exactly 0,
    # which is the right limit, so silence the warning rather than
    # change the rounding path
    with np.errstate(over="ignore"):
        data = 1.0 / (1.0 + np.exp(-a.data))
    return _make(data, (a,), lambda g: (g * data * (1.0 - data),))


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    a = _as_tensor(a)
    data = np.clip(a.data, lo, hi)
    inside = (a.data >= lo) & (a.data <= hi)
    return _make(data, (a,), lambda g: (g * inside,))


def reshape(a: Tensor, shape) -> Tensor:
    a = _as_tensor(a)
    old = a.shape
    data = a.data.reshape(shape)
    return _make(data, (a,), lambda g: (g.reshape(old),))


def transpose(a: Tensor, axes) -> Tensor:
    a = _as_tensor(a)
    inv = np.argsort(axes)
    data = np.transpose(a.data, axes)
    return _make(data, (a,), lambda g: (np.transpose(g, inv),))


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(data, tuple(tensors), backward)


# ---------------------------------------------------------------------------
# reductions


def reduce_sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).astype(a.dtype, copy=False),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, a.shape).astype(a.dtype, copy=False),)

    return _make(data, (a,), backward)


def reduce_mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    count = a.data.size if axis is None else a.shape[axis]
    return mul(reduce_sum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def reduce_max(a: Tensor, axis: int, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    data = a.data.max(axis=axis, keepdims=keepdims)
    # ties resolved to the first maximum for a deterministic backward
    arg = np.argmax(a.data, axis=axis)

    def backward(g):
        gg = g if keepdims else np.expand_dims(g, axis)
        out = np.zeros_like(a.data)
        np.put_along_axis(out, np.expand_dims(arg, axis), gg, axis=axis)
        return (out,)

    return _make(data, (a,), backward)


# ---------------------------------------------------------------------------
# gather / scatter


def gather_rows(x: Tensor, idx) -> Tensor:
    """Select rows of a 2-D tensor; duplicate indices permitted."""
    idx = np.asarray(idx, dtype=np.int64)
    data = x.data[idx]

    def backward(g):
        out = np.zeros_like(x.data)
        kernels.scatter_add_rows(out, idx, np.ascontiguousarray(g))
        return (out,)

    return _make(data, (x,), backward)


def scatter_rows(rows: Tensor, idx, num_rows: int) -> Tensor:
    """Sum rows into a fresh (num_rows, D) tensor at positions ``idx``."""
    idx = np.asarray(idx, dtype=np.int64)
    data = kernels.segment_sum(np.ascontiguousarray(rows.data), idx, num_rows)

    def backward(g):
        return (g[idx],)

    return _make(data, (rows,), backward)


def broadcast_rows(v: Tensor, num_rows: int) -> Tensor:
    """Tile a length-D vector into a (num_rows, D) matrix."""
    data = np.repeat(v.data[None, :], num_rows, axis=0)
    return _make(data, (v,), lambda g: (g.sum(axis=0),))


def overwrite_rows(base: Tensor, idx, rows: Tensor) -> Tensor:
    """Copy of ``base`` with rows at unique indices replaced by ``rows``."""
    idx = np.asarray(idx, dtype=np.int64)
    if rows.shape[1:] != base.shape[1:]:
        raise ShapeError(f"row width mismatch: {base.shape} vs {rows.shape}")
    data = base.data.copy()
    data[idx] = rows.data

    def backward(g):
        gb = g.copy()
        gb[idx] = 0
        return gb, g[idx]

    return _make(data, (base, rows), backward)


# ---------------------------------------------------------------------------
# segment ops (edge aggregation)


def segment_softmax(scores: Tensor, seg, num_segments: int) -> Tensor:
    seg = np.asarray(seg, dtype=np.int64)
    alpha = kernels.segment_softmax(np.ascontiguousarray(scores.data), seg, num_segments)

    def backward(g):
        inner = kernels.segment_sum(g * alpha, seg, num_segments)
        return (alpha * (g - inner[seg]),)

    return _make(alpha, (scores,), backward)


def segment_sum(values: Tensor, seg, num_segments: int) -> Tensor:
    seg = np.asarray(seg, dtype=np.int64)
    data = kernels.segment_sum(np.ascontiguousarray(values.data), seg, num_segments)

    def backward(g):
        return (g[seg],)

    return _make(data, (values,), backward)


# ---------------------------------------------------------------------------
# normalization / attention pieces


def masked_softmax(x: Tensor, mask, axis: int = -1) -> Tensor:
    """Softmax over ``axis`` restricted to mask==1 positions.

    Masked positions get exactly 0 weight; fully-masked rows give an
    all-zero output row rather than NaN.
    """
    mask = np.asarray(mask, dtype=bool)
    neg = np.where(mask, x.data, -np.inf)
    m = neg.max(axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    e = np.exp(neg - m)
    s = e.sum(axis=axis, keepdims=True)
    out = e / np.where(s > 0, s, 1.0)

    def backward(g):
        inner = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - inner),)

    return _make(out, (x,), backward)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale and shift."""
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    data = xhat * gain.data + bias.data
    d = x.shape[-1]

    def backward(g):
        dxhat = g * gain.data
        # standard layer-norm backward, fused
        gx = inv / d * (d * dxhat - dxhat.sum(axis=-1, keepdims=True)
                        - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True))
        ggain = _unbroadcast(g * xhat, gain.shape)
        gbias = _unbroadcast(g, bias.shape)
        return gx, ggain, gbias

    return _make(data, (x, gain, bias), backward)


# ---------------------------------------------------------------------------
# backward pass


def backward(loss: Tensor):
    """Reverse-mode pass from a scalar loss.

    Populates ``.grad`` on every requires_grad tensor in the graph and
    returns a map of leaf tensors (parameters) to their gradients. The
    graph is released afterwards.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")

    topo: list[Tensor] = []
    seen = set()
    stack = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaves: dict[int, Tensor] = {}
    for node in reversed(topo):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        node.grad = g if node.grad is None else node.grad + g
        if node._backward is None:
            if node.requires_grad:
                leaves[id(node)] = node
            continue
        parent_grads = node._backward(g)
        for p, pg in zip(node._parents, parent_grads):
            if not p.requires_grad or pg is None:
                continue
            acc = grads.get(id(p))
            grads[id(p)] = pg if acc is None else acc + pg

    # release the tape
    for node in topo:
        if node._backward is not None:
            node._parents = ()
            node._backward = None
            node.grad = None if node is not loss else node.grad
    return {leaf: leaf.grad for leaf in leaves.values()}


# ---------------------------------------------------------------------------
# parameter helpers and checkpoint io


def parameter(rng: np.random.Generator, shape, fan_in: int | None = None) -> Tensor:
    """Scaled-uniform fan-in initialized weight tensor."""
    if fan_in is None:
        fan_in = shape[0] if len(shape) > 1 else shape[0]
    bound = 1.0 / np.sqrt(max(fan_in, 1))
    data = rng.uniform(-bound, bound, size=shape).astype(_DEFAULT_DTYPE)
    return Tensor(data, requires_grad=True)


def zeros_param(shape) -> Tensor:
    return Tensor(np.zeros(shape, dtype=_DEFAULT_DTYPE), requires_grad=True)


def ones_param(shape) -> Tensor:
    return Tensor(np.ones(shape, dtype=_DEFAULT_DTYPE), requires_grad=True)


_MAGIC = b"TPCK1\n"


def save_tensors(path, arrays: dict, meta: dict | None = None) -> None:
    """Write named arrays as little-endian binary with a JSON header."""
    entries = []
    offset = 0
    blobs = []
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        blob = np.ascontiguousarray(le).tobytes()
        entries.append({
            "name": name,
            "shape": list(arr.shape),
            "dtype": arr.dtype.name,
            "offset": offset,
            "nbytes": len(blob),
        })
        blobs.append(blob)
        offset += len(blob)
    header = json.dumps({"meta": meta or {}, "tensors": entries}).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)


def load_tensors(path):
    """Inverse of :func:`save_tensors`; returns (arrays, meta)."""
    with open(path, "rb") as fh:
        if fh.read(len(_MAGIC)) != _MAGIC:
            raise ShapeError(f"{path} is not a tempatch checkpoint")
        (hlen,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(hlen))
        payload = fh.read()
    arrays = {}
    for ent in header["tensors"]:
        dt = np.dtype(ent["dtype"]).newbyteorder("<")
        raw = payload[ent["offset"]:ent["offset"] + ent["nbytes"]]
        arr = np.frombuffer(raw, dtype=dt).reshape(ent["shape"])
        arrays[ent["name"]] = arr.astype(np.dtype(ent["dtype"]), copy=True)
    return arrays, header["meta"]
