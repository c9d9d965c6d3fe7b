"""Minimal reverse-mode automatic differentiation on numpy arrays.

Provides exactly the tensor operations the rest of the package needs:
elementwise math, matmul, reductions, (depthwise/dilated/causal) 1-D
convolutions, normalization, softmax attention, pooling, plus a
finite-difference gradient checker. Tensors default to float64; training
code may run float32 through the same code path.

Every op validates its output for NaN/Inf while ``numeric_guard`` is
enabled (the default) and aborts naming the producing op.
"""

from __future__ import annotations

import math
from contextlib import contextmanager
from typing import Callable, Iterable

import numpy as np
from scipy.special import erf as _erf

from .errors import ContractError, NumericsError, ShapeError

_GUARD = True


@contextmanager
def numeric_guard(enabled: bool):
    """Temporarily enable/disable NaN/Inf checking on op outputs."""
    global _GUARD
    prev = _GUARD
    _GUARD = enabled
    try:
        yield
    finally:
        _GUARD = prev


def _check(data: np.ndarray, op: str) -> np.ndarray:
    if _GUARD and not np.all(np.isfinite(data)):
        raise NumericsError(f"non-finite values produced by op '{op}'")
    return data


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient over axes that were broadcast in the forward pass."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """An n-d array node in the autodiff graph.

    Graph edges are parent links recorded at op time; ``backward`` walks
    the reverse topological order. Data is treated as immutable once an
    op has consumed it (in-place edits are only legal on leaves, e.g.
    the optimizer updating parameters between passes).
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward_fn",
                 "op", "_retain")

    def __init__(self, data, requires_grad: bool = False, dtype=None, op: str = "leaf"):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.asarray(data, dtype=dtype if dtype is not None else None)
        if self.data.dtype.kind != "f":
            self.data = self.data.astype(np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward_fn: Callable[[np.ndarray], None] | None = None
        self.op = op
        self._retain = False

    # -- construction helpers -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False, op="detach")

    def retain_grad(self) -> "Tensor":
        self._retain = True
        return self

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    # -- graph plumbing --------------------------------------------------------
    def _accumulate(self, grad: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(grad, dtype=self.data.dtype)
        else:
            self.grad = self.grad + grad

    def backward(self) -> None:
        """Reverse-mode sweep from a scalar node."""
        if self.size != 1:
            raise ContractError("backward requires a scalar loss node")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
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
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward_fn is not None and node.grad is not None:
                node._backward_fn(node.grad)
        # free interior grads that nobody asked to keep
        for node in topo:
            if node is not self and node._parents and not node._retain:
                node.grad = None

    # -- operator sugar ---------------------------------------------------------
    def __add__(self, other):
        return add(self, _as_tensor(other, self.dtype))

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, _as_tensor(other, self.dtype))

    __rmul__ = __mul__

    def __sub__(self, other):
        return sub(self, _as_tensor(other, self.dtype))

    def __rsub__(self, other):
        return sub(_as_tensor(other, self.dtype), self)

    def __truediv__(self, other):
        return div(self, _as_tensor(other, self.dtype))

    def __rtruediv__(self, other):
        return div(_as_tensor(other, self.dtype), self)

    def __neg__(self):
        return mul(self, _as_tensor(-1.0, self.dtype))

    def __matmul__(self, other):
        return matmul(self, _as_tensor(other, self.dtype))

    def __pow__(self, p):
        return power(self, p)

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes)


def _as_tensor(x, dtype=None) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=dtype))


def _make(data: np.ndarray, parents: Iterable[Tensor], op: str,
          backward_fn: Callable[[np.ndarray], None] | None) -> Tensor:
    parents = tuple(parents)
    out = Tensor(_check(data, op), op=op)
    out.requires_grad = any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = parents
        out._backward_fn = backward_fn
    return out


# -- elementwise ops --------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    data = a.data + b.data

    def bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return _make(data, (a, b), "add", bw)


def sub(a: Tensor, b: Tensor) -> Tensor:
    data = a.data - b.data

    def bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g, b.shape))

    return _make(data, (a, b), "sub", bw)


def mul(a: Tensor, b: Tensor) -> Tensor:
    data = a.data * b.data

    def bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return _make(data, (a, b), "mul", bw)


def div(a: Tensor, b: Tensor) -> Tensor:
    data = a.data / b.data

    def bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g / b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return _make(data, (a, b), "div", bw)


def power(a: Tensor, p: float) -> Tensor:
    data = a.data ** p

    def bw(g):
        if a.requires_grad:
            a._accumulate(g * p * a.data ** (p - 1))

    return _make(data, (a,), f"pow{p}", bw)


def exp(a: Tensor) -> Tensor:
    data = np.exp(a.data)

    def bw(g):
        if a.requires_grad:
            a._accumulate(g * data)

    return _make(data, (a,), "exp", bw)


def log(a: Tensor) -> Tensor:
    data = np.log(a.data)

    def bw(g):
        if a.requires_grad:
            a._accumulate(g / a.data)

    return _make(data, (a,), "log", bw)


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp values; gradient passes only through unclipped entries."""
    data = np.clip(a.data, lo, hi)
    inside = (a.data > lo) & (a.data < hi)

    def bw(g):
        if a.requires_grad:
            a._accumulate(g * inside)

    return _make(data, (a,), "clip", bw)


# -- activations ------------------------------------------------------------------

def sigmoid(a: Tensor) -> Tensor:
    data = 1.0 / (1.0 + np.exp(-a.data))

    def bw(g):
        if a.requires_grad:
            a._accumulate(g * data * (1.0 - data))

    return _make(data, (a,), "sigmoid", bw)


def relu(a: Tensor) -> Tensor:
    data = np.maximum(a.data, 0.0)

    def bw(g):
        if a.requires_grad:
            a._accumulate(g * (a.data > 0))

    return _make(data, (a,), "relu", bw)


_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(a: Tensor) -> Tensor:
    """Exact Gaussian-CDF GELU: x * Phi(x)."""
    phi_cdf = 0.5 * (1.0 + _erf(a.data / _SQRT2))
    data = a.data * phi_cdf

    def bw(g):
        if a.requires_grad:
            pdf = _INV_SQRT_2PI * np.exp(-0.5 * a.data * a.data)
            a._accumulate(g * (phi_cdf + a.data * pdf))

    return _make(data, (a,), "gelu", bw)


def activation(kind: str, x: Tensor) -> Tensor:
    try:
        return {"gelu": gelu, "sigmoid": sigmoid, "relu": relu}[kind](x)
    except KeyError:
        raise ContractError(f"unknown activation kind '{kind}'") from None


# -- shape ops --------------------------------------------------------------------

def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape) if not isinstance(shape, int) else (shape,)
    orig = a.shape
    data = a.data.reshape(shape)

    def bw(g):
        if a.requires_grad:
            a._accumulate(g.reshape(orig))

    return _make(data, (a,), "reshape", bw)


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    data = a.data.transpose(axes)

    def bw(g):
        if a.requires_grad:
            a._accumulate(g.transpose(inv))

    return _make(data, (a,), "transpose", bw)


def concat(tensors: list[Tensor], axis: int = -1) -> Tensor:
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        parts = np.split(g, splits, axis=axis)
        for t, p in zip(tensors, parts):
            if t.requires_grad:
                t._accumulate(p)

    return _make(data, tensors, "concat", bw)


# -- reductions -------------------------------------------------------------------

def _reduced_count(shape: tuple[int, ...], axis) -> int:
    if axis is None:
        return int(np.prod(shape))
    axes = axis if isinstance(axis, tuple) else (axis,)
    n = 1
    for ax in axes:
        n *= shape[ax]
    return n


def reduce_sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if a.requires_grad:
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            a._accumulate(np.broadcast_to(g, a.shape).copy())

    return _make(data, (a,), "sum", bw)


def reduce_mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = _reduced_count(a.shape, axis)
    data = a.data.mean(axis=axis, keepdims=keepdims)

    def bw(g):
        if a.requires_grad:
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            a._accumulate(np.broadcast_to(g, a.shape) / n)

    return _make(data, (a,), "mean", bw)


def reduce_max(a: Tensor, axis: int, keepdims: bool = False) -> Tensor:
    """Max over one axis; gradient routes to the first argmax per slice."""
    data = a.data.max(axis=axis, keepdims=keepdims)
    idx = a.data.argmax(axis=axis)

    def bw(g):
        if a.requires_grad:
            if not keepdims:
                g = np.expand_dims(g, axis)
            full = np.zeros_like(a.data)
            np.put_along_axis(full, np.expand_dims(idx, axis), g, axis=axis)
            a._accumulate(full)

    return _make(data, (a,), "max", bw)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        if a.requires_grad:
            dot = (g * data).sum(axis=axis, keepdims=True)
            a._accumulate((g - dot) * data)

    return _make(data, (a,), "softmax", bw)


# -- linear algebra -----------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    data = np.matmul(a.data, b.data)

    def _swap(x):
        return np.swapaxes(x, -1, -2)

    def bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(np.matmul(g, _swap(b.data)), a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(np.matmul(_swap(a.data), g), b.shape))

    return _make(data, (a, b), "matmul", bw)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    out = matmul(x, w)
    return out if b is None else add(out, b)


# -- convolutions ------------------------------------------------------------------

def _conv_padding(kernel: int, dilation: int, causal: bool) -> tuple[int, int]:
    total = (kernel - 1) * dilation
    if causal:
        return total, 0
    return total // 2, total - total // 2


def conv1d(x: Tensor, w: Tensor, b: Tensor | None = None, *, dilation: int = 1,
           causal: bool = False) -> Tensor:
    """Same-length dense 1-D convolution.

    x: [B, L, Cin]; w: [K, Cin, Cout]; b: [Cout]. Causal mode pads
    (K-1)*dilation on the left only, so output[t] depends on inputs <= t.
    """
    if x.ndim != 3 or w.ndim != 3:
        raise ShapeError(f"conv1d expects x[B,L,Cin], w[K,Cin,Cout]; got {x.shape}, {w.shape}")
    if x.shape[2] != w.shape[1]:
        raise ShapeError(f"conv1d channel mismatch: x has {x.shape[2]}, w expects {w.shape[1]}")
    if dilation < 1:
        raise ContractError("dilation must be >= 1")
    K = w.shape[0]
    B, L, _ = x.shape
    pl, pr = _conv_padding(K, dilation, causal)
    xp = np.pad(x.data, ((0, 0), (pl, pr), (0, 0)))
    data = np.zeros((B, L, w.shape[2]), dtype=x.dtype)
    for k in range(K):
        data += np.matmul(xp[:, k * dilation:k * dilation + L, :], w.data[k])
    if b is not None:
        data = data + b.data

    def bw(g):
        if x.requires_grad:
            dxp = np.zeros_like(xp)
            for k in range(K):
                dxp[:, k * dilation:k * dilation + L, :] += np.matmul(g, w.data[k].T)
            x._accumulate(dxp[:, pl:pl + L, :])
        if w.requires_grad:
            dw = np.empty_like(w.data)
            for k in range(K):
                dw[k] = np.einsum("blc,blo->co", xp[:, k * dilation:k * dilation + L, :], g)
            w._accumulate(dw)
        if b is not None and b.requires_grad:
            b._accumulate(g.sum(axis=(0, 1)))

    parents = (x, w) if b is None else (x, w, b)
    return _make(data, parents, "conv1d", bw)


def depthwise_conv1d(x: Tensor, w: Tensor, *, dilation: int = 1,
                     causal: bool = False) -> Tensor:
    """Per-channel 1-D convolution. x: [B, L, C]; w: [K, C]."""
    if x.ndim != 3 or w.ndim != 2 or x.shape[2] != w.shape[1]:
        raise ShapeError(f"depthwise_conv1d shapes: x {x.shape}, w {w.shape}")
    K = w.shape[0]
    B, L, C = x.shape
    pl, pr = _conv_padding(K, dilation, causal)
    xp = np.pad(x.data, ((0, 0), (pl, pr), (0, 0)))
    data = np.zeros_like(x.data)
    for k in range(K):
        data += xp[:, k * dilation:k * dilation + L, :] * w.data[k]

    def bw(g):
        if x.requires_grad:
            dxp = np.zeros_like(xp)
            for k in range(K):
                dxp[:, k * dilation:k * dilation + L, :] += g * w.data[k]
            x._accumulate(dxp[:, pl:pl + L, :])
        if w.requires_grad:
            dw = np.empty_like(w.data)
            for k in range(K):
                dw[k] = (xp[:, k * dilation:k * dilation + L, :] * g).sum(axis=(0, 1))
            w._accumulate(dw)

    return _make(data, (x, w), "depthwise_conv1d", bw)


def separable_conv1d(x: Tensor, w_depth: Tensor, w_point: Tensor,
                     b: Tensor | None = None, *, dilation: int = 1,
                     causal: bool = False) -> Tensor:
    """Depthwise then pointwise (1x1) convolution."""
    mid = depthwise_conv1d(x, w_depth, dilation=dilation, causal=causal)
    return conv1d(mid, w_point, b, dilation=1, causal=False)


# -- normalization ------------------------------------------------------------------

_NORM_EPS = 1e-5


def _moment_normalize(x: Tensor, axis) -> Tensor:
    mu = reduce_mean(x, axis=axis, keepdims=True)
    centered = sub(x, mu)
    var = reduce_mean(mul(centered, centered), axis=axis, keepdims=True)
    return mul(centered, power(add(var, Tensor(np.array(_NORM_EPS, dtype=x.dtype))), -0.5))


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor) -> Tensor:
    """Normalize over the channel (last) axis, independently per position."""
    return add(mul(_moment_normalize(x, -1), gamma), beta)


def group_norm(x: Tensor, gamma: Tensor, beta: Tensor, groups: int) -> Tensor:
    """Normalize channel groups independently at each position.

    Statistics never mix across the length axis, which keeps causal
    stacks causal (group-wise layer normalization).
    """
    C = x.shape[-1]
    if C % groups != 0:
        raise ShapeError(f"channels {C} not divisible by groups {groups}")
    grouped = reshape(x, x.shape[:-1] + (groups, C // groups))
    normed = _moment_normalize(grouped, -1)
    return add(mul(reshape(normed, x.shape), gamma), beta)


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, running: dict, *,
               training: bool, momentum: float = 0.1) -> Tensor:
    """Per-channel normalization over the batch (and length, if present).

    ``running`` holds plain arrays {"mean", "var"}; updated in train mode
    with the batch statistics, used as constants in eval mode.
    """
    axes = tuple(range(x.ndim - 1))
    if training:
        normed = _moment_normalize(x, axes)
        bm = x.data.mean(axis=axes)
        bv = x.data.var(axis=axes)
        running["mean"][...] = (1 - momentum) * running["mean"] + momentum * bm
        running["var"][...] = (1 - momentum) * running["var"] + momentum * bv
    else:
        mean = Tensor(running["mean"].astype(x.dtype))
        inv = Tensor((1.0 / np.sqrt(running["var"] + _NORM_EPS)).astype(x.dtype))
        normed = mul(sub(x, mean), inv)
    return add(mul(normed, gamma), beta)


def normalize(kind: str, x: Tensor, gamma: Tensor, beta: Tensor, *,
              groups: int | None = None, running: dict | None = None,
              training: bool = True, momentum: float = 0.1) -> Tensor:
    if kind == "layer":
        return layer_norm(x, gamma, beta)
    if kind == "group":
        if groups is None:
            raise ContractError("group normalization requires groups")
        return group_norm(x, gamma, beta, groups)
    if kind == "batch":
        if running is None:
            raise ContractError("batch normalization requires running statistics")
        return batch_norm(x, gamma, beta, running, training=training, momentum=momentum)
    raise ContractError(f"unknown normalization kind '{kind}'")


# -- attention ----------------------------------------------------------------------

def _split_heads(x: Tensor, heads: int) -> Tensor:
    B, L, D = x.shape
    return transpose(reshape(x, (B, L, heads, D // heads)), (0, 2, 1, 3))


def _merge_heads(x: Tensor) -> Tensor:
    B, H, L, Dh = x.shape
    return reshape(transpose(x, (0, 2, 1, 3)), (B, L, H * Dh))


def attention(q_in: Tensor, k_in: Tensor, v_in: Tensor, *, w_q: Tensor,
              w_k: Tensor, w_v: Tensor, w_o: Tensor,
              heads: int) -> tuple[Tensor, Tensor]:
    """Multi-head scaled dot-product attention.

    Inputs are [B, L, d_model]; w_q/w_k/w_v map d_model -> d_k (split
    across heads), w_o maps d_k -> d_out. Returns (output, weights) where
    weights is the row-stochastic [B, heads, Lq, Lk] tensor actually used.
    """
    d_k_total = w_q.shape[1]
    if d_k_total % heads != 0:
        raise ShapeError(f"key dimension {d_k_total} not divisible by {heads} heads")
    q = _split_heads(matmul(q_in, w_q), heads)
    k = _split_heads(matmul(k_in, w_k), heads)
    v = _split_heads(matmul(v_in, w_v), heads)
    scale = 1.0 / math.sqrt(d_k_total // heads)
    scores = mul(matmul(q, transpose(k, (0, 1, 3, 2))), Tensor(np.array(scale, dtype=q.dtype)))
    weights = softmax(scores, axis=-1)
    out = matmul(_merge_heads(matmul(weights, v)), w_o)
    return out, weights


# -- pooling ------------------------------------------------------------------------

def global_avg_pool(x: Tensor) -> Tensor:
    """Mean over the length axis: [B, L, C] -> [B, C]."""
    return reduce_mean(x, axis=1)


def global_max_pool(x: Tensor) -> Tensor:
    return reduce_max(x, axis=1)


def adaptive_avg_pool(x: Tensor, target_len: int) -> Tensor:
    """Average contiguous length bins whose sizes differ by at most one."""
    B, L, C = x.shape
    if target_len > L:
        raise ShapeError(f"adaptive pool target {target_len} exceeds length {L}")
    bounds = np.linspace(0, L, target_len + 1).round().astype(int)
    data = np.stack([x.data[:, bounds[i]:bounds[i + 1], :].mean(axis=1)
                     for i in range(target_len)], axis=1)

    def bw(g):
        if x.requires_grad:
            dx = np.zeros_like(x.data)
            for i in range(target_len):
                n = bounds[i + 1] - bounds[i]
                dx[:, bounds[i]:bounds[i + 1], :] = g[:, i:i + 1, :] / n
            x._accumulate(dx)

    return _make(data, (x,), "adaptive_avg_pool", bw)


def pool(kind: str, x: Tensor, target_len: int | None = None) -> Tensor:
    if kind == "global_avg":
        return global_avg_pool(x)
    if kind == "global_max":
        return global_max_pool(x)
    if kind == "adaptive_avg":
        if target_len is None:
            raise ContractError("adaptive_avg pooling requires target_len")
        return adaptive_avg_pool(x, target_len)
    raise ContractError(f"unknown pool kind '{kind}'")


def dropout(x: Tensor, rate: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; call only in train mode."""
    if rate <= 0.0:
        return x
    mask = (rng.random(x.shape) >= rate).astype(x.dtype) / (1.0 - rate)
    return mul(x, Tensor(mask))


# -- gradient utilities ----------------------------------------------------------------

def backward(loss: Tensor, leaves: Iterable[Tensor] | None = None) -> dict[int, np.ndarray]:
    """Run reverse-mode from ``loss``; return {id(leaf): grad} for the given leaves.

    Also populates ``.grad`` on every requires_grad leaf and every node
    marked with ``retain_grad()`` (the hook Grad-CAM uses).
    """
    loss.backward()
    if leaves is None:
        return {}
    out = {}
    for leaf in leaves:
        if leaf.grad is None:
            raise ContractError("leaf unreachable from loss or missing requires_grad")
        out[id(leaf)] = leaf.grad
    return out


def grad_check(fn: Callable[[], Tensor], inputs: list[Tensor], *, eps: float = 1e-5,
               max_coords: int = 200, rng: np.random.Generator | None = None) -> float:
    """Compare analytic gradients of ``fn()`` against central differences.

    ``fn`` must re-read ``inputs`` (their ``.data`` is perturbed in place)
    and return a scalar Tensor. Checks every coordinate, or a random
    subset of ``max_coords`` per input for large tensors.

    Per input, the error is the largest coordinate disagreement relative
    to that gradient's magnitude scale, with the denominator floored at
    1e-8. (A per-coordinate ratio would be noise-limited: float64 central
    differences carry ~1e-12 absolute noise through a deep graph, so
    coordinates with true gradients below ~1e-7 can never compare at
    1e-4 relative, whatever the implementation.) Returns the max across
    inputs.
    """
    rng = rng or np.random.default_rng(0)
    for t in inputs:
        t.grad = None
        t.requires_grad = True
    out = fn()
    out.backward()
    analytic = [np.array(t.grad, copy=True) for t in inputs]
    worst = 0.0
    for t, ga in zip(inputs, analytic):
        flat = t.data.reshape(-1)
        n = flat.size
        coords = np.arange(n) if n <= max_coords else rng.choice(n, size=max_coords, replace=False)
        gap = 0.0
        scale = 0.0
        for c in coords:
            orig = flat[c]
            flat[c] = orig + eps
            up = fn().item()
            flat[c] = orig - eps
            down = fn().item()
            flat[c] = orig
            numeric = (up - down) / (2 * eps)
            a = ga.reshape(-1)[c]
            gap = max(gap, abs(a - numeric))
            scale = max(scale, abs(a), abs(numeric))
        worst = max(worst, gap / max(scale, 1e-8))
    return worst
