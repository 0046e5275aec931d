"""Minimal reverse-mode automatic differentiation on numpy arrays.

Every value is a float64 ``Tensor`` wrapping an ndarray. Operations build a
define-by-run graph; ``Tensor.backward()`` walks it in reverse topological
order and accumulates vector-Jacobian products into ``.grad``. Only the ops
needed by this package are implemented (broadcast arithmetic, matmul,
exp/log/sqrt/erf, reductions, reshaping, gather, concatenate, strided 2-d
convolution) plus a few composites (softmax, log-sum-exp, GELU, L2 row
normalization).
"""

from __future__ import annotations

import math

import numpy as np
from scipy import special as _sp

__all__ = [
    "Tensor",
    "as_tensor",
    "concatenate",
    "conv2d",
    "gelu",
    "l2_normalize",
    "log_sum_exp",
    "matmul",
    "no_grad",
    "softmax",
]

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_TWO_OVER_SQRT_PI = 2.0 / math.sqrt(math.pi)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)

_grad_enabled = True


class no_grad:
    """Context manager: ops inside build no graph (inference paths)."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


class Tensor:
    """A float64 array node in the autodiff graph."""

    __slots__ = ("data", "grad", "requires_grad", "_parents")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()  # tuple of (Tensor, vjp) pairs

    # -- introspection -------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def __len__(self):
        return len(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def item(self) -> float:
        return self.data.item()

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    # -- graph ----------------------------------------------------------

    def backward(self, grad=None):
        """Accumulate d(self)/d(leaf) into every reachable ``.grad``."""
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without an argument needs a scalar")
            grad = np.ones_like(self.data)
        order = _toposort(self)
        flows = {id(self): np.asarray(grad, dtype=np.float64)}
        for node in order:
            g = flows.pop(id(node), None)
            if g is None:
                continue
            if node.requires_grad and not node._parents:
                node.grad = g if node.grad is None else node.grad + g
            for parent, vjp in node._parents:
                pg = vjp(g)
                pid = id(parent)
                if pid in flows:
                    flows[pid] = flows[pid] + pg
                else:
                    flows[pid] = pg

    # -- operators --------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(as_tensor(other), self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return take(self, idx)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, axes):
        return transpose(self, axes)


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _toposort(root: Tensor):
    """Nodes ordered so each appears before its parents."""
    order, seen, stack = [], set(), [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent, _ in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return list(reversed(order))


def _make(data, *parent_vjps) -> Tensor:
    out = Tensor(data)
    if _grad_enabled:
        live = tuple((p, v) for p, v in parent_vjps if p.requires_grad)
        if live:
            out._parents = live
            out.requires_grad = True
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce ``grad`` back to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# -- elementwise arithmetic ------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(
        a.data + b.data,
        (a, lambda g: _unbroadcast(g, a.shape)),
        (b, lambda g: _unbroadcast(g, b.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(
        a.data - b.data,
        (a, lambda g: _unbroadcast(g, a.shape)),
        (b, lambda g: _unbroadcast(-g, b.shape)),
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(
        a.data * b.data,
        (a, lambda g: _unbroadcast(g * b.data, a.shape)),
        (b, lambda g: _unbroadcast(g * a.data, b.shape)),
    )


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(
        a.data / b.data,
        (a, lambda g: _unbroadcast(g / b.data, a.shape)),
        (b, lambda g: _unbroadcast(-g * a.data / (b.data * b.data), b.shape)),
    )


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a, lambda g: -g))


def power(a: Tensor, exponent: float) -> Tensor:
    e = float(exponent)
    return _make(a.data**e, (a, lambda g: g * e * a.data ** (e - 1.0)))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _make(out, (a, lambda g: g * out))


def log(a: Tensor) -> Tensor:
    return _make(np.log(a.data), (a, lambda g: g / a.data))


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)
    return _make(out, (a, lambda g: g * 0.5 / out))


def erf(a: Tensor) -> Tensor:
    return _make(
        _sp.erf(a.data),
        (a, lambda g: g * _TWO_OVER_SQRT_PI * np.exp(-a.data * a.data)),
    )


# -- reductions --------------------------------------------------------------


def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    def vjp(g):
        if axis is None:
            return np.broadcast_to(g, a.shape).copy() if np.ndim(g) == 0 else np.full(a.shape, g)
        gg = g
        if not keepdims:
            gg = np.expand_dims(g, axis)
        return np.broadcast_to(gg, a.shape).copy()

    return _make(a.data.sum(axis=axis, keepdims=keepdims), (a, vjp))


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = a.size
    elif isinstance(axis, tuple):
        count = int(np.prod([a.shape[i] for i in axis]))
    else:
        count = a.shape[axis]
    return mul(sum_(a, axis=axis, keepdims=keepdims), 1.0 / count)


# -- shape manipulation -------------------------------------------------------


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    return _make(a.data.reshape(shape), (a, lambda g: g.reshape(old)))


def transpose(a: Tensor, axes) -> Tensor:
    inverse = np.argsort(axes)
    return _make(a.data.transpose(axes), (a, lambda g: g.transpose(inverse)))


def take(a: Tensor, idx) -> Tensor:
    """a[idx] for basic slices or integer-array (gather) indexing."""

    def vjp(g):
        out = np.zeros(a.shape, dtype=np.float64)
        if _is_advanced(idx):
            np.add.at(out, idx, g)
        else:
            out[idx] += g
        return out

    return _make(a.data[idx], (a, vjp))


def _is_advanced(idx) -> bool:
    if isinstance(idx, tuple):
        return any(isinstance(i, (np.ndarray, list)) for i in idx)
    return isinstance(idx, (np.ndarray, list))


def concatenate(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def make_vjp(k):
        lo, hi = offsets[k], offsets[k + 1]

        def vjp(g):
            slicer = [slice(None)] * g.ndim
            slicer[axis] = slice(lo, hi)
            return g[tuple(slicer)]

        return vjp

    data = np.concatenate([t.data for t in tensors], axis=axis)
    return _make(data, *[(t, make_vjp(k)) for k, t in enumerate(tensors)])


# -- matmul ----------------------------------------------------------------


def matmul(a, b) -> Tensor:
    """Batched matrix product with broadcasting over leading dims."""
    a, b = as_tensor(a), as_tensor(b)

    def vjp_a(g):
        return _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)

    def vjp_b(g):
        return _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)

    return _make(np.matmul(a.data, b.data), (a, vjp_a), (b, vjp_b))


# -- convolution -------------------------------------------------------------


def conv2d(x: Tensor, weight: Tensor, bias, stride: int = 1, padding: int = 0) -> Tensor:
    """2-d convolution, NCHW layout, square kernel, via im2col."""
    batch, _, h, w = x.shape
    c_out, c_in, kh, kw = weight.shape
    h_out = (h + 2 * padding - kh) // stride + 1
    w_out = (w + 2 * padding - kw) // stride + 1

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    view = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    view = view[:, :, ::stride, ::stride]  # (B, C, Ho, Wo, kh, kw)
    cols = view.transpose(0, 2, 3, 1, 4, 5).reshape(batch * h_out * w_out, c_in * kh * kw)

    wmat = weight.data.reshape(c_out, -1)
    out = cols @ wmat.T
    if bias is not None:
        out = out + bias.data
    out = out.reshape(batch, h_out, w_out, c_out).transpose(0, 3, 1, 2)

    def vjp_x(g):
        gmat = g.transpose(0, 2, 3, 1).reshape(-1, c_out)
        dcols = (gmat @ wmat).reshape(batch, h_out, w_out, c_in, kh, kw)
        dxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                dxp[:, :, i : i + stride * h_out : stride, j : j + stride * w_out : stride] += (
                    dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
                )
        if padding:
            return dxp[:, :, padding:-padding, padding:-padding]
        return dxp

    def vjp_w(g):
        gmat = g.transpose(0, 2, 3, 1).reshape(-1, c_out)
        return (gmat.T @ cols).reshape(weight.shape)

    parents = [(x, vjp_x), (weight, vjp_w)]
    if bias is not None:
        parents.append((bias, lambda g: g.sum(axis=(0, 2, 3))))
    return _make(out, *parents)


# -- composites --------------------------------------------------------------


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    e = np.exp(a.data - a.data.max(axis=axis, keepdims=True))
    s = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        return s * (g - (g * s).sum(axis=axis, keepdims=True))

    return _make(s, (a, vjp))


def log_sum_exp(a: Tensor, axis: int = -1, mask: np.ndarray | None = None) -> Tensor:
    """logsumexp over ``axis``; entries where ``mask`` is 0 are excluded.

    The row max is detached, which leaves gradients exact. ``mask`` must leave
    at least one entry per row.
    """
    if mask is None:
        m = a.data.max(axis=axis, keepdims=True)
        e = exp(sub(a, Tensor(m)))
    else:
        m = np.where(mask > 0, a.data, -np.inf).max(axis=axis, keepdims=True)
        e = mul(exp(sub(a, Tensor(m))), Tensor(mask))
    return add(log(sum_(e, axis=axis, keepdims=True)), Tensor(m))


def gelu(a: Tensor) -> Tensor:
    """Exact GELU, 0.5 * x * (1 + erf(x / sqrt(2))), as a single fused node."""
    x = a.data
    phi = 0.5 * (1.0 + _sp.erf(x * _INV_SQRT2))

    def vjp(g):
        return g * (phi + x * _INV_SQRT_2PI * np.exp(-0.5 * x * x))

    return _make(x * phi, (a, vjp))


def l2_normalize(a: Tensor, eps: float = 1e-12) -> Tensor:
    """Normalize the last axis to unit Euclidean norm (gradient flows through)."""
    norm = sqrt(add(sum_(mul(a, a), axis=-1, keepdims=True), eps))
    return div(a, norm)


def _norm_backward(g, gamma_data, xhat, inv_sigma, axis):
    dxh = g * gamma_data
    return inv_sigma * (
        dxh
        - dxh.mean(axis=axis, keepdims=True)
        - xhat * (dxh * xhat).mean(axis=axis, keepdims=True)
    )


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv_sigma = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv_sigma
    reduce_axes = tuple(range(x.data.ndim - 1))
    return _make(
        xhat * gamma.data + beta.data,
        (x, lambda g: _norm_backward(g, gamma.data, xhat, inv_sigma, -1)),
        (gamma, lambda g: (g * xhat).sum(axis=reduce_axes)),
        (beta, lambda g: g.sum(axis=reduce_axes)),
    )


def batch_norm_train(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5):
    """Batch statistics over axis 0 of a (rows, features) input.

    Returns (output, batch_mean, batch_var); gradients flow through the
    statistics.
    """
    mu = x.data.mean(axis=0)
    var = x.data.var(axis=0)
    inv_sigma = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv_sigma
    out = _make(
        xhat * gamma.data + beta.data,
        (x, lambda g: _norm_backward(g, gamma.data, xhat, inv_sigma, 0)),
        (gamma, lambda g: (g * xhat).sum(axis=0)),
        (beta, lambda g: g.sum(axis=0)),
    )
    return out, mu, var


def linear(x: Tensor, weight: Tensor, bias: Tensor | None) -> Tensor:
    """x @ weight.T + bias with leading dims flattened to one GEMM each way."""
    lead = x.shape[:-1]
    x2 = x.data.reshape(-1, x.shape[-1])
    out = x2 @ weight.data.T
    if bias is not None:
        out = out + bias.data

    def vjp_x(g):
        return (g.reshape(-1, g.shape[-1]) @ weight.data).reshape(x.shape)

    def vjp_w(g):
        return g.reshape(-1, g.shape[-1]).T @ x2

    parents = [(x, vjp_x), (weight, vjp_w)]
    if bias is not None:
        parents.append((bias, lambda g: g.reshape(-1, g.shape[-1]).sum(axis=0)))
    return _make(out.reshape(lead + (weight.shape[0],)), *parents)
