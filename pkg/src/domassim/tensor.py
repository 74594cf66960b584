"""Dense float32 tensors with reverse-mode automatic differentiation.

The graph is implicit: every op result keeps references to its parents and a
closure mapping the output gradient to parent gradients. ``Tensor.backward``
walks the graph once in reverse topological order and accumulates into the
``grad`` of leaf tensors.
"""
from __future__ import annotations

import contextlib
from typing import Iterable, Optional, Sequence

import numpy as np

from . import kernels

DTYPE = np.float32

_grad_enabled = True


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _is_basic_index(idx) -> bool:
    if not isinstance(idx, tuple):
        idx = (idx,)
    return all(isinstance(i, (slice, int, type(None), type(Ellipsis))) for i in idx)


class Tensor:
    __array_priority__ = 100
    __array_ufunc__ = None

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=DTYPE)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._parents: tuple = ()
        self._backward = None
        self._op = ""

    # ------------------------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __len__(self):
        return self.shape[0]

    # ------------------------------------------------------------------
    def backward(self, grad=None):
        """Accumulate d(self)/d(leaf) into every reachable leaf's ``grad``."""
        if grad is None:
            if self.data.size != 1:
                raise ShapeError(f"backward() needs a scalar loss, got shape {self.shape}")
            grad = np.ones_like(self.data)
        else:
            grad = np.asarray(grad, dtype=DTYPE).reshape(self.shape)

        order, seen = [], set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))

        grads = {id(self): grad}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for p, pg in zip(node._parents, node._backward(g)):
                if pg is None or not p.requires_grad:
                    continue
                pg = _unbroadcast(np.asarray(pg, dtype=DTYPE), p.shape)
                if id(p) in grads:
                    grads[id(p)] = grads[id(p)] + pg
                else:
                    grads[id(p)] = pg

    # ------------------------------------------------------------------
    # arithmetic
    def __add__(self, other):
        other = as_tensor(other)
        return _op(self.data + other.data, (self, other), lambda g: (g, g), "add")

    __radd__ = __add__

    def __sub__(self, other):
        other = as_tensor(other)
        return _op(self.data - other.data, (self, other), lambda g: (g, -g), "sub")

    def __rsub__(self, other):
        return as_tensor(other) - self

    def __mul__(self, other):
        other = as_tensor(other)
        a, b = self.data, other.data
        return _op(a * b, (self, other), lambda g: (g * b, g * a), "mul")

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = as_tensor(other)
        a, b = self.data, other.data
        return _op(a / b, (self, other), lambda g: (g / b, -g * a / (b * b)), "div")

    def __rtruediv__(self, other):
        return as_tensor(other) / self

    def __neg__(self):
        return _op(-self.data, (self,), lambda g: (-g,), "neg")

    def __pow__(self, k):
        if isinstance(k, Tensor):
            raise TypeError("only scalar exponents are supported")
        a = self.data
        return _op(a ** k, (self,), lambda g: (g * k * a ** (k - 1),), "pow")

    def __matmul__(self, other):
        other = as_tensor(other)
        a, b = self.data, other.data
        if a.ndim < 2 or b.ndim < 2:
            raise ShapeError("matmul operands must be at least 2-D")
        if a.shape[-1] != b.shape[-2]:
            raise ShapeError(f"matmul inner dims differ: {a.shape[-1]} vs {b.shape[-2]}")

        def bw(g):
            return g @ np.swapaxes(b, -1, -2), np.swapaxes(a, -1, -2) @ g
        return _op(a @ b, (self, other), bw, "matmul")

    # ------------------------------------------------------------------
    # elementwise
    def exp(self):
        out = np.exp(self.data)
        return _op(out, (self,), lambda g: (g * out,), "exp")

    def log(self):
        a = self.data
        return _op(np.log(a), (self,), lambda g: (g / a,), "log")

    def sqrt(self):
        out = np.sqrt(self.data)
        return _op(out, (self,), lambda g: (g * 0.5 / out,), "sqrt")

    def abs(self):
        s = np.sign(self.data)
        return _op(np.abs(self.data), (self,), lambda g: (g * s,), "abs")

    __abs__ = abs

    def relu(self):
        mask = self.data > 0
        return _op(self.data * mask, (self,), lambda g: (g * mask,), "relu")

    def sigmoid(self):
        out = (1.0 / (1.0 + np.exp(-self.data))).astype(DTYPE)
        return _op(out, (self,), lambda g: (g * out * (1.0 - out),), "sigmoid")

    def clip(self, lo, hi):
        inside = (self.data >= lo) & (self.data <= hi)
        return _op(np.clip(self.data, lo, hi), (self,), lambda g: (g * inside,), "clip")

    # ------------------------------------------------------------------
    # reductions and shape
    def sum(self, axis=None, keepdims=False):
        shape = self.shape

        def bw(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, shape),)
        return _op(self.data.sum(axis=axis, keepdims=keepdims), (self,), bw, "sum")

    def mean(self, axis=None, keepdims=False):
        n = self.data.size if axis is None else int(np.prod([self.shape[a] for a in np.atleast_1d(axis)]))
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def max(self, axis=None, keepdims=False):
        """Maximum; the gradient goes to the first maximal element only."""
        a = self.data
        if axis is None:
            flat = int(np.argmax(a))
            out = a.reshape(-1)[flat]

            def bw(g):
                full = np.zeros(a.size, dtype=DTYPE)
                full[flat] = np.asarray(g).reshape(())
                return (full.reshape(a.shape),)
            if keepdims:
                out = out.reshape((1,) * a.ndim)
            return _op(np.asarray(out), (self,), bw, "max")
        idx = np.expand_dims(np.argmax(a, axis=axis), axis)
        out = np.take_along_axis(a, idx, axis=axis)

        def bw(g):
            full = np.zeros_like(a)
            gg = g if keepdims else np.expand_dims(g, axis)
            np.put_along_axis(full, idx, gg, axis=axis)
            return (full,)
        return _op(out if keepdims else out.squeeze(axis), (self,), bw, "max")

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        orig = self.shape
        return _op(self.data.reshape(shape), (self,), lambda g: (g.reshape(orig),), "reshape")

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        if not axes:
            axes = tuple(reversed(range(self.ndim)))
        inv = np.argsort(axes)
        return _op(self.data.transpose(axes), (self,), lambda g: (g.transpose(inv),), "transpose")

    @property
    def T(self):
        return self.transpose()

    def __getitem__(self, idx):
        if isinstance(idx, Tensor):
            idx = idx.data.astype(np.int64)
        shape = self.shape
        basic = _is_basic_index(idx)

        def bw(g):
            full = np.zeros(shape, dtype=DTYPE)
            if basic:
                full[idx] += g
            else:
                np.add.at(full, idx, g)
            return (full,)
        return _op(self.data[idx], (self,), bw, "getitem")


def _op(data, parents, backward, name) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
        out._op = name
    return out


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def tensor(data, requires_grad=False) -> Tensor:
    return Tensor(np.array(data, dtype=DTYPE), requires_grad=requires_grad)


def zeros(shape, requires_grad=False) -> Tensor:
    return Tensor(np.zeros(shape, dtype=DTYPE), requires_grad=requires_grad)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]

    def bw(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))
    return _op(np.stack([t.data for t in tensors], axis=axis), tuple(tensors), bw, "stack")


def concatenate(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    cuts = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _op(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors),
               lambda g: tuple(np.split(g, cuts, axis=axis)), "concat")


def where(cond, a, b) -> Tensor:
    cond = np.asarray(cond, dtype=bool)
    a, b = as_tensor(a), as_tensor(b)
    return _op(np.where(cond, a.data, b.data), (a, b),
               lambda g: (g * cond, g * ~cond), "where")


# --------------------------------------------------------------------------
# layer primitives
# --------------------------------------------------------------------------

def _check_rank(t: Tensor, rank: int, what: str):
    if t.ndim != rank:
        raise ShapeError(f"{what} must be rank {rank}, got shape {t.shape}")


def _conv_out(n, k, stride, pad, axis):
    if k > n + 2 * pad:
        raise ShapeError(f"kernel larger than padded input along {axis} ({k} > {n + 2 * pad})")
    return (n + 2 * pad - k) // stride + 1


def _pad(x, pad):
    if pad == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))


def _correlate(x, w, stride, pad):
    """Forward 2-D cross-correlation on raw arrays. Returns (out, cols)."""
    n, _, h, wd = x.shape
    cout, _, kh, kw = w.shape
    ho = _conv_out(h, kh, stride, pad, "height")
    wo = _conv_out(wd, kw, stride, pad, "width")
    cols = kernels.im2col(_pad(x, pad), kh, kw, stride)
    out = cols.reshape(n * ho * wo, -1) @ w.reshape(cout, -1).T
    return out.reshape(n, ho, wo, cout).transpose(0, 3, 1, 2), cols


def _scatter(g, w, in_shape, stride, pad):
    """Adjoint of ``_correlate`` w.r.t. its input."""
    n, cin, h, wd = in_shape
    cout, _, kh, kw = w.shape
    _, _, ho, wo = g.shape
    dcols = g.transpose(0, 2, 3, 1).reshape(-1, cout) @ w.reshape(cout, -1)
    dcols = dcols.reshape(n, ho, wo, cin, kh, kw)
    full = kernels.col2im(dcols, h + 2 * pad, wd + 2 * pad, stride)
    if pad:
        full = full[:, :, pad:pad + h, pad:pad + wd]
    return full


def conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation, input (N,Cin,H,W), kernel (Cout,Cin,kh,kw)."""
    _check_rank(x, 4, "conv2d input")
    _check_rank(weight, 4, "conv2d kernel")
    if stride < 1:
        raise ShapeError("stride must be >= 1")
    if x.shape[1] != weight.shape[1]:
        raise ShapeError(f"channel axis mismatch: input has {x.shape[1]}, kernel expects {weight.shape[1]}")
    xd, wd = x.data, weight.data
    out, cols = _correlate(xd, wd, stride, padding)
    parents = (x, weight)
    if bias is not None:
        out = out + bias.data.reshape(1, -1, 1, 1)
        parents = (x, weight, bias)

    def bw(g):
        gx = _scatter(g, wd, xd.shape, stride, padding) if x.requires_grad else None
        gw = None
        if weight.requires_grad:
            cout = wd.shape[0]
            gw = (g.transpose(1, 0, 2, 3).reshape(cout, -1) @ cols.reshape(-1, wd[0].size)).reshape(wd.shape)
        grads = (gx, gw)
        if bias is not None:
            grads += (g.sum(axis=(0, 2, 3)),)
        return grads
    return _op(np.ascontiguousarray(out, dtype=DTYPE), parents, bw, "conv2d")


def conv_transpose2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None, stride: int = 1,
                     padding: int = 0) -> Tensor:
    """Transposed convolution, kernel (Cin,Cout,kh,kw).

    Output size is (H-1)*stride - 2*padding + kh; the map is the adjoint of
    ``conv2d`` with the same kernel.
    """
    _check_rank(x, 4, "conv_transpose2d input")
    _check_rank(weight, 4, "conv_transpose2d kernel")
    if stride < 1:
        raise ShapeError("stride must be >= 1")
    if x.shape[1] != weight.shape[0]:
        raise ShapeError(f"channel axis mismatch: input has {x.shape[1]}, kernel expects {weight.shape[0]}")
    xd, wd = x.data, weight.data
    n, _, h, w_ = xd.shape
    _, cout, kh, kw = wd.shape
    ho = (h - 1) * stride - 2 * padding + kh
    wo = (w_ - 1) * stride - 2 * padding + kw
    if ho < 1 or wo < 1:
        raise ShapeError(f"transposed conv output would be empty ({ho}x{wo})")
    out = _scatter(xd, wd, (n, cout, ho, wo), stride, padding)
    parents = (x, weight)
    if bias is not None:
        out = out + bias.data.reshape(1, -1, 1, 1)
        parents = (x, weight, bias)

    def bw(g):
        gx, cols = _correlate(g, wd, stride, padding)
        gw = None
        if weight.requires_grad:
            cin = wd.shape[0]
            gw = (xd.transpose(1, 0, 2, 3).reshape(cin, -1) @ cols.reshape(-1, wd[0].size)).reshape(wd.shape)
        grads = (gx, gw)
        if bias is not None:
            grads += (g.sum(axis=(0, 2, 3)),)
        return grads
    return _op(np.ascontiguousarray(out, dtype=DTYPE), parents, bw, "conv_transpose2d")


def max_pool2d(x: Tensor, window: int = 2, stride: Optional[int] = None):
    """Max pooling. Returns ``(out, argmax)`` with argmax as flat H*W indices."""
    _check_rank(x, 4, "max_pool2d input")
    stride = window if stride is None else stride
    _, _, h, w = x.shape
    if window > h or window > w:
        raise ShapeError(f"pool window {window} exceeds spatial dims {h}x{w}")
    out, arg = kernels.maxpool_forward(x.data, window, stride)
    t = _op(out, (x,), lambda g: (kernels.maxpool_backward(g, arg, h, w),), "max_pool2d")
    return t, arg


def batch_norm2d(x: Tensor, gamma: Tensor, beta: Tensor, running_mean: np.ndarray, running_var: np.ndarray,
                 training: bool, eps: float = 1e-5, momentum: float = 0.1) -> Tensor:
    """Per-channel batch normalisation. Running stats are updated in place."""
    _check_rank(x, 4, "batch_norm2d input")
    xd = x.data
    c = xd.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"channel axis mismatch: input has {c} channels, affine params {gamma.shape}")
    g_ = gamma.data.reshape(1, c, 1, 1)
    if training:
        m = xd.shape[0] * xd.shape[2] * xd.shape[3]
        if m < 2:
            raise ValueError("degenerate batch: batch_norm2d needs N*H*W >= 2 in training mode")
        mean = xd.mean(axis=(0, 2, 3), dtype=np.float64).astype(DTYPE)
        var = ((xd - mean.reshape(1, c, 1, 1)) ** 2).mean(axis=(0, 2, 3), dtype=np.float64).astype(DTYPE)
        running_mean *= (1 - momentum)
        running_mean += momentum * mean
        running_var *= (1 - momentum)
        running_var += momentum * var * (m / (m - 1))
    else:
        mean, var = running_mean.astype(DTYPE), running_var.astype(DTYPE)
    inv = (1.0 / np.sqrt(var + eps)).astype(DTYPE).reshape(1, c, 1, 1)
    xhat = (xd - mean.reshape(1, c, 1, 1)) * inv
    out = xhat * g_ + beta.data.reshape(1, c, 1, 1)

    def bw(g):
        gxhat = g * g_
        if training:
            m = xd.shape[0] * xd.shape[2] * xd.shape[3]
            s1 = gxhat.sum(axis=(0, 2, 3), keepdims=True)
            s2 = (gxhat * xhat).sum(axis=(0, 2, 3), keepdims=True)
            gx = inv / m * (m * gxhat - s1 - xhat * s2)
        else:
            gx = gxhat * inv
        return gx, (g * xhat).sum(axis=(0, 2, 3)), g.sum(axis=(0, 2, 3))
    return _op(out.astype(DTYPE), (x, gamma, beta), bw, "batch_norm2d")


def dense(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """Affine map ``x @ weight.T + bias`` with weight (Dout, Din)."""
    _check_rank(x, 2, "dense input")
    if x.shape[1] != weight.shape[1]:
        raise ShapeError(f"feature axis mismatch: input has {x.shape[1]}, weight expects {weight.shape[1]}")
    out = x @ weight.T
    return out + bias if bias is not None else out


def relu(x: Tensor) -> Tensor:
    return x.relu()


def sigmoid(x: Tensor) -> Tensor:
    return x.sigmoid()


def dropout(x: Tensor, p: float, training: bool, rng=None) -> Tensor:
    """Inverted dropout; ``rng`` is a numpy Generator or an int seed."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must lie in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    mask = (rng.random(x.shape) >= p).astype(DTYPE) / DTYPE(1.0 - p)
    return x * mask


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under softmax(logits)."""
    _check_rank(logits, 2, "logits")
    labels = np.asarray(labels, dtype=np.int64)
    n, k = logits.shape
    if labels.shape != (n,):
        raise ShapeError(f"labels shape {labels.shape} does not match batch size {n}")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ValueError(f"label out of range [0, {k})")
    z = logits.data.astype(np.float64)
    z = z - z.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    loss = (lse - z[np.arange(n), labels]).mean()
    probs = np.exp(z - lse[:, None])

    def bw(g):
        d = probs.copy()
        d[np.arange(n), labels] -= 1.0
        return (d * (float(g) / n),)
    return _op(np.asarray(loss, dtype=DTYPE), (logits,), bw, "softmax_cross_entropy")


# --------------------------------------------------------------------------
# optimiser
# --------------------------------------------------------------------------

def adam_step(params: Sequence[np.ndarray], grads: Sequence[Optional[np.ndarray]], state: dict, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """One in-place Adam update of ``params``; ``state`` holds t, m and v."""
    if "m" not in state:
        state["t"] = 0
        state["m"] = [np.zeros_like(p) for p in params]
        state["v"] = [np.zeros_like(p) for p in params]
    state["t"] += 1
    t = state["t"]
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for p, g, m, v in zip(params, grads, state["m"], state["v"]):
        if g is None:
            continue
        if g.shape != p.shape or m.shape != p.shape:
            raise ShapeError(f"optimizer state shape {m.shape} / grad {g.shape} vs param {p.shape}")
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p -= (lr * (m / c1) / (np.sqrt(v / c2) + eps)).astype(p.dtype)


class Adam:
    def __init__(self, params: Iterable[Tensor], lr: float = 1e-4, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.state: dict = {}

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        adam_step([p.data for p in self.params], [p.grad for p in self.params], self.state,
                  self.lr, self.betas[0], self.betas[1], self.eps)
