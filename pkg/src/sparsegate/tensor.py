"""Minimal dense tensors with reverse-mode automatic differentiation.

Covers exactly what small MLPs and LeNet-style convnets need: matmul,
valid-padding stride-1 conv, 2x2 max pooling, relu, elementwise algebra,
bias add, and softmax cross-entropy. Storage is float32 by default;
reductions inside matmul/conv accumulate in float64. Tensors may be
built with ``dtype=np.float64`` to get a 64-bit shadow of the same
computation (used by the finite-difference checks).
"""

import numpy as np

from .backend import kernels as _kern
from . import _kernels_py as _kern_py


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class Tensor:
    """A dense array plus the bookkeeping needed for backprop.

    Leaf tensors created with ``requires_grad=True`` are the trainable
    parameters; everything else is produced by the ops below, which
    record their parents and a backward closure.
    """

    __slots__ = ("data", "requires_grad", "grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, dtype=None, name=None):
        self.data = np.asarray(data, dtype=dtype or np.float32)
        self.requires_grad = requires_grad
        self.grad = None
        self.name = name
        self._parents = ()
        self._backward = None

    @classmethod
    def _wrap(cls, data, parents, backward):
        t = cls.__new__(cls)
        t.data = data
        t.requires_grad = any(p.requires_grad for p in parents)
        t.grad = None
        t.name = None
        # Subgraphs that cannot receive gradient are pruned immediately.
        t._parents = tuple(parents) if t.requires_grad else ()
        t._backward = backward if t.requires_grad else None
        return t

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return float(self.data)

    def backward(self):
        return backward(self)

    def sum(self):
        return tensor_sum(self)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return ewise_mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __add__(self, other):
        if isinstance(other, Tensor):
            return add(self, other)
        return shift(self, float(other))

    __radd__ = __add__

    def __neg__(self):
        return scale(self, -1.0)

    def __sub__(self, other):
        if isinstance(other, Tensor):
            return add(self, -other)
        return shift(self, -float(other))

    def __rsub__(self, other):
        return shift(-self, float(other))


class GradGraph:
    """Topologically ordered view of the graph that reaches ``root``.

    Built once per backward pass; each node is visited exactly once, and
    the visit order depends only on graph construction order, so two
    passes over identical graphs produce bitwise-identical gradients.
    """

    def __init__(self, root):
        self.root = root
        self.nodes = []
        seen = set()
        stack = [(root, False)]
        while stack:
            t, done = stack.pop()
            if done:
                self.nodes.append(t)
                continue
            if id(t) in seen:
                continue
            seen.add(id(t))
            stack.append((t, True))
            for p in reversed(t._parents):
                stack.append((p, False))

    def run(self):
        """Propagate gradients from root and return {trainable leaf: grad}."""
        root = self.root
        if root.data.shape != ():
            raise ValueError(
                f"backward requires a scalar loss, got shape {root.data.shape}"
            )
        _accumulate(root, np.ones((), dtype=root.data.dtype))
        for t in reversed(self.nodes):
            if t._backward is None or t.grad is None:
                continue
            for p, g in zip(t._parents, t._backward(t.grad)):
                if g is not None and p.requires_grad:
                    _accumulate(p, g)
        return {
            t: t.grad for t in self.nodes if t.requires_grad and not t._parents
        }


def _accumulate(t, g):
    g = np.asarray(g, dtype=t.data.dtype)
    # Never add in place: backward closures may hand out aliased arrays.
    t.grad = g if t.grad is None else t.grad + g


def backward(loss):
    """Run reverse-mode AD from a scalar loss node.

    Returns a map from each trainable leaf tensor to its gradient; the
    same arrays are left on ``tensor.grad`` (accumulating across calls
    until the caller resets them).
    """
    return GradGraph(loss).run()


def _mm64(a, b):
    out = np.result_type(a, b)
    return (a.astype(np.float64, copy=False) @ b.astype(np.float64, copy=False)).astype(out)


# ---------------------------------------------------------------------------
# numpy-level forwards, shared with the sparse inference path


def conv2d_np(x, k):
    """Valid-padding stride-1 cross-correlation via im2col."""
    n, _, h, w = x.shape
    f, c, kh, kw = k.shape
    ho, wo = h - kh + 1, w - kw + 1
    cols = _im2col(x, kh, kw)
    km = k.reshape(f, c * kh * kw)
    y = _mm64_b(km, cols)  # (n, f, ho*wo)
    return y.reshape(n, f, ho, wo).astype(np.result_type(x, k))


def _im2col(x, kh, kw):
    n, c, h, w = x.shape
    ho, wo = h - kh + 1, w - kw + 1
    cols = np.empty((n, c, kh, kw, ho, wo), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = x[:, :, i : i + ho, j : j + wo]
    return cols.reshape(n, c * kh * kw, ho * wo)


def _col2im(dcols, c, h, w, kh, kw):
    n = dcols.shape[0]
    ho, wo = h - kh + 1, w - kw + 1
    dx = np.zeros((n, c, h, w), dtype=dcols.dtype)
    dc = dcols.reshape(n, c, kh, kw, ho, wo)
    for i in range(kh):
        for j in range(kw):
            dx[:, :, i : i + ho, j : j + wo] += dc[:, :, i, j]
    return dx


def _mm64_b(a, b):
    return a.astype(np.float64, copy=False) @ b.astype(np.float64, copy=False)


def _conv2d_grad_x(up, k, h, w):
    f, c, kh, kw = k.shape
    n = up.shape[0]
    km = k.reshape(f, c * kh * kw)
    up2 = up.reshape(n, f, -1)
    dcols = _mm64_b(km.T, up2)
    return _col2im(dcols, c, h, w, kh, kw).astype(up.dtype)


def _conv2d_grad_k(up, x, kh, kw):
    n, c = x.shape[0], x.shape[1]
    f = up.shape[1]
    cols = _im2col(x, kh, kw)
    up2 = up.reshape(n, f, -1).astype(np.float64, copy=False)
    dk = np.einsum("nfo,nco->fc", up2, cols.astype(np.float64, copy=False))
    return dk.reshape(f, c, kh, kw).astype(up.dtype)


# ---------------------------------------------------------------------------
# differentiable ops


def matmul(a, b):
    """Matrix product a[m,n] @ b[n,p], differentiable in both inputs."""
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(
            f"matmul: incompatible shapes {a.data.shape} and {b.data.shape}"
        )
    ad, bd = a.data, b.data

    def back(up):
        return _mm64(up, bd.T), _mm64(ad.T, up)

    return Tensor._wrap(_mm64(ad, bd), (a, b), back)


def transpose(a):
    if a.data.ndim != 2:
        raise ShapeError(f"transpose expects a matrix, got shape {a.data.shape}")

    def back(up):
        return (up.T,)

    return Tensor._wrap(a.data.T, (a,), back)


def conv2d(x, k):
    """Valid-padding stride-1 conv (cross-correlation, no kernel flip)."""
    if x.data.ndim != 4 or k.data.ndim != 4:
        raise ShapeError(
            f"conv2d expects 4-D input and kernel, got {x.data.shape} and {k.data.shape}"
        )
    n, c, h, w = x.data.shape
    f, kc, kh, kw = k.data.shape
    if kc != c:
        raise ShapeError(f"conv2d: channel mismatch between {x.data.shape} and {k.data.shape}")
    if kh > h or kw > w:
        raise ShapeError(
            f"conv2d: kernel {k.data.shape} larger than input {x.data.shape}"
        )
    xd, kd = x.data, k.data

    def back(up):
        return _conv2d_grad_x(up, kd, h, w), _conv2d_grad_k(up, xd, kh, kw)

    return Tensor._wrap(conv2d_np(xd, kd), (x, k), back)


def maxpool2(x):
    """2x2 stride-2 max pooling; gradient routes to the first max."""
    if x.data.ndim != 4:
        raise ShapeError(f"maxpool2 expects 4-D input, got shape {x.data.shape}")
    impl = _kern if x.data.dtype == np.float32 else _kern_py
    h, w = x.data.shape[2], x.data.shape[3]
    y, idx = impl.maxpool2_fwd(np.ascontiguousarray(x.data))

    def back(up):
        return (impl.maxpool2_bwd(np.ascontiguousarray(up), idx, h, w),)

    return Tensor._wrap(y, (x,), back)


def relu(x):
    xd = x.data

    def back(up):
        return (up * (xd > 0),)

    return Tensor._wrap(np.maximum(xd, 0), (x,), back)


def ewise_mul(a, b):
    """Elementwise (Hadamard) product of same-shape tensors."""
    if a.data.shape != b.data.shape:
        raise ShapeError(
            f"ewise_mul: shape mismatch {a.data.shape} vs {b.data.shape}"
        )
    ad, bd = a.data, b.data

    def back(up):
        return up * bd, up * ad

    return Tensor._wrap(ad * bd, (a, b), back)


def add(a, b):
    if a.data.shape != b.data.shape:
        raise ShapeError(f"add: shape mismatch {a.data.shape} vs {b.data.shape}")

    def back(up):
        return up, up

    return Tensor._wrap(a.data + b.data, (a, b), back)


def scale(a, s):
    def back(up):
        return (up * s,)

    return Tensor._wrap(a.data * np.asarray(s, dtype=a.data.dtype), (a,), back)


def shift(a, s):
    def back(up):
        return (up,)

    return Tensor._wrap(a.data + np.asarray(s, dtype=a.data.dtype), (a,), back)


def add_bias(x, b):
    """Add a per-feature bias along axis 1 of a 2-D or 4-D tensor."""
    if b.data.ndim != 1 or x.data.ndim not in (2, 4) or b.data.shape[0] != x.data.shape[1]:
        raise ShapeError(
            f"add_bias: bias {b.data.shape} does not fit input {x.data.shape}"
        )
    expand = (1, -1) if x.data.ndim == 2 else (1, -1, 1, 1)
    axes = (0,) if x.data.ndim == 2 else (0, 2, 3)

    def back(up):
        db = np.sum(up, axis=axes, dtype=np.float64).astype(b.data.dtype)
        return up, db

    return Tensor._wrap(x.data + b.data.reshape(expand), (x, b), back)


def reshape(x, shape):
    old = x.data.shape

    def back(up):
        return (up.reshape(old),)

    return Tensor._wrap(x.data.reshape(shape), (x,), back)


def tensor_sum(x):
    """Sum of all entries as a scalar node (float64 accumulation)."""
    out = np.asarray(np.sum(x.data, dtype=np.float64), dtype=x.data.dtype)
    shape = x.data.shape

    def back(up):
        return (np.full(shape, up, dtype=x.data.dtype),)

    return Tensor._wrap(out, (x,), back)


def softmax_xent(logits, labels):
    """Mean negative log-likelihood of integer class labels.

    Numerically stable for logit magnitudes well past 1e3 (log-sum-exp
    with max subtraction, computed in float64).
    """
    if logits.data.ndim != 2:
        raise ShapeError(f"softmax_xent expects 2-D logits, got {logits.data.shape}")
    y = np.asarray(labels)
    if not np.issubdtype(y.dtype, np.integer):
        raise TypeError(f"labels must be integers, got dtype {y.dtype}")
    n, k = logits.data.shape
    if y.shape != (n,):
        raise ShapeError(f"labels shape {y.shape} does not match batch of {n}")
    if y.size and (y.min() < 0 or y.max() >= k):
        raise IndexError(f"label out of range for {k} classes: {int(y.min())}..{int(y.max())}")
    z = logits.data.astype(np.float64, copy=False)
    m = z.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(z - m).sum(axis=1))
    nll = lse - z[np.arange(n), y]
    out = np.asarray(nll.mean(), dtype=logits.data.dtype)

    def back(up):
        p = np.exp(z - lse[:, None])
        p[np.arange(n), y] -= 1.0
        return ((p * (float(up) / n)).astype(logits.data.dtype),)

    return Tensor._wrap(out, (logits,), back)
