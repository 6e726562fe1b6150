"""Reverse-mode differentiation on a recorded tape of numpy operations.

Operations executed while a :class:`Tape` is active, and touching at least one
tensor with ``requires_grad``, are appended to the tape. Recording order is a
topological order, so ``Tape.backward`` just walks it in reverse.
"""
from __future__ import annotations

import numpy as np

_ACTIVE: list["Tape"] = []


class Tape:
    def __init__(self):
        self.nodes: list[Tensor] = []
        self._ids: set[int] = set()

    def __enter__(self):
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc):
        _ACTIVE.remove(self)
        return False

    def record(self, node: "Tensor") -> None:
        self.nodes.append(node)
        self._ids.add(id(node))

    def backward(self, loss: "Tensor", grad=None) -> None:
        """Accumulate d(loss)/d(leaf) into ``.grad`` of every leaf that requires it."""
        if id(loss) not in self._ids:
            raise RuntimeError("backward called for a tensor that was not produced on this tape")
        if grad is None:
            if loss.data.size != 1:
                raise ValueError("backward needs an explicit seed gradient for a non-scalar output")
            grad = np.ones_like(loss.data)
        for node in self.nodes:
            node.grad = None
        loss.grad = np.asarray(grad, dtype=np.float64)
        for node in reversed(self.nodes):
            if node.grad is not None:
                node._backward(node.grad)


def _active_tape():
    return _ACTIVE[-1] if _ACTIVE else None


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_backward", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._backward = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}{tag})"

    def _accum(self, g):
        if self.requires_grad:
            self.grad = g if self.grad is None else self.grad + g

    def zero_grad(self):
        self.grad = None

    def numpy(self) -> np.ndarray:
        return self.data

    # operator sugar
    def __add__(self, o):
        return add(self, o)

    __radd__ = __add__

    def __sub__(self, o):
        return sub(self, o)

    def __rsub__(self, o):
        return sub(o, self)

    def __mul__(self, o):
        return mul(self, o)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, o):
        return matmul(self, o)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None):
        return tsum(self, axis)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, parents, backward) -> Tensor:
    out = Tensor(data)
    tape = _active_tape()
    if tape is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._backward = backward
        tape.record(out)
    return out


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# elementwise -----------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        a._accum(_unbroadcast(g, a.shape))
        b._accum(_unbroadcast(g, b.shape))

    return _node(a.data + b.data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        a._accum(_unbroadcast(g, a.shape))
        b._accum(_unbroadcast(-g, b.shape))

    return _node(a.data - b.data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        a._accum(_unbroadcast(g * b.data, a.shape))
        b._accum(_unbroadcast(g * a.data, b.shape))

    return _node(a.data * b.data, (a, b), backward)


def square(a) -> Tensor:
    a = as_tensor(a)
    return _node(a.data * a.data, (a,), lambda g: a._accum(2.0 * a.data * g))


def exp(a) -> Tensor:
    a = as_tensor(a)
    y = np.exp(a.data)
    return _node(y, (a,), lambda g: a._accum(g * y))


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0  # subgradient 0 at the kink
    return _node(np.where(mask, a.data, 0.0), (a,), lambda g: a._accum(g * mask))


def tanhshrink(a) -> Tensor:
    """x - tanh(x)."""
    a = as_tensor(a)
    t = np.tanh(a.data)
    return _node(a.data - t, (a,), lambda g: a._accum(g * t * t))


# reductions and shape ------------------------------------------------------------

def tsum(a, axis=None) -> Tensor:
    a = as_tensor(a)

    def backward(g):
        if axis is None:
            a._accum(np.broadcast_to(g, a.shape).copy())
        else:
            a._accum(np.broadcast_to(np.expand_dims(g, axis), a.shape).copy())

    return _node(a.data.sum(axis=axis), (a,), backward)


def mean(a, axis=None) -> Tensor:
    a = as_tensor(a)
    n = a.data.size if axis is None else np.prod([a.shape[ax] for ax in np.atleast_1d(axis)])
    return mul(tsum(a, axis), 1.0 / n)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return _node(a.data.reshape(shape), (a,), lambda g: a._accum(g.reshape(a.shape)))


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    inv = None if axes is None else np.argsort(axes)
    return _node(np.transpose(a.data, axes), (a,), lambda g: a._accum(np.transpose(g, inv)))


def concat(tensors, axis=-1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    sizes = np.cumsum([t.shape[axis] for t in ts])[:-1]

    def backward(g):
        for t, piece in zip(ts, np.split(g, sizes, axis=axis)):
            t._accum(piece)

    return _node(np.concatenate([t.data for t in ts], axis=axis), ts, backward)


# linear algebra ---------------------------------------------------------------------

def matmul(a, b) -> Tensor:
    """Batched matrix product with numpy broadcasting on leading axes (both operands >= 2-D)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul operands must be at least 2-D")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")

    def backward(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape))

    return _node(a.data @ b.data, (a, b), backward)


def linear(x, W, b=None) -> Tensor:
    """x @ W.T (+ b) for x of shape (B, in) and W of shape (out, in)."""
    x, W = as_tensor(x), as_tensor(W)
    if x.shape[-1] != W.shape[1]:
        raise ValueError(f"dense layer expects {W.shape[1]} input features, got {x.shape[-1]}")
    y = x.data @ W.data.T
    parents = (x, W)
    if b is not None:
        b = as_tensor(b)
        y = y + b.data
        parents = (x, W, b)

    def backward(g):
        if x.requires_grad:
            x._accum(g @ W.data)
        if W.requires_grad:
            W._accum(g.T @ x.data)
        if b is not None and b.requires_grad:
            b._accum(g.sum(axis=0))

    return _node(y, parents, backward)


# fused layer kernels ------------------------------------------------------------------

def trconv2d(x, W, b, stride: int) -> Tensor:
    """Transpose convolution without padding.

    x: (B, Cin, H, W); W: (Cin, Cout, n, n); b: (Cout,).
    Output spatial extent per axis is (in - 1) * stride + n.
    """
    x, W, b = as_tensor(x), as_tensor(W), as_tensor(b)
    B, Cin, H, Wd = x.shape
    if W.shape[0] != Cin:
        raise ValueError(f"transpose conv expects {W.shape[0]} input channels, got {Cin}")
    _, Cout, n, _ = W.shape
    s = stride
    Ho, Wo = (H - 1) * s + n, (Wd - 1) * s + n
    # channels-last internally; overlapping taps are computed tap-major so each
    # accumulation reads one contiguous (B, H, W, Cout) block
    xf = x.data.transpose(0, 2, 3, 1).reshape(B * H * Wd, Cin)
    hs, ws = (H - 1) * s + 1, (Wd - 1) * s + 1
    if s == n:
        Wf = W.data.transpose(0, 2, 3, 1).reshape(Cin, n * n * Cout)
        cols = (xf @ Wf).reshape(B, H, Wd, n, n, Cout)
        out = cols.transpose(0, 1, 3, 2, 4, 5).reshape(B, Ho, Wo, Cout)
    else:
        Wt = np.ascontiguousarray(W.data.transpose(2, 3, 0, 1).reshape(n * n, Cin, Cout))
        cols = np.matmul(xf, Wt).reshape(n, n, B, H, Wd, Cout)
        out = np.zeros((B, Ho, Wo, Cout))
        for p in range(n):
            for r in range(n):
                out[:, p:p + hs:s, r:r + ws:s, :] += cols[p, r]
    out = out + b.data
    out = np.ascontiguousarray(out.transpose(0, 3, 1, 2))

    def backward(g):
        gl = g.transpose(0, 2, 3, 1)
        if s == n:
            gcols = gl.reshape(B, H, n, Wd, n, Cout).transpose(0, 1, 3, 2, 4, 5)
            gf = gcols.reshape(B * H * Wd, n * n * Cout)
            if x.requires_grad:
                x._accum((gf @ Wf.T).reshape(B, H, Wd, Cin).transpose(0, 3, 1, 2))
            if W.requires_grad:
                W._accum((xf.T @ gf).reshape(Cin, n, n, Cout).transpose(0, 3, 1, 2))
        else:
            gl = np.ascontiguousarray(gl)
            gcols = np.empty((n, n, B, H, Wd, Cout))
            for p in range(n):
                for r in range(n):
                    gcols[p, r] = gl[:, p:p + hs:s, r:r + ws:s, :]
            gcols = gcols.reshape(n * n, B * H * Wd, Cout)
            if x.requires_grad:
                gx = np.matmul(gcols, Wt.transpose(0, 2, 1)).sum(axis=0)
                x._accum(gx.reshape(B, H, Wd, Cin).transpose(0, 3, 1, 2))
            if W.requires_grad:
                gW = np.matmul(xf.T, gcols).reshape(n, n, Cin, Cout)
                W._accum(gW.transpose(2, 3, 0, 1))
        if b.requires_grad:
            b._accum(g.sum(axis=(0, 2, 3)))

    return _node(out, (x, W, b), backward)


def batchnorm(x, gamma, beta, running_mean, running_var, training: bool,
              momentum: float = 0.1, eps: float = 1e-5) -> Tensor:
    """Per-channel normalization over every axis except axis 1.

    In training mode batch statistics are used and the running buffers
    (numpy arrays) are updated in place; in eval mode the running statistics are
    used, which makes the layer an affine map.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    axes = tuple(i for i in range(x.ndim) if i != 1)
    bshape = [1] * x.ndim
    bshape[1] = x.shape[1]
    if training:
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        running_mean *= 1 - momentum
        running_mean += momentum * mu
        running_var *= 1 - momentum
        running_var += momentum * var
    else:
        mu, var = running_mean, running_var
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu.reshape(bshape)) * inv.reshape(bshape)
    y = gamma.data.reshape(bshape) * xhat + beta.data.reshape(bshape)
    m = x.data.size // x.shape[1]

    def backward(g):
        if gamma.requires_grad:
            gamma._accum((g * xhat).sum(axis=axes))
        if beta.requires_grad:
            beta._accum(g.sum(axis=axes))
        if x.requires_grad:
            gx_hat = g * gamma.data.reshape(bshape)
            if training:
                s1 = gx_hat.sum(axis=axes, keepdims=True)
                s2 = (gx_hat * xhat).sum(axis=axes, keepdims=True)
                gx = inv.reshape(bshape) / m * (m * gx_hat - s1 - xhat * s2)
            else:
                gx = gx_hat * inv.reshape(bshape)
            x._accum(gx)

    return _node(y, (x, gamma, beta), backward)


def rbf(x, centers, widths) -> Tensor:
    """y_i = exp(-|x - c_i|^2 / sigma_i^2) for x (N, d), centers (m, d), widths (m,)."""
    x, c, s = as_tensor(x), as_tensor(centers), as_tensor(widths)
    diff = x.data[:, None, :] - c.data[None, :, :]  # (N, m, d)
    d2 = np.einsum("nmd,nmd->nm", diff, diff)
    s2 = s.data * s.data
    y = np.exp(-d2 / s2)

    def backward(g):
        gy = g * y
        if x.requires_grad:
            x._accum(np.einsum("nm,nmd->nd", gy * (-2.0 / s2), diff))
        if c.requires_grad:
            c._accum(np.einsum("nm,nmd->md", gy * (2.0 / s2), diff))
        if s.requires_grad:
            s._accum((gy * d2).sum(axis=0) * 2.0 / (s2 * s.data))

    return _node(y, (x, c, s), backward)
