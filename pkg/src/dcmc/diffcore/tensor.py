"""Dense float64 tensors with a tape-free reverse-mode graph.

Every primitive returns a new :class:`Tensor` that remembers its parents and
a closure propagating the output adjoint back to them.  Nodes that do not
depend on any trainable input are not recorded, so evaluation-mode passes
cost nothing beyond the forward arithmetic.
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np


class ShapeError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, _parents: tuple = (), op: str = ""):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward: Callable[[np.ndarray], None] | None = None
        self.op = op

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op!r}, requires_grad={self.requires_grad})"

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    def backward(self, grad: np.ndarray | None = None) -> None:
        """Accumulate d(self)/d(leaf) into ``.grad`` of every upstream tensor."""
        if grad is None:
            if self.data.size != 1:
                raise ShapeError("backward() without a seed needs a scalar output")
            grad = np.ones_like(self.data)
        order = _topological_order(self)
        for node in order:
            if node is not self and node._parents:
                node.grad = None
        self._accumulate(grad)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # operator sugar; each maps onto one primitive below
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other):
        return add(as_tensor(other), neg(self))

    def __neg__(self):
        return neg(self)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return mul_scalar(self, float(other))

    __rmul__ = __mul__

    def __truediv__(self, other: float):
        return mul_scalar(self, 1.0 / float(other))

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
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
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def _result(data: np.ndarray, parents: Sequence[Tensor], backward, op: str) -> Tensor:
    if not np.all(np.isfinite(data)):
        raise NonFiniteError(f"non-finite output from {op}")
    live = tuple(p for p in parents if p.requires_grad)
    if not live:
        return Tensor(data, op=op)
    out = Tensor(data, requires_grad=True, _parents=live, op=op)
    out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# --------------------------------------------------------------------------
# primitives
# --------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: {a.shape} @ {b.shape}")

    def backward(g):
        if a.requires_grad:
            a._accumulate(g @ b.data.T)
        if b.requires_grad:
            b._accumulate(a.data.T @ g)

    return _result(a.data @ b.data, (a, b), backward, "matmul")


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data + b.data
    except ValueError as exc:
        raise ShapeError(f"add: {a.shape} + {b.shape}") from exc

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return _result(data, (a, b), backward, "add")


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Element-wise product with broadcasting."""
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data * b.data
    except ValueError as exc:
        raise ShapeError(f"mul: {a.shape} * {b.shape}") from exc

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return _result(data, (a, b), backward, "mul")


def mul_scalar(a: Tensor, c: float) -> Tensor:
    a = as_tensor(a)

    def backward(g):
        a._accumulate(g * c)

    return _result(a.data * c, (a,), backward, "mul_scalar")


def neg(a: Tensor) -> Tensor:
    a = as_tensor(a)

    def backward(g):
        a._accumulate(-g)

    return _result(-a.data, (a,), backward, "neg")


def transpose(a: Tensor) -> Tensor:
    a = as_tensor(a)

    def backward(g):
        a._accumulate(g.T)

    return _result(a.data.T.copy(), (a,), backward, "transpose")


def relu(a: Tensor) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0

    def backward(g):
        a._accumulate(g * mask)

    return _result(np.where(mask, a.data, 0.0), (a,), backward, "relu")


def minimum(a: Tensor, c: float) -> Tensor:
    """Clamp from above at ``c``; the gradient is cut where clamping is active."""
    a = as_tensor(a)
    keep = a.data <= c

    def backward(g):
        a._accumulate(g * keep)

    return _result(np.where(keep, a.data, c), (a,), backward, "minimum")


def softmax_rows(a: Tensor) -> Tensor:
    a = as_tensor(a)
    if a.data.ndim != 2:
        raise ShapeError(f"softmax_rows expects a matrix, got {a.shape}")
    z = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=1, keepdims=True)

    def backward(g):
        a._accumulate(s * (g - (g * s).sum(axis=1, keepdims=True)))

    return _result(s, (a,), backward, "softmax_rows")


def log(a: Tensor, floor: float = 0.0) -> Tensor:
    """Natural log; inputs below ``floor`` are clamped (zero gradient there)."""
    a = as_tensor(a)
    clamped = a.data < floor if floor > 0 else np.zeros(a.shape, dtype=bool)
    x = np.where(clamped, floor, a.data)
    with np.errstate(divide="ignore"):
        out = np.log(x)

    def backward(g):
        a._accumulate(np.where(clamped, 0.0, g / x))

    return _result(out, (a,), backward, "log")


def sum(a: Tensor, axis: int | None = None) -> Tensor:  # noqa: A001
    a = as_tensor(a)

    def backward(g):
        if axis is None:
            a._accumulate(np.broadcast_to(g, a.shape))
        else:
            a._accumulate(np.broadcast_to(np.expand_dims(g, axis), a.shape))

    return _result(np.asarray(a.data.sum(axis=axis)), (a,), backward, "sum")


def mse(a: Tensor, b, mask: np.ndarray | None = None) -> Tensor:
    """Mean of squared differences, optionally over the cells where ``mask`` is set."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"mse: {a.shape} vs {b.shape}")
    w = np.ones(a.shape) if mask is None else np.asarray(mask, dtype=np.float64)
    count = w.sum()
    if count == 0:
        return Tensor(0.0)
    diff = (a.data - b.data) * w
    value = np.asarray((diff * diff).sum() / count)

    def backward(g):
        d = (2.0 / count) * diff * g
        if a.requires_grad:
            a._accumulate(d)
        if b.requires_grad:
            b._accumulate(-d)

    return _result(value, (a, b), backward, "mse")


def take_rows(a: Tensor, idx) -> Tensor:
    a = as_tensor(a)
    idx = np.asarray(idx, dtype=np.intp)

    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        a._accumulate(full)

    return _result(a.data[idx], (a,), backward, "take_rows")


def take2d(a: Tensor, rows, cols) -> Tensor:
    """``a[rows[:, None], cols[None, :]]``; index arrays may repeat."""
    a = as_tensor(a)
    rows = np.asarray(rows, dtype=np.intp)
    cols = np.asarray(cols, dtype=np.intp)
    ix = np.ix_(rows, cols)

    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, ix, g)
        a._accumulate(full)

    return _result(a.data[ix], (a,), backward, "take2d")


def pick(a: Tensor, cols) -> Tensor:
    """One entry per row: ``a[k, cols[k]]``."""
    a = as_tensor(a)
    cols = np.asarray(cols, dtype=np.intp)
    rows = np.arange(a.shape[0])

    def backward(g):
        full = np.zeros_like(a.data)
        full[rows, cols] = g
        a._accumulate(full)

    return _result(a.data[rows, cols], (a,), backward, "pick")


def batchnorm(
    x: Tensor,
    scale: Tensor,
    shift: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.9,
    eps: float = 1e-5,
    update_stats: bool = True,
) -> Tensor:
    """Per-feature normalisation over the batch axis.

    In training mode the batch statistics normalise the input and, when
    ``update_stats`` is set, are folded into the running buffers in place
    (``running = momentum * running + (1 - momentum) * batch``).  In
    evaluation mode the running buffers are used and the op is affine.
    """
    x, scale, shift = as_tensor(x), as_tensor(scale), as_tensor(shift)
    if x.data.ndim != 2 or x.shape[1] != scale.shape[-1]:
        raise ShapeError(f"batchnorm: input {x.shape}, scale {scale.shape}")
    if training:
        mu = x.data.mean(axis=0)
        var = x.data.var(axis=0)
        if update_stats:
            running_mean *= momentum
            running_mean += (1.0 - momentum) * mu
            running_var *= momentum
            running_var += (1.0 - momentum) * var
    else:
        mu, var = running_mean, running_var
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out = xhat * scale.data + shift.data

    def backward(g):
        if scale.requires_grad:
            scale._accumulate((g * xhat).sum(axis=0).reshape(scale.shape))
        if shift.requires_grad:
            shift._accumulate(g.sum(axis=0).reshape(shift.shape))
        if x.requires_grad:
            gx = g * scale.data
            if training:
                n = x.shape[0]
                gx = inv / n * (n * gx - gx.sum(axis=0) - xhat * (gx * xhat).sum(axis=0))
            else:
                gx = gx * inv
            x._accumulate(gx)

    return _result(out, (x, scale, shift), backward, "batchnorm")


def dropout(x: Tensor, rate: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    """Inverted dropout: survivors are divided by the keep probability."""
    x = as_tensor(x)
    if not training or rate == 0.0:
        return x
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
    keep = 1.0 - rate
    mask = (rng.random(x.shape) < keep) / keep

    def backward(g):
        x._accumulate(g * mask)

    return _result(x.data * mask, (x,), backward, "dropout")


def cosine_rows(x: Tensor, eps: float = 1e-8) -> Tensor:
    """Pairwise cosine similarity between the rows of ``x``.

    Row norms are clamped below at ``eps``.  The output is symmetrised and
    its diagonal pinned to 1 (self-similarity), which is also where the
    gradient of a unit-norm row's self-cosine vanishes.
    """
    x = as_tensor(x)
    if x.data.ndim != 2:
        raise ShapeError(f"cosine_rows expects a matrix, got {x.shape}")
    raw = np.sqrt((x.data * x.data).sum(axis=1))
    clamped = raw < eps
    norms = np.where(clamped, eps, raw)
    xn = x.data / norms[:, None]
    c = xn @ xn.T
    c = 0.5 * (c + c.T)
    np.fill_diagonal(c, 1.0)

    def backward(g):
        gs = 0.5 * (g + g.T)
        np.fill_diagonal(gs, 0.0)
        gxn = 2.0 * gs @ xn
        radial = (xn * gxn).sum(axis=1, keepdims=True)
        gx = np.where(clamped[:, None], gxn, gxn - xn * radial) / norms[:, None]
        x._accumulate(gx)

    return _result(c, (x,), backward, "cosine_rows")


def bilinear_form(u: Tensor, B: Tensor, v: Tensor) -> Tensor:
    """``u_k^T B^l v_k`` for every row k and every slice l of ``B``.

    Shapes: u, v are (k, d) and B is (p, d, d), giving (k, p).  With 1-D
    ``u``/``v`` and a single (d, d) matrix the result is a scalar.
    """
    u, B, v = as_tensor(u), as_tensor(B), as_tensor(v)
    squeeze_rows = u.data.ndim == 1
    squeeze_labels = B.data.ndim == 2
    ud = np.atleast_2d(u.data)
    vd = np.atleast_2d(v.data)
    Bd = B.data[None] if squeeze_labels else B.data
    if ud.shape != vd.shape or Bd.shape[1:] != (ud.shape[1], vd.shape[1]):
        raise ShapeError(f"bilinear_form: u {u.shape}, B {B.shape}, v {v.shape}")
    k, d = ud.shape
    p = Bd.shape[0]
    e = vd.shape[1]
    # (k, d) @ (d, p*e) -> (k, p, e), then contract with v per row
    ub = (ud @ Bd.transpose(1, 0, 2).reshape(d, p * e)).reshape(k, p, e)
    out = np.matmul(ub, vd[:, :, None])[:, :, 0]
    shaped = out
    if squeeze_labels:
        shaped = shaped[:, 0]
    if squeeze_rows:
        shaped = shaped[0]

    def backward(g):
        g2 = np.asarray(g)
        if squeeze_rows:
            g2 = g2[None]
        if squeeze_labels:
            g2 = g2[..., None]
        gv = g2[:, :, None] * vd[:, None, :]  # (k, p, e)
        if v.requires_grad:
            v._accumulate(np.matmul(g2[:, None, :], ub)[:, 0, :].reshape(v.shape))
        if u.requires_grad:
            gu = gv.reshape(k, p * e) @ Bd.transpose(0, 2, 1).reshape(p * e, d)
            u._accumulate(gu.reshape(u.shape))
        if B.requires_grad:
            gb = (ud.T @ gv.reshape(k, p * e)).reshape(d, p, e).transpose(1, 0, 2)
            B._accumulate(gb.reshape(B.shape))

    return _result(np.asarray(shaped), (u, B, v), backward, "bilinear_form")


def normalize_rows(a: Tensor) -> Tensor:
    """Divide each row by its sum (rows must have positive sums)."""
    a = as_tensor(a)
    s = a.data.sum(axis=1, keepdims=True)
    if np.any(s <= 0):
        raise ValueError("normalize_rows needs strictly positive row sums")
    out = a.data / s

    def backward(g):
        a._accumulate((g - (g * out).sum(axis=1, keepdims=True)) / s)

    return _result(out, (a,), backward, "normalize_rows")
