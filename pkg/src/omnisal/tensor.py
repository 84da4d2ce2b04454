"""A small dense tensor with reverse-mode automatic differentiation.

Only the operators the saliency network and its losses need are provided.
Broadcasting is restricted to leading-batch expansion: in a binary op the
shape of one operand must be a suffix of the other's.
"""

from __future__ import annotations

import contextlib
import math
import threading
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "no_grad",
    "tensor",
    "add",
    "sub",
    "mul",
    "div",
    "scale",
    "matmul",
    "concat",
    "reshape",
    "transpose",
    "expand",
    "sum",
    "mean",
    "amax",
    "amin",
    "relu",
    "softplus",
    "exp",
    "log",
    "sqrt",
    "softmax",
    "layer_norm",
    "conv2d",
    "upsample_nearest",
    "sparse_matmul",
    "grad_check",
]

_STATE = threading.local()

# float32 is the speed opt-in; extended precision backs the finite-difference oracle
_KEEP_DTYPES = (np.dtype(np.float32), np.dtype(np.longdouble))


def grad_enabled() -> bool:
    return getattr(_STATE, "grad", True)


@contextlib.contextmanager
def no_grad():
    """Disable graph recording in the current thread."""
    prev = grad_enabled()
    _STATE.grad = False
    try:
        yield
    finally:
        _STATE.grad = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None:
            dt = getattr(data, "dtype", None)
            dtype = dt if dt in _KEEP_DTYPES else np.float64
        self.data = np.asarray(data, dtype=dtype)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self.op = ""

    # -- basic properties --------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        rg = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{rg})"

    # -- operators ---------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return _slice(self, idx)

    def sum(self, axis=None, keepdims=False):
        return sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    # -- autodiff ----------------------------------------------------------
    def backward(self, grad: np.ndarray | None = None) -> None:
        """Accumulate d(self)/d(leaf) into ``.grad`` of every tracked leaf."""
        if grad is None:
            if self.data.size != 1 or self.data.ndim != 0:
                raise ValueError(f"backward() needs a scalar loss, got shape {self.shape}")
            grad = np.ones_like(self.data)
        order = _topological_order(self)
        grads: dict[int, np.ndarray] = {id(self): np.asarray(grad, dtype=self.dtype)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if not node._parents:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = grads[key] + pg if key in grads else pg


def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
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


def tensor(data, requires_grad=False, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


def _t(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents: Sequence[Tensor], backward, op: str) -> Tensor:
    out = Tensor(data)
    if grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
        out.op = op
    return out


def _check_suffix(a: tuple, b: tuple) -> None:
    short, long_ = (a, b) if len(a) <= len(b) else (b, a)
    if long_[len(long_) - len(short):] != short:
        raise ValueError(f"shapes {a} and {b} are not leading-batch compatible")


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    return g


# ------------------------------------------------------------ elementwise --


def add(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    _check_suffix(a.shape, b.shape)
    return _make(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
        "add",
    )


def sub(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    _check_suffix(a.shape, b.shape)
    return _make(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)),
        "sub",
    )


def mul(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    _check_suffix(a.shape, b.shape)
    return _make(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
        "mul",
    )


def div(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    _check_suffix(a.shape, b.shape)
    out = a.data / b.data
    return _make(
        out,
        (a, b),
        lambda g: (_unbroadcast(g / b.data, a.shape), _unbroadcast(-g * out / b.data, b.shape)),
        "div",
    )


def scale(x, c: float) -> Tensor:
    x = _t(x)
    return _make(x.data * c, (x,), lambda g: (g * c,), "scale")


def relu(x) -> Tensor:
    x = _t(x)
    mask = x.data > 0
    return _make(np.where(mask, x.data, 0.0).astype(x.dtype), (x,), lambda g: (g * mask,), "relu")


def softplus(x) -> Tensor:
    x = _t(x)
    out = np.logaddexp(0.0, x.data)
    sig = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return _make(out, (x,), lambda g: (g * sig,), "softplus")


def exp(x) -> Tensor:
    x = _t(x)
    out = np.exp(x.data)
    return _make(out, (x,), lambda g: (g * out,), "exp")


def log(x) -> Tensor:
    x = _t(x)
    return _make(np.log(x.data), (x,), lambda g: (g / x.data,), "log")


def sqrt(x) -> Tensor:
    x = _t(x)
    out = np.sqrt(x.data)
    return _make(out, (x,), lambda g: (g * 0.5 / out,), "sqrt")


# -------------------------------------------------------------- reductions --


def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def sum(x, axis=None, keepdims=False) -> Tensor:  # noqa: A001 - mirrors numpy
    x = _t(x)
    axes = _norm_axes(axis, x.ndim)
    out = x.data.sum(axis=axes, keepdims=keepdims)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _make(out, (x,), backward, "sum")


def mean(x, axis=None, keepdims=False) -> Tensor:
    x = _t(x)
    axes = _norm_axes(axis, x.ndim)
    n = math.prod(x.shape[a] for a in axes)
    if n == 0:
        raise ValueError("mean over an empty axis")
    return scale(sum(x, axes, keepdims), 1.0 / n)


def _extreme(x, fn, op) -> Tensor:
    x = _t(x)
    val = fn(x.data)
    hit = x.data == val

    def backward(g):
        return (g * hit / hit.sum(),)

    return _make(np.asarray(val), (x,), backward, op)


def amax(x) -> Tensor:
    """Global maximum; the gradient is split evenly over tied maxima."""
    return _extreme(x, np.max, "amax")


def amin(x) -> Tensor:
    return _extreme(x, np.min, "amin")


# ------------------------------------------------------------------ shapes --


def reshape(x, shape) -> Tensor:
    x = _t(x)
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),), "reshape")


def transpose(x, axes=None) -> Tensor:
    x = _t(x)
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    inv = np.argsort(axes)
    return _make(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inv),), "transpose")


def _slice(x: Tensor, idx) -> Tensor:
    def backward(g):
        full = np.zeros_like(x.data)
        np.add.at(full, idx, g)
        return (full,)

    return _make(x.data[idx], (x,), backward, "slice")


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [_t(t) for t in tensors]
    if not ts:
        raise ValueError("concat of an empty sequence")
    sizes = [t.shape[axis] for t in ts]
    splits = np.cumsum(sizes)[:-1]
    return _make(
        np.concatenate([t.data for t in ts], axis=axis),
        ts,
        lambda g: tuple(np.split(g, splits, axis=axis)),
        "concat",
    )


def expand(x, leading: Sequence[int]) -> Tensor:
    """Prepend batch dimensions by broadcasting (copy-free forward)."""
    x = _t(x)
    leading = tuple(leading)
    out = np.broadcast_to(x.data, leading + x.shape)
    return _make(out, (x,), lambda g: (g.sum(axis=tuple(range(len(leading)))),), "expand")


# ------------------------------------------------------------ linear algebra --


def _swap(a: np.ndarray) -> np.ndarray:
    return np.swapaxes(a, -1, -2)


def matmul(a, b) -> Tensor:
    """Batched matrix product; either operand may lack the other's leading batch."""
    a, b = _t(a), _t(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul operands need at least two dimensions")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul shape mismatch {a.shape} @ {b.shape}")
    _check_suffix(a.shape[:-2], b.shape[:-2])

    def backward(g):
        ga = _unbroadcast(g @ _swap(b.data), a.shape) if a.requires_grad else None
        gb = _unbroadcast(_swap(a.data) @ g, b.shape) if b.requires_grad else None
        return ga, gb

    return _make(a.data @ b.data, (a, b), backward, "matmul")


def sparse_matmul(m, x) -> Tensor:
    """``m @ x`` for a fixed scipy sparse matrix ``m`` (not differentiated)."""
    x = _t(x)
    flat = x.data.reshape(x.shape[0], -1)
    out = np.asarray(m @ flat).reshape((m.shape[0],) + x.shape[1:])
    mt = m.T.tocsr()

    def backward(g):
        return (np.asarray(mt @ g.reshape(g.shape[0], -1)).reshape(x.shape),)

    return _make(out, (x,), backward, "sparse_matmul")


# ------------------------------------------------------------- nn kernels --


def softmax(x, axis: int = -1) -> Tensor:
    x = _t(x)
    if x.shape[axis] == 0:
        raise ValueError("softmax over an empty axis")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _make(out, (x,), backward, "softmax")


def layer_norm(x, gamma, beta, axis: int = -1, eps: float = 1e-5) -> Tensor:
    """Normalize over one axis, then apply per-feature affine ``gamma, beta``."""
    x, gamma, beta = _t(x), _t(gamma), _t(beta)
    axis = axis % x.ndim
    n = x.shape[axis]
    if gamma.shape != (n,) or beta.shape != (n,):
        raise ValueError(f"layer_norm affine must have shape ({n},)")
    bshape = [1] * x.ndim
    bshape[axis] = n
    mu = x.data.mean(axis=axis, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=axis, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gam = gamma.data.reshape(bshape)
    out = xhat * gam + beta.data.reshape(bshape)
    other = tuple(i for i in range(x.ndim) if i != axis)

    def backward(g):
        gx = None
        if x.requires_grad:
            gh = g * gam
            gx = inv * (
                gh - gh.mean(axis=axis, keepdims=True)
                - xhat * (gh * xhat).mean(axis=axis, keepdims=True)
            )
        return gx, (g * xhat).sum(axis=other), g.sum(axis=other)

    return _make(out, (x, gamma, beta), backward, "layer_norm")


def conv2d(x, w, b=None, stride: int = 1, pad: int = 0) -> Tensor:
    """2-D cross-correlation on NCHW input with an (O, C, k, k) kernel."""
    x, w = _t(x), _t(w)
    parents = [x, w]
    if b is not None:
        b = _t(b)
        parents.append(b)
    n, c, h, wd = x.shape
    o, ci, kh, kw = w.shape
    if ci != c:
        raise ValueError(f"conv2d channel mismatch: input {c}, kernel {ci}")
    # channels-last im2col: each kernel offset copies one contiguous block of c
    xt = np.ascontiguousarray(x.data.transpose(0, 2, 3, 1))
    if pad:
        xt = np.pad(xt, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    hp, wp = xt.shape[1], xt.shape[2]
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1
    if ho < 1 or wo < 1:
        raise ValueError("conv2d output would be empty")
    cols = np.empty((n, ho, wo, kh, kw, c), dtype=xt.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, :, i, j] = xt[:, i : i + stride * ho : stride, j : j + stride * wo : stride]
    cols = cols.reshape(n * ho * wo, kh * kw * c)
    wmat = w.data.transpose(0, 2, 3, 1).reshape(o, -1)
    out = cols @ wmat.T
    if b is not None:
        out = out + b.data
    out = out.reshape(n, ho, wo, o).transpose(0, 3, 1, 2)

    def backward(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(n * ho * wo, o)
        gw = None
        if w.requires_grad:
            gw = (g2.T @ cols).reshape(o, kh, kw, c).transpose(0, 3, 1, 2)
        gb = g2.sum(axis=0) if b is not None else None
        gx = None
        if x.requires_grad:
            gcols = (g2 @ wmat).reshape(n, ho, wo, kh, kw, c)
            gxp = np.zeros((n, hp, wp, c), dtype=g.dtype)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, i : i + stride * ho : stride, j : j + stride * wo : stride] += gcols[:, :, :, i, j]
            gx = gxp[:, pad : pad + h, pad : pad + wd].transpose(0, 3, 1, 2)
        return (gx, gw, gb) if b is not None else (gx, gw)

    return _make(np.ascontiguousarray(out), parents, backward, "conv2d")


def upsample_nearest(x, factor: int = 2) -> Tensor:
    x = _t(x)
    out = x.data.repeat(factor, axis=-2).repeat(factor, axis=-1)

    def backward(g):
        *lead, h, w = g.shape
        return (g.reshape(*lead, h // factor, factor, w // factor, factor).sum(axis=(-3, -1)),)

    return _make(out, (x,), backward, "upsample")


# ------------------------------------------------------------ verification --


def _rel_err(a: float, num: float) -> float:
    return abs(a - num) / max(1e-8, abs(a) + abs(num))


def _central_diff(evaluate, flat: np.ndarray, i: int, h: float):
    """Central difference along ``flat[i]`` over the step actually represented."""
    orig = flat[i]
    flat[i] = orig + h
    step = flat[i]
    with no_grad():
        fp = evaluate()
    flat[i] = orig - h
    step -= flat[i]
    with no_grad():
        fm = evaluate()
    flat[i] = orig
    if not (np.isfinite(fp) and np.isfinite(fm)):
        raise FloatingPointError("non-finite value during finite differencing")
    return float((fp - fm) / step)


def grad_check(
    f: Callable[[Tensor], Tensor],
    x,
    h: float = 1e-6,
    coords: Iterable[int] | None = None,
    fd_dtype=np.longdouble,
) -> float:
    """Max relative error between autodiff and central differences.

    The error per coordinate is ``|a - n| / max(1e-8, |a| + |n|)``. ``coords``
    restricts the check to the given flat indices. Autodiff runs in float64;
    the difference quotient is evaluated in ``fd_dtype`` so its round-off
    does not swamp gradients near zero.
    """
    x0 = np.array(_t(x).data, dtype=np.float64)
    xt = Tensor(x0.copy(), requires_grad=True)
    loss = f(xt)
    if loss.size != 1:
        raise ValueError("grad_check needs a scalar-valued function")
    if not np.isfinite(loss.data).all():
        raise FloatingPointError("non-finite function value")
    loss.backward()
    analytic = xt.grad if xt.grad is not None else np.zeros_like(x0)
    if not np.isfinite(analytic).all():
        raise FloatingPointError("non-finite analytic gradient")
    xf = x0.astype(fd_dtype)
    flat = xf.reshape(-1)
    evaluate = lambda: f(Tensor(xf)).data.reshape(())[()]
    worst = 0.0
    for i in range(x0.size) if coords is None else coords:
        num = _central_diff(evaluate, flat, i, h)
        worst = max(worst, _rel_err(float(analytic.reshape(-1)[i]), num))
    return worst


def grad_check_params(
    loss_fn: Callable[[], Tensor],
    params: dict[str, Tensor],
    h: float = 1e-6,
    coords_per_param: int | None = None,
    rng: np.random.Generator | None = None,
    fd_dtype=np.longdouble,
    screen_tol: float | None = None,
) -> float:
    """Like :func:`grad_check` but over named parameters perturbed in place.

    With ``screen_tol`` set, every coordinate is first differenced in float64
    and only those whose error exceeds ``screen_tol`` are redone in
    ``fd_dtype``. This keeps large models affordable, since extended precision
    has no BLAS path.
    """
    for p in params.values():
        p.grad = None
    loss = loss_fn()
    loss.backward()
    rng = rng or np.random.default_rng(0)
    evaluate = lambda: loss_fn().data.reshape(())[()]
    saved = {name: p.data for name, p in params.items()}
    todo = []
    for name, p in params.items():
        n = p.size
        idx = range(n) if coords_per_param is None or coords_per_param >= n else rng.choice(
            n, coords_per_param, replace=False
        )
        analytic = p.grad.reshape(-1) if p.grad is not None else np.zeros(n)
        todo.extend((name, int(i), float(analytic[i])) for i in idx)

    def sweep(items):
        return [(name, i, a, _rel_err(a, _central_diff(evaluate, params[name].data.reshape(-1), i, h)))
                for name, i, a in items]

    worst = 0.0
    try:
        if screen_tol is not None:
            screened = sweep(todo)
            worst = max([e for *_, e in screened if e <= screen_tol], default=0.0)
            todo = [(name, i, a) for name, i, a, e in screened if e > screen_tol]
        for p in params.values():
            p.data = p.data.astype(fd_dtype)
        worst = max([worst] + [e for *_, e in sweep(todo)])
    finally:
        for name, p in params.items():
            p.data = saved[name]
    return worst
