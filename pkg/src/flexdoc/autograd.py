"""A small reverse-mode automatic differentiation engine on numpy arrays.

Every op builds a new :class:`Tensor` that remembers its parents and a
closure mapping the output gradient to parent gradients. :func:`backward`
walks the graph once in reverse topological order, summing gradients where
a tensor fans out.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

_DEBUG = False
DEFAULT_DTYPE = np.float32


def set_debug(flag: bool) -> None:
    """When on, every op output is checked for NaN/Inf."""
    global _DEBUG
    _DEBUG = bool(flag)


class NonFiniteError(FloatingPointError):
    pass


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        tag = f" {self.name}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, requires_grad={self.requires_grad})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(_wrap(other, self)))

    def __rsub__(self, other):
        return add(_wrap(other, self), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return index(self, key)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)


def _wrap(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def _make(data: np.ndarray, parents: Sequence[Tensor], backward: Callable) -> Tensor:
    if _DEBUG and not np.all(np.isfinite(data)):
        raise NonFiniteError(f"non-finite values produced by {backward.__qualname__}")
    out = Tensor(data)
    live = tuple(p for p in parents if p.requires_grad)
    if live:
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (reverse of numpy broadcasting)."""
    if grad.shape == tuple(shape):
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# --------------------------------------------------------------------------- #
# elementwise
# --------------------------------------------------------------------------- #
def add(a, b) -> Tensor:
    a = _wrap(a)
    b = _wrap(b, a)
    sa, sb = a.shape, b.shape

    def backward(g):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return _make(a.data + b.data, (a, b), backward)


def neg(a) -> Tensor:
    return _make(-a.data, (a,), lambda g: (-g,))


def mul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b, a)
    ad, bd = a.data, b.data

    def backward(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return _make(ad * bd, (a, b), backward)


def scale(a: Tensor, c: float) -> Tensor:
    return _make(a.data * c, (a,), lambda g: (g * c,))


def relu(a: Tensor) -> Tensor:
    pos = a.data > 0
    return _make(np.where(pos, a.data, 0).astype(a.dtype), (a,), lambda g: (g * pos,))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    x = a.data
    return _make(np.log(x), (a,), lambda g: (g / x,))


# --------------------------------------------------------------------------- #
# linear algebra and shape
# --------------------------------------------------------------------------- #
def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product with numpy broadcasting over leading axes."""
    a, b = _wrap(a), _wrap(b)
    if a.shape[-1] != b.shape[-2 if b.ndim > 1 else 0]:
        raise ValueError(f"matmul shape mismatch {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data
    if ad.ndim < 2 or bd.ndim < 2:
        raise ValueError("matmul needs operands with at least two dimensions")

    def backward(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        gb = np.swapaxes(ad, -1, -2) @ g
        return _unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape)

    return _make(ad @ bd, (a, b), backward)


def reshape(a: Tensor, shape) -> Tensor:
    src = a.shape
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(src),))


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(axes) if axes else tuple(reversed(range(a.ndim)))
    inv = tuple(np.argsort(axes))
    return _make(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),))


def index(a: Tensor, key) -> Tensor:
    """Basic (slice/int) indexing. Use :func:`take_rows` for gathers."""
    src_shape, dtype = a.shape, a.dtype

    def backward(g):
        full = np.zeros(src_shape, dtype=dtype)
        full[key] += g
        return (full,)

    return _make(a.data[key], (a,), backward)


slice_ = index


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_wrap(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, cuts, axis=axis))

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward)


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    src = a.shape

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, src).copy(),)

    return _make(np.asarray(a.data.sum(axis=axis, keepdims=keepdims)), (a,), backward)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return scale(tsum(a, axis, keepdims), 1.0 / float(n))


def masked_mean(a: Tensor, mask: np.ndarray, axis: int) -> Tensor:
    """Mean over ``axis`` counting only entries where ``mask`` is true.

    ``mask`` covers the leading axes of ``a`` (including ``axis``) and is
    broadcast over the remaining trailing axes.
    """
    m = np.asarray(mask, dtype=a.dtype)
    m = m.reshape(m.shape + (1,) * (a.ndim - m.ndim))
    count = np.maximum(m.sum(axis=axis, keepdims=True), 1.0)
    wb = np.broadcast_to(m / count, a.shape)

    def backward(g):
        return (np.expand_dims(g, axis) * wb,)

    return _make((a.data * wb).sum(axis=axis), (a,), backward)


# --------------------------------------------------------------------------- #
# gathers
# --------------------------------------------------------------------------- #
def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    """Rows of ``table`` selected by integer ``ids`` (any shape).

    The gradient scatter-adds into the table, so repeated ids accumulate.
    """
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise IndexError("embedding id out of range")
    tshape, dtype = table.shape, table.dtype

    def backward(g):
        full = np.zeros(tshape, dtype=dtype)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, tshape[-1]))
        return (full,)

    return _make(table.data[ids], (table,), backward)


take_rows = embedding


# --------------------------------------------------------------------------- #
# normalisation, softmax, losses
# --------------------------------------------------------------------------- #
def softmax(a: Tensor, axis: int = -1) -> Tensor:
    x = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(x)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _make(y, (a,), backward)


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    x = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(x).sum(axis=axis, keepdims=True))
    out = x - lse
    p = np.exp(out)

    def backward(g):
        return (g - p * g.sum(axis=axis, keepdims=True),)

    return _make(out, (a,), backward)


def layer_norm(x: Tensor, gamma: Tensor | None = None, beta: Tensor | None = None, eps: float = 1e-6) -> Tensor:
    """Normalise over the last axis, then apply the optional affine map."""
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv

    def norm_backward(g):
        return (inv * (g - g.mean(axis=-1, keepdims=True) - xhat * (g * xhat).mean(axis=-1, keepdims=True)),)

    out = _make(xhat.astype(xd.dtype), (x,), norm_backward)
    if gamma is not None:
        out = mul(out, gamma)
    if beta is not None:
        out = add(out, beta)
    return out


def dropout(a: Tensor, p: float, rng: np.random.Generator | None, train: bool) -> Tensor:
    """Inverted dropout: kept activations are scaled by ``1/(1-p)``."""
    if not 0.0 <= p < 1.0:
        raise ValueError("dropout p must be in [0, 1)")
    if not train or p == 0.0:
        return a
    if rng is None:
        raise ValueError("dropout in training mode needs an rng")
    keep = (rng.random(a.shape) >= p).astype(a.dtype) / (1.0 - p)
    return _make(a.data * keep, (a,), lambda g: (g * keep,))


def cross_entropy(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Summed softmax cross-entropy of rows of ``logits`` against class ids."""
    targets = np.asarray(targets)
    x = logits.data - logits.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(x).sum(axis=-1, keepdims=True))
    logp = x - lse
    rows = np.arange(targets.shape[0])
    loss = -logp[rows, targets].sum()

    def backward(g):
        p = np.exp(logp)
        p[rows, targets] -= 1.0
        return (g * p,)

    return _make(np.asarray(loss, dtype=logits.dtype), (logits,), backward)


def mse_sum(pred: Tensor, target: np.ndarray) -> Tensor:
    """Sum over rows of the per-row mean squared error."""
    target = np.asarray(target, dtype=pred.dtype)
    diff = pred.data - target
    dim = pred.shape[-1]

    def backward(g):
        return (g * 2.0 * diff / dim,)

    return _make(np.asarray((diff * diff).sum() / dim, dtype=pred.dtype), (pred,), backward)


# --------------------------------------------------------------------------- #
# backward pass
# --------------------------------------------------------------------------- #
def _topological(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    state: dict[int, int] = {}  # 1 = on stack, 2 = done
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        key = id(node)
        if expanded:
            state[key] = 2
            order.append(node)
            continue
        st = state.get(key)
        if st == 2:
            continue
        if st == 1:
            raise RuntimeError("cycle detected in the computation graph")
        state[key] = 1
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and state.get(id(p)) != 2:
                if state.get(id(p)) == 1:
                    raise RuntimeError("cycle detected in the computation graph")
                stack.append((p, False))
    return order


def backward(loss: Tensor, grad: np.ndarray | None = None) -> None:
    """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every leaf that requires grad."""
    if grad is None:
        if loss.data.size != 1:
            raise ValueError("backward needs a scalar loss (or an explicit output gradient)")
        grad = np.ones_like(loss.data)
    if not loss.requires_grad:
        return
    order = _topological(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.asarray(grad, dtype=loss.dtype)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            k = id(parent)
            if k in grads:
                grads[k] = grads[k] + pg
            else:
                grads[k] = pg


# --------------------------------------------------------------------------- #
# gradient checking
# --------------------------------------------------------------------------- #
@dataclass
class GradCheckReport:
    max_rel_error: float
    mean_rel_error: float
    probes: int
    tol: float
    worst: tuple[str, tuple] | None = None

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tol

    def __str__(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (
            f"grad_check {status}: max rel err {self.max_rel_error:.3e}, "
            f"mean {self.mean_rel_error:.3e} over {self.probes} probes (tol {self.tol:g})"
        )


def relative_error(analytic: float, numeric: float, floor: float = 1e-8) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def grad_check(
    f: Callable[[], Tensor],
    params: dict[str, Tensor],
    probes: int = 50,
    eps: float = 1e-5,
    tol: float = 1e-4,
    rng: np.random.Generator | None = None,
    floor: float = 1e-8,
) -> GradCheckReport:
    """Compare backprop gradients against central finite differences.

    ``f`` recomputes the scalar loss from the current contents of ``params``
    (all float64). Probed entries are chosen uniformly over all parameters.
    """
    for name, p in params.items():
        if p.dtype != np.float64:
            raise TypeError(f"grad_check needs float64 parameters ({name} is {p.dtype})")
    rng = rng or np.random.default_rng(0)
    for p in params.values():
        p.grad = None
    backward(f())
    names = list(params)
    sizes = np.array([params[n].data.size for n in names])
    flat_idx = rng.choice(sizes.sum(), size=min(probes, int(sizes.sum())), replace=False)
    bounds = np.cumsum(sizes)
    errors = []
    worst, worst_err = None, -1.0
    for fi in flat_idx:
        j = int(np.searchsorted(bounds, fi, side="right"))
        name = names[j]
        p = params[name]
        local = int(fi - (bounds[j - 1] if j else 0))
        pos = np.unravel_index(local, p.shape)
        analytic = 0.0 if p.grad is None else float(p.grad[pos])
        orig = p.data[pos]
        p.data[pos] = orig + eps
        fp = f().item()
        p.data[pos] = orig - eps
        fm = f().item()
        p.data[pos] = orig
        numeric = (fp - fm) / (2 * eps)
        err = relative_error(analytic, numeric, floor)
        errors.append(err)
        if err > worst_err:
            worst_err, worst = err, (name, tuple(int(i) for i in pos))
    errors = np.asarray(errors)
    return GradCheckReport(float(errors.max()), float(errors.mean()), len(errors), tol, worst)
