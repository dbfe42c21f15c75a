"""A small reverse-mode differentiation engine on top of numpy.

Every :class:`Tensor` produced by an op remembers its parents and a closure
mapping the upstream gradient to one gradient per parent.  ``backward``
walks the graph in reverse topological order.  Everything runs in float64
and the traversal order is fixed by construction order, so two runs with
identical inputs produce bit-identical gradients.

Only the kernels the fusion model needs are here: elementwise arithmetic
with broadcasting, matmul, reductions, tanh/relu/exp/log/sqrt, a clamped
arcosh, softmax and log-softmax, concat/stack, row gathers, weighted
cross-entropy and single-head scaled dot-product attention.
"""

from __future__ import annotations

import contextlib
import math
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import GraphError, InvalidInputError, NumericalError

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Build no graph inside the block; ops return plain constant tensors."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "op", "_parents", "_backward")
    # Make numpy defer to our reflected operators (ndarray * Tensor -> Tensor).
    __array_ufunc__ = None

    def __init__(self, data, requires_grad: bool = False, op: str = "leaf"):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.op = op
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None

    def __repr__(self):
        return f"Tensor(op={self.op!r}, shape={self.shape}, requires_grad={self.requires_grad})"

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    # operator sugar
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
        return neg(self)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis, keepdims)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], tuple) else shape)

    def backward(self, grad=None):
        backward(self, grad)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def make_op(data, parents: Sequence[Tensor], backward_fn: Callable, op: str) -> Tensor:
    """Wrap ``data`` as the output of ``op``.

    ``backward_fn(g)`` must return one gradient (or None) per parent.  The
    node only joins the graph when gradients are enabled and some parent
    requires them.
    """
    out = Tensor(data, op=op)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _broadcast_shape(a: Tensor, b: Tensor, op: str):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise GraphError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# --------------------------------------------------------------------------
# elementwise

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "add")
    sa, sb = a.shape, b.shape
    return make_op(a.data + b.data, (a, b),
                   lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "sub")
    sa, sb = a.shape, b.shape
    return make_op(a.data - b.data, (a, b),
                   lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)), "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "mul")
    ad, bd = a.data, b.data
    return make_op(ad * bd, (a, b),
                   lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)), "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "div")
    ad, bd = a.data, b.data
    out = ad / bd

    def bw(g):
        return _unbroadcast(g / bd, ad.shape), _unbroadcast(-g * out / bd, bd.shape)

    return make_op(out, (a, b), bw, "div")


def neg(a) -> Tensor:
    a = as_tensor(a)
    return make_op(-a.data, (a,), lambda g: (-g,), "neg")


def power(a, p: float) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    return make_op(ad ** p, (a,), lambda g: (g * p * ad ** (p - 1),), "pow")


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return make_op(out, (a,), lambda g: (g * out,), "exp")


def log(a) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(ad)
    return make_op(out, (a,), lambda g: (g / ad,), "log")


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(invalid="ignore"):
        out = np.sqrt(a.data)
    return make_op(out, (a,), lambda g: (g * 0.5 / out,), "sqrt")


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return make_op(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return make_op(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,), "relu")


def arcosh(a, eps: float = 1e-12) -> Tensor:
    """arcosh with the argument clamped to >= 1 for the value.

    The derivative 1/sqrt(z^2 - 1) is evaluated at max(z, 1 + eps) so that
    coincident points give a finite (zero) gradient instead of 0 * inf.
    """
    a = as_tensor(a)
    z = a.data
    out = np.arccosh(np.maximum(z, 1.0))
    zc = np.maximum(z, 1.0 + eps)
    return make_op(out, (a,), lambda g: (g / np.sqrt(zc * zc - 1.0),), "arcosh")


def arcosh1p(a, eps: float = 1e-12) -> Tensor:
    """``arcosh(1 + a)``, accurate for tiny ``a``.

    Same clamping as :func:`arcosh`: the value uses ``max(a, 0)`` and the
    derivative ``1/sqrt(a (a + 2))`` is evaluated at ``max(a, eps)``.
    """
    a = as_tensor(a)
    u = np.maximum(a.data, 0.0)
    out = np.log1p(u + np.sqrt(u * (u + 2.0)))
    uc = np.maximum(a.data, eps)
    return make_op(out, (a,), lambda g: (g / np.sqrt(uc * (uc + 2.0)),), "arcosh")


# --------------------------------------------------------------------------
# linear algebra, shapes, reductions

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise GraphError(f"matmul needs ndim >= 2 operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise GraphError(f"matmul: inner dimensions differ, {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def bw(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        gb = np.swapaxes(ad, -1, -2) @ g
        return _unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape)

    return make_op(ad @ bd, (a, b), bw, "matmul")


def swapaxes(a, ax1: int = -1, ax2: int = -2) -> Tensor:
    a = as_tensor(a)
    return make_op(np.swapaxes(a.data, ax1, ax2), (a,),
                   lambda g: (np.swapaxes(g, ax1, ax2),), "swapaxes")


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    src = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise GraphError(f"reshape: cannot view {src} as {shape}") from None
    return make_op(out, (a,), lambda g: (g.reshape(src),), "reshape")


def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    src = a.shape

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, src).copy(),)

    return make_op(a.data.sum(axis=axis, keepdims=keepdims), (a,), bw, "sum")


def tmean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    n = a.data.size if axis is None else np.prod([a.shape[ax] for ax in np.atleast_1d(axis)])
    return tsum(a, axis, keepdims) * (1.0 / n)


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError as exc:
        raise GraphError(f"concat: {exc}") from None
    sizes = [t.shape[axis] for t in ts]
    cuts = np.cumsum(sizes)[:-1]
    return make_op(out, ts, lambda g: tuple(np.split(g, cuts, axis=axis)), "concat")


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    try:
        out = np.stack([t.data for t in ts], axis=axis)
    except ValueError as exc:
        raise GraphError(f"stack: {exc}") from None
    n = len(ts)
    return make_op(out, ts, lambda g: tuple(np.take(g, i, axis=axis) for i in range(n)), "stack")


def take_rows(a, idx) -> Tensor:
    """Gather rows ``a[idx]`` along axis 0; repeated indices accumulate."""
    a = as_tensor(a)
    idx = np.asarray(idx, dtype=np.intp)
    src = a.shape

    def bw(g):
        out = np.zeros(src)
        np.add.at(out, idx, g)
        return (out,)

    return make_op(a.data[idx], (a,), bw, "take_rows")


def pick(a, targets) -> Tensor:
    """``a[i, targets[i]]`` for a 2-D tensor."""
    a = as_tensor(a)
    targets = np.asarray(targets, dtype=np.intp)
    rows = np.arange(a.shape[0])
    src = a.shape

    def bw(g):
        out = np.zeros(src)
        out[rows, targets] = g
        return (out,)

    return make_op(a.data[rows, targets], (a,), bw, "pick")


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return make_op(s, (a,), bw, "softmax")


def log_softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    s = np.exp(out)

    def bw(g):
        return (g - s * g.sum(axis=axis, keepdims=True),)

    return make_op(out, (a,), bw, "log_softmax")


# --------------------------------------------------------------------------
# composite kernels

def weighted_cross_entropy(logits, targets, class_weights, reduce: bool = True) -> Tensor:
    """Class-weighted cross-entropy ``w[y_i] * -log softmax(logits_i)[y_i]``.

    Returns the batch mean, or the per-sample vector with ``reduce=False``.
    """
    logits = as_tensor(logits)
    targets = np.asarray(targets)
    w = np.asarray(class_weights, dtype=np.float64)
    if logits.ndim != 2:
        raise GraphError(f"weighted_cross_entropy expects B x K logits, got {logits.shape}")
    k = logits.shape[1]
    if w.shape != (k,):
        raise GraphError(f"class_weights must have shape ({k},), got {w.shape}")
    if np.any(w < 0) or not np.any(w > 0):
        raise InvalidInputError("class weights must be nonnegative and not all zero")
    if targets.shape != (logits.shape[0],) or np.any(targets < 0) or np.any(targets >= k):
        raise InvalidInputError(f"targets must be {logits.shape[0]} class indices in [0, {k})")
    per_sample = -pick(log_softmax(logits), targets) * w[targets.astype(np.intp)]
    return per_sample.mean() if reduce else per_sample


def scaled_dot_attention(tokens, wq, wk, wv, return_weights: bool = False):
    """Single-head self-attention over the token axis of a ``B x T x h`` tensor.

    Queries, keys and values share their projections across tokens; the
    attended tokens are mean-pooled to ``B x h``.
    """
    tokens = as_tensor(tokens)
    h = tokens.shape[-1]
    q = tokens @ wq
    k = tokens @ wk
    v = tokens @ wv
    att = softmax((q @ swapaxes(k)) * (1.0 / math.sqrt(h)), axis=-1)
    fused = (att @ v).mean(axis=-2)
    return (fused, att) if return_weights else fused


# --------------------------------------------------------------------------
# backward pass

def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in reversed(node._parents):
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def first_nonfinite(root: Tensor) -> Tensor | None:
    """Earliest node (in evaluation order) whose value is not finite."""
    for node in _topo_order(root):
        if not np.all(np.isfinite(node.data)):
            return node
    return None


def backward(root: Tensor, grad=None) -> None:
    """Accumulate d(root)/d(leaf) into ``.grad`` of every leaf requiring grad."""
    if not np.all(np.isfinite(root.data)):
        bad = first_nonfinite(root)
        op = bad.op if bad is not None else root.op
        raise NumericalError(f"non-finite value produced by op {op!r}", op=op)
    if not root.requires_grad:
        return
    if grad is None:
        if root.data.size != 1:
            raise GraphError("backward() without a gradient needs a scalar output")
        grad = np.ones_like(root.data)
    order = _topo_order(root)
    grads: dict[int, np.ndarray] = {id(root): np.asarray(grad, dtype=np.float64)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg


# --------------------------------------------------------------------------
# layers and optimizer

def xavier_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


class Linear:
    def __init__(self, fan_in: int, fan_out: int, rng: np.random.Generator):
        self.weight = Tensor(xavier_uniform(rng, fan_in, fan_out), requires_grad=True)
        self.bias = Tensor(np.zeros(fan_out), requires_grad=True)

    def __call__(self, x) -> Tensor:
        x = as_tensor(x)
        if x.shape[-1] != self.weight.shape[0]:
            raise GraphError(f"linear: input width {x.shape[-1]} != {self.weight.shape[0]}")
        return x @ self.weight + self.bias

    def parameters(self) -> dict[str, Tensor]:
        return {"weight": self.weight, "bias": self.bias}


class Adam:
    """Adam with bias correction; parameters are updated in a fixed order."""

    def __init__(self, params: dict[str, Tensor], lr: float = 1e-4,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.step_count = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def step(self):
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1 ** t
        c2 = 1.0 - self.beta2 ** t
        for k, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad
            m = self.m[k]
            v = self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data = p.data - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


# --------------------------------------------------------------------------
# finite-difference checking

def numerical_gradient(fn: Callable[[], Tensor], x: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central differences of scalar ``fn()`` w.r.t. array ``x`` (mutated in place, restored)."""
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            hi = float(fn().data)
            flat[i] = orig - step
            lo = float(fn().data)
            flat[i] = orig
            gflat[i] = (hi - lo) / (2.0 * step)
    return grad


def gradient_errors(analytic: np.ndarray, numeric: np.ndarray, atol: float = 1e-7) -> np.ndarray:
    """Elementwise relative error, treating differences below ``atol`` as exact."""
    diff = np.abs(analytic - numeric)
    scale = np.maximum(np.abs(analytic), np.abs(numeric))
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.where(diff <= atol, 0.0, diff / scale)
    return rel


def check_gradients(fn: Callable[[], Tensor], inputs: Iterable[Tensor], step: float = 1e-5,
                    rtol: float = 1e-4, atol: float = 1e-7) -> float:
    """Compare backprop against central differences for every input tensor.

    Returns the worst relative error; raises AssertionError past ``rtol``.
    """
    inputs = list(inputs)
    for t in inputs:
        t.grad = None
    out = fn()
    backward(out)
    worst = 0.0
    for n, t in enumerate(inputs):
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        numeric = numerical_gradient(fn, t.data, step)
        err = float(gradient_errors(analytic, numeric, atol).max(initial=0.0))
        if err > rtol:
            raise AssertionError(f"input {n} ({t.shape}): relative gradient error {err:.3e} > {rtol:g}")
        worst = max(worst, err)
    return worst
