"""Dense-tensor values with reverse-mode differentiation on top of numpy.

The graph is built define-by-run: every operation records its parents and a
closure that routes the output gradient back to them. Calling
:meth:`Tensor.backward` on a scalar result walks the recorded nodes in
reverse topological order and accumulates gradients into ``.grad`` buffers
of every tensor created with ``requires_grad=True``.

Tensors wrap contiguous numpy arrays and support numpy-style broadcasting;
gradients of broadcast operands are summed back down to the operand shape.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass, field

import numpy as np

_DEFAULT_DTYPE = np.float32
_DEBUG_CHECKS = False


class ShapeError(ValueError):
    """Operand shapes are incompatible for the attempted operation."""


class NonFiniteError(FloatingPointError):
    """An operation produced NaN or Inf while debug checks were active."""


def default_dtype():
    return _DEFAULT_DTYPE


@contextlib.contextmanager
def use_dtype(dtype):
    """Temporarily change the dtype newly created tensors default to.

    Finite-difference tests run under ``use_dtype(np.float64)`` so that
    truncation error of the difference quotient dominates round-off.
    """
    global _DEFAULT_DTYPE
    prev = _DEFAULT_DTYPE
    _DEFAULT_DTYPE = np.dtype(dtype).type
    try:
        yield
    finally:
        _DEFAULT_DTYPE = prev


@contextlib.contextmanager
def debug_checks(enabled=True):
    """Temporarily enable per-operation finiteness assertions."""
    global _DEBUG_CHECKS
    prev = _DEBUG_CHECKS
    _DEBUG_CHECKS = enabled
    try:
        yield
    finally:
        _DEBUG_CHECKS = prev


def _check_finite(data, op):
    if _DEBUG_CHECKS and not np.all(np.isfinite(data)):
        raise NonFiniteError(f"non-finite values produced by op '{op}'")


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """A dense real-valued array that participates in the autodiff graph."""

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, name=None):
        arr = np.asarray(data, dtype=_DEFAULT_DTYPE)
        if not arr.flags["C_CONTIGUOUS"]:
            arr = np.ascontiguousarray(arr)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents = ()
        self._backward = None

    # -- basic introspection ------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self.data.item()

    def numpy(self):
        return self.data

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}{tag})"

    # -- graph machinery -----------------------------------------------------

    def zero_grad(self):
        self.grad = None

    def backward(self):
        """Accumulate gradients of this scalar into all reachable leaves."""
        if self.data.size != 1:
            raise ShapeError(f"backward requires a scalar output, got shape {self.shape}")
        order = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- operator sugar -------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __neg__(self):
        return mul(self, -1.0)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, parents, backward, op):
    _check_finite(data, op)
    out = Tensor(data)
    needs = tuple(p for p in parents if p.requires_grad or p._parents)
    if needs:
        out._parents = needs
        out._backward = backward
        out.requires_grad = True
    return out


def _tracked(t):
    return t.requires_grad or t._parents


def _accumulate(t, g, own=False):
    """Add ``g`` into the gradient buffer of ``t``.

    ``own=True`` promises that ``g`` is a freshly allocated array of the
    right shape/dtype that the caller will not reuse, so it can be adopted
    without a defensive copy.
    """
    if not (t.requires_grad or t._parents):
        return
    if t.grad is None:
        if own and g.shape == t.data.shape and g.dtype == t.data.dtype:
            t.grad = g
        else:
            t.grad = np.array(np.broadcast_to(g, t.data.shape), dtype=t.data.dtype)
    else:
        t.grad += g


# -- primitive operations -----------------------------------------------------


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data + b.data

    def backward(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(g, b.shape))

    return _node(out_data, (a, b), backward, "add")


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data * b.data

    def backward(g):
        if _tracked(a):
            _accumulate(a, _unbroadcast(g * b.data, a.shape), own=True)
        if _tracked(b):
            _accumulate(b, _unbroadcast(g * a.data, b.shape), own=True)

    return _node(out_data, (a, b), backward, "mul")


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data / b.data

    def backward(g):
        if _tracked(a):
            _accumulate(a, _unbroadcast(g / b.data, a.shape), own=True)
        if _tracked(b):
            _accumulate(b, _unbroadcast(-g * a.data / (b.data * b.data), b.shape), own=True)

    return _node(out_data, (a, b), backward, "div")


def power(a, exponent):
    a = as_tensor(a)
    exponent = float(exponent)
    out_data = a.data**exponent

    def backward(g):
        _accumulate(a, g * exponent * a.data ** (exponent - 1.0), own=True)

    return _node(out_data, (a,), backward, "power")


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    out_data = a.data @ b.data

    def backward(g):
        if _tracked(a):
            _accumulate(a, g @ b.data.T, own=True)
        if _tracked(b):
            _accumulate(b, a.data.T @ g, own=True)

    return _node(out_data, (a, b), backward, "matmul")


def exp(a):
    a = as_tensor(a)
    out_data = np.exp(a.data)

    def backward(g):
        _accumulate(a, g * out_data, own=True)

    return _node(out_data, (a,), backward, "exp")


def log(a):
    a = as_tensor(a)
    out_data = np.log(a.data)

    def backward(g):
        _accumulate(a, g / a.data, own=True)

    return _node(out_data, (a,), backward, "log")


def sqrt(a):
    a = as_tensor(a)
    out_data = np.sqrt(a.data)

    def backward(g):
        _accumulate(a, g * 0.5 / out_data, own=True)

    return _node(out_data, (a,), backward, "sqrt")


def sin(a):
    a = as_tensor(a)
    out_data = np.sin(a.data)

    def backward(g):
        _accumulate(a, g * np.cos(a.data), own=True)

    return _node(out_data, (a,), backward, "sin")


def cos(a):
    a = as_tensor(a)
    out_data = np.cos(a.data)

    def backward(g):
        _accumulate(a, -g * np.sin(a.data), own=True)

    return _node(out_data, (a,), backward, "cos")


def sigmoid(a):
    a = as_tensor(a)
    # tanh form is stable for large |x| in both float widths
    out_data = 0.5 * (np.tanh(0.5 * a.data) + 1.0)

    def backward(g):
        _accumulate(a, g * out_data * (1.0 - out_data), own=True)

    return _node(out_data, (a,), backward, "sigmoid")


def softplus(a):
    a = as_tensor(a)
    out_data = np.logaddexp(np.zeros((), dtype=a.dtype), a.data)

    def backward(g):
        _accumulate(a, g * 0.5 * (np.tanh(0.5 * a.data) + 1.0), own=True)

    return _node(out_data, (a,), backward, "softplus")


def relu(a):
    a = as_tensor(a)
    out_data = np.maximum(a.data, 0.0)

    def backward(g):
        _accumulate(a, g * (a.data > 0.0), own=True)

    return _node(out_data, (a,), backward, "relu")


def maximum(a, b):
    """Elementwise max; ties route the gradient to the first operand."""
    a, b = as_tensor(a), as_tensor(b)
    take_a = a.data >= b.data
    out_data = np.where(take_a, a.data, b.data)

    def backward(g):
        if _tracked(a):
            _accumulate(a, _unbroadcast(g * take_a, a.shape), own=True)
        if _tracked(b):
            _accumulate(b, _unbroadcast(g * ~take_a, b.shape), own=True)

    return _node(out_data, (a, b), backward, "maximum")


def clamp(a, lo=None, hi=None):
    """Clip to constant bounds; gradient passes only where unclipped."""
    a = as_tensor(a)
    out_data = np.clip(a.data, lo, hi)
    inside = np.ones(a.shape, dtype=bool)
    if lo is not None:
        inside &= a.data >= lo
    if hi is not None:
        inside &= a.data <= hi

    def backward(g):
        _accumulate(a, g * inside, own=True)

    return _node(out_data, (a,), backward, "clamp")


def tsum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        g2 = g
        if not keepdims and axis is not None:
            g2 = np.expand_dims(g, axis)
        elif not keepdims and axis is None:
            g2 = np.asarray(g).reshape((1,) * a.ndim)
        _accumulate(a, np.broadcast_to(g2, a.shape))

    return _node(out_data, (a,), backward, "sum")


def tmean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    n = a.data.size if axis is None else np.prod([a.shape[ax] for ax in np.atleast_1d(axis)])
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / float(n))


def reshape(a, shape):
    a = as_tensor(a)
    out_data = a.data.reshape(shape)

    def backward(g):
        _accumulate(a, g.reshape(a.shape))

    return _node(out_data, (a,), backward, "reshape")


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            _accumulate(t, g[tuple(idx)])

    return _node(out_data, tuple(tensors), backward, "concat")


def take_rows(a, indices):
    """Gather rows by integer index; backward scatter-adds into the source."""
    a = as_tensor(a)
    indices = np.asarray(indices)
    out_data = a.data[indices]

    def backward(g):
        if _tracked(a):
            acc = np.zeros_like(a.data)
            np.add.at(acc, indices, g)
            _accumulate(a, acc, own=True)

    return _node(out_data, (a,), backward, "take_rows")


def where(mask, a, b):
    """Select ``a`` where the constant boolean ``mask`` holds, else ``b``."""
    a, b = as_tensor(a), as_tensor(b)
    mask = np.asarray(mask, dtype=bool)
    out_data = np.where(mask, a.data, b.data)

    def backward(g):
        if _tracked(a):
            _accumulate(a, _unbroadcast(g * mask, a.shape), own=True)
        if _tracked(b):
            _accumulate(b, _unbroadcast(g * ~mask, b.shape), own=True)

    return _node(out_data, (a, b), backward, "where")


def stop_gradient(a):
    """Forward the value unchanged; block all gradient flow through it."""
    a = as_tensor(a)
    return Tensor(a.data)


def straight_through(value, carrier):
    """Forward ``value`` bit-exactly while gradients pass through to ``carrier``.

    Algebraically identical to ``stop_gradient(value - carrier) + carrier``,
    but the forward result is exactly ``value`` with no floating-point
    round-trip through the difference.
    """
    value, carrier = as_tensor(value), as_tensor(carrier)

    def backward(g):
        _accumulate(carrier, _unbroadcast(g, carrier.shape))

    return _node(value.data, (carrier,), backward, "straight_through")


def dot(a, b, axis=-1, keepdims=False):
    return tsum(mul(a, b), axis=axis, keepdims=keepdims)


def norm(a, axis=-1, keepdims=True):
    return sqrt(tsum(power(a, 2.0), axis=axis, keepdims=keepdims))


def normalize(a, axis=-1, eps=1e-12):
    """Project onto the unit sphere along ``axis`` (differentiable)."""
    return div(a, clamp(norm(a, axis=axis, keepdims=True), lo=eps))


# -- optimizer ------------------------------------------------------------------


class Adam:
    """Adam with bias correction, updating parameter tensors in place."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self._m = [np.zeros_like(p.data) for p in self.params]
        self._v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1**t
        bc2 = 1.0 - self.beta2**t
        for p, m, v in zip(self.params, self._m, self._v):
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            elif not np.all(np.isfinite(g)):
                raise NonFiniteError(f"non-finite gradient for parameter {p.name!r}")
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * np.square(g)
            p.data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


# -- gradient verification -------------------------------------------------------


@dataclass
class GradCheckEntry:
    name: str
    max_rel_error: float
    max_abs_error: float
    passed: bool


@dataclass
class GradCheckReport:
    entries: list = field(default_factory=list)

    @property
    def passed(self):
        return all(e.passed for e in self.entries)

    @property
    def max_rel_error(self):
        return max((e.max_rel_error for e in self.entries), default=0.0)

    def __str__(self):
        lines = [
            f"  {'PASS' if e.passed else 'FAIL'}  {e.name}: rel={e.max_rel_error:.3e} abs={e.max_abs_error:.3e}"
            for e in self.entries
        ]
        return "\n".join(lines)


def check_gradients(fn, params, h=1e-4, rtol=1e-4, atol=1e-8, sample=None, rng=None):
    """Compare analytic gradients of ``fn()`` against central differences.

    ``fn`` must rebuild the scalar loss from ``params`` on every call and be
    deterministic (freeze any randomness before calling). When ``sample`` is
    given, only that many randomly chosen elements per parameter are probed;
    otherwise every element is.
    """
    if not 1e-5 <= h <= 1e-3:
        raise ValueError(f"finite-difference step h={h} outside [1e-5, 1e-3]")
    loss = fn()
    for p in params:
        p.grad = None
    loss.backward()
    analytic = [None if p.grad is None else p.grad.copy() for p in params]

    rng = rng or np.random.default_rng(0)
    report = GradCheckReport()
    for k, (p, ana) in enumerate(zip(params, analytic)):
        if ana is None:
            ana = np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        idx = np.arange(flat.size)
        if sample is not None and sample < flat.size:
            idx = rng.choice(flat.size, size=sample, replace=False)
        max_rel = 0.0
        max_abs = 0.0
        for i in idx:
            orig = flat[i]
            flat[i] = orig + h
            up = float(fn().data)
            flat[i] = orig - h
            down = float(fn().data)
            flat[i] = orig
            fd = (up - down) / (2.0 * h)
            a = float(ana.reshape(-1)[i])
            abs_err = abs(a - fd)
            denom = max(abs(a), abs(fd))
            rel_err = abs_err / denom if denom > 0 else 0.0
            if abs_err > atol:
                max_rel = max(max_rel, rel_err)
            max_abs = max(max_abs, abs_err)
        name = p.name or f"param{k}"
        report.entries.append(
            GradCheckEntry(name, max_rel, max_abs, max_rel <= rtol or max_abs <= atol)
        )
    return report
