"""Dense tensors with reverse-mode automatic differentiation.

A Tensor wraps a numpy array plus an optional gradient slot. Operations on
tensors that require gradients record closures on the output; ``backward()``
replays the recorded graph in reverse execution order. Forward and backward
on one graph are single-threaded; tensors are never mutated after creation,
so sharing them read-only across threads is safe.
"""

from __future__ import annotations

import itertools

import numpy as np

DEFAULT_DTYPE = np.float64

_counter = itertools.count()
_grad_enabled = True


class no_grad:
    """Context manager that disables graph recording (faster evaluation)."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


def grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    """N-dimensional dense array of reals with an optional gradient slot."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_order")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(dtype or DEFAULT_DTYPE)
        elif dtype is not None:
            arr = arr.astype(dtype, copy=False)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(arr) if requires_grad else None
        self._parents = ()
        self._backward = None
        self._order = next(_counter)

    # -- basic introspection -------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError("tensor is not a scalar")
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self):
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    # -- graph plumbing ------------------------------------------------------

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self):
        """Backpropagate from a scalar output through the recorded graph.

        Gradients accumulate into ``.grad`` of every tensor on the path that
        requires one; leaves not on the path keep their zero gradient.
        """
        if self.data.size != 1:
            raise ValueError("backward requires a scalar output, got shape %s" % (self.shape,))
        if not self.requires_grad:
            raise ValueError("output does not require grad (not on any tape)")
        # Collect ancestors iteratively, then replay in reverse creation
        # order, which is a topological order by construction.
        nodes, seen, stack = [], {id(self)}, [self]
        while stack:
            t = stack.pop()
            nodes.append(t)
            for p in t._parents:
                if id(p) not in seen:
                    seen.add(id(p))
                    stack.append(p)
        nodes.sort(key=lambda t: t._order)
        self._accumulate(np.ones_like(self.data))
        for t in reversed(nodes):
            if t._backward is not None and t.grad is not None:
                t._backward(t.grad)

    # -- operator sugar ------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(_as_tensor(other), self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    # -- method forms --------------------------------------------------------

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def relu(self):
        return relu(self)

    def sigmoid(self):
        return sigmoid(self)

    def abs(self):
        return absolute(self)

    def sqrt(self):
        return sqrt(self)

    def sum(self, axes=None, keepdims=False):
        return reduce("sum", self, axes, keepdims)

    def mean(self, axes=None, keepdims=False):
        return reduce("mean", self, axes, keepdims)

    def max(self, axes=None, keepdims=False):
        return reduce("max", self, axes, keepdims)

    def reshape(self, *shape):
        return reshape(self, *shape)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum a gradient over the axes that were broadcast in the forward op."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, sd in enumerate(shape):
        if sd == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def make_op(data: np.ndarray, parents, backward) -> Tensor:
    """Create the output tensor of a primitive, recording it when needed.

    ``backward(g)`` receives the output gradient and must accumulate into the
    parents. Recording only happens while gradients are globally enabled and
    at least one parent requires them.
    """
    track = _grad_enabled and any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=track)
    if track:
        out._parents = tuple(parents)
        out._backward = backward
    return out


# -- elementwise primitives ----------------------------------------------


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b)

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return make_op(a.data + b.data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b)

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g, b.shape))

    return make_op(a.data - b.data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b)

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return make_op(a.data * b.data, (a, b), backward)


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b)

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g / b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return make_op(a.data / b.data, (a, b), backward)


def maximum(a, b) -> Tensor:
    """Elementwise max; ties route the gradient to the first argument."""
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b)
    take_a = a.data >= b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * take_a, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * ~take_a, b.shape))

    return make_op(np.maximum(a.data, b.data), (a, b), backward)


def exp(a) -> Tensor:
    a = _as_tensor(a)
    y = np.exp(a.data)

    def backward(g):
        a._accumulate(g * y)

    return make_op(y, (a,), backward)


def log(a) -> Tensor:
    a = _as_tensor(a)
    if np.any(a.data <= 0.0):
        raise ValueError("log of non-positive value")

    def backward(g):
        a._accumulate(g / a.data)

    return make_op(np.log(a.data), (a,), backward)


def sqrt(a) -> Tensor:
    a = _as_tensor(a)
    y = np.sqrt(a.data)

    def backward(g):
        a._accumulate(g * (0.5 / y))

    return make_op(y, (a,), backward)


def relu(a) -> Tensor:
    # Subgradient at 0 is 0.
    a = _as_tensor(a)
    mask = a.data > 0

    def backward(g):
        a._accumulate(g * mask)

    return make_op(np.where(mask, a.data, 0.0), (a,), backward)


def _sigmoid_stable(x: np.ndarray) -> np.ndarray:
    # Split form avoids overflow in exp for large |x|.
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def sigmoid(a) -> Tensor:
    a = _as_tensor(a)
    y = _sigmoid_stable(a.data)

    def backward(g):
        a._accumulate(g * y * (1.0 - y))

    return make_op(y, (a,), backward)


def absolute(a) -> Tensor:
    a = _as_tensor(a)
    s = np.sign(a.data)

    def backward(g):
        a._accumulate(g * s)

    return make_op(np.abs(a.data), (a,), backward)


def clip(a, lo: float, hi: float) -> Tensor:
    """Clamp values into [lo, hi]; gradient is zero where the clamp is active."""
    a = _as_tensor(a)
    inside = (a.data > lo) & (a.data < hi)

    def backward(g):
        a._accumulate(g * inside)

    return make_op(np.clip(a.data, lo, hi), (a,), backward)


_ELEMENTWISE = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "max": maximum,
    "exp": exp,
    "ln": log,
    "relu": relu,
    "sigmoid": sigmoid,
}


def elementwise(kind: str, a, b=None) -> Tensor:
    """Dispatch an elementwise primitive by name."""
    try:
        op = _ELEMENTWISE[kind]
    except KeyError:
        raise ValueError(f"unknown elementwise op {kind!r}") from None
    if kind in ("add", "sub", "mul", "max"):
        if b is None:
            raise ValueError(f"{kind} is binary")
        return op(a, b)
    if b is not None:
        raise ValueError(f"{kind} is unary")
    return op(a)


def _check_broadcast(a: Tensor, b: Tensor):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValueError(f"shapes {a.shape} and {b.shape} are not broadcastable") from None


# -- linear algebra and shape ----------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ValueError(f"matmul expects rank-2 operands, got {a.shape} @ {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"inner dimensions mismatch: {a.shape} @ {b.shape}")

    def backward(g):
        if a.requires_grad:
            a._accumulate(g @ b.data.T)
        if b.requires_grad:
            b._accumulate(a.data.T @ g)

    return make_op(a.data @ b.data, (a, b), backward)


def reshape(a, *shape) -> Tensor:
    a = _as_tensor(a)
    if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
        shape = tuple(shape[0])

    def backward(g):
        a._accumulate(g.reshape(a.shape))

    return make_op(a.data.reshape(shape), (a,), backward)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            if t.requires_grad:
                t._accumulate(piece)

    return make_op(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward)


def reduce(kind: str, x, axes=None, keepdims: bool = False) -> Tensor:
    """Reduce over a set of axes. sum and mean are differentiable; max is
    forward-only."""
    x = _as_tensor(x)
    if axes is None:
        ax = tuple(range(x.data.ndim))
    elif isinstance(axes, int):
        ax = (axes,)
    else:
        ax = tuple(axes)
    for a in ax:
        if not -x.data.ndim <= a < x.data.ndim:
            raise ValueError(f"axis {a} out of range for rank {x.data.ndim}")
    ax = tuple(a % x.data.ndim for a in ax)

    if kind == "max":
        def backward(_g):
            raise NotImplementedError("max reduction is not differentiable here")
        return make_op(x.data.max(axis=ax, keepdims=keepdims), (x,), backward)

    if kind not in ("sum", "mean"):
        raise ValueError(f"unknown reduction {kind!r}")
    count = int(np.prod([x.shape[a] for a in ax])) if ax else 1
    y = x.data.sum(axis=ax, keepdims=keepdims)
    if kind == "mean":
        y = y / count

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, ax)
        g = np.broadcast_to(g, x.shape)
        x._accumulate(g / count if kind == "mean" else g.copy())

    return make_op(y, (x,), backward)


def backward(output: Tensor) -> dict:
    """Run reverse-mode differentiation from a scalar and return a map from
    tensor id to gradient array (reachable tensors that require gradients)."""
    output.backward()
    grads, seen, stack = {}, set(), [output]
    while stack:
        t = stack.pop()
        if id(t) in seen:
            continue
        seen.add(id(t))
        if t.requires_grad and t.grad is not None:
            grads[id(t)] = t.grad
        stack.extend(t._parents)
    return grads


# -- verification ------------------------------------------------------------


def finite_diff_check(f, x: Tensor, epsilon: float = 1e-5) -> float:
    """Max relative mismatch between analytic and central-difference gradients.

    ``f`` must map a tensor to a scalar tensor deterministically. The
    reference gradient is computed by perturbing each element of ``x`` by
    +/- epsilon, entirely outside the recorded graph.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    leaf = Tensor(x.data.copy(), requires_grad=True)
    out = f(leaf)
    if not isinstance(out, Tensor) or out.data.size != 1:
        raise ValueError("f must return a scalar tensor")
    out.backward()
    analytic = leaf.grad.copy()

    numeric = np.zeros_like(leaf.data)
    flat = leaf.data.reshape(-1)
    num_flat = numeric.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + epsilon
            hi = float(f(leaf).data)
            flat[i] = orig - epsilon
            lo = float(f(leaf).data)
            flat[i] = orig
            num_flat[i] = (hi - lo) / (2.0 * epsilon)

    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-12)
    return float(np.max(np.abs(analytic - numeric) / denom))
