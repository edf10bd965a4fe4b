"""Dense float64 tensors with tape-based reverse-mode gradients.

Only what small MLPs need: elementwise ops, bias broadcasting, matmul,
reductions, row-wise normalisation and logsumexp.  Every op records a
closure that maps the output gradient to parent gradients; ``backward``
walks the tape in reverse topological order.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

Rng = np.random.Generator

_GRAD_ENABLED = True


class DegenerateInputError(ValueError):
    pass


class InvalidParameterError(ValueError):
    pass


class EvaluationError(RuntimeError):
    pass


def make_rng(seed: int, *keys: int) -> Rng:
    """Philox counter-based generator; ``keys`` derive independent sub-streams."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), *map(int, keys)])))


@contextlib.contextmanager
def no_grad():
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


@contextlib.contextmanager
def frozen(params: Iterable["Tensor"]):
    """Temporarily treat ``params`` as constants so no gradient reaches them."""
    params = list(params)
    flags = [p.requires_grad for p in params]
    for p in params:
        p.requires_grad = False
    try:
        yield
    finally:
        for p, f in zip(params, flags):
            p.requires_grad = f


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("values", "grad", "requires_grad", "_parents", "_backward", "name")
    # make numpy defer to the reflected Tensor operators
    __array_ufunc__ = None

    def __init__(self, values, requires_grad: bool = False, name: str = ""):
        self.values = np.asarray(values, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.values.shape

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def numpy(self) -> np.ndarray:
        return self.values

    def detach(self) -> "Tensor":
        return Tensor(self.values)

    def item(self) -> float:
        return float(self.values)

    def zero_grad(self) -> None:
        self.grad = None

    # graph construction -------------------------------------------------

    @staticmethod
    def _make(values: np.ndarray, parents: tuple, backward) -> "Tensor":
        out = Tensor.__new__(Tensor)
        out.values = values
        out.grad = None
        out.name = ""
        if _GRAD_ENABLED and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = parents
            out._backward = backward
        else:
            out.requires_grad = False
            out._parents = ()
            out._backward = None
        return out

    def backward(self, grad: np.ndarray | None = None) -> None:
        if grad is None:
            if self.values.size != 1:
                raise ValueError("backward() without a seed gradient needs a scalar output")
            grad = np.ones_like(self.values)
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
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
        grads: dict[int, np.ndarray] = {id(self): grad}
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
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg

    # arithmetic ----------------------------------------------------------

    def __add__(self, other) -> "Tensor":
        other = _as_tensor(other)
        sa, sb = self.shape, other.shape
        ra, rb = self.requires_grad, other.requires_grad
        return Tensor._make(self.values + other.values, (self, other),
                            lambda g: (_unbroadcast(g, sa) if ra else None, _unbroadcast(g, sb) if rb else None))

    __radd__ = __add__

    def __neg__(self) -> "Tensor":
        return Tensor._make(-self.values, (self,), lambda g: (-g,))

    def __sub__(self, other) -> "Tensor":
        other = _as_tensor(other)
        sa, sb = self.shape, other.shape
        ra, rb = self.requires_grad, other.requires_grad
        return Tensor._make(self.values - other.values, (self, other),
                            lambda g: (_unbroadcast(g, sa) if ra else None, _unbroadcast(-g, sb) if rb else None))

    def __rsub__(self, other) -> "Tensor":
        return _as_tensor(other) - self

    def __rtruediv__(self, other) -> "Tensor":
        return _as_tensor(other) / self

    def __rmatmul__(self, other) -> "Tensor":
        return _as_tensor(other) @ self

    def __mul__(self, other) -> "Tensor":
        other = _as_tensor(other)
        a, b = self.values, other.values
        ra, rb = self.requires_grad, other.requires_grad
        return Tensor._make(a * b, (self, other),
                            lambda g: (_unbroadcast(g * b, a.shape) if ra else None,
                                       _unbroadcast(g * a, b.shape) if rb else None))

    __rmul__ = __mul__

    def __truediv__(self, other) -> "Tensor":
        other = _as_tensor(other)
        a, b = self.values, other.values
        out = a / b
        ra, rb = self.requires_grad, other.requires_grad
        return Tensor._make(out, (self, other),
                            lambda g: (_unbroadcast(g / b, a.shape) if ra else None,
                                       _unbroadcast(-g * out / b, b.shape) if rb else None))

    def __matmul__(self, other) -> "Tensor":
        other = _as_tensor(other)
        a, b = self.values, other.values
        ra, rb = self.requires_grad, other.requires_grad
        return Tensor._make(a @ b, (self, other),
                            lambda g: (g @ b.T if ra else None, a.T @ g if rb else None))

    # reductions ------------------------------------------------------------

    def sum(self, axis: int | None = None, keepdims: bool = False) -> "Tensor":
        shape = self.shape

        def back(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, shape).copy(),)

        return Tensor._make(np.sum(self.values, axis=axis, keepdims=keepdims), (self,), back)

    def mean(self, axis: int | None = None, keepdims: bool = False) -> "Tensor":
        n = self.values.size if axis is None else self.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    # elementwise ---------------------------------------------------------------

    def exp(self) -> "Tensor":
        out = np.exp(self.values)
        return Tensor._make(out, (self,), lambda g: (g * out,))

    def log(self) -> "Tensor":
        a = self.values
        return Tensor._make(np.log(a), (self,), lambda g: (g / a,))

    def tanh(self) -> "Tensor":
        out = np.tanh(self.values)
        return Tensor._make(out, (self,), lambda g: (g * (1.0 - out * out),))

    def softplus(self) -> "Tensor":
        a = self.values
        out = np.logaddexp(0.0, a)
        return Tensor._make(out, (self,), lambda g: (g * _sigmoid(a),))

    def leaky_relu(self, slope: float = 0.2) -> "Tensor":
        a = self.values
        out = np.maximum(a, slope * a) if slope <= 1 else np.minimum(a, slope * a)

        def back(g):
            return (np.where(a > 0, g, slope * g),)

        return Tensor._make(out, (self,), back)

    def logsumexp(self, axis: int = -1) -> "Tensor":
        a = self.values
        mx = np.max(a, axis=axis, keepdims=True)
        shifted = np.exp(a - mx)
        total = shifted.sum(axis=axis, keepdims=True)
        out = np.squeeze(mx + np.log(total), axis=axis)
        probs = shifted / total
        return Tensor._make(out, (self,), lambda g: (np.expand_dims(g, axis) * probs,))

    def normalize_rows(self) -> "Tensor":
        """Scale each row (last axis) to unit Euclidean norm."""
        a = self.values
        norm = np.sqrt(np.sum(a * a, axis=-1, keepdims=True))
        if np.any(norm == 0):
            raise DegenerateInputError("cannot normalise a zero vector")
        out = a / norm

        def back(g):
            return ((g - out * np.sum(out * g, axis=-1, keepdims=True)) / norm,)

        return Tensor._make(out, (self,), back)

    def __getitem__(self, idx) -> "Tensor":
        shape = self.shape

        def back(g):
            full = np.zeros(shape)
            np.add.at(full, idx, g)
            return (full,)

        return Tensor._make(self.values[idx], (self,), back)


def _sigmoid(a: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * a))


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def affine(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """``x @ w + b`` for a (B, n) batch, recorded as a single op."""
    xv, wv = x.values, w.values
    rx, rw, rb = x.requires_grad, w.requires_grad, b.requires_grad
    return Tensor._make(xv @ wv + b.values, (x, w, b),
                        lambda g: (g @ wv.T if rx else None, xv.T @ g if rw else None,
                                   g.sum(axis=0) if rb else None))


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    return Tensor._make(np.concatenate([t.values for t in tensors], axis=axis), tuple(tensors),
                        lambda g: tuple(np.split(g, splits, axis=axis)))


# plain-array helpers -----------------------------------------------------------


def softmax(v, tau: float = 1.0) -> np.ndarray:
    """Temperature softmax with max subtraction."""
    if not tau > 0:
        raise InvalidParameterError(f"temperature must be positive, got {tau}")
    v = np.asarray(v, dtype=np.float64) / tau
    e = np.exp(v - np.max(v))
    return e / e.sum()


def l2_normalize(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    norm = np.linalg.norm(v)
    if norm == 0:
        raise DegenerateInputError("cannot normalise a zero vector")
    return v / norm


def grad_check(f: Callable[[Tensor], Tensor], x, eps: float = 1e-6) -> float:
    """Max relative error between reverse-mode and central-difference gradients.

    The error per coordinate is ``|analytic - numeric| / max(1, |numeric|)``.
    """
    if not 1e-6 <= eps <= 1e-3:
        raise InvalidParameterError(f"eps must lie in [1e-6, 1e-3], got {eps}")
    base = np.array(x.values if isinstance(x, Tensor) else x, dtype=np.float64)
    xt = Tensor(base.copy(), requires_grad=True)
    out = f(xt)
    if not np.isfinite(out.values).all():
        raise EvaluationError("function is not finite at the base point")
    out.backward()
    analytic = np.zeros_like(base) if xt.grad is None else xt.grad

    numeric = np.empty_like(base)
    flat = numeric.reshape(-1)
    for i in range(base.size):
        vals = []
        for sign in (1.0, -1.0):
            probe = base.copy().reshape(-1)
            probe[i] += sign * eps
            with no_grad():
                fv = f(Tensor(probe.reshape(base.shape))).values
            if not np.isfinite(fv).all():
                raise EvaluationError(f"non-finite evaluation at coordinate {i}")
            vals.append(float(fv))
        flat[i] = (vals[0] - vals[1]) / (2 * eps)
    err = np.abs(analytic - numeric) / np.maximum(1.0, np.abs(numeric))
    return float(err.max()) if err.size else 0.0


class Adam:
    """Adaptive-moment optimiser over a fixed list of parameter tensors."""

    def __init__(self, params: Sequence[Tensor], lr: float = 2e-4,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.values) for p in self.params]
        self.v = [np.zeros_like(p.values) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.values = p.values - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state(self) -> dict:
        return {"t": self.t, "m": [a.copy() for a in self.m], "v": [a.copy() for a in self.v]}
