"""Graph nodes and reverse-mode accumulation.

Every op records a vector-Jacobian product written in terms of other ops, so
running :func:`grad` with ``create_graph=True`` yields gradient tensors that
are themselves differentiable (needed for the gradient penalty).
"""
from __future__ import annotations

import contextlib

import numpy as np

__all__ = [
    "Tensor",
    "as_tensor",
    "no_grad",
    "grad_enabled",
    "grad",
    "backward",
    "ShapeError",
    "kink_probe",
]


class ShapeError(ValueError):
    pass


_GRAD_ENABLED = True
_KINK_LOG: list | None = None


def grad_enabled() -> bool:
    return _GRAD_ENABLED


@contextlib.contextmanager
def _grad_mode(enabled: bool):
    global _GRAD_ENABLED
    prev, _GRAD_ENABLED = _GRAD_ENABLED, enabled
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def no_grad():
    """Context manager: ops inside build no graph."""
    return _grad_mode(False)


@contextlib.contextmanager
def kink_probe():
    """Collect the branch pattern of every piecewise op evaluated inside.

    Finite-difference checks compare these patterns to skip perturbations
    that cross a kink (leaky ReLU at 0, ``abs`` at 0, clamp bounds, ties).
    """
    global _KINK_LOG
    prev, _KINK_LOG = _KINK_LOG, []
    try:
        yield _KINK_LOG
    finally:
        _KINK_LOG = prev


def log_kink(pattern) -> None:
    if _KINK_LOG is not None:
        _KINK_LOG.append(np.asarray(pattern))


class Tensor:
    """A node in the computation graph wrapping a numpy array."""

    __slots__ = ("value", "requires_grad", "name", "op", "_parents", "_vjp")
    __array_priority__ = 100

    def __init__(self, value, requires_grad=False, name=None, _parents=(), _vjp=None, _op="leaf"):
        self.value = np.asarray(value)
        self.requires_grad = bool(requires_grad)
        self.name = name
        self.op = _op
        self._parents = _parents
        self._vjp = _vjp

    # -- introspection
    @property
    def shape(self):
        return self.value.shape

    @property
    def dtype(self):
        return self.value.dtype

    @property
    def ndim(self):
        return self.value.ndim

    @property
    def size(self):
        return self.value.size

    def numpy(self) -> np.ndarray:
        return self.value

    def item(self) -> float:
        return float(self.value)

    def detach(self) -> "Tensor":
        return Tensor(self.value)

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, op={self.op}{tag})"

    # -- arithmetic sugar; the implementations live in ops
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        from . import ops
        return ops.div(self, other)

    def __rtruediv__(self, other):
        from . import ops
        return ops.div(other, self)

    def __neg__(self):
        from . import ops
        return ops.neg(self)

    def __pow__(self, p):
        from . import ops
        return ops.power(self, p)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)

    def __getitem__(self, index):
        from . import ops
        return ops.getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        from . import ops
        return ops.sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        from . import ops
        return ops.mean(self, axis, keepdims)

    def reshape(self, *shape):
        from . import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x, dtype=dtype)
    return Tensor(arr)


def make_node(value, parents, vjp, op: str) -> Tensor:
    """Wrap an op result; link it into the graph only when gradients can flow."""
    parents = tuple(parents)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        return Tensor(value, True, None, parents, vjp, op)
    return Tensor(value, _op=op)


def _reverse_topo(root: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen and p.requires_grad:
                stack.append((p, False))
    order.reverse()
    return order


def grad(output: Tensor, inputs, grad_output=None, create_graph: bool = False) -> list[Tensor]:
    """Gradients of ``output`` with respect to each of ``inputs``.

    Inputs the output does not depend on get zero tensors.  With
    ``create_graph`` the returned tensors carry their own graph and can be
    differentiated again.
    """
    from . import ops

    inputs = list(inputs)
    if grad_output is None:
        if output.size != 1:
            raise ShapeError(f"grad of a non-scalar output {output.shape} needs grad_output")
        grad_output = Tensor(np.ones_like(output.value))
    wanted = {id(t) for t in inputs}
    found: dict[int, Tensor] = {}
    pending: dict[int, Tensor] = {id(output): as_tensor(grad_output)}

    with _grad_mode(create_graph):
        for node in _reverse_topo(output):
            g = pending.pop(id(node), None)
            if g is None:
                continue
            if id(node) in wanted:
                found[id(node)] = g
            if node._vjp is None:
                continue
            for parent, pg in zip(node._parents, node._vjp(g)):
                if pg is None or not parent.requires_grad:
                    continue
                prev = pending.get(id(parent))
                pending[id(parent)] = pg if prev is None else ops.add(prev, pg)

    out = []
    for t in inputs:
        g = found.get(id(t))
        out.append(g if g is not None else Tensor(np.zeros_like(t.value)))
    return out


def backward(loss: Tensor, params) -> dict[str, np.ndarray]:
    """Reverse-mode gradients of a scalar loss keyed by parameter name.

    ``params`` is a mapping ``name -> Tensor`` (e.g. a ParamStore); parameters
    that do not influence the loss get zero gradients.
    """
    if loss.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    names = list(params.keys())
    tensors = [params[k] for k in names]
    grads = grad(loss, tensors)
    return {k: g.value for k, g in zip(names, grads)}
