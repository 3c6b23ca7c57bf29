"""Dense tensors and a tape-based reverse-mode autodiff engine.

Every differentiable operation appends one :class:`Node` to a module-level
tape when at least one of its inputs requires a gradient. The tape is
append-only, so its order is a topological order of the computation DAG;
:func:`backward` walks it in reverse, then clears it.

Gradients accumulate into ``leaf.grad`` (call :meth:`Tensor.zero_grad` or the
optimizer's ``zero_grad`` between steps). Forward buffers that a backward rule
needs are owned by the node, and no op mutates an input buffer in place.
"""
from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractError, NumericalError

_TAPE: list["Node"] = []
_GRAD_ENABLED = True
_CHECK_FINITE = True
_DEFAULT_DTYPE = np.float32


class Node:
    """One recorded operation: inputs, outputs and a pure backward rule."""

    __slots__ = ("kind", "inputs", "outputs", "backward_fn")

    def __init__(self, kind: str, inputs: tuple, outputs: tuple, backward_fn: Callable):
        self.kind = kind
        self.inputs = inputs
        self.outputs = outputs
        self.backward_fn = backward_fn

    def __repr__(self) -> str:
        return f"Node({self.kind}, in={len(self.inputs)}, out={len(self.outputs)})"


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "node", "name", "__weakref__")

    # keep numpy from hijacking reflected operators (ndarray * Tensor)
    __array_priority__ = 1000

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None:
            dtype = data.dtype if isinstance(data, np.ndarray) and data.dtype.kind == "f" else _DEFAULT_DTYPE
        arr = np.asarray(data, dtype=dtype)
        # ascontiguousarray would promote 0-d arrays to 1-d
        self.data = arr if arr.flags.c_contiguous else np.ascontiguousarray(arr)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.node: Node | None = None
        self.name = name

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self.node is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.data.dtype)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag})"

    def __len__(self) -> int:
        return self.shape[0]

    # -- operator sugar (implemented in functional) ------------------------
    def __add__(self, other):
        return _F().add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return _F().sub(self, other)

    def __rsub__(self, other):
        return _F().sub(other, self)

    def __mul__(self, other):
        return _F().mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return _F().div(self, other)

    def __neg__(self):
        return _F().neg(self)

    def __matmul__(self, other):
        return _F().matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return _F().sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return _F().mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return _F().reshape(self, shape)

    def relu(self):
        return _F().relu(self)

    def backward(self, retain_graph: bool = False) -> None:
        backward(self, retain_graph=retain_graph)


def _F():
    from . import functional

    return functional


# -- tape control -----------------------------------------------------------

def is_grad_enabled() -> bool:
    return _GRAD_ENABLED


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


@contextlib.contextmanager
def default_dtype(dtype):
    """Dtype used when a Tensor is built from non-float data (f32 unless changed)."""
    global _DEFAULT_DTYPE
    prev = _DEFAULT_DTYPE
    _DEFAULT_DTYPE = np.dtype(dtype).type
    try:
        yield
    finally:
        _DEFAULT_DTYPE = prev


def get_default_dtype():
    return _DEFAULT_DTYPE


def set_check_finite(flag: bool) -> None:
    global _CHECK_FINITE
    _CHECK_FINITE = bool(flag)


def tape_size() -> int:
    return len(_TAPE)


def clear_tape() -> None:
    _release(_TAPE)
    _TAPE.clear()


def _release(nodes) -> None:
    # node <-> output references form cycles that hold the saved forward
    # buffers; break them so memory is returned without waiting for the gc
    for node in nodes:
        node.inputs = ()
        node.outputs = ()
        node.backward_fn = None


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x), dtype=dtype)


def record(kind: str, inputs: Sequence[Tensor], outputs: Sequence[np.ndarray],
           backward_fn: Callable) -> tuple[Tensor, ...]:
    """Wrap raw forward results as Tensors and append a tape node if needed.

    ``backward_fn`` receives one upstream gradient per output (zeros for an
    output nothing depended on) and returns one gradient per input, ``None``
    meaning "no gradient for this input".
    """
    if _CHECK_FINITE:
        for arr in outputs:
            if not np.isfinite(arr).all():
                raise NumericalError(f"{kind}: non-finite values in forward output")
    needs = _GRAD_ENABLED and any(t.requires_grad for t in inputs)
    outs = tuple(Tensor(o, requires_grad=needs, dtype=o.dtype) for o in outputs)
    if needs:
        node = Node(kind, tuple(inputs), outs, backward_fn)
        for o in outs:
            o.node = node
        _TAPE.append(node)
    return outs


def backward(loss: Tensor, retain_graph: bool = False) -> None:
    """Populate ``.grad`` of every requires-grad leaf that the tape touches.

    Leaves that appear on the tape but do not influence ``loss`` receive an
    all-zero gradient. The tape is cleared afterwards unless ``retain_graph``.
    """
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss.node is None:
        if not loss.requires_grad or not _TAPE:
            raise ContractError("backward called on a loss with an empty tape")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaves: dict[int, Tensor] = {}
    if loss.node is None:
        leaves[id(loss)] = loss
    for node in reversed(_TAPE):
        gouts = [grads.pop(id(o), None) for o in node.outputs]
        for inp in node.inputs:
            if inp.requires_grad and inp.node is None:
                leaves[id(inp)] = inp
        if all(g is None for g in gouts):
            continue
        gouts = [np.zeros_like(o.data) if g is None else g for g, o in zip(gouts, node.outputs)]
        gins = node.backward_fn(*gouts)
        for inp, g in zip(node.inputs, gins):
            if g is None or not inp.requires_grad:
                continue
            key = id(inp)
            prev = grads.get(key)
            grads[key] = g if prev is None else prev + g
    for key, leaf in leaves.items():
        g = grads.get(key)
        if g is None:
            g = np.zeros_like(leaf.data)
        leaf.grad = g.copy() if leaf.grad is None else leaf.grad + g
    if not retain_graph:
        clear_tape()


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None
