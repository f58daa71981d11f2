"""Dense tensors with reverse-mode autodiff.

A Tensor wraps a contiguous row-major numpy array (float64 by default,
float32 opt-in).  Ops in :mod:`pswa.numerics.ops` build a graph of
OpNode records; ``Tensor.backward()`` replays it in reverse topological
order via a GradTape and accumulates ``.grad`` arrays on every tensor
that participated with ``requires_grad=True``.

Debug-level finite checks are on by default: any op producing NaN/Inf
raises NumericsError immediately.  Flip them off with
``set_debug_checks(False)`` when chasing performance (there is not much
to chase; this is a desk-scale reference, not a training framework).
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from ..errors import DimensionError, NumericsError, UsageError

_DTYPES = {"f64": np.float64, "f32": np.float32}

_default_dtype = np.float64
_debug_checks = True
_grad_enabled = True


def set_default_dtype(dtype) -> None:
    """Set the element type new tensors are created with ("f64"/"f32")."""
    global _default_dtype
    if isinstance(dtype, str):
        if dtype not in _DTYPES:
            raise UsageError(f"unknown dtype name {dtype!r}; expected 'f64' or 'f32'")
        _default_dtype = _DTYPES[dtype]
    elif dtype in (np.float64, np.float32):
        _default_dtype = np.dtype(dtype).type
    else:
        raise UsageError(f"unsupported dtype {dtype!r}")


def default_dtype():
    return _default_dtype


def set_debug_checks(enabled: bool) -> None:
    global _debug_checks
    _debug_checks = bool(enabled)


def debug_checks_enabled() -> bool:
    return _debug_checks


def grad_enabled() -> bool:
    return _grad_enabled


@contextlib.contextmanager
def no_grad():
    """Disable graph construction inside the block (inference, samplers)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class OpNode:
    """One recorded op: name, parent tensors, and a vjp callback.

    ``backward(g)`` receives the upstream gradient (ndarray, same shape
    as the op's output) and returns one ndarray-or-None per parent.
    """

    __slots__ = ("op", "parents", "backward")

    def __init__(self, op: str, parents: tuple, backward: Callable):
        self.op = op
        self.parents = parents
        self.backward = backward


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "node")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        dt = _default_dtype if dtype is None else (_DTYPES[dtype] if isinstance(dtype, str) else dtype)
        arr = np.ascontiguousarray(data, dtype=dt)
        if _debug_checks and not np.all(np.isfinite(arr)):
            raise NumericsError("tensor constructed with non-finite values")
        self.data: np.ndarray = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.node: Optional[OpNode] = None

    # -- construction helpers -------------------------------------------------

    @staticmethod
    def _wrap(arr: np.ndarray, requires_grad: bool = False) -> "Tensor":
        """Wrap an array as-is (no cast, no copy).  Internal: ops only."""
        t = Tensor.__new__(Tensor)
        t.data = arr
        t.requires_grad = requires_grad
        t.grad = None
        t.node = None
        return t

    # -- basic introspection --------------------------------------------------

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise UsageError(f"item() on tensor of {self.data.size} elements")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        """A defensive copy of the payload."""
        return np.array(self.data, copy=True)

    def detach(self) -> "Tensor":
        return Tensor._wrap(self.data)

    def __repr__(self) -> str:
        head = np.array2string(self.data, threshold=8, precision=6)
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype.name}, requires_grad={self.requires_grad})\n{head}"

    # -- parameter maintenance ------------------------------------------------

    def assign_(self, new_data) -> None:
        """Overwrite a leaf tensor's payload in place (optimizer updates).

        Refuses to touch graph-produced tensors: mutating those would
        silently invalidate recorded backward closures.
        """
        if self.node is not None:
            raise UsageError("assign_ is only valid on leaf tensors")
        arr = np.asarray(new_data, dtype=self.data.dtype)
        if arr.shape != self.data.shape:
            raise DimensionError(f"assign_ shape mismatch: {arr.shape} vs {self.data.shape}")
        if _debug_checks and not np.all(np.isfinite(arr)):
            raise NumericsError("assign_ with non-finite values")
        np.copyto(self.data, arr)

    def zero_grad(self) -> None:
        self.grad = None

    # -- autodiff entry point ---------------------------------------------------

    def backward(self, seed=None) -> None:
        """Accumulate d(self)/d(leaf) into ``.grad`` across the graph.

        ``self`` must be scalar unless an explicit ``seed`` gradient of
        matching shape is supplied.
        """
        if seed is None:
            if self.data.size != 1:
                raise UsageError("backward() without seed requires a scalar tensor")
            seed_arr = np.ones_like(self.data)
        else:
            seed_arr = np.asarray(seed, dtype=self.data.dtype)
            if seed_arr.shape != self.data.shape:
                raise DimensionError(f"seed shape {seed_arr.shape} != output shape {self.data.shape}")
        GradTape(self).run(seed_arr)


class GradTape:
    """Reverse-topological replay schedule for one graph output."""

    def __init__(self, root: Tensor):
        self.root = root
        self.order: list[Tensor] = []  # inputs first, root last
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(root, False)]
        while stack:
            t, expanded = stack.pop()
            if expanded:
                self.order.append(t)
                continue
            if id(t) in visited:
                continue
            visited.add(id(t))
            stack.append((t, True))
            if t.node is not None:
                for p in t.node.parents:
                    if p.requires_grad and id(p) not in visited:
                        stack.append((p, False))

    def run(self, seed: np.ndarray) -> None:
        grads: dict[int, np.ndarray] = {id(self.root): seed}
        for t in reversed(self.order):
            g = grads.pop(id(t), None)
            if g is None:
                continue  # reachable but received no gradient
            if t.requires_grad:
                t.grad = g if t.grad is None else t.grad + g
            if t.node is None:
                continue
            contribs = t.node.backward(g)
            if len(contribs) != len(t.node.parents):
                raise NumericsError(f"op {t.node.op!r} returned {len(contribs)} grads for {len(t.node.parents)} parents")
            for parent, contrib in zip(t.node.parents, contribs):
                if not parent.requires_grad or contrib is None:
                    continue
                if contrib.shape != parent.data.shape:
                    raise DimensionError(
                        f"op {t.node.op!r}: gradient shape {contrib.shape} != parent shape {parent.data.shape}"
                    )
                if _debug_checks and not np.all(np.isfinite(contrib)):
                    raise NumericsError(f"op {t.node.op!r} produced a non-finite gradient")
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + contrib
                else:
                    grads[key] = contrib


def as_tensor(value, dtype=None) -> Tensor:
    """Coerce arrays/scalars to a constant Tensor; pass Tensors through."""
    if isinstance(value, Tensor):
        return value
    return Tensor(value, dtype=dtype)


def zeros(shape: Sequence[int] | int, requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(shape, dtype=_default_dtype), requires_grad=requires_grad)


def ones(shape: Sequence[int] | int, requires_grad: bool = False) -> Tensor:
    return Tensor(np.ones(shape, dtype=_default_dtype), requires_grad=requires_grad)


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None
