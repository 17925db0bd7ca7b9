"""Dense float64 tensors with reverse-mode automatic differentiation.

The engine is a dynamic tape: every differentiable operation that touches
a tape-tracked tensor appends a node (operands + backward rule) to the
tape, and :meth:`Tape.backward` replays the nodes in reverse to accumulate
gradients. Tensors without a tape behave as constants and compute eagerly
with zero recording overhead, which is the inference path.

Broadcasting is intentionally restricted to scalar-with-tensor plus the
dedicated row-bias add; everything else requires exact shape agreement so
each backward rule stays auditable.

A tape and the tensors recorded on it belong to one thread; independent
tapes may run concurrently.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from . import kernels as K
from .errors import DegenerateVectorError, DimensionError, NumericError, TapeError

L2_NORM_EPS = 1e-12


def _as_array(data) -> np.ndarray:
    arr = np.asarray(data, dtype=np.float64)
    return np.ascontiguousarray(arr)


class Tensor:
    """A dense float64 array, optionally tracked by a :class:`Tape`."""

    __slots__ = ("data", "tape")

    def __init__(self, data, tape: "Tape | None" = None):
        self.data = _as_array(data)
        self.tape = tape

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item() needs a scalar, got shape {self.shape}")
        return float(self.data)

    def __repr__(self) -> str:
        tracked = "" if self.tape is None else ", tracked"
        return f"Tensor(shape={self.shape}{tracked})"

    # operator sugar; all semantics live in the module-level ops
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return neg(self)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise DimensionError("tensor/tensor division is not supported; multiply by a reciprocal scalar")
        return mul(self, 1.0 / float(other))

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis: int | None = None):
        return tensor_sum(self, axis=axis)

    def mean(self):
        return tensor_mean(self)

    def relu(self):
        return relu(self)

    def log(self):
        return log(self)

    def exp(self):
        return exp(self)


class _Node:
    __slots__ = ("out", "inputs", "vjp")

    def __init__(self, out: Tensor, inputs: tuple[Tensor, ...], vjp: Callable):
        self.out = out
        self.inputs = inputs
        self.vjp = vjp


class Gradients:
    """Result of a backward pass: gradient arrays looked up by tensor."""

    def __init__(self, by_id: dict[int, np.ndarray], params: list[Tensor]):
        self._by_id = by_id
        self._params = params

    def __getitem__(self, t: Tensor) -> np.ndarray:
        try:
            return self._by_id[id(t)]
        except KeyError:
            raise KeyError("no gradient recorded for this tensor") from None

    def get(self, t: Tensor, default=None):
        return self._by_id.get(id(t), default)

    def in_order(self) -> list[np.ndarray]:
        """Gradients of registered parameters, in registration order."""
        return [self._by_id[id(p)] for p in self._params]


class Tape:
    """Append-only record of operations plus a registry of parameters."""

    def __init__(self):
        self._nodes: list[_Node] = []
        self._params: list[Tensor] = []

    def parameter(self, data, copy: bool = False) -> Tensor:
        """Register a leaf tensor whose gradient backward() must produce.

        A float64 C-contiguous array is wrapped without copying, so
        in-place updates through the returned tensor mutate the caller's
        array. Pass ``copy=True`` to detach.
        """
        arr = _as_array(data)
        if copy and arr is data:
            arr = arr.copy()
        t = Tensor(arr, tape=self)
        self._params.append(t)
        return t

    @property
    def parameters(self) -> list[Tensor]:
        return list(self._params)

    def _record(self, out: Tensor, inputs: tuple[Tensor, ...], vjp: Callable) -> None:
        self._nodes.append(_Node(out, inputs, vjp))

    def __len__(self) -> int:
        return len(self._nodes)

    def backward(self, loss: Tensor) -> Gradients:
        """Reverse-accumulate d(loss)/d(parameter) for every parameter.

        The sweep is a fresh pass each call: running it twice on the same
        tape gives bit-identical gradients. Parameters not reached by the
        loss get zero gradients of their own shape.
        """
        if loss.shape != ():
            raise TapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        if loss.tape is not self:
            raise TapeError("loss was not recorded on this tape")
        grads: dict[int, np.ndarray] = {id(loss): np.ones((), dtype=np.float64)}
        for node in reversed(self._nodes):
            g_out = grads.get(id(node.out))
            if g_out is None:
                continue
            for t, g_in in zip(node.inputs, node.vjp(g_out)):
                if g_in is None or t.tape is None:
                    continue
                acc = grads.get(id(t))
                grads[id(t)] = g_in if acc is None else acc + g_in
        by_id: dict[int, np.ndarray] = {}
        for t_id, g in grads.items():
            by_id[t_id] = np.asarray(g, dtype=np.float64)
        for p in self._params:
            if id(p) not in by_id:
                by_id[id(p)] = np.zeros_like(p.data)
        return Gradients(by_id, self._params)


def backward(tape: Tape, loss: Tensor) -> Gradients:
    """Module-level alias for :meth:`Tape.backward`."""
    return tape.backward(loss)


# ---------------------------------------------------------------------------
# op plumbing
# ---------------------------------------------------------------------------


def tensor(data) -> Tensor:
    """Wrap data as a constant (untracked) tensor."""
    return Tensor(data)


def _lift(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


def _joint_tape(*ts: Tensor) -> Tape | None:
    tape = None
    for t in ts:
        if t.tape is None:
            continue
        if tape is None:
            tape = t.tape
        elif tape is not t.tape:
            raise TapeError("operands were recorded on different tapes")
    return tape


def _make(data: np.ndarray, inputs: tuple[Tensor, ...], vjp: Callable) -> Tensor:
    tape = _joint_tape(*inputs)
    out = Tensor(data, tape=tape)
    if tape is not None:
        tape._record(out, inputs, vjp)
    return out


def _binary_shapes(a: Tensor, b: Tensor, op: str) -> None:
    # exact match, or one side scalar
    if a.shape == b.shape or a.shape == () or b.shape == ():
        return
    raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} do not match")


def _reduce_to(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    # undo a scalar broadcast in the backward direction
    if shape == () and g.shape != ():
        return np.asarray(g.sum())
    return g


# ---------------------------------------------------------------------------
# elementwise and scalar ops
# ---------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    _binary_shapes(a, b, "add")

    def vjp(g):
        return _reduce_to(g, a.shape), _reduce_to(g, b.shape)

    return _make(a.data + b.data, (a, b), vjp)


def sub(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    _binary_shapes(a, b, "sub")

    def vjp(g):
        return _reduce_to(g, a.shape), _reduce_to(-g, b.shape)

    return _make(a.data - b.data, (a, b), vjp)


def mul(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    _binary_shapes(a, b, "mul")

    def vjp(g):
        return _reduce_to(g * b.data, a.shape), _reduce_to(g * a.data, b.shape)

    return _make(a.data * b.data, (a, b), vjp)


def neg(a) -> Tensor:
    a = _lift(a)

    def vjp(g):
        return (-g,)

    return _make(-a.data, (a,), vjp)


def relu(a) -> Tensor:
    a = _lift(a)

    def vjp(g):
        return (K.relu_bwd(a.data, g),)

    return _make(K.relu_fwd(a.data), (a,), vjp)


def log(a) -> Tensor:
    a = _lift(a)
    out = np.log(a.data)
    if not np.isfinite(out).all():
        raise NumericError("log produced non-finite values (non-positive input)")

    def vjp(g):
        return (g / a.data,)

    return _make(out, (a,), vjp)


def exp(a) -> Tensor:
    a = _lift(a)
    out = np.exp(a.data)
    if not np.isfinite(out).all():
        raise NumericError("exp overflowed to non-finite values")

    def vjp(g):
        return (g * out,)

    return _make(out, (a,), vjp)


# ---------------------------------------------------------------------------
# reductions and contractions
# ---------------------------------------------------------------------------


def tensor_sum(a, axis: int | None = None) -> Tensor:
    a = _lift(a)
    if axis is None:

        def vjp(g):
            return (np.full_like(a.data, float(g)),)

        return _make(np.asarray(a.data.sum()), (a,), vjp)
    if axis != -1:
        raise DimensionError("sum supports axis=None or axis=-1 only")
    if a.ndim == 0:
        raise DimensionError("sum(axis=-1) needs at least 1 dimension")

    def vjp(g):
        return (np.broadcast_to(np.expand_dims(g, -1), a.shape).copy(),)

    return _make(np.ascontiguousarray(a.data.sum(axis=-1)), (a,), vjp)


def tensor_mean(a) -> Tensor:
    a = _lift(a)
    inv = 1.0 / a.data.size

    def vjp(g):
        return (np.full_like(a.data, float(g) * inv),)

    return _make(np.asarray(a.data.mean()), (a,), vjp)


def dot(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    if a.ndim != 1 or b.ndim != 1 or a.shape != b.shape:
        raise DimensionError(f"dot needs equal-length vectors, got {a.shape} and {b.shape}")

    def vjp(g):
        return g * b.data, g * a.data

    return _make(np.asarray(a.data @ b.data), (a, b), vjp)


def matmul(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(f"matmul needs 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: inner dimensions disagree for {a.shape} and {b.shape}")

    def vjp(g):
        return g @ b.data.T, a.data.T @ g

    return _make(a.data @ b.data, (a, b), vjp)


def add_bias(mat, bias) -> Tensor:
    """Add a length-n bias vector to every row of an m-by-n matrix."""
    mat, bias = _lift(mat), _lift(bias)
    if mat.ndim != 2 or bias.ndim != 1 or mat.shape[1] != bias.shape[0]:
        raise DimensionError(f"add_bias: shapes {mat.shape} and {bias.shape} do not line up")

    def vjp(g):
        return g, g.sum(axis=0)

    return _make(mat.data + bias.data[None, :], (mat, bias), vjp)


# ---------------------------------------------------------------------------
# row-structured ops (last axis)
# ---------------------------------------------------------------------------


def _as_rows(a: Tensor) -> tuple[np.ndarray, tuple[int, ...]]:
    if a.ndim == 0:
        raise DimensionError("operation needs at least 1 dimension")
    shape = a.shape
    return a.data.reshape(-1, shape[-1]), shape


def l2_normalize(a, eps: float = L2_NORM_EPS) -> Tensor:
    """Scale each last-axis slice to unit L2 norm.

    Raises :class:`DegenerateVectorError` when any slice has norm <= eps;
    the direction of a near-zero vector carries no signal and silently
    returning zeros would corrupt a cosine-loss gradient.
    """
    a = _lift(a)
    rows, shape = _as_rows(a)
    norms = K.row_norms(rows)
    if not (norms > eps).all():
        bad = int(np.argmin(norms))
        raise DegenerateVectorError(
            f"cannot normalize: row {bad} has L2 norm {norms[bad]:.3e} <= {eps:.0e}"
        )
    y = K.div_rows(rows, norms)

    def vjp(g):
        return (K.l2norm_bwd(y, norms, g.reshape(y.shape)).reshape(shape),)

    return _make(y.reshape(shape), (a,), vjp)


def softmax(a) -> Tensor:
    """Row-stable softmax along the last axis (max-subtracted)."""
    a = _lift(a)
    rows, shape = _as_rows(a)
    p = K.softmax_rows(rows)

    def vjp(g):
        return (K.softmax_bwd(p, g.reshape(p.shape)).reshape(shape),)

    return _make(p.reshape(shape), (a,), vjp)


def log_softmax(a) -> Tensor:
    """log(softmax) along the last axis, computed without underflow."""
    a = _lift(a)
    rows, shape = _as_rows(a)
    lsm = K.log_softmax_rows(rows)

    def vjp(g):
        return (K.log_softmax_bwd(lsm, g.reshape(lsm.shape)).reshape(shape),)

    return _make(lsm.reshape(shape), (a,), vjp)


# ---------------------------------------------------------------------------
# batch assembly
# ---------------------------------------------------------------------------


def slice_rows(a, start: int, stop: int) -> Tensor:
    a = _lift(a)
    if a.ndim != 2:
        raise DimensionError(f"slice_rows needs a 2-D tensor, got {a.shape}")

    def vjp(g):
        full = np.zeros_like(a.data)
        full[start:stop] = g
        return (full,)

    return _make(a.data[start:stop].copy(), (a,), vjp)


def concat_rows(parts: Sequence[Tensor | np.ndarray]) -> Tensor:
    ts = [_lift(p) for p in parts]
    if not ts:
        raise DimensionError("concat_rows needs at least one tensor")
    width = ts[0].shape[-1]
    for t in ts:
        if t.ndim != 2 or t.shape[-1] != width:
            raise DimensionError(
                f"concat_rows: inconsistent shapes {[t.shape for t in ts]}"
            )
    sizes = [t.shape[0] for t in ts]
    offsets = np.cumsum([0] + sizes)

    def vjp(g):
        return tuple(g[offsets[i]:offsets[i + 1]] for i in range(len(ts)))

    return _make(np.concatenate([t.data for t in ts], axis=0), tuple(ts), vjp)
