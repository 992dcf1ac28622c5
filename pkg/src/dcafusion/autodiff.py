"""Dense float64 matrices with taped reverse-mode differentiation.

Operations evaluate eagerly on numpy arrays. Whenever an operand is
attached to a :class:`Tape`, the result is appended to that tape so
``Tape.backward`` can later push the gradient of a scalar output back to
every registered parameter. A tape is built for one forward pass and
discarded after its backward pass; matrices themselves are immutable once
constructed and may be shared freely.

The primitive set is exactly what the fusion model and its concordance
loss need: matrix product, same-shape elementwise arithmetic, scalar
scaling, full reduction to a 1x1 sum, transposition, single-row
extraction, row replication, ReLU, tanh, and column-wise temperature
softmax. There is no broadcasting; shapes must line up explicitly.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Matrix",
    "Tape",
    "ShapeError",
    "matmul",
    "elementwise",
    "add",
    "sub",
    "mul",
    "div",
    "scale",
    "sum_all",
    "transpose",
    "row",
    "replicate_rows",
    "relu",
    "tanh",
    "softmax_cols",
    "concat_rows",
    "grad_check",
]


class ShapeError(ValueError):
    """Operand shapes do not fit the requested operation."""


class Matrix:
    """A rows x cols matrix of 64-bit reals, immutable after construction.

    ``data`` is a read-only, row-major numpy array. ``grad`` is only
    populated on tape-attached matrices by ``Tape.backward``.
    """

    __slots__ = ("data", "grad", "tape", "op", "inputs", "aux")

    def __init__(self, values):
        arr = np.array(values, dtype=np.float64, order="C")
        if arr.ndim != 2:
            raise ShapeError(f"matrix values must be 2-D, got ndim={arr.ndim}")
        if arr.size and not np.isfinite(arr).all():
            raise ValueError("matrix entries must be finite")
        arr.flags.writeable = False
        self.data = arr
        self.grad = None
        self.tape = None
        self.op = None
        self.inputs: tuple[Matrix, ...] = ()
        self.aux = None

    @classmethod
    def _make(cls, data: np.ndarray, tape, op, inputs, aux) -> "Matrix":
        m = cls.__new__(cls)
        data.flags.writeable = False
        m.data = data
        m.grad = None
        m.tape = tape
        m.op = op
        m.inputs = inputs
        m.aux = aux
        return m

    @classmethod
    def zeros(cls, rows: int, cols: int) -> "Matrix":
        return cls(np.zeros((rows, cols)))

    @classmethod
    def ones(cls, rows: int, cols: int) -> "Matrix":
        return cls(np.ones((rows, cols)))

    @classmethod
    def eye(cls, n: int) -> "Matrix":
        return cls(np.eye(n))

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def item(self) -> float:
        if self.data.shape != (1, 1):
            raise ShapeError(f"item() needs a 1x1 matrix, got {self.rows}x{self.cols}")
        return float(self.data[0, 0])

    def tolist(self) -> list[list[float]]:
        return self.data.tolist()

    def __matmul__(self, other: "Matrix") -> "Matrix":
        return matmul(self, other)

    def __add__(self, other: "Matrix") -> "Matrix":
        return add(self, other)

    def __sub__(self, other: "Matrix") -> "Matrix":
        return sub(self, other)

    def __mul__(self, other: "Matrix") -> "Matrix":
        return mul(self, other)

    def __repr__(self) -> str:
        tag = f", op={self.op!r}" if self.op else ""
        return f"Matrix({self.rows}x{self.cols}{tag})"


class Tape:
    """Ordered record of one forward pass; operands always precede results.

    Nodes are appended in execution order, so a reverse sweep is already a
    valid topological order for gradient accumulation. Confine a tape to a
    single logical thread between its forward and backward pass.
    """

    __slots__ = ("nodes", "params")

    def __init__(self) -> None:
        self.nodes: list[Matrix] = []
        self.params: list[Matrix] = []

    def parameter(self, values) -> Matrix:
        """Register a leaf that will receive a gradient from backward()."""
        m = Matrix(values)
        m.tape = self
        m.op = "param"
        self.params.append(m)
        self.nodes.append(m)
        return m

    def backward(self, output: Matrix) -> None:
        """Accumulate d(output)/d(param) into every parameter's ``grad``.

        ``output`` must be a 1x1 matrix recorded on this tape. Parameters
        the output does not depend on receive an all-zero gradient.
        """
        if output.tape is not self:
            raise ValueError("output was not recorded on this tape")
        if output.data.shape != (1, 1):
            raise ShapeError(
                f"backward needs a scalar (1x1) output, got {output.rows}x{output.cols}"
            )
        for node in self.nodes:
            node.grad = None
        output.grad = np.ones((1, 1))
        for node in reversed(self.nodes):
            if node.grad is None or node.op == "param":
                continue
            _VJP[node.op](node)
        for p in self.params:
            if p.grad is None:
                p.grad = np.zeros_like(p.data)

    def replay(self) -> bool:
        """Recompute every node from its operands; True iff all match bitwise."""
        for node in self.nodes:
            if node.op == "param":
                continue
            fresh = _FORWARD[node.op]([m.data for m in node.inputs], node.aux)
            if not np.array_equal(fresh, node.data):
                return False
        return True


def _tape_of(inputs: Sequence[Matrix]):
    tape = None
    for m in inputs:
        t = m.tape
        if t is not None:
            if tape is None:
                tape = t
            elif tape is not t:
                raise ValueError("operands were recorded on different tapes")
    return tape


def _result(data: np.ndarray, op: str, inputs: tuple[Matrix, ...], aux=None) -> Matrix:
    tape = _tape_of(inputs)
    if tape is None:
        return Matrix._make(data, None, None, (), None)
    out = Matrix._make(data, tape, op, inputs, aux)
    tape.nodes.append(out)
    return out


def _acc(m: Matrix, g: np.ndarray) -> None:
    # Gradients are never mutated in place, so sharing arrays between
    # accumulation sites is safe.
    if m.tape is None:
        return
    m.grad = g if m.grad is None else m.grad + g


# ---------------------------------------------------------------------------
# primitives


def matmul(a: Matrix, b: Matrix) -> Matrix:
    """Standard matrix product, gradient-traceable."""
    if a.cols != b.rows:
        raise ShapeError(
            f"matmul: inner dimensions differ, {a.rows}x{a.cols} @ {b.rows}x{b.cols}"
        )
    return _result(a.data @ b.data, "matmul", (a, b))


def add(a: Matrix, b: Matrix) -> Matrix:
    _same_shape("add", a, b)
    return _result(a.data + b.data, "add", (a, b))


def sub(a: Matrix, b: Matrix) -> Matrix:
    _same_shape("sub", a, b)
    return _result(a.data - b.data, "sub", (a, b))


def mul(a: Matrix, b: Matrix) -> Matrix:
    _same_shape("mul", a, b)
    return _result(a.data * b.data, "mul", (a, b))


def div(a: Matrix, b: Matrix) -> Matrix:
    _same_shape("div", a, b)
    return _result(a.data / b.data, "div", (a, b))


def elementwise(a: Matrix, b: Matrix, kind: str) -> Matrix:
    """Entrywise sum or product of two same-shape matrices."""
    if kind == "add":
        return add(a, b)
    if kind == "mul":
        return mul(a, b)
    raise ValueError(f"elementwise kind must be 'add' or 'mul', got {kind!r}")


def scale(a: Matrix, c: float) -> Matrix:
    """Multiply every entry by the plain constant ``c``."""
    return _result(a.data * c, "scale", (a,), float(c))


def sum_all(a: Matrix) -> Matrix:
    """Reduce to a 1x1 matrix holding the sum of all entries."""
    return _result(np.array([[a.data.sum()]]), "sum", (a,))


def transpose(a: Matrix) -> Matrix:
    return _result(np.ascontiguousarray(a.data.T), "transpose", (a,))


def row(a: Matrix, i: int) -> Matrix:
    """Extract row ``i`` as a 1 x cols matrix."""
    if not 0 <= i < a.rows:
        raise ShapeError(f"row {i} out of range for a {a.rows}x{a.cols} matrix")
    return _result(a.data[i : i + 1, :].copy(), "row", (a,), i)


def replicate_rows(v: Matrix, copies: int) -> Matrix:
    """Stack ``copies`` copies of a 1 x L row; numerically identical to
    broadcasting the row down ``copies`` rows."""
    if v.rows != 1:
        raise ShapeError(f"replicate_rows needs a single row, got {v.rows}x{v.cols}")
    if copies < 1:
        raise ShapeError(f"replicate_rows needs copies >= 1, got {copies}")
    return _result(np.repeat(v.data, copies, axis=0), "replicate", (v,), copies)


def relu(a: Matrix) -> Matrix:
    """Entrywise max(0, x); the subgradient at exactly 0 is taken as 0."""
    return _result(np.maximum(a.data, 0.0), "relu", (a,))


def tanh(a: Matrix) -> Matrix:
    return _result(np.tanh(a.data), "tanh", (a,))


def softmax_cols(m: Matrix, temperature: float) -> Matrix:
    """Column-wise softmax of m / temperature.

    The per-column maximum is subtracted before exponentiation; small
    temperatures scale logits up sharply, so the naive form overflows.
    """
    if temperature <= 0:
        raise ValueError(f"softmax temperature must be positive, got {temperature}")
    if m.rows < 1:
        raise ShapeError("softmax_cols needs at least one row")
    return _result(
        _softmax_cols_data(m.data, temperature), "softmax_cols", (m,), float(temperature)
    )


def _softmax_cols_data(a: np.ndarray, t: float) -> np.ndarray:
    z = a / t
    z = z - z.max(axis=0, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=0, keepdims=True)


def concat_rows(a: Matrix, b: Matrix) -> Matrix:
    """Stack a above b; both must have the same number of columns."""
    if a.cols != b.cols:
        raise ShapeError(
            f"concat_rows: column counts differ, {a.rows}x{a.cols} vs {b.rows}x{b.cols}"
        )
    return _result(np.concatenate([a.data, b.data], axis=0), "concat", (a, b), a.rows)


def _same_shape(name: str, a: Matrix, b: Matrix) -> None:
    if a.data.shape != b.data.shape:
        raise ShapeError(
            f"{name}: shapes differ, {a.rows}x{a.cols} vs {b.rows}x{b.cols}"
        )


# ---------------------------------------------------------------------------
# reverse-mode rules


def _vjp_matmul(out: Matrix) -> None:
    a, b = out.inputs
    _acc(a, out.grad @ b.data.T)
    _acc(b, a.data.T @ out.grad)


def _vjp_add(out: Matrix) -> None:
    a, b = out.inputs
    _acc(a, out.grad)
    _acc(b, out.grad)


def _vjp_sub(out: Matrix) -> None:
    a, b = out.inputs
    _acc(a, out.grad)
    _acc(b, -out.grad)


def _vjp_mul(out: Matrix) -> None:
    a, b = out.inputs
    _acc(a, out.grad * b.data)
    _acc(b, out.grad * a.data)


def _vjp_div(out: Matrix) -> None:
    a, b = out.inputs
    _acc(a, out.grad / b.data)
    _acc(b, -out.grad * a.data / (b.data * b.data))


def _vjp_scale(out: Matrix) -> None:
    (a,) = out.inputs
    _acc(a, out.grad * out.aux)


def _vjp_sum(out: Matrix) -> None:
    (a,) = out.inputs
    _acc(a, np.full_like(a.data, out.grad[0, 0]))


def _vjp_transpose(out: Matrix) -> None:
    (a,) = out.inputs
    _acc(a, out.grad.T)


def _vjp_row(out: Matrix) -> None:
    (a,) = out.inputs
    g = np.zeros_like(a.data)
    g[out.aux] = out.grad[0]
    _acc(a, g)


def _vjp_replicate(out: Matrix) -> None:
    (v,) = out.inputs
    _acc(v, out.grad.sum(axis=0, keepdims=True))


def _vjp_relu(out: Matrix) -> None:
    (a,) = out.inputs
    _acc(a, out.grad * (a.data > 0))


def _vjp_tanh(out: Matrix) -> None:
    (a,) = out.inputs
    _acc(a, out.grad * (1.0 - out.data * out.data))


def _vjp_softmax_cols(out: Matrix) -> None:
    (a,) = out.inputs
    s = out.data
    g = out.grad
    _acc(a, s * (g - (s * g).sum(axis=0, keepdims=True)) / out.aux)


def _vjp_concat(out: Matrix) -> None:
    a, b = out.inputs
    d1 = out.aux
    _acc(a, out.grad[:d1])
    _acc(b, out.grad[d1:])


_VJP: dict[str, Callable[[Matrix], None]] = {
    "matmul": _vjp_matmul,
    "add": _vjp_add,
    "sub": _vjp_sub,
    "mul": _vjp_mul,
    "div": _vjp_div,
    "scale": _vjp_scale,
    "sum": _vjp_sum,
    "transpose": _vjp_transpose,
    "row": _vjp_row,
    "replicate": _vjp_replicate,
    "relu": _vjp_relu,
    "tanh": _vjp_tanh,
    "softmax_cols": _vjp_softmax_cols,
    "concat": _vjp_concat,
}

_FORWARD: dict[str, Callable[[list[np.ndarray], object], np.ndarray]] = {
    "matmul": lambda ins, aux: ins[0] @ ins[1],
    "add": lambda ins, aux: ins[0] + ins[1],
    "sub": lambda ins, aux: ins[0] - ins[1],
    "mul": lambda ins, aux: ins[0] * ins[1],
    "div": lambda ins, aux: ins[0] / ins[1],
    "scale": lambda ins, aux: ins[0] * aux,
    "sum": lambda ins, aux: np.array([[ins[0].sum()]]),
    "transpose": lambda ins, aux: np.ascontiguousarray(ins[0].T),
    "row": lambda ins, aux: ins[0][aux : aux + 1, :].copy(),
    "replicate": lambda ins, aux: np.repeat(ins[0], aux, axis=0),
    "relu": lambda ins, aux: np.maximum(ins[0], 0.0),
    "tanh": lambda ins, aux: np.tanh(ins[0]),
    "softmax_cols": lambda ins, aux: _softmax_cols_data(ins[0], aux),
    "concat": lambda ins, aux: np.concatenate([ins[0], ins[1]], axis=0),
}


# ---------------------------------------------------------------------------
# gradient checking


def grad_check(f, params: Sequence[np.ndarray], h: float = 1e-5) -> float:
    """Max relative error between taped gradients of ``f`` and central differences.

    ``f`` maps a list of parameter matrices (one per entry of ``params``)
    to a scalar Matrix built from the operations of this module. The
    relative error at a coordinate is
    ``|analytic - numeric| / max(1e-8, |analytic| + |numeric|)``.

    Coordinates whose perturbed evaluations put any ReLU input within
    ``h`` of zero, or on opposite sides of it, are skipped: the central
    difference would span the kink there.
    """
    if h <= 0:
        raise ValueError(f"step h must be positive, got {h}")
    values = [np.array(p, dtype=np.float64) for p in params]
    tape = Tape()
    nodes = [tape.parameter(v) for v in values]
    out = f(nodes)
    tape.backward(out)
    analytic = [n.grad for n in nodes]

    worst = 0.0
    for i, base in enumerate(values):
        for j in range(base.size):
            f_plus, relu_plus = _probe(f, values, i, j, +h)
            f_minus, relu_minus = _probe(f, values, i, j, -h)
            if _straddles_kink(relu_plus, relu_minus, h):
                continue
            numeric = (f_plus - f_minus) / (2.0 * h)
            a = analytic[i].ravel()[j]
            err = abs(a - numeric) / max(1e-8, abs(a) + abs(numeric))
            if err > worst:
                worst = err
    return worst


def _probe(f, values, i: int, j: int, delta: float):
    bumped = list(values)
    v = values[i].copy()
    v.ravel()[j] += delta
    bumped[i] = v
    tape = Tape()
    out = f([tape.parameter(b) for b in bumped])
    relu_inputs = [n.inputs[0].data for n in tape.nodes if n.op == "relu"]
    return float(out.data[0, 0]), relu_inputs


def _straddles_kink(plus, minus, h: float) -> bool:
    for p, m in zip(plus, minus):
        if np.any(np.abs(p) < h) or np.any(np.abs(m) < h):
            return True
        if np.any((p > 0) != (m > 0)):
            return True
    return False
