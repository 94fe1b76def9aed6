"""Dense-matrix reverse-mode automatic differentiation on an explicit tape.

Everything is a 2-D float64 matrix. A ``Tape`` records every primitive
application in execution order; ``backward`` walks the records in reverse and
accumulates gradients into every tensor it visited. The tape lives for one
forward+backward pass; training loops build a fresh tape per step.

Conventions fixed here and relied on by the test suite:

* relu'(0) = 0 (subgradient choice).
* Gradients accumulate additively; calling ``backward`` twice without zeroing
  doubles the gradients. That accumulation is how full-batch training sums
  per-graph gradients.
* Broadcasting is limited to row-wise division by a column vector
  (``rowwise_div``); everything else is shape-strict.
"""

from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    """Operand shapes do not conform to the primitive."""


class DomainError(ValueError):
    """Operand values outside the primitive's domain (e.g. log of <= 0)."""


class DegenerateNeighborhoodError(ValueError):
    """A softmax row has no masked-in entries to normalize over."""


class Tensor:
    """A (rows, cols) float64 matrix with a gradient buffer and tape linkage.

    ``grad`` is materialized lazily (first access) to keep eval-only forward
    passes cheap; it is always the same shape as ``values``.
    """

    __slots__ = ("tape", "tape_id", "values", "_grad")

    def __init__(self, tape: "Tape", tape_id: int, values: np.ndarray):
        self.tape = tape
        self.tape_id = tape_id
        self.values = values
        self._grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape  # type: ignore[return-value]

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def cols(self) -> int:
        return self.values.shape[1]

    @property
    def grad(self) -> np.ndarray:
        if self._grad is None:
            self._grad = np.zeros_like(self.values)
        return self._grad

    def zero_grad(self) -> None:
        if self._grad is not None:
            self._grad.fill(0.0)

    def add_grad(self, g: np.ndarray) -> None:
        if self._grad is None:
            self._grad = np.zeros_like(self.values)
        self._grad += g

    def __repr__(self) -> str:  # pragma: no cover - debug aid
        return f"Tensor(id={self.tape_id}, shape={self.shape})"


class Record:
    """One primitive application: kind, operand ids, output id, attributes."""

    __slots__ = ("kind", "input_ids", "output_id", "attrs")

    def __init__(self, kind: str, input_ids: tuple[int, ...], output_id: int, attrs: dict):
        self.kind = kind
        self.input_ids = input_ids
        self.output_id = output_id
        self.attrs = attrs


class Tape:
    """Ordered list of primitive records plus the tensors they connect.

    Topological by construction: a record's inputs always precede it.
    ``replay`` recomputes every non-leaf value from the leaves through the
    same forward kernels, so saved values are reproducible bitwise.
    """

    def __init__(self):
        self.tensors: list[Tensor] = []
        self.records: list[Record] = []

    def tensor(self, values, shape: tuple[int, int] | None = None) -> Tensor:
        """Register a leaf tensor from a nested list, flat list, or ndarray."""
        arr = np.asarray(values, dtype=np.float64)
        if shape is not None:
            rows, cols = shape
            if rows < 0 or cols < 0:
                raise ShapeError(f"negative dimensions {shape}")
            if arr.size != rows * cols:
                raise ShapeError(f"{arr.size} values cannot fill shape {shape}")
            arr = arr.reshape(rows, cols)
        elif arr.ndim != 2:
            raise ShapeError(f"expected a 2-D matrix, got ndim={arr.ndim}")
        t = Tensor(self, len(self.tensors), arr)
        self.tensors.append(t)
        return t

    def _register_output(self, kind: str, inputs: tuple[Tensor, ...], values: np.ndarray,
                         attrs: dict) -> Tensor:
        out = Tensor(self, len(self.tensors), values)
        self.tensors.append(out)
        self.records.append(Record(kind, tuple(t.tape_id for t in inputs), out.tape_id, attrs))
        return out

    def replay(self) -> None:
        """Recompute all non-leaf values in place from current leaf values."""
        for rec in self.records:
            ins = tuple(self.tensors[i].values for i in rec.input_ids)
            self.tensors[rec.output_id].values = _FORWARD[rec.kind](*ins, **rec.attrs)


def tensor(shape: tuple[int, int], values, tape: Tape | None = None) -> Tensor:
    """Leaf constructor taking an explicit shape and a flat value buffer."""
    return (tape or Tape()).tensor(values, shape=shape)


# ---------------------------------------------------------------------------
# forward kernels


def _fwd_matmul(a, b):
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul {a.shape} x {b.shape}")
    return a @ b


def _same_shape(a, b, kind):
    if a.shape != b.shape:
        raise ShapeError(f"{kind} {a.shape} vs {b.shape}")


def _fwd_add(a, b):
    _same_shape(a, b, "add")
    return a + b


def _fwd_sub(a, b):
    _same_shape(a, b, "sub")
    return a - b


def _fwd_hadamard(a, b):
    _same_shape(a, b, "hadamard")
    return a * b


def _fwd_scale(a, factor):
    return a * factor


def _fwd_relu(a):
    return np.maximum(a, 0.0)


def _fwd_sigmoid(a):
    out = np.empty_like(a)
    pos = a >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    ea = np.exp(a[~pos])
    out[~pos] = ea / (1.0 + ea)
    return out


def _fwd_exp(a):
    return np.exp(a)


def _fwd_log(a):
    if np.any(a <= 0.0):
        raise DomainError("log of non-positive value")
    return np.log(a)


def _fwd_sum_all(a):
    return np.array([[a.sum()]])


def _fwd_row_l2_norm(a):
    return np.sqrt((a * a).sum(axis=1, keepdims=True))


def _fwd_rowwise_div(a, b):
    if b.shape != (a.shape[0], 1):
        raise ShapeError(f"rowwise_div needs a ({a.shape[0]},1) divisor, got {b.shape}")
    if np.any(b == 0.0):
        raise DomainError("rowwise_div by zero")
    return a / b


def _fwd_transpose(a):
    return a.T.copy()


def _fwd_masked_row_softmax(scores, mask):
    if scores.shape != mask.shape:
        raise ShapeError(f"softmax scores {scores.shape} vs mask {mask.shape}")
    if not np.all(mask.any(axis=1)):
        raise DegenerateNeighborhoodError("softmax row with no masked-in entries")
    shifted = np.where(mask, scores, -np.inf)
    shifted = shifted - shifted.max(axis=1, keepdims=True)
    expd = np.where(mask, np.exp(shifted), 0.0)
    return expd / expd.sum(axis=1, keepdims=True)


def _fwd_align_rows(h_prev, h_new, coeffs, scaling):
    _same_shape(h_prev, h_new, "align_rows")
    c = coeffs[:, None]
    if not scaling:
        return c * h_prev + (1.0 - c) * h_new
    prev_norm = np.sqrt((h_prev * h_prev).sum(axis=1, keepdims=True))
    new_norm = np.sqrt((h_new * h_new).sum(axis=1, keepdims=True))
    ok = prev_norm >= 1e-12
    safe = np.where(ok, prev_norm, 1.0)
    aligned = c * (h_prev / safe) * new_norm + (1.0 - c) * h_new
    # degenerate rule: a vanishing previous row has no direction to keep
    return np.where(ok, aligned, h_new)


def _fwd_gated_neighbor_mean(gate_u, gate_v, msgs, neighbor_lists, eps):
    _same_shape(gate_u, gate_v, "gated_neighbor_mean gates")
    _same_shape(gate_u, msgs, "gated_neighbor_mean messages")
    out = np.zeros_like(msgs)
    for u, nbrs in enumerate(neighbor_lists):
        if not nbrs:
            continue
        gates = _fwd_sigmoid(gate_u[u] + gate_v[list(nbrs)])
        out[u] = (gates * msgs[list(nbrs)]).sum(axis=0) / (gates.sum(axis=0) + eps)
    return out


_FORWARD = {
    "matmul": _fwd_matmul,
    "add": _fwd_add,
    "sub": _fwd_sub,
    "hadamard": _fwd_hadamard,
    "scale": _fwd_scale,
    "relu": _fwd_relu,
    "sigmoid": _fwd_sigmoid,
    "exp": _fwd_exp,
    "log": _fwd_log,
    "sum_all": _fwd_sum_all,
    "row_l2_norm": _fwd_row_l2_norm,
    "rowwise_div": _fwd_rowwise_div,
    "transpose": _fwd_transpose,
    "masked_row_softmax": _fwd_masked_row_softmax,
    "align_rows": _fwd_align_rows,
    "gated_neighbor_mean": _fwd_gated_neighbor_mean,
}

ARITY = {
    "matmul": 2, "add": 2, "sub": 2, "hadamard": 2, "scale": 1, "relu": 1,
    "sigmoid": 1, "exp": 1, "log": 1, "sum_all": 1, "row_l2_norm": 1,
    "rowwise_div": 2, "transpose": 1, "masked_row_softmax": 1,
    "align_rows": 2, "gated_neighbor_mean": 3,
}


# ---------------------------------------------------------------------------
# backward kernels: given (input values, output values, upstream grad, attrs)
# return one gradient array per input


def _bwd_matmul(ins, out, g, attrs):
    a, b = ins
    return g @ b.T, a.T @ g


def _bwd_add(ins, out, g, attrs):
    return g, g


def _bwd_sub(ins, out, g, attrs):
    return g, -g


def _bwd_hadamard(ins, out, g, attrs):
    a, b = ins
    return g * b, g * a


def _bwd_scale(ins, out, g, attrs):
    return (g * attrs["factor"],)


def _bwd_relu(ins, out, g, attrs):
    return (g * (ins[0] > 0.0),)


def _bwd_sigmoid(ins, out, g, attrs):
    return (g * out * (1.0 - out),)


def _bwd_exp(ins, out, g, attrs):
    return (g * out,)


def _bwd_log(ins, out, g, attrs):
    return (g / ins[0],)


def _bwd_sum_all(ins, out, g, attrs):
    return (np.full_like(ins[0], g[0, 0]),)


def _bwd_row_l2_norm(ins, out, g, attrs):
    safe = np.where(out > 0.0, out, 1.0)
    return (g * ins[0] / safe,)


def _bwd_rowwise_div(ins, out, g, attrs):
    a, b = ins
    return g / b, -(g * out).sum(axis=1, keepdims=True) / b


def _bwd_transpose(ins, out, g, attrs):
    return (g.T,)


def _bwd_masked_row_softmax(ins, out, g, attrs):
    dot = (g * out).sum(axis=1, keepdims=True)
    return (out * (g - dot),)


def _bwd_align_rows(ins, out, g, attrs):
    p, q = ins
    c = attrs["coeffs"][:, None]
    if not attrs["scaling"]:
        return g * c, g * (1.0 - c)
    prev_norm = np.sqrt((p * p).sum(axis=1, keepdims=True))
    new_norm = np.sqrt((q * q).sum(axis=1, keepdims=True))
    ok = prev_norm >= 1e-12
    safe_p = np.where(ok, prev_norm, 1.0)
    unit_p = np.where(ok, p / safe_p, 0.0)
    safe_q = np.where(new_norm > 0.0, new_norm, 1.0)
    unit_q = np.where(new_norm > 0.0, q / safe_q, 0.0)
    g_dot_up = (g * unit_p).sum(axis=1, keepdims=True)
    # d/dh_prev: c * (|h_new|/|h_prev|) * (I - unit_p unit_p^T) applied to g
    gp = np.where(ok, c * (new_norm / safe_p) * (g - g_dot_up * unit_p), 0.0)
    # d/dh_new: (1-c) I + c * unit_p (x) unit_q ; degenerate rows pass g through
    gn = np.where(ok, (1.0 - c) * g + c * g_dot_up * unit_q, g)
    return gp, gn


def _bwd_gated_neighbor_mean(ins, out, g, attrs):
    gate_u, gate_v, msgs = ins
    eps = attrs["eps"]
    d_gate_u = np.zeros_like(gate_u)
    d_gate_v = np.zeros_like(gate_v)
    d_msgs = np.zeros_like(msgs)
    for u, nbrs in enumerate(attrs["neighbor_lists"]):
        if not nbrs:
            continue
        idx = list(nbrs)
        gates = _fwd_sigmoid(gate_u[u] + gate_v[idx])
        den = gates.sum(axis=0) + eps
        num = (gates * msgs[idx]).sum(axis=0)
        g_num = g[u] / den
        g_den = -g[u] * num / (den * den)
        d_msgs[idx] += gates * g_num
        d_gates = (msgs[idx] * g_num + g_den) * gates * (1.0 - gates)
        d_gate_u[u] += d_gates.sum(axis=0)
        d_gate_v[idx] += d_gates
    return d_gate_u, d_gate_v, d_msgs


_BACKWARD = {
    "matmul": _bwd_matmul,
    "add": _bwd_add,
    "sub": _bwd_sub,
    "hadamard": _bwd_hadamard,
    "scale": _bwd_scale,
    "relu": _bwd_relu,
    "sigmoid": _bwd_sigmoid,
    "exp": _bwd_exp,
    "log": _bwd_log,
    "sum_all": _bwd_sum_all,
    "row_l2_norm": _bwd_row_l2_norm,
    "rowwise_div": _bwd_rowwise_div,
    "transpose": _bwd_transpose,
    "masked_row_softmax": _bwd_masked_row_softmax,
    "align_rows": _bwd_align_rows,
    "gated_neighbor_mean": _bwd_gated_neighbor_mean,
}


# ---------------------------------------------------------------------------
# public op API


def apply_primitive(kind: str, inputs: list[Tensor], **attrs) -> Tensor:
    """Apply a named primitive, record it, and return the output tensor."""
    if kind not in _FORWARD:
        raise ValueError(f"unknown primitive kind {kind!r}")
    if len(inputs) != ARITY[kind]:
        raise ShapeError(f"{kind} expects {ARITY[kind]} inputs, got {len(inputs)}")
    tape = inputs[0].tape
    for t in inputs[1:]:
        if t.tape is not tape:
            raise ValueError("all inputs must live on the same tape")
    values = _FORWARD[kind](*(t.values for t in inputs), **attrs)
    return tape._register_output(kind, tuple(inputs), values, attrs)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    return apply_primitive("matmul", [a, b])


def add(a: Tensor, b: Tensor) -> Tensor:
    return apply_primitive("add", [a, b])


def sub(a: Tensor, b: Tensor) -> Tensor:
    return apply_primitive("sub", [a, b])


def hadamard(a: Tensor, b: Tensor) -> Tensor:
    return apply_primitive("hadamard", [a, b])


def scale(a: Tensor, factor: float) -> Tensor:
    return apply_primitive("scale", [a], factor=float(factor))


def relu(a: Tensor) -> Tensor:
    return apply_primitive("relu", [a])


def sigmoid(a: Tensor) -> Tensor:
    return apply_primitive("sigmoid", [a])


def exp(a: Tensor) -> Tensor:
    return apply_primitive("exp", [a])


def log(a: Tensor) -> Tensor:
    return apply_primitive("log", [a])


def sum_all(a: Tensor) -> Tensor:
    return apply_primitive("sum_all", [a])


def row_l2_norm(a: Tensor) -> Tensor:
    """Map (n, d) to (n, 1) with entry ``||row_i||_2``."""
    return apply_primitive("row_l2_norm", [a])


def rowwise_div(a: Tensor, b: Tensor) -> Tensor:
    """Divide each row of ``a`` by the matching entry of column vector ``b``."""
    return apply_primitive("rowwise_div", [a, b])


def transpose(a: Tensor) -> Tensor:
    return apply_primitive("transpose", [a])


def masked_row_softmax(scores: Tensor, mask: np.ndarray) -> Tensor:
    """Row softmax over masked-in entries only; masked-out entries are exactly 0.

    Stabilized by subtracting the per-row masked max before exponentiation.
    Raises DegenerateNeighborhoodError if any row masks out everything.
    """
    return apply_primitive("masked_row_softmax", [scores], mask=np.asarray(mask, dtype=bool))


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(tensor) into ``grad`` for every tensor on the tape.

    ``loss`` must be scalar-shaped (1, 1). Each call adds this pass's
    gradients to whatever is already in the buffers; zero them first if that
    is not what you want.
    """
    if loss.shape != (1, 1):
        raise ShapeError(f"backward needs a (1,1) loss, got {loss.shape}")
    tape = loss.tape
    local: dict[int, np.ndarray] = {loss.tape_id: np.ones((1, 1))}
    for rec in reversed(tape.records):
        g = local.get(rec.output_id)
        if g is None:
            continue
        ins = tuple(tape.tensors[i].values for i in rec.input_ids)
        out_vals = tape.tensors[rec.output_id].values
        for tid, grad in zip(rec.input_ids,
                             _BACKWARD[rec.kind](ins, out_vals, g, rec.attrs)):
            seen = local.get(tid)
            if seen is None:
                # kernels may hand back the upstream buffer or a view of it
                if grad is g or grad.base is not None:
                    grad = grad.copy()
                local[tid] = grad
            else:
                seen += grad
    for tid, g in local.items():
        tape.tensors[tid].add_grad(g)


def finite_diff_check(f, x: Tensor, eps: float = 1e-5) -> float:
    """Max relative error between reverse-mode and central-difference gradients.

    ``f`` must map a leaf tensor to a scalar tensor, building a fresh tape on
    every call. The relative error denominator is
    max(|analytic|, |numeric|, 1e-12) per entry.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    base = x.values.copy()

    def evaluate(values: np.ndarray) -> float:
        leaf = Tape().tensor(values.copy())
        return float(f(leaf).values[0, 0])

    leaf = Tape().tensor(base.copy())
    loss = f(leaf)
    backward(loss)
    analytic = leaf.grad.copy()

    worst = 0.0
    it = np.nditer(base, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        bumped = base.copy()
        bumped[idx] += eps
        up = evaluate(bumped)
        bumped[idx] -= 2 * eps
        down = evaluate(bumped)
        numeric = (up - down) / (2 * eps)
        a = analytic[idx]
        denom = max(abs(a), abs(numeric), 1e-12)
        worst = max(worst, abs(a - numeric) / denom)
    return worst
