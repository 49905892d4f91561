"""A small reverse-mode tape over numpy arrays.

Forward calls append primitive operations (affine maps, elementwise
nonlinearities, slicing, masked reductions) to an append-only list that is
already in topological order, so the backward pass is a single reverse walk
that visits each node exactly once. Nodes hold whole arrays; recurrent
models append one short block per timestep rather than one node per scalar.

Subgradient conventions: relu and abs both use 0 at their kinks.
"""

from __future__ import annotations

import numpy as np

from .errors import DomainError

__all__ = [
    "Tape",
    "Var",
    "add", "sub", "mul", "neg", "scale", "add_const", "matmul",
    "tanh", "sigmoid", "relu", "absval", "logsigmoid", "sqdiff",
    "concat", "stack", "masked_sum", "masked_mean",
    "evaluate_with_gradient", "gradient_check",
]


def sigmoid_values(x: np.ndarray) -> np.ndarray:
    """Numerically stable logistic function on raw arrays."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


class Var:
    """Handle to one tape node."""

    __slots__ = ("tape", "idx")

    def __init__(self, tape: "Tape", idx: int):
        self.tape = tape
        self.idx = idx

    @property
    def value(self) -> np.ndarray:
        return self.tape.values[self.idx]

    @property
    def shape(self) -> tuple[int, ...]:
        return self.tape.values[self.idx].shape

    def __add__(self, other):
        return add_const(self, other) if isinstance(other, (int, float)) else add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add_const(self, -other) if isinstance(other, (int, float)) else sub(self, other)

    def __rsub__(self, other):
        return add_const(neg(self), other)

    def __mul__(self, other):
        return scale(self, other) if isinstance(other, (int, float)) else mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, 1.0 / other)
        raise TypeError("division is only supported by a constant")

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return index(self, key)


class Tape:
    """Append-only list of primitive operations in topological order."""

    def __init__(self) -> None:
        self.values: list[np.ndarray] = []
        self.opcodes: list[str] = []
        self.parents: list[tuple[int, ...]] = []
        self.ctx: list = []
        self.needs_grad: list[bool] = []
        self.backward_visits = 0  # nodes processed by the last backward pass

    def _push(self, value, opcode: str, parent_vars: tuple, ctx=None) -> Var:
        value = np.asarray(value, dtype=np.float64)
        idx = len(self.values)
        self.values.append(value)
        self.opcodes.append(opcode)
        self.parents.append(tuple(p.idx for p in parent_vars))
        self.ctx.append(ctx)
        self.needs_grad.append(any(self.needs_grad[p.idx] for p in parent_vars))
        return Var(self, idx)

    def constant(self, value) -> Var:
        v = self._push(value, "leaf", ())
        return v

    def param(self, value) -> Var:
        v = self._push(value, "leaf", ())
        self.needs_grad[v.idx] = True
        return v

    def backward(self, out: Var) -> list:
        """Gradients of a scalar output with respect to every node (None where unneeded)."""
        if out.value.size != 1:
            raise DomainError("backward requires a scalar output")
        n = out.idx + 1
        grads: list = [None] * len(self.values)
        grads[out.idx] = np.ones_like(self.values[out.idx])
        self.backward_visits = 0
        for i in range(n - 1, -1, -1):
            g = grads[i]
            if g is None or not self.needs_grad[i]:
                continue
            self.backward_visits += 1
            opcode = self.opcodes[i]
            if opcode == "leaf":
                continue
            _BACKWARD[opcode](self, i, g, grads)
        return grads


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _accumulate(tape: Tape, grads: list, idx: int, g: np.ndarray) -> None:
    # Accumulation always builds a fresh array, so storing views is safe.
    if not tape.needs_grad[idx]:
        return
    if grads[idx] is None:
        grads[idx] = g
    else:
        grads[idx] = grads[idx] + g


def _same_tape(*vs: Var) -> Tape:
    tape = vs[0].tape
    if any(v.tape is not tape for v in vs):
        raise DomainError("operands belong to different tapes")
    return tape


def add(a: Var, b: Var) -> Var:
    return _same_tape(a, b)._push(a.value + b.value, "add", (a, b),
                                  (a.value.shape, b.value.shape))


def sub(a: Var, b: Var) -> Var:
    return _same_tape(a, b)._push(a.value - b.value, "sub", (a, b),
                                  (a.value.shape, b.value.shape))


def mul(a: Var, b: Var) -> Var:
    return _same_tape(a, b)._push(a.value * b.value, "mul", (a, b),
                                  (a.value.shape, b.value.shape))


def neg(a: Var) -> Var:
    return a.tape._push(-a.value, "neg", (a,))


def scale(a: Var, c: float) -> Var:
    return a.tape._push(a.value * c, "scale", (a,), float(c))


def add_const(a: Var, c) -> Var:
    return a.tape._push(a.value + c, "add_const", (a,))


def matmul(a: Var, b: Var) -> Var:
    if b.value.ndim != 2 or a.value.ndim not in (2, 3):
        raise DomainError("matmul supports (n,k)@(k,m) or (t,n,k)@(k,m)")
    return _same_tape(a, b)._push(a.value @ b.value, "matmul", (a, b))


def tanh(a: Var) -> Var:
    out = np.tanh(a.value)
    return a.tape._push(out, "tanh", (a,))


def sigmoid(a: Var) -> Var:
    out = sigmoid_values(a.value)
    return a.tape._push(out, "sigmoid", (a,))


def relu(a: Var) -> Var:
    return a.tape._push(np.maximum(a.value, 0.0), "relu", (a,))


def absval(a: Var) -> Var:
    return a.tape._push(np.abs(a.value), "abs", (a,))


def logsigmoid(a: Var) -> Var:
    # log(sigmoid(x)) = -log(1 + exp(-x)), stable at both tails.
    out = -np.logaddexp(0.0, -a.value)
    return a.tape._push(out, "logsigmoid", (a,))


def sqdiff(a: Var, b: Var) -> Var:
    d = a.value - b.value
    return _same_tape(a, b)._push(d * d, "sqdiff", (a, b),
                                  (a.value.shape, b.value.shape))


def index(a: Var, key) -> Var:
    return a.tape._push(a.value[key], "index", (a,), key)


def concat(vs: list[Var], axis: int = -1) -> Var:
    tape = _same_tape(*vs)
    sizes = [v.value.shape[axis] for v in vs]
    return tape._push(np.concatenate([v.value for v in vs], axis=axis),
                      "concat", tuple(vs), (axis, sizes))


def stack(vs: list[Var]) -> Var:
    tape = _same_tape(*vs)
    return tape._push(np.stack([v.value for v in vs], axis=0), "stack", tuple(vs))


def masked_sum(a: Var, mask: np.ndarray) -> Var:
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != a.value.shape:
        raise DomainError("mask shape must match the operand")
    return a.tape._push(a.value[mask].sum(), "masked_sum", (a,), mask)


def masked_mean(a: Var, mask: np.ndarray) -> Var:
    """Mean over selected cells; an empty mask yields 0 with a zero gradient."""
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != a.value.shape:
        raise DomainError("mask shape must match the operand")
    count = int(mask.sum())
    value = a.value[mask].sum() / count if count else 0.0
    return a.tape._push(value, "masked_mean", (a,), (mask, count))


def _bw_add(tape, i, g, grads):
    pa, pb = tape.parents[i]
    sa, sb = tape.ctx[i]
    _accumulate(tape, grads, pa, _unbroadcast(g, sa))
    _accumulate(tape, grads, pb, _unbroadcast(g, sb))


def _bw_sub(tape, i, g, grads):
    pa, pb = tape.parents[i]
    sa, sb = tape.ctx[i]
    _accumulate(tape, grads, pa, _unbroadcast(g, sa))
    _accumulate(tape, grads, pb, _unbroadcast(-g, sb))


def _bw_mul(tape, i, g, grads):
    pa, pb = tape.parents[i]
    sa, sb = tape.ctx[i]
    _accumulate(tape, grads, pa, _unbroadcast(g * tape.values[pb], sa))
    _accumulate(tape, grads, pb, _unbroadcast(g * tape.values[pa], sb))


def _bw_neg(tape, i, g, grads):
    _accumulate(tape, grads, tape.parents[i][0], -g)


def _bw_scale(tape, i, g, grads):
    _accumulate(tape, grads, tape.parents[i][0], g * tape.ctx[i])


def _bw_add_const(tape, i, g, grads):
    _accumulate(tape, grads, tape.parents[i][0], g)


def _bw_matmul(tape, i, g, grads):
    pa, pb = tape.parents[i]
    a, b = tape.values[pa], tape.values[pb]
    _accumulate(tape, grads, pa, g @ b.T)
    if a.ndim == 2:
        _accumulate(tape, grads, pb, a.T @ g)
    else:
        _accumulate(tape, grads, pb, np.tensordot(a, g, axes=([0, 1], [0, 1])))


def _bw_tanh(tape, i, g, grads):
    y = tape.values[i]
    _accumulate(tape, grads, tape.parents[i][0], g * (1.0 - y * y))


def _bw_sigmoid(tape, i, g, grads):
    y = tape.values[i]
    _accumulate(tape, grads, tape.parents[i][0], g * y * (1.0 - y))


def _bw_relu(tape, i, g, grads):
    x = tape.values[tape.parents[i][0]]
    _accumulate(tape, grads, tape.parents[i][0], g * (x > 0.0))


def _bw_abs(tape, i, g, grads):
    x = tape.values[tape.parents[i][0]]
    _accumulate(tape, grads, tape.parents[i][0], g * np.sign(x))


def _bw_logsigmoid(tape, i, g, grads):
    x = tape.values[tape.parents[i][0]]
    _accumulate(tape, grads, tape.parents[i][0], g * sigmoid_values(-x))


def _bw_sqdiff(tape, i, g, grads):
    pa, pb = tape.parents[i]
    sa, sb = tape.ctx[i]
    d = tape.values[pa] - tape.values[pb]
    _accumulate(tape, grads, pa, _unbroadcast(2.0 * g * d, sa))
    _accumulate(tape, grads, pb, _unbroadcast(-2.0 * g * d, sb))


def _bw_index(tape, i, g, grads):
    p = tape.parents[i][0]
    if not tape.needs_grad[p]:
        return
    gp = np.zeros_like(tape.values[p])
    gp[tape.ctx[i]] = g
    _accumulate(tape, grads, p, gp)


def _bw_concat(tape, i, g, grads):
    axis, sizes = tape.ctx[i]
    offset = 0
    for p, size in zip(tape.parents[i], sizes):
        sl = [slice(None)] * g.ndim
        sl[axis] = slice(offset, offset + size)
        _accumulate(tape, grads, p, g[tuple(sl)])
        offset += size


def _bw_stack(tape, i, g, grads):
    for row, p in enumerate(tape.parents[i]):
        _accumulate(tape, grads, p, g[row])


def _bw_masked_sum(tape, i, g, grads):
    p = tape.parents[i][0]
    if not tape.needs_grad[p]:
        return
    gp = np.zeros_like(tape.values[p])
    gp[tape.ctx[i]] = g
    _accumulate(tape, grads, p, gp)


def _bw_masked_mean(tape, i, g, grads):
    mask, count = tape.ctx[i]
    p = tape.parents[i][0]
    if not count or not tape.needs_grad[p]:
        return
    gp = np.zeros_like(tape.values[p])
    gp[mask] = g / count
    _accumulate(tape, grads, p, gp)


_BACKWARD = {
    "add": _bw_add, "sub": _bw_sub, "mul": _bw_mul, "neg": _bw_neg,
    "scale": _bw_scale, "add_const": _bw_add_const, "matmul": _bw_matmul,
    "tanh": _bw_tanh, "sigmoid": _bw_sigmoid, "relu": _bw_relu,
    "abs": _bw_abs, "logsigmoid": _bw_logsigmoid, "sqdiff": _bw_sqdiff,
    "index": _bw_index, "concat": _bw_concat, "stack": _bw_stack,
    "masked_sum": _bw_masked_sum, "masked_mean": _bw_masked_mean,
}


def _wrap_params(tape: Tape, params):
    if isinstance(params, dict):
        return {k: tape.param(np.asarray(v, dtype=np.float64)) for k, v in params.items()}
    return tape.param(np.asarray(params, dtype=np.float64))


def evaluate_with_gradient(loss_program, params):
    """Run a tape-building closure and return (loss value, gradients).

    params is a float, an array, or a dict of named arrays; the gradient
    mirrors that structure. loss_program(tape, p) must return a scalar Var.
    """
    tape = Tape()
    pvars = _wrap_params(tape, params)
    out = loss_program(tape, pvars)
    if not isinstance(out, Var) or out.value.size != 1:
        raise DomainError("loss_program must return a scalar Var")
    grads = tape.backward(out)
    value = float(out.value)
    if isinstance(params, dict):
        grad = {}
        for name, pv in pvars.items():
            g = grads[pv.idx]
            grad[name] = np.zeros_like(pv.value) if g is None else np.asarray(g)
        return value, grad
    g = grads[pvars.idx]
    g = np.zeros_like(pvars.value) if g is None else np.asarray(g)
    if np.ndim(params) == 0:
        return value, float(g)
    return value, g


def evaluate_value(loss_program, params) -> float:
    """Forward-only evaluation of a loss_program."""
    tape = Tape()
    pvars = _wrap_params(tape, params)
    out = loss_program(tape, pvars)
    return float(out.value)


def _flatten(params):
    if isinstance(params, dict):
        names = sorted(params)
        vec = np.concatenate([np.asarray(params[n], dtype=np.float64).ravel() for n in names])
        shapes = [(n, np.asarray(params[n]).shape) for n in names]
        return vec, shapes
    arr = np.asarray(params, dtype=np.float64)
    return arr.ravel().copy(), arr.shape


def _unflatten(vec, structure, like):
    if isinstance(like, dict):
        out = {}
        offset = 0
        for name, shape in structure:
            size = int(np.prod(shape, dtype=np.int64)) if shape else 1
            out[name] = vec[offset:offset + size].reshape(shape)
            offset += size
        return out
    return vec.reshape(structure)


def gradient_check(loss_program, params, eps: float = 1e-5,
                   floor: float | None = None) -> float:
    """Max relative error between reverse-mode and central-difference gradients.

    The error at each coordinate is |a - b| / max(|a|, |b|, floor). floor
    defaults to 1e-3 times the largest gradient magnitude (at least 1e-6):
    coordinates far below the gradient's own scale get an absolute rather
    than relative comparison, because central differences cannot resolve
    them relatively (roundoff of the loss value dominates there), while a
    genuinely wrong gradient at that scale still trips the ratio.
    """
    _, grad = evaluate_with_gradient(loss_program, params)
    gvec, _ = _flatten(grad)
    if floor is None:
        gmax = float(np.max(np.abs(gvec))) if gvec.size else 0.0
        floor = max(1e-6, 1e-3 * gmax)
    pvec, structure = _flatten(params)
    worst = 0.0
    for i in range(pvec.size):
        bumped = pvec.copy()
        bumped[i] = pvec[i] + eps
        hi = evaluate_value(loss_program, _unflatten(bumped, structure, params))
        bumped[i] = pvec[i] - eps
        lo = evaluate_value(loss_program, _unflatten(bumped, structure, params))
        fd = (hi - lo) / (2.0 * eps)
        a, b = gvec[i], fd
        worst = max(worst, abs(a - b) / max(abs(a), abs(b), floor))
    return worst
