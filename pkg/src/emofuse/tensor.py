"""Float64 tensors with a reverse-mode gradient tape.

Everything downstream (encoders, cross-modal attention, fusion, losses,
context classifier) is built from the operations in this module. Design
points that the rest of the package relies on:

* values are float64 and treated as immutable once an op has produced
  them (``finite_diff_check`` is the one sanctioned exception; it
  restores what it perturbs),
* gradients are recorded only inside a ``recording(tape)`` block, and
  ``backward`` replays the tape once, in reverse execution order, so
  accumulation order is fixed and runs are bit-reproducible,
* after ``backward`` every tensor that requires grad and lies upstream
  of the loss holds its full adjoint in ``.grad``; leaf grads accumulate
  across calls until ``zero_grad``.
"""
from __future__ import annotations

import numpy as np

from .errors import ContractError, ShapeError
from .rng import Rng

_TAPE = None  # active Tape or None


class Tensor:
    """Dense float64 array plus an optional gradient buffer."""

    __slots__ = ("values", "requires_grad", "grad")

    def __init__(self, values, requires_grad: bool = False):
        arr = np.array(values, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise ContractError("tensor values must be finite")
        self.values = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None

    @property
    def shape(self):
        return self.values.shape

    def item(self) -> float:
        if self.values.size != 1:
            raise ContractError(f"item() on non-scalar tensor of shape {self.shape}")
        return float(self.values.reshape(-1)[0])

    def __repr__(self):
        return f"Tensor(shape={self.values.shape}, requires_grad={self.requires_grad})"


def _wrap(arr, requires_grad=False):
    t = Tensor.__new__(Tensor)
    t.values = arr
    t.requires_grad = requires_grad
    t.grad = None
    return t


def constant(values) -> Tensor:
    return Tensor(values, requires_grad=False)


class Tape:
    """Ordered record of executed differentiable ops.

    Each record is ``(out, pulls)`` where ``pulls`` is a tuple of
    ``(input_tensor, fn)`` and ``fn`` maps the adjoint of ``out`` to the
    adjoint contribution for that input.
    """

    __slots__ = ("records",)

    def __init__(self):
        self.records = []

    def __len__(self):
        return len(self.records)


class recording:
    """Context manager that activates a tape for op recording."""

    def __init__(self, tape: Tape):
        self.tape = tape
        self._prev = None

    def __enter__(self):
        global _TAPE
        self._prev = _TAPE
        _TAPE = self.tape
        return self.tape

    def __exit__(self, *exc):
        global _TAPE
        _TAPE = self._prev
        return False


def _result(values, pulls):
    tape = _TAPE
    if tape is not None and any(t.requires_grad for t, _ in pulls):
        out = _wrap(values, True)
        tape.records.append((out, pulls))
        return out
    return _wrap(values, False)


def backward(loss: Tensor, tape: Tape) -> None:
    """Populate ``.grad`` for every requires-grad tensor upstream of loss.

    Intermediate grads are cleared first; leaf grads accumulate, which is
    what per-utterance micro-batching relies on.
    """
    if loss.values.size != 1:
        raise ContractError(f"backward: loss must be scalar, got shape {loss.shape}")
    for out, _ in tape.records:
        out.grad = None
    loss.grad = np.ones_like(loss.values)
    for out, pulls in reversed(tape.records):
        g = out.grad
        if g is None:
            continue
        for inp, pull in pulls:
            if not inp.requires_grad:
                continue
            contrib = pull(g)
            if inp.grad is None:
                inp.grad = np.zeros_like(inp.values)
            inp.grad += contrib


def zero_grad(tensors) -> None:
    for t in tensors:
        t.grad = None


def _sum_to(g, shape):
    """Reduce a broadcast gradient back to the input's shape."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# binary ops

def matmul(a: Tensor, b: Tensor) -> Tensor:
    av, bv = a.values, b.values
    if av.ndim != 2 or bv.ndim != 2 or av.shape[1] != bv.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {av.shape} x {bv.shape}")
    return _result(av @ bv, ((a, lambda g: g @ bv.T), (b, lambda g: av.T @ g)))


def add(a: Tensor, b: Tensor) -> Tensor:
    av, bv = a.values, b.values
    return _result(av + bv, ((a, lambda g: _sum_to(g, av.shape)),
                             (b, lambda g: _sum_to(g, bv.shape))))


def sub(a: Tensor, b: Tensor) -> Tensor:
    av, bv = a.values, b.values
    return _result(av - bv, ((a, lambda g: _sum_to(g, av.shape)),
                             (b, lambda g: _sum_to(-g, bv.shape))))


def mul(a: Tensor, b: Tensor) -> Tensor:
    av, bv = a.values, b.values
    return _result(av * bv, ((a, lambda g: _sum_to(g * bv, av.shape)),
                             (b, lambda g: _sum_to(g * av, bv.shape))))


def div(a: Tensor, b: Tensor) -> Tensor:
    av, bv = a.values, b.values
    return _result(av / bv, ((a, lambda g: _sum_to(g / bv, av.shape)),
                             (b, lambda g: _sum_to(-g * av / (bv * bv), bv.shape))))


# ---------------------------------------------------------------------------
# scalar-parameter ops

def scale(a: Tensor, c: float) -> Tensor:
    return _result(a.values * c, ((a, lambda g: g * c),))


def add_scalar(a: Tensor, c: float) -> Tensor:
    return _result(a.values + c, ((a, lambda g: g),))


def neg(a: Tensor) -> Tensor:
    return _result(-a.values, ((a, lambda g: -g),))


def maximum_scalar(a: Tensor, c: float) -> Tensor:
    """Elementwise lower clamp; gradient passes only where a > c."""
    av = a.values
    return _result(np.maximum(av, c), ((a, lambda g: g * (av > c)),))


def minimum_scalar(a: Tensor, c: float) -> Tensor:
    av = a.values
    return _result(np.minimum(av, c), ((a, lambda g: g * (av < c)),))


def powf(a: Tensor, p: float) -> Tensor:
    """Elementwise a**p for a >= 0; gradient is 0 where the base is 0."""
    av = a.values
    if p == 0.0:
        return _result(np.ones_like(av), ((a, lambda g: np.zeros_like(av)),))
    out = av ** p
    safe = np.where(av > 0.0, av, 1.0)
    dmask = np.where(av > 0.0, p * safe ** (p - 1.0), 0.0)
    return _result(out, ((a, lambda g: g * dmask),))


# ---------------------------------------------------------------------------
# elementwise nonlinearities

def tanh(a: Tensor) -> Tensor:
    t = np.tanh(a.values)
    return _result(t, ((a, lambda g: g * (1.0 - t * t)),))


def sigmoid(a: Tensor) -> Tensor:
    av = a.values
    s = np.empty_like(av)
    pos = av >= 0
    s[pos] = 1.0 / (1.0 + np.exp(-av[pos]))
    e = np.exp(av[~pos])
    s[~pos] = e / (1.0 + e)
    return _result(s, ((a, lambda g: g * s * (1.0 - s)),))


def relu(a: Tensor) -> Tensor:
    av = a.values
    return _result(np.maximum(av, 0.0), ((a, lambda g: g * (av > 0.0)),))


def exp(a: Tensor) -> Tensor:
    e = np.exp(a.values)
    return _result(e, ((a, lambda g: g * e),))


def log(a: Tensor) -> Tensor:
    av = a.values
    return _result(np.log(av), ((a, lambda g: g / av),))


def sqrt(a: Tensor) -> Tensor:
    s = np.sqrt(a.values)
    return _result(s, ((a, lambda g: g / (2.0 * s)),))


# ---------------------------------------------------------------------------
# reductions and softmax

def sum_all(a: Tensor) -> Tensor:
    av = a.values
    return _result(np.asarray(av.sum()), ((a, lambda g: np.full_like(av, float(g))),))


def mean_all(a: Tensor) -> Tensor:
    av = a.values
    n = av.size
    return _result(np.asarray(av.mean()), ((a, lambda g: np.full_like(av, float(g) / n)),))


def mean_rows(a: Tensor) -> Tensor:
    """Mean over rows of an r x c matrix, keeping a 1 x c shape."""
    av = a.values
    if av.ndim != 2:
        raise ShapeError(f"mean_rows expects a matrix, got shape {av.shape}")
    r = av.shape[0]
    return _result(av.mean(axis=0, keepdims=True),
                   ((a, lambda g: np.broadcast_to(g / r, av.shape)),))


def softmax_rows(x: Tensor) -> Tensor:
    """Row-wise softmax, stabilized by row-max subtraction."""
    xv = x.values
    if xv.ndim != 2:
        raise ShapeError(f"softmax_rows expects a matrix, got shape {xv.shape}")
    if not np.all(np.isfinite(xv)):
        raise ContractError("softmax_rows: input must be finite")
    shifted = xv - xv.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=1, keepdims=True)

    def pull(g):
        return y * (g - (g * y).sum(axis=1, keepdims=True))

    return _result(y, ((x, pull),))


# ---------------------------------------------------------------------------
# structure ops

def transpose(a: Tensor) -> Tensor:
    return _result(a.values.T, ((a, lambda g: g.T),))


def reshape(a: Tensor, shape) -> Tensor:
    orig = a.values.shape
    return _result(a.values.reshape(shape), ((a, lambda g: g.reshape(orig)),))


def _concat(parts, axis):
    vs = [t.values for t in parts]
    out = np.concatenate(vs, axis=axis)
    pulls = []
    off = 0
    for t in parts:
        n = t.values.shape[axis]
        if axis == 0:
            pulls.append((t, lambda g, o=off, k=n: g[o:o + k]))
        else:
            pulls.append((t, lambda g, o=off, k=n: g[:, o:o + k]))
        off += n
    return _result(out, tuple(pulls))


def concat_rows(parts) -> Tensor:
    return _concat(list(parts), axis=0)


def concat_cols(parts) -> Tensor:
    return _concat(list(parts), axis=1)


def slice_rows(a: Tensor, start: int, stop: int) -> Tensor:
    av = a.values

    def pull(g):
        z = np.zeros_like(av)
        z[start:stop] = g
        return z

    return _result(av[start:stop], ((a, pull),))


def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    av = a.values

    def pull(g):
        z = np.zeros_like(av)
        z[:, start:stop] = g
        return z

    return _result(av[:, start:stop], ((a, pull),))


def pick(a: Tensor, i: int, j: int) -> Tensor:
    """Extract one entry of a matrix as a scalar tensor."""
    av = a.values

    def pull(g):
        z = np.zeros_like(av)
        z[i, j] = float(g)
        return z

    return _result(np.asarray(av[i, j]), ((a, pull),))


# ---------------------------------------------------------------------------
# initialization and verification

def init_xavier(shape, rng: Rng, requires_grad: bool = True) -> Tensor:
    """Uniform draw in +/- sqrt(6 / (fan_in + fan_out)), seed-reproducible."""
    shape = tuple(shape)
    if len(shape) < 1:
        raise ContractError("init_xavier: shape needs at least one dim")
    fan_in = shape[0]
    fan_out = shape[-1] if len(shape) > 1 else shape[0]
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return _wrap(rng.uniform_array(shape, -bound, bound), requires_grad)


def finite_diff_check(f, x: Tensor, step: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference grads.

    ``f`` must map the tensor to a scalar tensor and be re-evaluable.
    ``x.values`` is perturbed in place coordinate by coordinate and fully
    restored before returning.
    """
    if step <= 0:
        raise ContractError("finite_diff_check: step must be positive")
    global _TAPE
    saved_tape = _TAPE
    saved_rg = x.requires_grad
    _TAPE = None
    try:
        x.requires_grad = True
        tape = Tape()
        with recording(tape):
            y = f(x)
        x.grad = None
        backward(y, tape)
        analytic = x.grad.copy() if x.grad is not None else np.zeros_like(x.values)

        worst = 0.0
        flat = x.values.reshape(-1)
        aflat = analytic.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            fp = f(x).item()
            flat[i] = orig - step
            fm = f(x).item()
            flat[i] = orig
            numeric = (fp - fm) / (2.0 * step)
            a = aflat[i]
            rel = abs(a - numeric) / (abs(a) + abs(numeric) + 1e-12)
            if rel > worst:
                worst = rel
        return worst
    finally:
        x.requires_grad = saved_rg
        _TAPE = saved_tape
