"""Reverse-mode autodiff over numpy arrays, sized for small attention models.

The engine is deliberately minimal: a ``Tape`` records one backward closure
per operation in execution order, and ``Tape.backward`` replays them in
exact reverse order, accumulating vector-Jacobian products into ``.grad``
of every tensor attached to the tape. Tensors without a tape are constants;
operations on them skip recording entirely, so inference costs no autodiff
overhead.

Working precision follows the input arrays (float32 for training, float64
for gradient verification). All operations are pure functions of their
inputs plus, where randomness is involved, an explicit seeded generator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import erf

from .errors import NumericsError, ParameterError, ShapeError

_SQRT1_2 = math.sqrt(0.5)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


class Tape:
    """Single-owner record of operations for one backward pass."""

    __slots__ = ("_ops",)

    def __init__(self) -> None:
        self._ops: list[Callable[[], None]] = []

    def leaf(self, data: np.ndarray, name: str | None = None) -> "Tensor":
        """Attach an array as a differentiable leaf (a trainable parameter)."""
        return Tensor(data, tape=self, name=name)

    def record(self, fn: Callable[[], None]) -> None:
        self._ops.append(fn)

    def backward(self, loss: "Tensor") -> None:
        """Accumulate d(loss)/d(tensor) into every tensor recorded on this tape.

        ``loss`` must be a scalar produced on this tape. Tensors the loss does
        not depend on keep ``grad is None``; read them via :meth:`gradient`,
        which reports zeros for unused tensors.
        """
        if loss.tape is not self:
            raise ParameterError("backward target was not produced on this tape")
        if loss.data.size != 1:
            raise ShapeError(f"backward target must be scalar, got shape {loss.data.shape}")
        loss.grad = np.ones_like(loss.data)
        for fn in reversed(self._ops):
            fn()

    @staticmethod
    def gradient(t: "Tensor") -> np.ndarray:
        """Gradient of the last backward pass; zeros if the tensor was unused."""
        if t.grad is None:
            return np.zeros_like(t.data)
        return t.grad

    def release(self) -> None:
        """Drop the recorded closures.

        Closures, tensors, and the tape form reference cycles, so without
        this the arrays they capture wait for a full garbage-collection
        generation; in a training loop that stacks up to gigabytes. Call
        after gradients have been read. The tape must not be reused."""
        self._ops.clear()


class Tensor:
    """An n-dimensional array, optionally attached to a :class:`Tape`."""

    __slots__ = ("data", "tape", "grad", "name")

    def __init__(self, data, tape: Tape | None = None, name: str | None = None) -> None:
        self.data = np.asarray(data)
        self.tape = tape
        self.grad: np.ndarray | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, tape=None, name=self.name)

    def _accumulate(self, g: np.ndarray) -> None:
        self.grad = g if self.grad is None else self.grad + g

    def __repr__(self) -> str:
        nm = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{nm})"

    # Operator sugar. Python scalars stay scalars so float32 data is not
    # silently promoted to float64.
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return add(self, scale(other, -1.0))

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("tensor/tensor division is not part of the op set")
        return scale(self, 1.0 / other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _joint_tape(*tensors: Tensor) -> Tape | None:
    tape = None
    for t in tensors:
        if t.tape is None:
            continue
        if tape is None:
            tape = t.tape
        elif tape is not t.tape:
            raise ParameterError("operands belong to different tapes")
    return tape


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` over the axes numpy broadcasting added or stretched."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# Elementwise and structural operations
# ---------------------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    tape = _joint_tape(a, b)
    out = Tensor(a.data + b.data, tape)
    if tape is not None:

        def backward() -> None:
            g = out.grad
            if g is None:
                return
            if a.tape is not None:
                a._accumulate(_unbroadcast(g, a.data.shape))
            if b.tape is not None:
                b._accumulate(_unbroadcast(g, b.data.shape))

        tape.record(backward)
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    tape = _joint_tape(a, b)
    out = Tensor(a.data * b.data, tape)
    if tape is not None:

        def backward() -> None:
            g = out.grad
            if g is None:
                return
            if a.tape is not None:
                a._accumulate(_unbroadcast(g * b.data, a.data.shape))
            if b.tape is not None:
                b._accumulate(_unbroadcast(g * a.data, b.data.shape))

        tape.record(backward)
    return out


def scale(x: Tensor, c: float) -> Tensor:
    """Multiply by a python scalar without touching the array dtype."""
    x = as_tensor(x)
    c = float(c)
    out = Tensor(x.data * c, x.tape)
    if x.tape is not None:

        def backward() -> None:
            if out.grad is not None:
                x._accumulate(out.grad * c)

        x.tape.record(backward)
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; both operands at least 2-d, leading axes broadcast."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs 2-d or higher operands, got {a.shape} @ {b.shape}")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    tape = _joint_tape(a, b)
    out = Tensor(a.data @ b.data, tape)
    if tape is not None:

        def backward() -> None:
            g = out.grad
            if g is None:
                return
            if a.tape is not None:
                a._accumulate(_unbroadcast(g @ b.data.swapaxes(-1, -2), a.data.shape))
            if b.tape is not None:
                b._accumulate(_unbroadcast(a.data.swapaxes(-1, -2) @ g, b.data.shape))

        tape.record(backward)
    return out


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    x = as_tensor(x)
    out = Tensor(x.data.reshape(shape), x.tape)
    if x.tape is not None:

        def backward() -> None:
            if out.grad is not None:
                x._accumulate(out.grad.reshape(x.data.shape))

        x.tape.record(backward)
    return out


def swapaxes(x: Tensor, axis1: int, axis2: int) -> Tensor:
    x = as_tensor(x)
    out = Tensor(x.data.swapaxes(axis1, axis2), x.tape)
    if x.tape is not None:

        def backward() -> None:
            if out.grad is not None:
                x._accumulate(out.grad.swapaxes(axis1, axis2))

        x.tape.record(backward)
    return out


def broadcast_to(x: Tensor, shape: Sequence[int]) -> Tensor:
    x = as_tensor(x)
    out = Tensor(np.broadcast_to(x.data, tuple(shape)), x.tape)
    if x.tape is not None:

        def backward() -> None:
            if out.grad is not None:
                x._accumulate(_unbroadcast(out.grad, x.data.shape))

        x.tape.record(backward)
    return out


def concat(tensors: Iterable[Tensor], axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    tape = _joint_tape(*ts)
    out = Tensor(np.concatenate([t.data for t in ts], axis=axis), tape)
    if tape is not None:
        splits = np.cumsum([t.data.shape[axis] for t in ts])[:-1]

        def backward() -> None:
            g = out.grad
            if g is None:
                return
            for t, part in zip(ts, np.split(g, splits, axis=axis)):
                if t.tape is not None:
                    t._accumulate(part)

        tape.record(backward)
    return out


def getitem(x: Tensor, key) -> Tensor:
    """Basic (non-fancy) indexing; every source element selected at most once."""
    x = as_tensor(x)
    out = Tensor(x.data[key], x.tape)
    if x.tape is not None:

        def backward() -> None:
            if out.grad is not None:
                g = np.zeros_like(x.data)
                g[key] = out.grad
                x._accumulate(g)

        x.tape.record(backward)
    return out


def take_rows(x: Tensor, indices: np.ndarray) -> Tensor:
    """Gather rows along axis 0; repeated indices accumulate in the backward."""
    x = as_tensor(x)
    idx = np.asarray(indices)
    out = Tensor(x.data[idx], x.tape)
    if x.tape is not None:

        def backward() -> None:
            if out.grad is not None:
                g = np.zeros_like(x.data)
                np.add.at(g, idx, out.grad)
                x._accumulate(g)

        x.tape.record(backward)
    return out


# ---------------------------------------------------------------------------
# Reductions
# ---------------------------------------------------------------------------


def _expand_reduced(g: np.ndarray, shape: tuple[int, ...], axis, keepdims: bool) -> np.ndarray:
    if not keepdims:
        if axis is None:
            g = g.reshape((1,) * len(shape))
        else:
            g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape)


def tsum(x: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    out = Tensor(x.data.sum(axis=axis, keepdims=keepdims), x.tape)
    if x.tape is not None:

        def backward() -> None:
            if out.grad is not None:
                x._accumulate(_expand_reduced(out.grad, x.data.shape, axis, keepdims))

        x.tape.record(backward)
    return out


def tmean(x: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    count = x.data.size if axis is None else x.data.shape[axis]
    out = Tensor(x.data.mean(axis=axis, keepdims=keepdims), x.tape)
    if x.tape is not None:
        inv = 1.0 / count

        def backward() -> None:
            if out.grad is not None:
                x._accumulate(_expand_reduced(out.grad * inv, x.data.shape, axis, keepdims))

        x.tape.record(backward)
    return out


# ---------------------------------------------------------------------------
# Nonlinearities
# ---------------------------------------------------------------------------


def softmax(x: Tensor) -> Tensor:
    """Softmax over the last axis, computed with max-subtraction.

    Every output slice sums to 1 and all entries lie in [0, 1]; subtracting
    the row maximum keeps the exponentials in [0, 1] so no input overflows.
    """
    x = as_tensor(x)
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=-1, keepdims=True)
    out = Tensor(s, x.tape)
    if x.tape is not None:

        def backward() -> None:
            g = out.grad
            if g is None:
                return
            x._accumulate(s * (g - (g * s).sum(axis=-1, keepdims=True)))

        x.tape.record(backward)
    return out


def log_softmax(x: Tensor) -> Tensor:
    """Log of softmax over the last axis, in one numerically stable step."""
    x = as_tensor(x)
    z = x.data - x.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    out_data = z - lse
    out = Tensor(out_data, x.tape)
    if x.tape is not None:

        def backward() -> None:
            g = out.grad
            if g is None:
                return
            x._accumulate(g - np.exp(out_data) * g.sum(axis=-1, keepdims=True))

        x.tape.record(backward)
    return out


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-6) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine.

    ``eps`` is added to the variance before the square root, so constant rows
    normalize to zero instead of dividing by zero.
    """
    if eps <= 0:
        raise ParameterError(f"layer_norm eps must be positive, got {eps}")
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    tape = _joint_tape(x, gain, bias)
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xn = centered * inv
    out = Tensor(xn * gain.data + bias.data, tape)
    if tape is not None:

        def backward() -> None:
            g = out.grad
            if g is None:
                return
            if x.tape is not None:
                dxn = g * gain.data
                dx = inv * (
                    dxn
                    - dxn.mean(axis=-1, keepdims=True)
                    - xn * (dxn * xn).mean(axis=-1, keepdims=True)
                )
                x._accumulate(dx)
            if gain.tape is not None:
                gain._accumulate(_unbroadcast(g * xn, gain.data.shape))
            if bias.tape is not None:
                bias._accumulate(_unbroadcast(g, bias.data.shape))

        tape.record(backward)
    return out


def gelu(x: Tensor) -> Tensor:
    """Exact Gaussian-error-linear unit x * Phi(x), erf form (no tanh fit)."""
    x = as_tensor(x)
    cdf = 0.5 * (1.0 + erf(x.data * _SQRT1_2))
    out = Tensor(x.data * cdf, x.tape)
    if x.tape is not None:

        def backward() -> None:
            g = out.grad
            if g is None:
                return
            pdf = np.exp(-0.5 * x.data * x.data) * _INV_SQRT_2PI
            x._accumulate(g * (cdf + x.data * pdf))

        x.tape.record(backward)
    return out


def dropout(x: Tensor, rate: float, rng: np.random.Generator | None = None,
            training: bool = False) -> Tensor:
    """Inverted dropout: zero with probability ``rate``, scale survivors by
    1/(1-rate) at training time, exact identity at inference."""
    if not 0.0 <= rate < 1.0:
        raise ParameterError(f"dropout rate must be in [0, 1), got {rate}")
    x = as_tensor(x)
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ParameterError("dropout in training mode requires a seeded generator")
    keep = rng.random(x.data.shape) >= rate
    mask = keep.astype(x.data.dtype) * (1.0 / (1.0 - rate))
    out = Tensor(x.data * mask, x.tape)
    if x.tape is not None:

        def backward() -> None:
            if out.grad is not None:
                x._accumulate(out.grad * mask)

        x.tape.record(backward)
    return out


# ---------------------------------------------------------------------------
# Gradient verification
# ---------------------------------------------------------------------------


@dataclass
class GradCheckReport:
    """Worst-case disagreement between reverse mode and central differences."""

    max_rel_error: float
    worst_param: str
    per_param: dict[str, float]
    checked: int


def grad_check(
    fn: Callable[[dict[str, Tensor]], Tensor],
    params: dict[str, np.ndarray],
    h: float = 1e-5,
    sample_per_param: int | None = None,
    sample_seed: int = 0,
    floor: float = 1e-4,
) -> GradCheckReport:
    """Compare the taped gradient of ``fn`` against central finite differences.

    ``fn`` maps a dict of tensors to a scalar tensor. All parameters are
    promoted to float64 before either evaluation. The analytic gradient comes
    from one backward pass; the numeric one perturbs each coordinate by +-h
    and forms (f(p+h) - f(p-h)) / 2h. Per-entry relative error is
    |a - n| / max(|a|, |n|, floor); the floor absorbs finite-difference noise
    on genuinely tiny gradient entries.

    ``sample_per_param`` limits the check to that many seeded random
    coordinates per parameter, which makes spot checks on full-size models
    affordable; None checks every coordinate.
    """
    arrays = {k: np.asarray(v, dtype=np.float64) for k, v in params.items()}

    tape = Tape()
    leaves = {k: tape.leaf(a.copy(), name=k) for k, a in arrays.items()}
    out = fn(leaves)
    if out.data.size != 1:
        raise ShapeError(f"grad_check function must return a scalar, got {out.data.shape}")
    if not np.isfinite(out.data).all():
        raise NumericsError("grad_check function value is not finite")
    tape.backward(out)
    analytic = {k: Tape.gradient(leaves[k]) for k in arrays}

    def evaluate(current: dict[str, np.ndarray]) -> float:
        value = fn({k: Tensor(a) for k, a in current.items()})
        v = float(value.data)
        if not math.isfinite(v):
            raise NumericsError("grad_check function value is not finite")
        return v

    rng = np.random.default_rng(sample_seed)
    worst = 0.0
    worst_param = ""
    per_param: dict[str, float] = {}
    checked = 0
    for name, base in arrays.items():
        flat = base.reshape(-1)
        n = flat.size
        if sample_per_param is not None and sample_per_param < n:
            coords = rng.choice(n, size=sample_per_param, replace=False)
        else:
            coords = np.arange(n)
        a_flat = analytic[name].reshape(-1)
        param_worst = 0.0
        for i in coords:
            orig = flat[i]
            flat[i] = orig + h
            f_plus = evaluate(arrays)
            flat[i] = orig - h
            f_minus = evaluate(arrays)
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * h)
            a = a_flat[i]
            rel = abs(a - numeric) / max(abs(a), abs(numeric), floor)
            if rel > param_worst:
                param_worst = rel
            checked += 1
        per_param[name] = param_worst
        if param_worst >= worst:
            worst = param_worst
            worst_param = name
    return GradCheckReport(worst, worst_param, per_param, checked)
