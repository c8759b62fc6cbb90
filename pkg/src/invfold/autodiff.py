"""Dense arrays with tape-based reverse-mode differentiation.

Only the operations the model needs are provided. Usage::

    with Tape() as tape:
        y = ops.sum(ops.mul(x, x))
    grads = tape.backward(y)
    grads[x]            # same shape as x.value

Operations never mutate their inputs; gradients live in the mapping
returned by ``Tape.backward``, so independent tapes can run on different
threads against the same parameter tensors. Only the optimiser rebinds a
parameter's ``value``, and it does so between steps.
"""

from __future__ import annotations

import contextlib
import threading

import numpy as np


_DTYPES = {"f64": np.float64, "f32": np.float32}
_precision = {"dtype": np.float64}


def set_precision(name: str) -> None:
    """Select the global floating type for new tensors ("f64" or "f32")."""
    if name not in _DTYPES:
        raise ValueError(f"unknown precision {name!r}; expected one of {sorted(_DTYPES)}")
    _precision["dtype"] = _DTYPES[name]


def get_dtype():
    return _precision["dtype"]


def precision_name() -> str:
    return "f64" if _precision["dtype"] is np.float64 else "f32"


@contextlib.contextmanager
def precision(name: str):
    old = precision_name()
    set_precision(name)
    try:
        yield
    finally:
        set_precision(old)


class Tensor:
    __slots__ = ("value", "requires_grad", "__weakref__")

    def __init__(self, value, requires_grad: bool = False):
        arr = np.asarray(value)
        if arr.dtype != get_dtype():
            arr = arr.astype(get_dtype())
        self.value = arr
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self):
        return self.value.shape

    def numpy(self) -> np.ndarray:
        return self.value

    def __repr__(self):
        return f"Tensor(shape={self.value.shape}, requires_grad={self.requires_grad})"

    # hashing by identity keeps Tensors usable as gradient-map keys
    __hash__ = object.__hash__


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class TapeError(RuntimeError):
    pass


_local = threading.local()


def _active_tape():
    stack = getattr(_local, "stack", None)
    return stack[-1] if stack else None


class Tape:
    """Records differentiable operations executed while it is active."""

    def __init__(self):
        self._records = []
        self._used = False

    def __enter__(self):
        if not hasattr(_local, "stack"):
            _local.stack = []
        _local.stack.append(self)
        return self

    def __exit__(self, *exc):
        _local.stack.pop()
        return False

    def __len__(self):
        return len(self._records)

    def record(self, out: Tensor, inputs, backward) -> None:
        self._records.append((out, inputs, backward))

    def backward(self, loss: Tensor, seed=None) -> "Gradients":
        if self._used:
            raise TapeError("backward already ran on this tape; run a new forward pass")
        self._used = True
        grads = Gradients()
        if seed is None:
            if loss.value.size != 1:
                raise TapeError("backward needs a scalar loss or an explicit seed")
            seed = np.ones_like(loss.value)
        grads._acc(loss, np.asarray(seed, dtype=loss.value.dtype))
        for out, inputs, backward in reversed(self._records):
            g = grads._store.get(id(out))
            if g is None:
                continue
            parts = backward(g)
            for t, gi in zip(inputs, parts):
                if gi is not None and isinstance(t, Tensor) and t.requires_grad:
                    grads._acc(t, gi)
        self._records = []
        return grads


class Gradients:
    """Gradient lookup keyed by tensor identity."""

    def __init__(self):
        self._store = {}
        self._keep = {}

    def _acc(self, t: Tensor, g):
        key = id(t)
        if key in self._store:
            self._store[key] = self._store[key] + g
        else:
            self._store[key] = g
            self._keep[key] = t

    def __getitem__(self, t: Tensor) -> np.ndarray:
        g = self._store.get(id(t))
        if g is None:
            return np.zeros_like(t.value)
        return g

    def __contains__(self, t: Tensor) -> bool:
        return id(t) in self._store


def _make(value, inputs, backward) -> Tensor:
    needs = any(isinstance(t, Tensor) and t.requires_grad for t in inputs)
    tape = _active_tape() if needs else None
    out = Tensor(value, requires_grad=tape is not None)
    if tape is not None:
        tape.record(out, inputs, backward)
    return out


def _val(x):
    return x.value if isinstance(x, Tensor) else np.asarray(x, dtype=get_dtype())


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


class GradCheckError(ValueError):
    pass


def grad_check(f, x, step: float = 1e-4) -> float:
    """Compare the tape gradient of scalar ``f`` at ``x`` against central differences.

    Returns ``max_i |analytic_i - numeric_i| / max(1, |analytic_i|)``.
    """
    x0 = np.array(_val(x), dtype=get_dtype())
    xt = Tensor(x0, requires_grad=True)
    with Tape() as tape:
        y = f(xt)
    if not isinstance(y, Tensor):
        # f ignored its input: derivative is zero everywhere
        return 0.0
    if y.value.size != 1 or not np.isfinite(y.value).all():
        raise GradCheckError("f must return a finite scalar")
    analytic = tape.backward(y)[xt].reshape(-1)
    flat = x0.reshape(-1)
    worst = 0.0
    for i in range(flat.size):
        probe = flat.copy()
        probe[i] += step
        hi = _val(f(Tensor(probe.reshape(x0.shape))))
        probe[i] -= 2 * step
        lo = _val(f(Tensor(probe.reshape(x0.shape))))
        if not (np.isfinite(hi).all() and np.isfinite(lo).all()):
            raise GradCheckError(f"non-finite value while probing coordinate {i}")
        numeric = float(hi - lo) / (2 * step)
        err = abs(analytic[i] - numeric) / max(1.0, abs(analytic[i]))
        worst = max(worst, err)
    return float(worst)
