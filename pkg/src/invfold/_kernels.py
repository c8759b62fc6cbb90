"""Segment reductions used by the message-passing layers.

Every kernel exists twice: a numba ``@njit`` loop and a vectorised numpy
version. The public names bind to the numba versions unless numba is missing
or ``INVFOLD_NO_JIT=1`` is set in the environment. Both implementations stay
importable as ``NUMBA_KERNELS`` / ``NUMPY_KERNELS`` so they can be compared
directly (see ``benchmarks/bench_kernels.py``).

Segment ids need not be sorted. Segments with no members reduce to zero.
"""

import os
from types import SimpleNamespace

import numpy as np

try:
    import numba
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False


# ---------------------------------------------------------------------------
# numpy path


def _np_segment_sum(values, seg, n):
    out = np.zeros((n,) + values.shape[1:], dtype=values.dtype)
    if values.shape[0] == 0:
        return out
    order = np.argsort(seg, kind="stable")
    sorted_seg = seg[order]
    starts = np.flatnonzero(np.r_[True, sorted_seg[1:] != sorted_seg[:-1]])
    out[sorted_seg[starts]] = np.add.reduceat(values[order], starts, axis=0)
    return out


def _np_segment_max(values, seg, n):
    out = np.full((n,) + values.shape[1:], -np.inf, dtype=values.dtype)
    if values.shape[0] == 0:
        return out
    order = np.argsort(seg, kind="stable")
    sorted_seg = seg[order]
    starts = np.flatnonzero(np.r_[True, sorted_seg[1:] != sorted_seg[:-1]])
    out[sorted_seg[starts]] = np.maximum.reduceat(values[order], starts, axis=0)
    return out


def _np_segment_softmax(logits, seg, n):
    peak = _np_segment_max(logits, seg, n)
    z = np.exp(logits - peak[seg])
    denom = _np_segment_sum(z, seg, n)
    return z / denom[seg]


def _np_segment_softmax_backward(y, grad, seg, n):
    dot = _np_segment_sum(y * grad, seg, n)
    return y * (grad - dot[seg])


def _np_segment_weighted_sum(w, v, seg, n):
    m, heads = w.shape
    width = v.shape[1] // heads
    prod = (v.reshape(m, heads, width) * w[:, :, None]).reshape(m, -1)
    return _np_segment_sum(prod, seg, n)


def _np_segment_weighted_sum_backward(w, v, grad, seg):
    m, heads = w.shape
    width = v.shape[1] // heads
    g = grad[seg].reshape(m, heads, width)
    gv = (g * w[:, :, None]).reshape(m, -1)
    gw = np.einsum("mhc,mhc->mh", g, v.reshape(m, heads, width))
    return gw, gv


def _np_gather_add(out, values, index):
    out += values[index]


def _np_layer_norm(x, gain, bias, eps):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    return xhat * gain + bias, xhat, inv


_C0 = np.sqrt(2.0 / np.pi)
_C1 = 0.044715


def _np_gelu(x):
    x2 = x * x
    t = np.tanh(_C0 * x * (1.0 + _C1 * x2))
    y = 0.5 * x * (1.0 + t)
    dy = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * _C0 * (1.0 + 3.0 * _C1 * x2)
    return y, dy


NUMPY_KERNELS = SimpleNamespace(
    name="numpy",
    gelu=_np_gelu,
    gather_add=_np_gather_add,
    layer_norm=_np_layer_norm,
    segment_sum=_np_segment_sum,
    segment_max=_np_segment_max,
    segment_softmax=_np_segment_softmax,
    segment_softmax_backward=_np_segment_softmax_backward,
    segment_weighted_sum=_np_segment_weighted_sum,
    segment_weighted_sum_backward=_np_segment_weighted_sum_backward,
)


# ---------------------------------------------------------------------------
# numba path

if HAVE_NUMBA:

    @njit(cache=True)
    def _nb_segment_sum2d(values, seg, n):
        m, d = values.shape
        out = np.zeros((n, d), dtype=values.dtype)
        for j in range(m):
            s = seg[j]
            for c in range(d):
                out[s, c] += values[j, c]
        return out

    @njit(cache=True)
    def _nb_segment_max2d(values, seg, n):
        m, d = values.shape
        out = np.full((n, d), -np.inf, dtype=values.dtype)
        for j in range(m):
            s = seg[j]
            for c in range(d):
                if values[j, c] > out[s, c]:
                    out[s, c] = values[j, c]
        return out

    @njit(cache=True)
    def _nb_segment_softmax2d(logits, seg, n):
        m, h = logits.shape
        peak = _nb_segment_max2d(logits, seg, n)
        z = np.empty_like(logits)
        denom = np.zeros((n, h), dtype=logits.dtype)
        for j in range(m):
            s = seg[j]
            for c in range(h):
                e = np.exp(logits[j, c] - peak[s, c])
                z[j, c] = e
                denom[s, c] += e
        for j in range(m):
            s = seg[j]
            for c in range(h):
                z[j, c] /= denom[s, c]
        return z

    @njit(cache=True)
    def _nb_segment_softmax_backward2d(y, grad, seg, n):
        m, h = y.shape
        dot = np.zeros((n, h), dtype=y.dtype)
        for j in range(m):
            s = seg[j]
            for c in range(h):
                dot[s, c] += y[j, c] * grad[j, c]
        out = np.empty_like(y)
        for j in range(m):
            s = seg[j]
            for c in range(h):
                out[j, c] = y[j, c] * (grad[j, c] - dot[s, c])
        return out

    @njit(cache=True)
    def _nb_segment_weighted_sum(w, v, seg, n):
        m, heads = w.shape
        d = v.shape[1]
        width = d // heads
        out = np.zeros((n, d), dtype=v.dtype)
        for j in range(m):
            s = seg[j]
            for h in range(heads):
                wj = w[j, h]
                base = h * width
                for c in range(base, base + width):
                    out[s, c] += wj * v[j, c]
        return out

    @njit(cache=True)
    def _nb_segment_weighted_sum_backward(w, v, grad, seg):
        m, heads = w.shape
        d = v.shape[1]
        width = d // heads
        gw = np.zeros((m, heads), dtype=v.dtype)
        gv = np.empty((m, d), dtype=v.dtype)
        for j in range(m):
            s = seg[j]
            for h in range(heads):
                wj = w[j, h]
                acc = 0.0
                base = h * width
                for c in range(base, base + width):
                    g = grad[s, c]
                    gv[j, c] = wj * g
                    acc += g * v[j, c]
                gw[j, h] = acc
        return gw, gv

    @njit(cache=True)
    def _nb_gather_add2d(out, values, index):
        m, d = out.shape
        for j in range(m):
            r = index[j]
            for c in range(d):
                out[j, c] += values[r, c]

    def _nb_gather_add(out, values, index):
        if out.ndim == 2 and out.flags.c_contiguous and values.flags.c_contiguous:
            _nb_gather_add2d(out, values, index)
        else:
            out += values[index]

    @njit(cache=True)
    def _nb_layer_norm2d(x, gain, bias, eps, y, xhat, inv):
        m, d = x.shape
        for j in range(m):
            mu = 0.0
            for c in range(d):
                mu += x[j, c]
            mu /= d
            var = 0.0
            for c in range(d):
                t = x[j, c] - mu
                var += t * t
            r = 1.0 / np.sqrt(var / d + eps)
            inv[j, 0] = r
            for c in range(d):
                t = (x[j, c] - mu) * r
                xhat[j, c] = t
                y[j, c] = t * gain[c] + bias[c]

    def _nb_layer_norm(x, gain, bias, eps):
        if x.ndim != 2 or gain.shape != (x.shape[1],) or bias.shape != (x.shape[1],):
            return _np_layer_norm(x, gain, bias, eps)
        x = np.ascontiguousarray(x)
        y = np.empty_like(x)
        xhat = np.empty_like(x)
        inv = np.empty((x.shape[0], 1), dtype=x.dtype)
        _nb_layer_norm2d(x, np.ascontiguousarray(gain, dtype=x.dtype), np.ascontiguousarray(bias, dtype=x.dtype), eps, y, xhat, inv)
        return y, xhat, inv

    @njit(cache=True)
    def _nb_gelu_arg(x, z):
        for i in range(x.size):
            v = x[i]
            z[i] = _C0 * v * (1.0 + _C1 * v * v)

    @njit(cache=True)
    def _nb_gelu_finish(x, t, y, dy):
        for i in range(x.size):
            v = x[i]
            tt = t[i]
            y[i] = 0.5 * v * (1.0 + tt)
            dy[i] = 0.5 * (1.0 + tt) + 0.5 * v * (1.0 - tt * tt) * _C0 * (1.0 + 3.0 * _C1 * v * v)

    def _nb_gelu(x):
        # numpy's SIMD tanh beats a scalar tanh inside the jitted loop
        flat = np.ascontiguousarray(x).reshape(-1)
        z = np.empty_like(flat)
        _nb_gelu_arg(flat, z)
        t = np.tanh(z)
        y = np.empty_like(flat)
        dy = np.empty_like(flat)
        _nb_gelu_finish(flat, t, y, dy)
        return y.reshape(x.shape), dy.reshape(x.shape)

    def _as2d(fn):
        # numba kernels take 2-D inputs; flatten trailing axes around the call
        def wrapped(values, seg, n):
            flat = np.ascontiguousarray(values.reshape(values.shape[0], -1))
            out = fn(flat, seg, n)
            return out.reshape((n,) + values.shape[1:])

        return wrapped

    @njit(cache=True)
    def _nb_shift(logits, peak, seg, out):
        m, h = logits.shape
        for j in range(m):
            s = seg[j]
            for c in range(h):
                out[j, c] = logits[j, c] - peak[s, c]

    @njit(cache=True)
    def _nb_normalise(z, seg, n):
        m, h = z.shape
        denom = np.zeros((n, h), dtype=z.dtype)
        for j in range(m):
            s = seg[j]
            for c in range(h):
                denom[s, c] += z[j, c]
        for j in range(m):
            s = seg[j]
            for c in range(h):
                z[j, c] /= denom[s, c]

    def _nb_softmax(logits, seg, n):
        # same SIMD-exp split as gelu; _nb_segment_softmax2d is the all-jit reference
        flat = np.ascontiguousarray(logits.reshape(logits.shape[0], -1))
        z = np.empty_like(flat)
        _nb_shift(flat, _nb_segment_max2d(flat, seg, n), seg, z)
        np.exp(z, out=z)
        _nb_normalise(z, seg, n)
        return z.reshape(logits.shape)

    def _nb_softmax_backward(y, grad, seg, n):
        shape = y.shape
        y2 = np.ascontiguousarray(y.reshape(shape[0], -1))
        g2 = np.ascontiguousarray(grad.reshape(shape[0], -1))
        return _nb_segment_softmax_backward2d(y2, g2, seg, n).reshape(shape)

    def _nb_wsum(w, v, seg, n):
        return _nb_segment_weighted_sum(
            np.ascontiguousarray(w), np.ascontiguousarray(v), seg, n
        )

    def _nb_wsum_backward(w, v, grad, seg):
        return _nb_segment_weighted_sum_backward(
            np.ascontiguousarray(w),
            np.ascontiguousarray(v),
            np.ascontiguousarray(grad),
            seg,
        )

    NUMBA_KERNELS = SimpleNamespace(
        name="numba",
        gelu=_nb_gelu,
        gather_add=_nb_gather_add,
        layer_norm=_nb_layer_norm,
        segment_sum=_as2d(_nb_segment_sum2d),
        segment_max=_as2d(_nb_segment_max2d),
        segment_softmax=_nb_softmax,
        segment_softmax_backward=_nb_softmax_backward,
        segment_weighted_sum=_nb_wsum,
        segment_weighted_sum_backward=_nb_wsum_backward,
    )
else:  # pragma: no cover
    NUMBA_KERNELS = None


def _select():
    flag = os.environ.get("INVFOLD_NO_JIT", "").strip().lower()
    if not HAVE_NUMBA or flag in ("1", "true", "yes"):
        return NUMPY_KERNELS
    return NUMBA_KERNELS


ACTIVE = _select()
BACKEND = ACTIVE.name

gelu = ACTIVE.gelu
gather_add = ACTIVE.gather_add
layer_norm = ACTIVE.layer_norm
segment_sum = ACTIVE.segment_sum
segment_max = ACTIVE.segment_max
segment_softmax = ACTIVE.segment_softmax
segment_softmax_backward = ACTIVE.segment_softmax_backward
segment_weighted_sum = ACTIVE.segment_weighted_sum
segment_weighted_sum_backward = ACTIVE.segment_weighted_sum_backward
