"""Differentiable operations over :class:`~invfold.autodiff.Tensor`.

Arguments may be Tensors or plain arrays; plain arrays are treated as
constants. Segment operations take an integer id per row and the number of
segments.
"""

from __future__ import annotations

import numpy as np

from . import _kernels
from .autodiff import Tensor, _make, _unbroadcast, _val, get_dtype

def _ids(segment_ids):
    return np.ascontiguousarray(segment_ids, dtype=np.int64)


def matmul(a, b) -> Tensor:
    av, bv = _val(a), _val(b)
    if av.ndim != 2 or bv.ndim != 2 or av.shape[1] != bv.shape[0]:
        raise ValueError(f"matmul shape mismatch: {av.shape} @ {bv.shape}")
    return _make(av @ bv, (a, b), lambda g: (g @ bv.T, av.T @ g))


def affine(x, w, b) -> Tensor:
    """``x @ w + b`` with the bias added in place."""
    xv, wv, bv = _val(x), _val(w), _val(b)
    if xv.ndim != 2 or wv.ndim != 2 or xv.shape[1] != wv.shape[0]:
        raise ValueError(f"affine shape mismatch: {xv.shape} @ {wv.shape}")
    y = xv @ wv
    y += bv
    return _make(y, (x, w, b), lambda g: (g @ wv.T, xv.T @ g, _unbroadcast(g, bv.shape)))


def add(a, b) -> Tensor:
    av, bv = _val(a), _val(b)
    return _make(
        av + bv, (a, b), lambda g: (_unbroadcast(g, av.shape), _unbroadcast(g, bv.shape))
    )


def sub(a, b) -> Tensor:
    av, bv = _val(a), _val(b)
    return _make(
        av - bv, (a, b), lambda g: (_unbroadcast(g, av.shape), -_unbroadcast(g, bv.shape))
    )


def mul(a, b) -> Tensor:
    av, bv = _val(a), _val(b)
    return _make(
        av * bv,
        (a, b),
        lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)),
    )


def scale(a, factor: float) -> Tensor:
    av = _val(a)
    return _make(av * factor, (a,), lambda g: (g * factor,))


def concat(parts, axis: int = -1) -> Tensor:
    vals = [_val(p) for p in parts]
    sizes = [v.shape[axis] for v in vals]
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        sl = [slice(None)] * g.ndim
        out = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            sl[axis] = slice(lo, hi)
            out.append(g[tuple(sl)])
        return out

    return _make(np.concatenate(vals, axis=axis), tuple(parts), backward)


def gather_rows(x, index) -> Tensor:
    xv = _val(x)
    idx = _ids(index)
    n = xv.shape[0]
    return _make(xv[idx], (x,), lambda g: (_kernels.segment_sum(g, idx, n),))


def gathered_affine(blocks, weight, bias) -> Tensor:
    """``concat([x[idx] ...]) @ weight + bias`` without materialising the concat.

    ``blocks`` is a list of ``(x, idx)``; ``idx=None`` takes ``x`` row for row.
    Node-sized inputs are multiplied before gathering, which is cheaper when
    there are many more edges than nodes.
    """
    wv, bv = _val(weight), _val(bias)
    vals = [_val(x) for x, _ in blocks]
    idxs = [None if i is None else _ids(i) for _, i in blocks]
    bounds = np.cumsum([0] + [v.shape[1] for v in vals])
    if bounds[-1] != wv.shape[0]:
        raise ValueError(f"gathered_affine: inputs have {bounds[-1]} columns, weight expects {wv.shape[0]}")
    rows = {v.shape[0] if i is None else len(i) for v, i in zip(vals, idxs)}
    if len(rows) != 1:
        raise ValueError("gathered_affine: blocks disagree on the number of output rows")
    m = rows.pop()
    out = np.empty((m, wv.shape[1]), dtype=np.result_type(wv, *vals))
    out[...] = bv
    for v, i, lo, hi in zip(vals, idxs, bounds[:-1], bounds[1:]):
        if i is None:
            out += v @ wv[lo:hi]
        else:
            _kernels.gather_add(out, np.ascontiguousarray(v @ wv[lo:hi]), i)

    def backward(g):
        gw = np.empty_like(wv)
        grads = []
        for v, i, lo, hi in zip(vals, idxs, bounds[:-1], bounds[1:]):
            gy = g if i is None else _kernels.segment_sum(g, i, v.shape[0])
            gw[lo:hi] = v.T @ gy
            grads.append(gy @ wv[lo:hi].T)
        return (*grads, gw, _unbroadcast(g, bv.shape))

    return _make(out, tuple(x for x, _ in blocks) + (weight, bias), backward)


def reshape(x, shape) -> Tensor:
    xv = _val(x)
    return _make(xv.reshape(shape), (x,), lambda g: (g.reshape(xv.shape),))


def sum(x) -> Tensor:  # noqa: A001 - mirrors numpy naming
    xv = _val(x)
    return _make(np.sum(xv), (x,), lambda g: (np.broadcast_to(g, xv.shape).copy(),))


def mean(x) -> Tensor:
    xv = _val(x)
    k = xv.size
    return _make(np.mean(xv), (x,), lambda g: (np.full_like(xv, g / k),))


def sigmoid(x) -> Tensor:
    xv = _val(x)
    y = 0.5 * (1.0 + np.tanh(0.5 * xv))
    return _make(y, (x,), lambda g: (g * y * (1.0 - y),))


def gelu(x) -> Tensor:
    """GELU, tanh approximation."""
    y, dy = _kernels.gelu(_val(x))
    return _make(y, (x,), lambda g: (g * dy,))


def layer_norm(x, gain, bias, eps: float = 1e-5) -> Tensor:
    xv, gv, bv = _val(x), _val(gain), _val(bias)
    y, xhat, inv = _kernels.layer_norm(xv, gv, bv, eps)
    d = xv.shape[-1]

    def backward(g):
        gx_hat = g * gv
        gx = inv / d * (
            d * gx_hat
            - gx_hat.sum(axis=-1, keepdims=True)
            - xhat * (gx_hat * xhat).sum(axis=-1, keepdims=True)
        )
        return gx, _unbroadcast(g * xhat, gv.shape), _unbroadcast(g, bv.shape)

    return _make(y, (x, gain, bias), backward)


def segment_softmax(logits, segment_ids, num_segments: int | None = None) -> Tensor:
    """Softmax of ``logits`` within each segment, column-wise for 2-D input."""
    lv = _val(logits)
    seg = _ids(segment_ids)
    if lv.shape[0] == 0 or seg.shape[0] == 0:
        raise ValueError("segment_softmax needs at least one element")
    if seg.shape[0] != lv.shape[0]:
        raise ValueError("segment ids must align with logits rows")
    if np.isnan(lv).any():
        raise ValueError("segment_softmax got NaN logits")
    n = int(seg.max()) + 1 if num_segments is None else int(num_segments)
    y = _kernels.segment_softmax(lv, seg, n)
    return _make(y, (logits,), lambda g: (_kernels.segment_softmax_backward(y, g, seg, n),))


def segment_sum(values, segment_ids, num_segments: int) -> Tensor:
    vv = _val(values)
    seg = _ids(segment_ids)
    if seg.shape[0] != vv.shape[0]:
        raise ValueError("segment ids must align with value rows")
    out = _kernels.segment_sum(vv, seg, num_segments)
    return _make(out, (values,), lambda g: (g[seg],))


def segment_mean(values, segment_ids, num_segments: int) -> Tensor:
    seg = _ids(segment_ids)
    counts = np.bincount(seg, minlength=num_segments).astype(get_dtype())
    if (counts == 0).any():
        raise ValueError("segment_mean: empty segment")
    total = segment_sum(values, seg, num_segments)
    shape = (num_segments,) + (1,) * (total.value.ndim - 1)
    return mul(total, 1.0 / counts.reshape(shape))


def segment_weighted_sum(weights, values, segment_ids, num_segments: int) -> Tensor:
    """Row ``s`` of the result is the sum of ``weights[j] * values[j]`` over rows in segment ``s``.

    ``weights`` may be 1-D (one weight per row) or ``m x heads``; in the latter
    case ``values`` columns are split into ``heads`` equal slices and each slice
    is weighted by its own head column.
    """
    wv, vv = _val(weights), _val(values)
    seg = _ids(segment_ids)
    squeeze = wv.ndim == 1
    w2 = wv[:, None] if squeeze else wv
    if vv.ndim != 2 or w2.shape[0] != vv.shape[0] or seg.shape[0] != vv.shape[0]:
        raise ValueError(f"segment_weighted_sum shape mismatch: {wv.shape} vs {vv.shape}")
    if vv.shape[1] % w2.shape[1]:
        raise ValueError("value width must be divisible by the number of heads")
    out = _kernels.segment_weighted_sum(w2, vv, seg, num_segments)

    def backward(g):
        gw, gv = _kernels.segment_weighted_sum_backward(w2, vv, g, seg)
        return (gw[:, 0] if squeeze else gw), gv

    return _make(out, (weights, values), backward)


def log_softmax_nll(logits, labels, mask) -> Tensor:
    """Mean negative log-likelihood of ``labels`` over rows where ``mask`` is set."""
    lv = _val(logits)
    labels = np.asarray(labels, dtype=np.int64)
    keep = np.asarray(mask, dtype=bool)
    count = int(keep.sum())
    if count == 0:
        raise ValueError("loss mask selects no residues")
    shifted = lv - lv.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - logz
    rows = np.flatnonzero(keep)
    loss = -logp[rows, labels[rows]].sum() / count

    def backward(g):
        grad = np.exp(logp)
        grad[rows, labels[rows]] -= 1.0
        grad[~keep] = 0.0
        return (grad * (g / count),)

    return _make(loss, (logits,), backward)


def log_softmax(x: np.ndarray) -> np.ndarray:
    shifted = x - x.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


# ---------------------------------------------------------------------------
# geometry-aware ops used by the learnable virtual atoms


def frame_points(rotations: np.ndarray, origins: np.ndarray, rel) -> Tensor:
    """Place points given in local frames: ``out[i, k] = R_i @ rel[k] + origin_i``.

    ``rotations`` (n,3,3) and ``origins`` (n,3) are constants; ``rel`` (K,3) may
    carry gradients.
    """
    rv = _val(rel)
    rot = np.asarray(rotations, dtype=get_dtype())
    out = np.einsum("nab,kb->nka", rot, rv) + np.asarray(origins, dtype=get_dtype())[:, None, :]
    return _make(out, (rel,), lambda g: (np.einsum("nab,nka->kb", rot, g),))


def pair_distance_rbf(a, b, pairs, centers: np.ndarray, sigma: float) -> Tensor:
    """Gaussian-encoded distances between point sets ``a`` (m,Ka,3) and ``b`` (m,Kb,3).

    For each ``(p, q)`` in ``pairs`` emits ``exp(-(|a[:,p]-b[:,q]| - mu)^2 / sigma^2)``
    over all centers; output is (m, len(pairs)*len(centers)) with the pair
    index varying slowest.
    """
    av, bv = _val(a), _val(b)
    pa = np.array([p for p, _ in pairs], dtype=np.int64)
    pb = np.array([q for _, q in pairs], dtype=np.int64)
    mu = np.asarray(centers, dtype=get_dtype())
    m, npair, nr = av.shape[0], len(pairs), mu.shape[0]
    if npair == 0:
        return Tensor(np.zeros((m, 0), dtype=get_dtype()))
    diff = av[:, pa, :] - bv[:, pb, :]
    dist = np.sqrt((diff * diff).sum(axis=-1))
    delta = dist[..., None] - mu
    out = np.exp(-(delta * delta) / sigma**2)

    def backward(g):
        g = g.reshape(m, npair, nr)
        gdist = (g * out * (-2.0 * delta / sigma**2)).sum(axis=-1)
        safe = np.where(dist > 1e-12, dist, 1.0)
        gdiff = np.where((dist > 1e-12)[..., None], diff * (gdist / safe)[..., None], 0.0)
        ga = gb = None
        if isinstance(a, Tensor) and a.requires_grad:
            ga = np.zeros_like(av)
            for k in range(av.shape[1]):
                ga[:, k] = gdiff[:, pa == k].sum(axis=1)
        if isinstance(b, Tensor) and b.requires_grad:
            gb = np.zeros_like(bv)
            for k in range(bv.shape[1]):
                gb[:, k] = -gdiff[:, pb == k].sum(axis=1)
        return ga, gb

    return _make(out.reshape(m, npair * nr), (a, b), backward)
