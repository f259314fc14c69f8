"""Hot loops for depthwise one-hot convolution + min/max pooling.

A bank of one-hot binary filters turns the depthwise convolution into a
gather: plane f of the convolution is just the zero-padded input sampled
at that filter's active offset.  Pooling across planes therefore reduces,
per output pixel, to an extreme over F sampled values.  These kernels
fuse the gather with the reduction so the F planes are never materialized.

Ties always go to the lowest plane index (strict comparison while
scanning planes in order).  Numba-compiled versions are used when
available; the numpy fallbacks compute identical results and are kept
honest by an equality test in the suite.  Set DEEPMORPH_NO_NUMBA=1 to
force the fallbacks.
"""

import os

import numpy as np

TRACE_DTYPE = np.int16

try:
    if os.environ.get("DEEPMORPH_NO_NUMBA"):
        raise ImportError("numba disabled via DEEPMORPH_NO_NUMBA")
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised via DEEPMORPH_NO_NUMBA
    HAVE_NUMBA = False


def _np_pool_forward(xpad, oi, oj, stride, h_out, w_out, take_max):
    c = xpad.shape[0]
    out = np.empty((c, h_out, w_out))
    trace = np.zeros((c, h_out, w_out), TRACE_DTYPE)
    cmp = np.greater if take_max else np.less
    better = np.empty(out.shape, bool)
    hi = (h_out - 1) * stride + 1
    wi = (w_out - 1) * stride + 1
    for f in range(len(oi)):
        plane = xpad[:, oi[f] : oi[f] + hi : stride, oj[f] : oj[f] + wi : stride]
        if f == 0:
            out[:] = plane
            continue
        cmp(plane, out, out=better)
        np.copyto(out, plane, where=better)
        trace[better] = f
    return out, trace


def _np_pool_backward_input(grad, trace, oi, oj, stride, hp, wp):
    c, h_out, w_out = grad.shape
    gxpad = np.zeros((c, hp, wp))
    hi = (h_out - 1) * stride + 1
    wi = (w_out - 1) * stride + 1
    for f in range(len(oi)):
        sel = trace == f
        if not sel.any():
            continue
        view = gxpad[:, oi[f] : oi[f] + hi : stride, oj[f] : oj[f] + wi : stride]
        view[sel] += grad[sel]
    return gxpad


def _np_pool_backward_weights(grad, trace, xpad, stride, size, n_weight_planes):
    c, h_out, w_out = grad.shape
    gw = np.zeros((n_weight_planes, size, size))
    flat_trace = trace.ravel().astype(np.intp)
    keep = flat_trace < n_weight_planes
    flat_trace = np.where(keep, flat_trace, 0)
    hi = (h_out - 1) * stride + 1
    wi = (w_out - 1) * stride + 1
    for m in range(size):
        for n in range(size):
            prod = (grad * xpad[:, m : m + hi : stride, n : n + wi : stride]).ravel()
            gw[:, m, n] = np.bincount(
                flat_trace, weights=np.where(keep, prod, 0.0), minlength=n_weight_planes
            )
    return gw


if HAVE_NUMBA:

    @njit(cache=True)
    def _nb_pool_forward(xpad, oi, oj, stride, h_out, w_out, take_max):
        c = xpad.shape[0]
        nf = len(oi)
        out = np.empty((c, h_out, w_out))
        trace = np.zeros((c, h_out, w_out), TRACE_DTYPE)
        for ch in range(c):
            for i in range(h_out):
                bi = i * stride
                for j in range(w_out):
                    bj = j * stride
                    best = xpad[ch, bi + oi[0], bj + oj[0]]
                    arg = 0
                    for f in range(1, nf):
                        v = xpad[ch, bi + oi[f], bj + oj[f]]
                        if (v > best) if take_max else (v < best):
                            best = v
                            arg = f
                    out[ch, i, j] = best
                    trace[ch, i, j] = arg
        return out, trace

    @njit(cache=True)
    def _nb_pool_backward_input(grad, trace, oi, oj, stride, hp, wp):
        c, h_out, w_out = grad.shape
        gxpad = np.zeros((c, hp, wp))
        for ch in range(c):
            for i in range(h_out):
                bi = i * stride
                for j in range(w_out):
                    f = trace[ch, i, j]
                    gxpad[ch, bi + oi[f], j * stride + oj[f]] += grad[ch, i, j]
        return gxpad

    @njit(cache=True)
    def _nb_pool_backward_weights(grad, trace, xpad, stride, size, n_weight_planes):
        c, h_out, w_out = grad.shape
        gw = np.zeros((n_weight_planes, size, size))
        for ch in range(c):
            for i in range(h_out):
                bi = i * stride
                for j in range(w_out):
                    f = trace[ch, i, j]
                    if f >= n_weight_planes:
                        continue
                    g = grad[ch, i, j]
                    if g == 0.0:
                        continue
                    bj = j * stride
                    for m in range(size):
                        for n in range(size):
                            gw[f, m, n] += g * xpad[ch, bi + m, bj + n]
        return gw


def pool_forward(xpad, offsets, stride, h_out, w_out, take_max):
    """Pooled one-hot depthwise convolution over all planes.

    Returns (out, trace) where out[ch, i, j] is the min (or max) of
    xpad[ch, i*stride + oi[f], j*stride + oj[f]] over plane indices f and
    trace holds the winning f per pixel.
    """
    oi = np.ascontiguousarray(offsets[:, 0], dtype=np.int64)
    oj = np.ascontiguousarray(offsets[:, 1], dtype=np.int64)
    if HAVE_NUMBA:
        return _nb_pool_forward(xpad, oi, oj, stride, h_out, w_out, take_max)
    return _np_pool_forward(xpad, oi, oj, stride, h_out, w_out, take_max)


def pool_backward_input(grad, trace, offsets, stride, hp, wp):
    """Route each output-pixel gradient to its winning padded-input cell."""
    oi = np.ascontiguousarray(offsets[:, 0], dtype=np.int64)
    oj = np.ascontiguousarray(offsets[:, 1], dtype=np.int64)
    grad = np.ascontiguousarray(grad)
    if HAVE_NUMBA:
        return _nb_pool_backward_input(grad, trace, oi, oj, stride, hp, wp)
    return _np_pool_backward_input(grad, trace, oi, oj, stride, hp, wp)


def pool_backward_weights(grad, trace, xpad, stride, size, n_weight_planes):
    """Dense conv-weight gradient per plane from the routed pixel gradients.

    gw[f, m, n] accumulates grad * window over the pixels plane f won.
    Planes with index >= n_weight_planes carry no trainable weights and
    are skipped.
    """
    grad = np.ascontiguousarray(grad)
    if HAVE_NUMBA:
        return _nb_pool_backward_weights(grad, trace, xpad, stride, size, n_weight_planes)
    return _np_pool_backward_weights(grad, trace, xpad, stride, size, n_weight_planes)
