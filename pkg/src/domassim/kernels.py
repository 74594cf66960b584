"""Hot inner loops.

Every kernel exists twice: an explicit-loop version compiled with numba and a
vectorised numpy version. ``USE_NUMBA`` (see ``_accel``) picks which one the
public names bind to; ``IMPLS`` exposes both for tests and benchmarks.
"""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ._accel import USE_NUMBA, njit


# --------------------------------------------------------------------------
# GLCM counting
# --------------------------------------------------------------------------

def _glcm_counts_loops(levels, offsets, n_levels):
    n, h, w = levels.shape
    k = offsets.shape[0]
    out = np.zeros((n, k, n_levels, n_levels), dtype=np.int64)
    for b in range(n):
        for o in range(k):
            dx = offsets[o, 0]
            dy = offsets[o, 1]
            r0 = max(0, -dy)
            r1 = min(h, h - dy)
            c0 = max(0, -dx)
            c1 = min(w, w - dx)
            for r in range(r0, r1):
                for c in range(c0, c1):
                    out[b, o, levels[b, r, c], levels[b, r + dy, c + dx]] += 1
    return out


def _glcm_counts_numpy(levels, offsets, n_levels):
    n, h, w = levels.shape
    k = offsets.shape[0]
    g2 = n_levels * n_levels
    out = np.zeros((n, k, n_levels, n_levels), dtype=np.int64)
    batch_base = (np.arange(n, dtype=np.int64) * g2)[:, None, None]
    for o in range(k):
        dx, dy = int(offsets[o, 0]), int(offsets[o, 1])
        r0, r1 = max(0, -dy), min(h, h - dy)
        c0, c1 = max(0, -dx), min(w, w - dx)
        if r1 <= r0 or c1 <= c0:
            continue
        base = levels[:, r0:r1, c0:c1].astype(np.int64)
        nb = levels[:, r0 + dy:r1 + dy, c0 + dx:c1 + dx].astype(np.int64)
        flat = (batch_base + base * n_levels + nb).ravel()
        out[:, o] = np.bincount(flat, minlength=n * g2).reshape(n, n_levels, n_levels)
    return out


# --------------------------------------------------------------------------
# im2col / col2im for strided 2-D correlation
# --------------------------------------------------------------------------

def _im2col_loops(xpad, kh, kw, stride):
    n, c, hp, wp = xpad.shape
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1
    cols = np.empty((n, ho, wo, c, kh, kw), dtype=xpad.dtype)
    for b in range(n):
        for u in range(ho):
            for v in range(wo):
                for ch in range(c):
                    for i in range(kh):
                        for j in range(kw):
                            cols[b, u, v, ch, i, j] = xpad[b, ch, u * stride + i, v * stride + j]
    return cols


def _im2col_numpy(xpad, kh, kw, stride):
    n, c, hp, wp = xpad.shape
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1
    win = sliding_window_view(xpad, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    win = win[:, :, :ho, :wo]
    return np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5))


def _col2im_loops(cols, hp, wp, stride):
    n, ho, wo, c, kh, kw = cols.shape
    out = np.zeros((n, c, hp, wp), dtype=cols.dtype)
    for b in range(n):
        for u in range(ho):
            for v in range(wo):
                for ch in range(c):
                    for i in range(kh):
                        for j in range(kw):
                            out[b, ch, u * stride + i, v * stride + j] += cols[b, u, v, ch, i, j]
    return out


def _col2im_numpy(cols, hp, wp, stride):
    n, ho, wo, c, kh, kw = cols.shape
    out = np.zeros((n, c, hp, wp), dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            out[:, :, i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride] += (
                cols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            )
    return out


# --------------------------------------------------------------------------
# max pooling (ties go to the first element in row-major order)
# --------------------------------------------------------------------------

def _maxpool_fwd_loops(x, window, stride):
    n, c, h, w = x.shape
    ho = (h - window) // stride + 1
    wo = (w - window) // stride + 1
    out = np.empty((n, c, ho, wo), dtype=x.dtype)
    arg = np.empty((n, c, ho, wo), dtype=np.int64)
    for b in range(n):
        for ch in range(c):
            for u in range(ho):
                for v in range(wo):
                    r = u * stride
                    q = v * stride
                    best = x[b, ch, r, q]
                    bi = r * w + q
                    for i in range(window):
                        for j in range(window):
                            val = x[b, ch, r + i, q + j]
                            if val > best:
                                best = val
                                bi = (r + i) * w + q + j
                    out[b, ch, u, v] = best
                    arg[b, ch, u, v] = bi
    return out, arg


def _maxpool_fwd_numpy(x, window, stride):
    n, c, h, w = x.shape
    ho = (h - window) // stride + 1
    wo = (w - window) // stride + 1
    win = sliding_window_view(x, (window, window), axis=(2, 3))[:, :, ::stride, ::stride]
    win = win[:, :, :ho, :wo].reshape(n, c, ho, wo, window * window)
    local = np.argmax(win, axis=-1)
    out = np.take_along_axis(win, local[..., None], axis=-1)[..., 0]
    rows = (np.arange(ho) * stride)[:, None] + local // window
    colz = (np.arange(wo) * stride)[None, :] + local % window
    return np.ascontiguousarray(out), (rows * w + colz).astype(np.int64)


def _maxpool_bwd_loops(grad, arg, h, w):
    n, c, ho, wo = grad.shape
    out = np.zeros((n, c, h * w), dtype=grad.dtype)
    for b in range(n):
        for ch in range(c):
            for u in range(ho):
                for v in range(wo):
                    out[b, ch, arg[b, ch, u, v]] += grad[b, ch, u, v]
    return out.reshape(n, c, h, w)


def _maxpool_bwd_numpy(grad, arg, h, w):
    n, c, ho, wo = grad.shape
    out = np.zeros((n * c, h * w), dtype=grad.dtype)
    rows = np.repeat(np.arange(n * c), ho * wo)
    np.add.at(out, (rows, arg.reshape(-1)), grad.reshape(-1))
    return out.reshape(n, c, h, w)


_LOOPS = {
    "glcm_counts": _glcm_counts_loops,
    "im2col": _im2col_loops,
    "col2im": _col2im_loops,
    "maxpool_forward": _maxpool_fwd_loops,
    "maxpool_backward": _maxpool_bwd_loops,
}
_NUMPY = {
    "glcm_counts": _glcm_counts_numpy,
    "im2col": _im2col_numpy,
    "col2im": _col2im_numpy,
    "maxpool_forward": _maxpool_fwd_numpy,
    "maxpool_backward": _maxpool_bwd_numpy,
}

_jitted = {}


def _jit(name):
    if name not in _jitted:
        _jitted[name] = njit(cache=False)(_LOOPS[name])
    return _jitted[name]


def get_impl(name, backend):
    """Return kernel ``name`` for ``backend`` in {"numba", "numpy"}."""
    if backend == "numba":
        return _jit(name)
    if backend == "numpy":
        return _NUMPY[name]
    raise ValueError(f"unknown backend {backend!r}")


BACKEND = "numba" if USE_NUMBA else "numpy"


def glcm_counts(levels, offsets, n_levels):
    """Co-occurrence counts for a batch of level maps.

    ``levels`` is an integer array (n, h, w), ``offsets`` an integer array
    (k, 2) of (dx, dy) pairs. Returns int64 counts of shape (n, k, G, G).
    """
    levels = np.ascontiguousarray(levels, dtype=np.int64)
    offsets = np.ascontiguousarray(offsets, dtype=np.int64)
    return get_impl("glcm_counts", BACKEND)(levels, offsets, int(n_levels))


def im2col(xpad, kh, kw, stride):
    return get_impl("im2col", BACKEND)(np.ascontiguousarray(xpad), int(kh), int(kw), int(stride))


def col2im(cols, hp, wp, stride):
    return get_impl("col2im", BACKEND)(np.ascontiguousarray(cols), int(hp), int(wp), int(stride))


def maxpool_forward(x, window, stride):
    return get_impl("maxpool_forward", BACKEND)(np.ascontiguousarray(x), int(window), int(stride))


def maxpool_backward(grad, arg, h, w):
    return get_impl("maxpool_backward", BACKEND)(
        np.ascontiguousarray(grad), np.ascontiguousarray(arg), int(h), int(w))
