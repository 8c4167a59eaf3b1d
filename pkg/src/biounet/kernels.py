"""Hot inner loops behind conv2d and max pooling.

Two interchangeable backends implement the same functions:

``compiled``
    The Cython extension ``biounet._ckernels``, built by ``setup.py``.
``python``
    The numpy implementations in this module.

The backend is picked once at import. Setting ``BIOUNET_KERNELS=python``
forces the numpy path; ``BIOUNET_KERNELS=compiled`` makes a missing
extension an ImportError instead of a silent fallback.
"""
import logging
import os

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

logger = logging.getLogger(__name__)


def conv_output_size(size, kernel, stride, pad):
    return (size + 2 * pad - kernel) // stride + 1


def py_im2col(x, kh, kw, stride, pad):
    """Unfold (N, C, H, W) to (N*OH*OW, C*kh*kw): one row per output position."""
    n, c, h, w = x.shape
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    oh = conv_output_size(h, kh, stride, pad)
    ow = conv_output_size(w, kw, stride, pad)
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    win = win[:, :, :oh, :ow]
    return np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(n * oh * ow, c * kh * kw)


def py_col2im(cols, n, c, h, w, kh, kw, stride, pad):
    oh = conv_output_size(h, kh, stride, pad)
    ow = conv_output_size(w, kw, stride, pad)
    cols = cols.reshape(n, oh, ow, c, kh, kw)
    out = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            out[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride] += (
                cols[:, :, :, :, i, j].transpose(0, 3, 1, 2))
    if pad:
        out = out[:, :, pad:pad + h, pad:pad + w]
    return np.ascontiguousarray(out)


def py_max_pool_forward(x, window, stride):
    n, c, h, w = x.shape
    win = sliding_window_view(x, (window, window), axis=(2, 3))[:, :, ::stride, ::stride]
    oh, ow = win.shape[2], win.shape[3]
    flat = win.reshape(n, c, oh, ow, window * window)
    local = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, local[..., None], axis=-1)[..., 0]
    rows = np.arange(oh)[:, None] * stride + local // window
    cols = np.arange(ow)[None, :] * stride + local % window
    return np.ascontiguousarray(out), (rows * w + cols).astype(np.int64)


def py_max_pool_backward(grad, arg, h, w):
    n, c = grad.shape[:2]
    out = np.zeros((n * c, h * w), dtype=grad.dtype)
    idx = arg.reshape(n * c, -1)
    np.add.at(out, (np.arange(n * c)[:, None], idx), grad.reshape(n * c, -1))
    return out.reshape(n, c, h, w)


def py_bn_moments(x):
    flat = x.reshape(x.shape[0], x.shape[1], -1).astype(np.float64)
    mean = flat.mean(axis=(0, 2))
    var = np.square(flat - mean[None, :, None]).mean(axis=(0, 2))
    return mean, var


def py_bn_affine(x, scale, shift):
    out = x * scale[None, :, None, None] + shift[None, :, None, None]
    return out.astype(x.dtype)


def py_bn_backward(x, g, mean, inv, gamma, training):
    n, c = x.shape[:2]
    m = x.size // c
    xf = x.reshape(n, c, -1).astype(np.float64)
    gf = g.reshape(n, c, -1).astype(np.float64)
    sg = gf.sum(axis=(0, 2))
    sgx = (gf * (xf - mean[None, :, None])).sum(axis=(0, 2)) * inv
    ca = gamma * inv
    if training:
        cb = -(ca / m) * sgx * inv
        cc = -(ca / m) * sg - cb * mean
    else:
        cb = np.zeros(c)
        cc = np.zeros(c)
    dx = ca[None, :, None] * gf + cb[None, :, None] * xf + cc[None, :, None]
    return dx.reshape(x.shape).astype(x.dtype), sgx, sg


def _select_backend():
    choice = os.environ.get("BIOUNET_KERNELS", "auto").lower()
    if choice not in ("auto", "compiled", "python"):
        raise ValueError(f"BIOUNET_KERNELS must be auto, compiled or python, got {choice!r}")
    if choice != "python":
        try:
            from biounet import _ckernels
        except ImportError:
            if choice == "compiled":
                raise
            logger.debug("compiled kernels unavailable, using numpy fallback")
        else:
            return "compiled", _ckernels
    return "python", None


BACKEND, _ext = _select_backend()


def im2col(x, kh, kw, stride, pad):
    if _ext is not None:
        return _ext.im2col(np.ascontiguousarray(x), kh, kw, stride, pad)
    return py_im2col(x, kh, kw, stride, pad)


def col2im(cols, n, c, h, w, kh, kw, stride, pad):
    if _ext is not None:
        return _ext.col2im(np.ascontiguousarray(cols), n, c, h, w, kh, kw, stride, pad)
    return py_col2im(cols, n, c, h, w, kh, kw, stride, pad)


def bn_moments(x):
    """Per-channel mean and biased variance of (N, C, H, W) data, in float64."""
    if _ext is not None:
        return _ext.bn_moments(np.ascontiguousarray(x))
    return py_bn_moments(x)


def bn_affine(x, scale, shift):
    """Channelwise ``scale * x + shift`` with float64 coefficients."""
    scale = np.ascontiguousarray(scale, dtype=np.float64)
    shift = np.ascontiguousarray(shift, dtype=np.float64)
    if _ext is not None:
        return _ext.bn_affine(np.ascontiguousarray(x), scale, shift)
    return py_bn_affine(x, scale, shift)


def bn_backward(x, g, mean, inv, gamma, training):
    """(dx, dgamma, dbeta) for ``gamma * (x - mean) * inv + beta``."""
    args = [np.ascontiguousarray(a, dtype=np.float64) for a in (mean, inv, gamma)]
    if _ext is not None:
        g = np.ascontiguousarray(g, dtype=x.dtype)
        return _ext.bn_backward(np.ascontiguousarray(x), g, *args, bool(training))
    return py_bn_backward(x, g, *args, training)


def max_pool_forward(x, window, stride):
    if _ext is not None:
        return _ext.max_pool_forward(np.ascontiguousarray(x), window, stride)
    return py_max_pool_forward(x, window, stride)


def max_pool_backward(grad, arg, h, w):
    if _ext is not None:
        return _ext.max_pool_backward(np.ascontiguousarray(grad), np.ascontiguousarray(arg), h, w)
    return py_max_pool_backward(grad, arg, h, w)
