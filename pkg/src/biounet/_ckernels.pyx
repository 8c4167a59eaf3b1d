# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops for the convolution and pooling kernels.

Every function here has a numpy twin in ``biounet.kernels``; the two must
agree to rounding. Arrays are expected C-contiguous.
"""
import numpy as np

cimport numpy as cnp

cnp.import_array()

ctypedef fused real:
    float
    double


def im2col(real[:, :, :, ::1] x, int kh, int kw, int stride, int pad):
    cdef Py_ssize_t N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t OH = (H + 2 * pad - kh) // stride + 1
    cdef Py_ssize_t OW = (W + 2 * pad - kw) // stride + 1
    cdef Py_ssize_t K = C * kh * kw
    """Unfold to (N*OH*OW, C*kh*kw): one row per output position."""
    dtype = np.float32 if real is float else np.float64
    out = np.zeros((N * OH * OW, K), dtype=dtype)
    cdef real[:, ::1] cols = out
    cdef real* dst
    cdef const real* src
    cdef Py_ssize_t plane = H * W
    cdef Py_ssize_t n, r, q, c, i, j, y0, x0, y, xx
    cdef real* base = &cols[0, 0]
    cdef const real* xb = &x[0, 0, 0, 0]
    with nogil:
        for n in range(N):
            for r in range(OH):
                y0 = r * stride - pad
                for q in range(OW):
                    x0 = q * stride - pad
                    dst = base + ((n * OH + r) * OW + q) * K
                    if y0 >= 0 and x0 >= 0 and y0 + kh <= H and x0 + kw <= W:
                        for c in range(C):
                            src = xb + (n * C + c) * plane + y0 * W + x0
                            for i in range(kh):
                                for j in range(kw):
                                    dst[j] = src[j]
                                dst += kw
                                src += W
                    else:
                        for c in range(C):
                            src = xb + (n * C + c) * plane
                            for i in range(kh):
                                y = y0 + i
                                for j in range(kw):
                                    xx = x0 + j
                                    if 0 <= y < H and 0 <= xx < W:
                                        dst[j] = src[y * W + xx]
                                dst += kw
    return out

def col2im(real[:, ::1] cols, int N, int C, int H, int W, int kh, int kw, int stride, int pad):
    cdef Py_ssize_t OH = (H + 2 * pad - kh) // stride + 1
    cdef Py_ssize_t OW = (W + 2 * pad - kw) // stride + 1
    cdef Py_ssize_t K = C * kh * kw
    dtype = np.float32 if real is float else np.float64
    out = np.zeros((N, C, H, W), dtype=dtype)
    cdef real[:, :, :, ::1] dxv = out
    cdef real* xb = &dxv[0, 0, 0, 0]
    cdef const real* base = &cols[0, 0]
    cdef const real* srcp
    cdef real* dst
    cdef Py_ssize_t plane = H * W
    cdef Py_ssize_t n, r, q, c, i, j, y0, x0, y, xx
    with nogil:
        for n in range(N):
            for r in range(OH):
                y0 = r * stride - pad
                for q in range(OW):
                    x0 = q * stride - pad
                    srcp = base + ((n * OH + r) * OW + q) * K
                    if y0 >= 0 and x0 >= 0 and y0 + kh <= H and x0 + kw <= W:
                        for c in range(C):
                            dst = xb + (n * C + c) * plane + y0 * W + x0
                            for i in range(kh):
                                for j in range(kw):
                                    dst[j] += srcp[j]
                                srcp += kw
                                dst += W
                    else:
                        for c in range(C):
                            dst = xb + (n * C + c) * plane
                            for i in range(kh):
                                y = y0 + i
                                for j in range(kw):
                                    xx = x0 + j
                                    if 0 <= y < H and 0 <= xx < W:
                                        dst[y * W + xx] += srcp[j]
                                srcp += kw
    return out


def max_pool_forward(real[:, :, :, ::1] x, int window, int stride):
    cdef Py_ssize_t n_batch = x.shape[0], chans = x.shape[1]
    cdef Py_ssize_t height = x.shape[2], width = x.shape[3]
    cdef Py_ssize_t oh = (height - window) // stride + 1
    cdef Py_ssize_t ow = (width - window) // stride + 1
    dtype = np.float32 if real is float else np.float64
    out = np.empty((n_batch, chans, oh, ow), dtype=dtype)
    arg = np.empty((n_batch, chans, oh, ow), dtype=np.int64)
    cdef real[:, :, :, ::1] o = out
    cdef cnp.int64_t[:, :, :, ::1] a = arg
    cdef Py_ssize_t n, c, r, q, i, j, y, xx, best_idx
    cdef real best, v
    with nogil:
        for n in range(n_batch):
            for c in range(chans):
                for r in range(oh):
                    for q in range(ow):
                        y = r * stride
                        xx = q * stride
                        best = x[n, c, y, xx]
                        best_idx = y * width + xx
                        for i in range(window):
                            for j in range(window):
                                v = x[n, c, y + i, xx + j]
                                if v > best:
                                    best = v
                                    best_idx = (y + i) * width + xx + j
                        o[n, c, r, q] = best
                        a[n, c, r, q] = best_idx
    return out, arg


def max_pool_backward(real[:, :, :, ::1] grad, cnp.int64_t[:, :, :, ::1] arg,
                      int height, int width):
    cdef Py_ssize_t n_batch = grad.shape[0], chans = grad.shape[1]
    cdef Py_ssize_t oh = grad.shape[2], ow = grad.shape[3]
    dtype = np.float32 if real is float else np.float64
    out = np.zeros((n_batch, chans, height * width), dtype=dtype)
    cdef real[:, :, ::1] dx = out
    cdef Py_ssize_t n, c, r, q
    with nogil:
        for n in range(n_batch):
            for c in range(chans):
                for r in range(oh):
                    for q in range(ow):
                        dx[n, c, arg[n, c, r, q]] += grad[n, c, r, q]
    return out.reshape(n_batch, chans, height, width)


def bn_moments(real[:, :, :, ::1] x):
    """Per-channel mean and biased variance, two passes, accumulated in double."""
    cdef Py_ssize_t N = x.shape[0], C = x.shape[1], P = x.shape[2] * x.shape[3]
    mean = np.zeros(C, dtype=np.float64)
    var = np.zeros(C, dtype=np.float64)
    cdef double[::1] mu = mean
    cdef double[::1] vr = var
    cdef const real* base = &x[0, 0, 0, 0]
    cdef const real* row
    cdef Py_ssize_t n, c, i
    cdef double acc, d, count = N * P
    with nogil:
        for c in range(C):
            acc = 0
            for n in range(N):
                row = base + (n * C + c) * P
                for i in range(P):
                    acc = acc + row[i]
            mu[c] = acc / count
            acc = 0
            for n in range(N):
                row = base + (n * C + c) * P
                for i in range(P):
                    d = row[i] - mu[c]
                    acc = acc + d * d
            vr[c] = acc / count
    return mean, var


def bn_affine(real[:, :, :, ::1] x, double[::1] scale, double[::1] shift):
    """out[:, c] = scale[c] * x[:, c] + shift[c]."""
    cdef Py_ssize_t N = x.shape[0], C = x.shape[1], P = x.shape[2] * x.shape[3]
    dtype = np.float32 if real is float else np.float64
    out = np.empty((x.shape[0], x.shape[1], x.shape[2], x.shape[3]), dtype=dtype)
    cdef real[:, :, :, ::1] ov = out
    cdef const real* src = &x[0, 0, 0, 0]
    cdef real* dst = &ov[0, 0, 0, 0]
    cdef Py_ssize_t n, c, i, off
    cdef double a, b
    with nogil:
        for n in range(N):
            for c in range(C):
                a = scale[c]
                b = shift[c]
                off = (n * C + c) * P
                for i in range(P):
                    dst[off + i] = <real>(a * src[off + i] + b)
    return out


def bn_backward(real[:, :, :, ::1] x, real[:, :, :, ::1] g, double[::1] mean, double[::1] inv,
                double[::1] gamma, bint training):
    """Gradients of scale * (x - mean) * inv + shift w.r.t. x, gamma and beta."""
    cdef Py_ssize_t N = x.shape[0], C = x.shape[1], P = x.shape[2] * x.shape[3]
    dtype = np.float32 if real is float else np.float64
    dx = np.empty((x.shape[0], x.shape[1], x.shape[2], x.shape[3]), dtype=dtype)
    dgamma = np.zeros(C, dtype=np.float64)
    dbeta = np.zeros(C, dtype=np.float64)
    cdef real[:, :, :, ::1] dxv = dx
    cdef double[::1] dgv = dgamma
    cdef double[::1] dbv = dbeta
    cdef const real* xb = &x[0, 0, 0, 0]
    cdef const real* gb = &g[0, 0, 0, 0]
    cdef real* db = &dxv[0, 0, 0, 0]
    cdef Py_ssize_t n, c, i, off
    cdef double sg, sgx, mu, iv, ga, m = N * P, ca, cb, cc
    with nogil:
        for c in range(C):
            mu = mean[c]
            iv = inv[c]
            ga = gamma[c]
            sg = 0
            sgx = 0
            for n in range(N):
                off = (n * C + c) * P
                for i in range(P):
                    sg = sg + gb[off + i]
                    sgx = sgx + gb[off + i] * (xb[off + i] - mu)
            sgx = sgx * iv
            dbv[c] = sg
            dgv[c] = sgx
            ca = ga * iv
            if training:
                cb = -(ca / m) * sgx * iv
                cc = -(ca / m) * sg - cb * mu
            else:
                cb = 0
                cc = 0
            for n in range(N):
                off = (n * C + c) * P
                for i in range(P):
                    db[off + i] = <real>(ca * gb[off + i] + cb * xb[off + i] + cc)
    return dx, dgamma, dbeta
