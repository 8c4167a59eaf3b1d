"""Reverse-mode automatic differentiation over dense numpy arrays.

A :class:`Tensor` wraps an ndarray. Operations on tensors that require
gradients record a node holding their inputs and a backward rule; calling
:meth:`Tensor.backward` on a scalar orders those nodes into a :class:`Tape`
and replays it in reverse. A tape is single use: its nodes release their
closures once replayed, and a second backward through them raises
:class:`~biounet.errors.StateError`.

Image tensors are (N, C, H, W). Dense layers, losses and embeddings use
lower ranks, which the engine handles the same way.
"""
import contextlib

import numpy as np

from biounet import kernels
from biounet.errors import ContractError, DimensionError, StateError

_default_dtype = np.float32

# When a list, piecewise ops append their branch pattern here (see gradcheck).
_kink_log = None


@contextlib.contextmanager
def record_kinks():
    global _kink_log
    previous, _kink_log = _kink_log, []
    try:
        yield _kink_log
    finally:
        _kink_log = previous


def _note_kink(pattern):
    if _kink_log is not None:
        _kink_log.append(pattern)


def get_default_dtype():
    return _default_dtype


def set_default_dtype(dtype):
    global _default_dtype
    dtype = np.dtype(dtype)
    if dtype not in (np.float32, np.float64):
        raise ValueError("only float32 and float64 are supported")
    _default_dtype = dtype.type


@contextlib.contextmanager
def default_dtype(dtype):
    previous = _default_dtype
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(previous)


class Tensor:
    """An array that may take part in gradient recording.

    ``grad`` is populated on leaves with ``requires_grad=True`` and on
    intermediate tensors that called :meth:`retain_grad`.
    """

    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, dtype=None, name=None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None:
            dtype = data.dtype if isinstance(data, np.ndarray) and data.dtype.kind == "f" else _default_dtype
        self.data = np.ascontiguousarray(data, dtype=dtype)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.name = name
        self._parents = ()
        self._backward = None
        self._retain = False
        self._consumed = False

    # -- construction helpers -------------------------------------------------
    @classmethod
    def _from_op(cls, data, parents, backward):
        out = cls.__new__(cls)
        Tensor.__init__(out, data, dtype=data.dtype)
        if any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
        return out

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    @property
    def is_leaf(self):
        return not self._parents

    def numpy(self):
        return self.data

    def item(self):
        return self.data.item()

    def detach(self):
        return Tensor(self.data.copy(), dtype=self.data.dtype)

    def retain_grad(self):
        self._retain = True
        return self

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __len__(self):
        return len(self.data)

    # -- operators ------------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)

    @property
    def T(self):
        return transpose(self)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def backward(self):
        Tape(self).run()


class Parameter(Tensor):
    """A trainable leaf tensor with its Adam state."""

    def __init__(self, data, name=None, dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype, name=name)
        self.m = np.zeros_like(self.data)
        self.v = np.zeros_like(self.data)
        self.step = 0

    def astype(self, dtype):
        p = Parameter(self.data.astype(dtype), name=self.name)
        p.m = self.m.astype(dtype)
        p.v = self.v.astype(dtype)
        p.step = self.step
        return p


class Tape:
    """Operations reachable from a scalar root, in topological order."""

    def __init__(self, root):
        if not isinstance(root, Tensor):
            raise ContractError("backward needs a Tensor")
        if root.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {root.shape}")
        if root._consumed:
            raise StateError("this graph was already back-propagated; rebuild the forward pass")
        self.root = root
        self.nodes = self._order(root)
        self.consumed = False

    @staticmethod
    def _order(root):
        order, seen = [], set()
        stack = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent._consumed:
                    raise StateError("graph contains an already back-propagated operation")
                if id(parent) not in seen and parent.requires_grad:
                    stack.append((parent, False))
        return order

    def run(self):
        if self.consumed:
            raise StateError("tape already replayed")
        root = self.root
        if not root.requires_grad:
            self.consumed = True
            return
        grads = {id(root): np.ones_like(root.data)}
        for node in reversed(self.nodes):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.is_leaf or node._retain:
                node.grad = g.copy() if node.grad is None else node.grad + g
            if node.is_leaf:
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg
        for node in self.nodes:
            if not node.is_leaf:
                node._backward = None
                node._parents = ()
                node._consumed = True
        self.consumed = True


def as_tensor(value, dtype=None):
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value), dtype=dtype or _default_dtype)


def _pair(a, b):
    """Coerce two operands, letting a plain number take the tensor's dtype."""
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        b = Tensor(np.asarray(b), dtype=a.dtype)
    elif isinstance(b, Tensor) and not isinstance(a, Tensor):
        a = Tensor(np.asarray(a), dtype=b.dtype)
    return as_tensor(a), as_tensor(b)


def unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# -- elementwise arithmetic ------------------------------------------------------

def add(a, b):
    a, b = _pair(a, b)
    return Tensor._from_op(a.data + b.data, (a, b),
                           lambda g: (unbroadcast(g, a.shape), unbroadcast(g, b.shape)))


def sub(a, b):
    a, b = _pair(a, b)
    return Tensor._from_op(a.data - b.data, (a, b),
                           lambda g: (unbroadcast(g, a.shape), unbroadcast(-g, b.shape)))


def mul(a, b):
    a, b = _pair(a, b)
    return Tensor._from_op(a.data * b.data, (a, b),
                           lambda g: (unbroadcast(g * b.data, a.shape), unbroadcast(g * a.data, b.shape)))


def div(a, b):
    a, b = _pair(a, b)
    out = a.data / b.data

    def backward(g):
        return unbroadcast(g / b.data, a.shape), unbroadcast(-g * out / b.data, b.shape)

    return Tensor._from_op(out, (a, b), backward)


def power(x, exponent):
    x = as_tensor(x)
    out = x.data ** exponent
    return Tensor._from_op(out, (x,), lambda g: (g * exponent * x.data ** (exponent - 1),))


def exp(x):
    out = np.exp(x.data)
    return Tensor._from_op(out, (x,), lambda g: (g * out,))


def log(x):
    return Tensor._from_op(np.log(x.data), (x,), lambda g: (g / x.data,))


def sqrt(x):
    out = np.sqrt(x.data)
    return Tensor._from_op(out, (x,), lambda g: (g * 0.5 / out,))


def clip(x, lo, hi):
    """Clamp values; the gradient passes only where the input was inside."""
    inside = (x.data >= lo) & (x.data <= hi)
    _note_kink(inside)
    return Tensor._from_op(np.clip(x.data, lo, hi), (x,), lambda g: (g * inside,))


# -- reductions and shape ------------------------------------------------------------

def tsum(x, axis=None, keepdims=False):
    out = np.asarray(x.data.sum(axis=axis, keepdims=keepdims))

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).astype(x.dtype, copy=True),)

    return Tensor._from_op(out, (x,), backward)


def mean(x, axis=None, keepdims=False):
    count = x.size if axis is None else int(np.prod([x.shape[a] for a in np.atleast_1d(axis)]))
    return tsum(x, axis, keepdims) * (1.0 / count)


def reshape(x, shape):
    return Tensor._from_op(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def flatten(x):
    return reshape(x, (x.shape[0], -1))


def transpose(x):
    if x.ndim != 2:
        raise DimensionError("transpose is defined for 2-D tensors")
    return Tensor._from_op(np.ascontiguousarray(x.data.T), (x,), lambda g: (np.ascontiguousarray(g.T),))


def take(x, index):
    """Index with numpy semantics; repeated indices accumulate gradient."""
    out = np.ascontiguousarray(x.data[index])

    def backward(g):
        dx = np.zeros_like(x.data)
        np.add.at(dx, index, g)
        return (dx,)

    return Tensor._from_op(out, (x,), backward)


def concat(tensors, axis=1):
    tensors = [as_tensor(t) for t in tensors]
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.ndim != len(ref) or any(t.shape[d] != ref[d] for d in range(len(ref)) if d != axis):
            raise DimensionError(f"cannot concatenate shapes {ref} and {t.shape} along axis {axis}")
    out = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def backward(g):
        return tuple(np.ascontiguousarray(np.take(g, np.arange(lo, hi), axis=axis))
                     for lo, hi in zip(bounds[:-1], bounds[1:]))

    return Tensor._from_op(out, tensors, backward)


def matmul(a, b):
    a, b = _pair(a, b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shapes {a.shape} and {b.shape} do not align")
    return Tensor._from_op(a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


# -- nonlinearities -----------------------------------------------------------------

def relu(x):
    out = np.maximum(x.data, 0)
    mask = out > 0
    _note_kink(mask)
    return Tensor._from_op(out, (x,), lambda g: (g * mask,))


def sigmoid(x):
    z = x.data
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return Tensor._from_op(out, (x,), lambda g: (g * out * (1.0 - out),))


def softmax(x, axis=-1):
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return Tensor._from_op(out, (x,), backward)


def logsumexp(x, axis=-1):
    peak = x.data.max(axis=axis, keepdims=True)
    e = np.exp(x.data - peak)
    total = e.sum(axis=axis, keepdims=True)
    out = (np.log(total) + peak).squeeze(axis)

    def backward(g):
        return (np.expand_dims(g, axis) * e / total,)

    return Tensor._from_op(out, (x,), backward)


def nonlinearity(x, kind, axis=1):
    if kind == "relu":
        return relu(x)
    if kind == "sigmoid":
        return sigmoid(x)
    if kind == "softmax":
        return softmax(x, axis=axis)
    raise ContractError(f"unknown nonlinearity {kind!r}")


# -- image kernels ------------------------------------------------------------------

def _check_image(x, what):
    if x.ndim != 4:
        raise DimensionError(f"{what} expects an (N, C, H, W) tensor, got shape {x.shape}")


def conv2d(x, weight, bias=None, stride=1, pad=0):
    """2-D cross-correlation. ``weight`` is (out_channels, in_channels, kh, kw)."""
    _check_image(x, "conv2d")
    n, c, h, w = x.shape
    oc, ic, kh, kw = weight.shape
    if ic != c:
        raise DimensionError(f"conv2d kernel expects {ic} input channels, input has {c}")
    if stride < 1 or pad < 0:
        raise DimensionError("conv2d needs stride >= 1 and pad >= 0")
    oh = kernels.conv_output_size(h, kh, stride, pad)
    ow = kernels.conv_output_size(w, kw, stride, pad)
    if oh < 1 or ow < 1:
        raise DimensionError(f"conv2d kernel {kh}x{kw} does not fit input {h}x{w} with pad {pad}")
    if stride == 1 and kh > 1 and c >= 4 and h * w >= 256:
        out, backward = _conv_shifted(x, weight, bias, pad)
    else:
        out, backward = _conv_unfolded(x, weight, bias, stride, pad, oh, ow)
    parents = (x, weight, bias) if bias is not None else (x, weight)
    return Tensor._from_op(out, parents, backward)


def _conv_unfolded(x, weight, bias, stride, pad, oh, ow):
    """im2col formulation: one GEMM against the unfolded input."""
    n, c, h, w = x.shape
    oc, _, kh, kw = weight.shape
    wmat = weight.data.reshape(oc, -1)
    pointwise = kh == 1 and kw == 1 and stride == 1 and pad == 0
    if pointwise:
        cols = x.data.transpose(0, 2, 3, 1).reshape(-1, c)
    else:
        cols = kernels.im2col(x.data, kh, kw, stride, pad)
    out = cols @ wmat.T
    if bias is not None:
        out += bias.data
    out = np.ascontiguousarray(out.reshape(n, oh, ow, oc).transpose(0, 3, 1, 2))

    def backward(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(-1, oc)
        dx = dw = db = None
        if x.requires_grad:
            dcols = g2 @ wmat
            if pointwise:
                dx = np.ascontiguousarray(dcols.reshape(n, h, w, c).transpose(0, 3, 1, 2))
            else:
                dx = kernels.col2im(dcols, n, c, h, w, kh, kw, stride, pad)
        if weight.requires_grad:
            dw = (g2.T @ cols).reshape(weight.shape)
        if bias is not None and bias.requires_grad:
            db = g2.sum(axis=0)
        return (dx, dw, db) if bias is not None else (dx, dw)

    return out, backward


def _conv_shifted(x, weight, bias, pad):
    """Stride-1 convolution as one GEMM per kernel tap.

    The input is padded and laid out channel-major as (C, N*Hp*Wp). Tap
    (i, j) then reads the contiguous column window starting at i*Wp + j,
    a strided view BLAS consumes without copying. Outputs are computed on
    the padded grid and cropped, so windows never cross into the next
    sample's rows where it matters.
    """
    n, c, h, w = x.shape
    oc, _, kh, kw = weight.shape
    hp, wp = h + 2 * pad, w + 2 * pad
    oh, ow = hp - kh + 1, wp - kw + 1
    span = n * hp * wp - ((kh - 1) * wp + kw - 1)
    xp = np.zeros((c, n, hp, wp), dtype=x.dtype)
    xp[:, :, pad:pad + h, pad:pad + w] = x.data.transpose(1, 0, 2, 3)
    flat = xp.reshape(c, -1)
    taps = np.ascontiguousarray(weight.data.transpose(2, 3, 0, 1))
    acc = np.zeros((oc, n * hp * wp), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            off = i * wp + j
            acc[:, :span] += taps[i, j] @ flat[:, off:off + span]
    if bias is not None:
        acc += bias.data[:, None]
    out = np.ascontiguousarray(acc.reshape(oc, n, hp, wp)[:, :, :oh, :ow].transpose(1, 0, 2, 3))

    def backward(g):
        grid = np.zeros((oc, n, hp, wp), dtype=g.dtype)
        grid[:, :, :oh, :ow] = g.transpose(1, 0, 2, 3)
        gflat = grid.reshape(oc, -1)[:, :span]
        dx = dw = db = None
        if x.requires_grad:
            taps_t = np.ascontiguousarray(weight.data.transpose(2, 3, 1, 0))
            dflat = np.zeros((c, n * hp * wp), dtype=g.dtype)
            for i in range(kh):
                for j in range(kw):
                    off = i * wp + j
                    dflat[:, off:off + span] += taps_t[i, j] @ gflat
            dx = np.ascontiguousarray(
                dflat.reshape(c, n, hp, wp)[:, :, pad:pad + h, pad:pad + w].transpose(1, 0, 2, 3))
        if weight.requires_grad:
            dw = np.empty((kh, kw, oc, c), dtype=g.dtype)
            for i in range(kh):
                for j in range(kw):
                    off = i * wp + j
                    dw[i, j] = gflat @ flat[:, off:off + span].T
            dw = np.ascontiguousarray(dw.transpose(2, 3, 0, 1))
        if bias is not None and bias.requires_grad:
            db = g.sum(axis=(0, 2, 3))
        return (dx, dw, db) if bias is not None else (dx, dw)

    return out, backward


def max_pool2d(x, window, stride=None):
    _check_image(x, "max_pool2d")
    stride = stride or window
    n, c, h, w = x.shape
    if window > h or window > w:
        raise DimensionError(f"pool window {window} exceeds input {h}x{w}")
    out, arg = kernels.max_pool_forward(x.data, window, stride)
    _note_kink(arg)
    return Tensor._from_op(out, (x,), lambda g: (kernels.max_pool_backward(g, arg, h, w),))


def avg_pool2d(x, window, stride=None):
    _check_image(x, "avg_pool2d")
    stride = stride or window
    n, c, h, w = x.shape
    if window > h or window > w:
        raise DimensionError(f"pool window {window} exceeds input {h}x{w}")
    cols = kernels.im2col(x.data.reshape(n * c, 1, h, w), window, window, stride, 0)
    oh = kernels.conv_output_size(h, window, stride, 0)
    ow = kernels.conv_output_size(w, window, stride, 0)
    out = cols.mean(axis=1).reshape(n, c, oh, ow)
    scale = 1.0 / (window * window)

    def backward(g):
        dcols = np.repeat(g.reshape(-1, 1) * scale, window * window, axis=1).astype(x.dtype)
        return (kernels.col2im(dcols, n * c, 1, h, w, window, window, stride, 0).reshape(x.shape),)

    return Tensor._from_op(np.ascontiguousarray(out), (x,), backward)


def global_avg_pool(x):
    """Mean over the spatial axes, returning (N, C)."""
    _check_image(x, "global_avg_pool")
    return mean(x, axis=(2, 3))


def pool2d(x, kind, window=2, stride=None):
    if kind == "max":
        return max_pool2d(x, window, stride)
    if kind == "avg":
        return avg_pool2d(x, window, stride)
    if kind == "global_avg":
        return global_avg_pool(x)
    raise ContractError(f"unknown pool kind {kind!r}")


def dense(x, weight, bias=None):
    """Affine map in row-vector convention: ``x @ weight + bias``.

    ``weight`` is (in_features, out_features); inputs with more than two axes
    are flattened per sample first.
    """
    if x.ndim != 2:
        x = flatten(x)
    if weight.shape[0] != x.shape[1]:
        raise DimensionError(f"dense weight expects {weight.shape[0]} features, input has {x.shape[1]}")
    out = matmul(x, weight)
    return out + bias if bias is not None else out


class RunningStats:
    """Per-channel mean and variance tracked by batch normalization."""

    def __init__(self, channels=None, dtype=None):
        self.mean = None
        self.var = None
        if channels is not None:
            dtype = dtype or _default_dtype
            self.mean = np.zeros(channels, dtype=dtype)
            self.var = np.ones(channels, dtype=dtype)

    @property
    def initialized(self):
        return self.mean is not None


def batch_norm2d(x, gamma, beta, training, stats, momentum=0.1, eps=1e-5, update_stats=True):
    """Per-channel normalization over batch and spatial axes.

    In training mode the batch statistics are used and, if ``update_stats``,
    folded into ``stats`` (unbiased variance). Eval mode reads ``stats``.
    """
    _check_image(x, "batch_norm2d")
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise DimensionError(f"norm parameters must have length {c}")
    if training:
        mu, var = kernels.bn_moments(x.data)
        if update_stats:
            count = x.size // c
            unbiased = var * count / max(count - 1, 1)
            if not stats.initialized:
                stats.mean = np.zeros(c, dtype=x.dtype)
                stats.var = np.ones(c, dtype=x.dtype)
            stats.mean = ((1 - momentum) * stats.mean + momentum * mu).astype(x.dtype)
            stats.var = ((1 - momentum) * stats.var + momentum * unbiased).astype(x.dtype)
    else:
        if not stats.initialized:
            raise StateError("eval-mode normalization needs initialized running statistics")
        mu = stats.mean.astype(np.float64)
        var = stats.var.astype(np.float64)
    inv = 1.0 / np.sqrt(var + eps)
    g64 = gamma.data.astype(np.float64)
    scale = g64 * inv
    out = kernels.bn_affine(x.data, scale, beta.data.astype(np.float64) - scale * mu)

    def backward(g):
        dx, dgamma, dbeta = kernels.bn_backward(x.data, g, mu, inv, g64, training)
        return dx, dgamma.astype(gamma.dtype), dbeta.astype(beta.dtype)

    return Tensor._from_op(out, (x, gamma, beta), backward)


def norm2d(x, gamma, beta, mode, running_stats, momentum=0.1, eps=1e-5):
    if mode not in ("train", "eval"):
        raise ContractError(f"mode must be train or eval, got {mode!r}")
    return batch_norm2d(x, gamma, beta, mode == "train", running_stats, momentum, eps)


def upsample_nearest(x, size):
    """Nearest-neighbour resize to ``size`` = (H, W)."""
    _check_image(x, "upsample_nearest")
    n, c, h, w = x.shape
    th, tw = size
    rows = (np.arange(th) * h) // th
    cols = (np.arange(tw) * w) // tw
    if th % h == 0 and tw % w == 0:
        fy, fx = th // h, tw // w
        out = np.repeat(np.repeat(x.data, fy, axis=2), fx, axis=3)

        def backward(g):
            return (g.reshape(n, c, h, fy, w, fx).sum(axis=(3, 5)),)
    else:
        out = x.data[:, :, rows[:, None], cols[None, :]]

        def backward(g):
            dx = np.zeros_like(x.data)
            np.add.at(dx, (slice(None), slice(None), rows[:, None], cols[None, :]), g)
            return (dx,)

    return Tensor._from_op(np.ascontiguousarray(out), (x,), backward)


def resize_concat(inputs, mode, target=None):
    if mode == "concat_channels":
        return concat(inputs, axis=1)
    if mode == "upsample_nearest":
        if len(inputs) != 1:
            raise ContractError("upsample_nearest takes exactly one input")
        return upsample_nearest(inputs[0], target)
    raise ContractError(f"unknown resize mode {mode!r}")
