"""Compiled kernels versus the numpy fallback on training-sized inputs.

    python benchmarks/bench_kernels.py [--repeat 5]

Each row times one kernel under both backends (best of ``--repeat``) and
prints the speedup. The conv rows run a full forward and backward through
``tensor.conv2d``, so they include the GEMMs both backends share.
"""
import argparse
import contextlib
import timeit

import numpy as np

from biounet import kernels
from biounet import tensor as T


@contextlib.contextmanager
def backend(name):
    saved = kernels._ext
    if name == "python":
        kernels._ext = None
    try:
        yield
    finally:
        kernels._ext = saved


def conv_round_trip(x, w, stride, pad):
    xt = T.Tensor(x, requires_grad=True)
    wt = T.Parameter(w)
    (T.conv2d(xt, wt, None, stride, pad) ** 2).sum().backward()


def cases(rng):
    x = rng.standard_normal((16, 16, 64, 64)).astype(np.float32)
    cols = kernels.py_im2col(x, 3, 3, 1, 1)
    out, arg = kernels.py_max_pool_forward(x, 2, 2)
    g_pool = rng.standard_normal(out.shape).astype(np.float32)
    g = rng.standard_normal(x.shape).astype(np.float32)
    mean, var = kernels.py_bn_moments(x)
    inv = 1 / np.sqrt(var + 1e-5)
    gamma, scale, shift = rng.standard_normal((3, 16))
    w3 = (rng.standard_normal((16, 16, 3, 3)) * 0.1).astype(np.float32)
    w_stem = (rng.standard_normal((16, 3, 3, 3)) * 0.1).astype(np.float32)
    x_rgb = rng.standard_normal((16, 3, 64, 64)).astype(np.float32)
    w_down = (rng.standard_normal((32, 16, 3, 3)) * 0.1).astype(np.float32)
    return [
        ("im2col 16x16x64x64 k3", lambda: kernels.im2col(x, 3, 3, 1, 1)),
        ("col2im 16x16x64x64 k3", lambda: kernels.col2im(cols, 16, 16, 64, 64, 3, 3, 1, 1)),
        ("max_pool forward", lambda: kernels.max_pool_forward(x, 2, 2)),
        ("max_pool backward", lambda: kernels.max_pool_backward(g_pool, arg, 64, 64)),
        ("bn moments", lambda: kernels.bn_moments(x)),
        ("bn affine", lambda: kernels.bn_affine(x, scale, shift)),
        ("bn backward", lambda: kernels.bn_backward(x, g, mean, inv, gamma, True)),
        ("conv fwd+bwd stem c=3", lambda: conv_round_trip(x_rgb, w_stem, 1, 1)),
        ("conv fwd+bwd 3x3 c=16", lambda: conv_round_trip(x, w3, 1, 1)),
        ("conv fwd+bwd 3x3 stride 2", lambda: conv_round_trip(x, w_down, 2, 1)),
    ]


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args(argv)
    if kernels._ext is None:
        raise SystemExit("compiled kernels are not built; run `python setup.py build_ext --inplace`")
    print(f"{'kernel':<28}{'compiled ms':>12}{'python ms':>12}{'speedup':>9}")
    for name, fn in cases(np.random.default_rng(0)):
        times = {}
        for b in ("compiled", "python"):
            with backend(b):
                fn()
                times[b] = min(timeit.repeat(fn, number=1, repeat=args.repeat)) * 1e3
        print(f"{name:<28}{times['compiled']:>12.2f}{times['python']:>12.2f}{times['python'] / times['compiled']:>8.1f}x")


if __name__ == "__main__":
    main()
