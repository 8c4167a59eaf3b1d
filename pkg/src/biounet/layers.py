"""Parameter-holding building blocks on top of :mod:`biounet.tensor`."""
import numpy as np

from biounet import tensor as T
from biounet.tensor import Parameter, RunningStats


class Module:
    """Walks its attributes (in definition order) to find parameters and submodules."""

    def _children(self):
        for name, value in vars(self).items():
            if isinstance(value, (Parameter, Module)):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, (Parameter, Module)):
                        yield f"{name}.{i}", item

    def named_parameters(self, prefix=""):
        for name, value in self._children():
            full = f"{prefix}{name}"
            if isinstance(value, Parameter):
                yield full, value
            else:
                yield from value.named_parameters(full + ".")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def named_modules(self, prefix=""):
        yield prefix.rstrip("."), self
        for name, value in self._children():
            if isinstance(value, Module):
                yield from value.named_modules(f"{prefix}{name}.")

    def buffers(self, prefix=""):
        """Running statistics as ``{name: array}``, keyed per normalization domain."""
        out = {}
        for name, mod in self.named_modules(prefix):
            if isinstance(mod, BatchNorm2d):
                for domain, stats in mod.stats.items():
                    if stats.initialized:
                        out[f"{name}.running_mean@{domain}"] = stats.mean
                        out[f"{name}.running_var@{domain}"] = stats.var
        return out

    def load_buffers(self, arrays, prefix=""):
        for name, mod in self.named_modules(prefix):
            if isinstance(mod, BatchNorm2d):
                for domain in mod.stats:
                    key = f"{name}.running_mean@{domain}"
                    stats = RunningStats()
                    if key in arrays:
                        stats.mean = np.array(arrays[key])
                        stats.var = np.array(arrays[f"{name}.running_var@{domain}"])
                    mod.stats[domain] = stats

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def set_trainable(self, flag):
        for p in self.parameters():
            p.requires_grad = flag
        return self


def fan_in_uniform(rng, shape, fan_in, dtype):
    """He-style uniform initialization, bound sqrt(6 / fan_in)."""
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Conv2d(Module):
    def __init__(self, in_ch, out_ch, kernel, rng, stride=1, pad=None, bias=False, dtype=None):
        dtype = dtype or T.get_default_dtype()
        self.stride = stride
        self.pad = kernel // 2 if pad is None else pad
        fan_in = in_ch * kernel * kernel
        self.weight = Parameter(fan_in_uniform(rng, (out_ch, in_ch, kernel, kernel), fan_in, dtype))
        self.bias = Parameter(np.zeros(out_ch, dtype=dtype)) if bias else None

    @property
    def in_channels(self):
        return self.weight.shape[1]

    def __call__(self, x):
        return T.conv2d(x, self.weight, self.bias, self.stride, self.pad)


class BatchNorm2d(Module):
    """Batch normalization with one set of running statistics per input domain.

    The shared encoder sees both RGB images and CAM heatmap stacks; the two
    have unrelated activation statistics, so eval mode looks up the stats of
    the domain being processed while gamma and beta stay shared.
    """

    DOMAINS = ("image", "heatmap")

    def __init__(self, channels, momentum=0.1, eps=1e-5, dtype=None):
        dtype = dtype or T.get_default_dtype()
        self.gamma = Parameter(np.ones(channels, dtype=dtype))
        self.beta = Parameter(np.zeros(channels, dtype=dtype))
        self.momentum = momentum
        self.eps = eps
        self.stats = {d: RunningStats() for d in self.DOMAINS}

    def __call__(self, x, training, domain="image", update_stats=True):
        return T.batch_norm2d(x, self.gamma, self.beta, training, self.stats[domain],
                              self.momentum, self.eps, update_stats)


class Dense(Module):
    def __init__(self, in_features, out_features, rng, dtype=None):
        dtype = dtype or T.get_default_dtype()
        self.weight = Parameter(fan_in_uniform(rng, (in_features, out_features), in_features, dtype) / np.sqrt(2))
        self.bias = Parameter(np.zeros(out_features, dtype=dtype))

    def __call__(self, x):
        return T.dense(x, self.weight, self.bias)
