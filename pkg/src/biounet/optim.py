"""Adam with L2 weight decay folded into the gradient."""
import numpy as np

from biounet.errors import NumericError


def adam_step(params, lr=1e-4, weight_decay=1e-4, betas=(0.9, 0.999), eps=1e-8, grad_clip=None):
    """One in-place update of every parameter that holds a gradient.

    ``params`` is a list of parameters or of ``(name, parameter)`` pairs; the
    names only serve error messages. All gradients are checked before any
    parameter moves, so a non-finite gradient leaves the whole group intact.
    Gradients are cleared afterwards.
    """
    named = [p if isinstance(p, tuple) else (p.name or f"param[{i}]", p) for i, p in enumerate(params)]
    live = [(n, p) for n, p in named if p.grad is not None]
    for name, p in live:
        if not np.all(np.isfinite(p.grad)):
            raise NumericError(f"non-finite gradient in {name}; step aborted")
    if grad_clip is not None:
        total = np.sqrt(sum(float(np.sum(np.square(p.grad, dtype=np.float64))) for _, p in live))
        scale = min(1.0, grad_clip / (total + 1e-12))
    else:
        scale = 1.0
    b1, b2 = betas
    for _, p in live:
        # moments stay in the parameter's dtype so a checkpoint round trip is exact
        g = np.asarray(p.grad * scale if scale != 1.0 else p.grad, dtype=p.dtype)
        if weight_decay:
            g = g + weight_decay * p.data
        p.step += 1
        p.m = (b1 * p.m + (1 - b1) * g).astype(p.dtype, copy=False)
        p.v = (b2 * p.v + (1 - b2) * g * g).astype(p.dtype, copy=False)
        m_hat = p.m / (1 - b1 ** p.step)
        v_hat = p.v / (1 - b2 ** p.step)
        p.data = (p.data - lr * m_hat / (np.sqrt(v_hat) + eps)).astype(p.dtype, copy=False)
        p.grad = None
    return len(live)
