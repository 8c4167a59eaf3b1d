"""Central finite-difference verification of analytic gradients."""
from dataclasses import dataclass

import numpy as np

from biounet.errors import NumericError
from biounet.tensor import Tensor, record_kinks


@dataclass
class GradCheckReport:
    max_rel_error: float
    checked: int
    excluded: int
    worst: tuple = None


def _as_list(point):
    return list(point) if isinstance(point, (list, tuple)) else [point]


def _same_branches(a, b):
    return len(a) == len(b) and all(np.array_equal(x, y) for x, y in zip(a, b))


def check_gradients(fn, point, step=1e-5, max_coords=None, seed=0):
    """Compare backprop gradients of ``fn`` against central differences.

    ``point`` is a tensor or a list of tensors; ``fn`` receives it unchanged
    and must return a scalar tensor. Coordinates whose +/- perturbation flips
    any ReLU, max-pool or clamp branch are excluded, since the numeric
    derivative straddles a kink there. ``max_coords`` caps the number of
    coordinates probed per tensor (sampled without replacement).
    """
    tensors = _as_list(point)
    for t in tensors:
        t.requires_grad = True
        t.grad = None
    with record_kinks() as base_kinks:
        loss = fn(point)
    if not np.all(np.isfinite(loss.data)):
        raise NumericError("function value is not finite at the check point")
    loss.backward()
    base_kinks = list(base_kinks)

    rng = np.random.default_rng(seed)
    worst_err, worst_at, checked, excluded = 0.0, None, 0, 0
    for ti, t in enumerate(tensors):
        analytic = np.zeros_like(t.data) if t.grad is None else t.grad
        if not np.all(np.isfinite(analytic)):
            raise NumericError(f"analytic gradient of input {ti} is not finite")
        flat = t.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = np.sort(rng.choice(flat.size, size=max_coords, replace=False))
        for i in coords:
            original = flat[i]
            values = []
            flipped = False
            for delta in (step, -step):
                flat[i] = original + delta
                with record_kinks() as kinks:
                    values.append(fn(point).data.item())
                flipped = flipped or not _same_branches(base_kinks, kinks)
            flat[i] = original
            if not all(np.isfinite(values)):
                raise NumericError(f"function value is not finite near input {ti} coordinate {i}")
            if flipped:
                excluded += 1
                continue
            numeric = (values[0] - values[1]) / (2 * step)
            a = float(analytic.reshape(-1)[i])
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            checked += 1
            if err > worst_err:
                worst_err, worst_at = err, (ti, int(i), a, numeric)
    return GradCheckReport(worst_err, checked, excluded, worst_at)


def grad_check(fn, point, step=1e-5, max_coords=None, seed=0):
    """Maximum relative error between analytic and numeric gradients."""
    return check_gradients(fn, point, step, max_coords, seed).max_rel_error
