"""Class activation maps at the encoder's twelve bottleneck blocks.

All three variants share one forward and one backward pass through the
frozen encoder: the score is the pre-sigmoid logit of the target output,
summed over the batch (samples do not interact in eval mode), and the
gradient is read off every retained block output. Maps are rectified,
resized bilinearly to the input size, and min-max normalized per sample.
A map whose range is at most 1e-12 is returned as zeros and flagged
degenerate.
"""
import os
from dataclasses import dataclass, field

import numpy as np

from biounet import imageio
from biounet.imageio import resize_bilinear
from biounet import tensor as T
from biounet.errors import ContractError

METHODS = ("gradcam", "gradcampp", "layercam")
RANGE_EPS = 1e-12


@dataclass
class CamResult:
    heatmap: np.ndarray      # (N, H, W), values in [0, 1]
    degenerate: np.ndarray   # (N,) bool


@dataclass
class HeatmapStack:
    maps: np.ndarray          # (N, 12, H, W); channel k came from block k + 1
    degenerate: np.ndarray    # (N, 12)
    target: int
    method: str
    provenance: dict = field(default_factory=dict)

    @property
    def final(self):
        """The last block's map, used alone as the CAM localization mask."""
        return self.maps[:, -1]

    def tensor(self, dtype=np.float32):
        return T.Tensor(self.maps.astype(dtype))


def minmax_normalize(maps):
    """Per-map min-max scaling over the last two axes."""
    lo = maps.min(axis=(-2, -1), keepdims=True)
    hi = maps.max(axis=(-2, -1), keepdims=True)
    span = hi - lo
    degenerate = span[..., 0, 0] <= RANGE_EPS
    safe = np.where(span > RANGE_EPS, span, 1.0)
    out = np.where(span > RANGE_EPS, (maps - lo) / safe, 0.0)
    return out, degenerate


def combine(acts, grads, method):
    """Raw (pre-resize) rectified map from activations and score gradients.

    ``acts`` and ``grads`` are (N, C, h, w). Grad-CAM++ uses the closed form
    of its second and third derivative terms for an exponentiated score, in
    which the exponential cancels: alpha = g^2 / (2 g^2 + sum(A) g^3).
    """
    acts = np.asarray(acts, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if method == "gradcam":
        weights = grads.mean(axis=(2, 3), keepdims=True)
        cam = (weights * acts).sum(axis=1)
    elif method == "gradcampp":
        g2 = grads ** 2
        denom = 2 * g2 + acts.sum(axis=(2, 3), keepdims=True) * grads ** 3
        alpha = np.divide(g2, denom, out=np.zeros_like(g2), where=denom != 0)
        weights = (alpha * np.maximum(grads, 0)).sum(axis=(2, 3), keepdims=True)
        cam = (weights * acts).sum(axis=1)
    elif method == "layercam":
        cam = (np.maximum(grads, 0) * acts).sum(axis=1)
    else:
        raise ContractError(f"unknown CAM method {method!r}; expected one of {METHODS}")
    return np.maximum(cam, 0)


def _block_activations(enc, head, x, target):
    x = x if isinstance(x, T.Tensor) else T.Tensor(np.asarray(x))
    if not 0 <= target < head.out_width:
        raise ContractError(f"target {target} outside classifier width {head.out_width}")
    inp = T.Tensor(x.data, requires_grad=True)
    out = enc(inp, training=False, domain="image", retain_blocks=True)
    logits = head.logits(out.final)
    score = logits[:, target].sum()
    score.backward()
    acts = [b.data for b in out.blocks]
    grads = [b.grad if b.grad is not None else np.zeros_like(b.data) for b in out.blocks]
    return acts, grads, x.shape[2:]


def _finish(raw, size):
    return minmax_normalize(resize_bilinear(raw, size))


def cam_at_block(enc, head, x, block, target, method="gradcam"):
    acts, grads, size = _block_activations(enc, head, x, target)
    if not 1 <= block <= len(acts):
        raise ContractError(f"block must be in 1..{len(acts)}, got {block}")
    heat, degenerate = _finish(combine(acts[block - 1], grads[block - 1], method), size)
    return CamResult(heat, degenerate)


def grad_cam(enc, head, x, block, target):
    return cam_at_block(enc, head, x, block, target, "gradcam")


def grad_cam_pp(enc, head, x, block, target):
    return cam_at_block(enc, head, x, block, target, "gradcampp")


def layer_cam(enc, head, x, block, target):
    return cam_at_block(enc, head, x, block, target, "layercam")


def build_stack(enc, head, x, target, method="gradcam", provenance=None):
    """One map per block, stacked in block order, from a single backward pass."""
    acts, grads, size = _block_activations(enc, head, x, target)
    maps, flags = [], []
    for a, g in zip(acts, grads):
        heat, degenerate = _finish(combine(a, g, method), size)
        maps.append(heat)
        flags.append(degenerate)
    return HeatmapStack(np.stack(maps, axis=1), np.stack(flags, axis=1), target, method,
                        dict(provenance or {}))


def heatmap_filename(sample_id, attribute, block, method):
    return f"{sample_id}_attr{attribute}_block{block}_{method}.pgm"


def export_stack(stack, sample_ids, out_dir):
    """Write every map as an 8-bit PGM; returns the written paths."""
    paths = []
    for i, sid in enumerate(sample_ids):
        for k in range(stack.maps.shape[1]):
            path = os.path.join(out_dir, heatmap_filename(sid, stack.target, k + 1, stack.method))
            imageio.write_pgm(path, stack.maps[i, k])
            paths.append(path)
    return paths
