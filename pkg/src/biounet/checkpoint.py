"""Checkpoint snapshots and their on-disk container.

A checkpoint is a flat ``{name: ndarray}`` dict (parameters, running
statistics, Adam moments and step counts) plus JSON metadata. On disk it is
a zip of ``.npy`` members with fixed timestamps, so identical state always
produces identical bytes.
"""
import hashlib
import io
import json
import zipfile
from dataclasses import dataclass, field

import numpy as np

from biounet.errors import CheckpointError

FORMAT_VERSION = 1
_ZIP_DATE = (1980, 1, 1, 0, 0, 0)


def _contiguous(a):
    # np.ascontiguousarray would promote 0-d step counters to shape (1,)
    a = np.asarray(a)
    return a if a.flags.c_contiguous else a.copy(order="C")


@dataclass
class Checkpoint:
    arrays: dict
    meta: dict = field(default_factory=dict)

    def digest(self):
        h = hashlib.sha256()
        for name in sorted(self.arrays):
            a = _contiguous(self.arrays[name])
            h.update(name.encode())
            h.update(str(a.dtype).encode())
            h.update(str(a.shape).encode())
            h.update(a.tobytes())
        return h.hexdigest()

    def subset(self, prefix):
        return {k: v for k, v in self.arrays.items() if k.startswith(prefix)}


def snapshot(model, meta=None):
    arrays = {}
    for name, p in model.named_parameters():
        arrays[name] = p.data.copy()
        arrays[name + "#m"] = p.m.copy()
        arrays[name + "#v"] = p.v.copy()
        arrays[name + "#step"] = np.array(p.step, dtype=np.int64)
    for name, value in model.buffers().items():
        arrays[name] = value.copy()
    return Checkpoint(arrays, dict(meta or {}))


def restore(model, ckpt):
    """Load parameters, optimizer state and running statistics into ``model``."""
    names = [n for n, _ in model.named_parameters()]
    expected = set(names) | {n + s for n in names for s in ("#m", "#v", "#step")}
    have = {k for k in ckpt.arrays if "running_" not in k}
    if expected != have:
        missing = sorted(expected - have)[:3]
        extra = sorted(have - expected)[:3]
        raise CheckpointError(f"architecture mismatch (missing {missing}, unexpected {extra})")
    for name, p in model.named_parameters():
        value = ckpt.arrays[name]
        if value.shape != p.shape:
            raise CheckpointError(f"{name}: checkpoint shape {value.shape} != model shape {p.shape}")
        p.data = value.astype(p.dtype, copy=True)
        p.m = ckpt.arrays[name + "#m"].astype(p.dtype, copy=True)
        p.v = ckpt.arrays[name + "#v"].astype(p.dtype, copy=True)
        p.step = int(ckpt.arrays[name + "#step"])
        p.grad = None
    model.load_buffers(ckpt.arrays)


def _member(zf, name, payload):
    info = zipfile.ZipInfo(name, date_time=_ZIP_DATE)
    info.compress_type = zipfile.ZIP_DEFLATED
    info.external_attr = 0o644 << 16
    zf.writestr(info, payload)


def save(ckpt, path):
    meta = dict(ckpt.meta, format_version=FORMAT_VERSION, digest=ckpt.digest())
    with zipfile.ZipFile(path, "w") as zf:
        _member(zf, "meta.json", json.dumps(meta, sort_keys=True, indent=1).encode())
        for name in sorted(ckpt.arrays):
            buf = io.BytesIO()
            np.lib.format.write_array(buf, _contiguous(ckpt.arrays[name]), allow_pickle=False)
            _member(zf, f"arrays/{name}.npy", buf.getvalue())


def load(path):
    try:
        zf = zipfile.ZipFile(path)
    except (OSError, zipfile.BadZipFile) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    with zf:
        meta = json.loads(zf.read("meta.json"))
        if meta.get("format_version") != FORMAT_VERSION:
            raise CheckpointError(f"unsupported checkpoint format {meta.get('format_version')}")
        arrays = {}
        for info in zf.infolist():
            if info.filename.startswith("arrays/"):
                name = info.filename[len("arrays/"):-len(".npy")]
                arrays[name] = np.lib.format.read_array(io.BytesIO(zf.read(info)), allow_pickle=False)
    ckpt = Checkpoint(arrays, {k: v for k, v in meta.items() if k not in ("format_version", "digest")})
    if ckpt.digest() != meta.get("digest"):
        raise CheckpointError(f"checkpoint {path} failed its integrity check")
    return ckpt
