"""Datasets: the synthetic dermoscopy generator, ISIC-layout ingestion,
normalization and the stochastic augmenters used by the contrastive path.

Images are kept as (N, 3, H, W) float32 arrays in [0, 1] until
:func:`normalize` is applied; masks are (N, 5, H, W) uint8 arrays in the
attribute order of :data:`ATTRIBUTES`.
"""
import json
import os
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage

from biounet import imageio
from biounet.errors import ContractError, IngestionError, StateError

ATTRIBUTES = ("globules", "milia_like_cyst", "negative_network", "pigment_network", "streaks")
DEFAULT_RATES = (0.25, 0.25, 0.08, 0.55, 0.05)
SPLIT_FRACTIONS = (0.70, 0.15, 0.15)
STD_EPS = 1e-6
MANIFEST_SCHEMA = "biounet.dataset/1"
_ROLE_CODES = {"A": 0, "B": 1}


@dataclass
class Sample:
    image: np.ndarray
    diagnosis: int
    masks: np.ndarray
    sample_id: str = ""

    @property
    def attribute_presence(self):
        return self.masks.reshape(len(ATTRIBUTES), -1).any(axis=1)


@dataclass
class UnlabeledSample:
    image: np.ndarray
    sample_id: str = ""


@dataclass
class Dataset:
    images: np.ndarray
    ids: list
    labels: np.ndarray = None
    masks: np.ndarray = None
    split: np.ndarray = None
    stats: dict = None
    normalized: bool = False
    role: str = "A"
    meta: dict = field(default_factory=dict)
    errors: list = field(default_factory=list)

    def __len__(self):
        return len(self.ids)

    def __getitem__(self, i):
        if self.masks is None:
            return UnlabeledSample(self.images[i], self.ids[i])
        label = -1 if self.labels is None else int(self.labels[i])
        return Sample(self.images[i], label, self.masks[i], self.ids[i])

    @property
    def size(self):
        return self.images.shape[-1]

    @property
    def presence(self):
        if self.masks is None:
            raise ContractError("an unlabeled dataset has no masks")
        return self.masks.reshape(len(self), len(ATTRIBUTES), -1).any(axis=2)

    def indices(self, split=None):
        if split is None or self.split is None:
            return np.arange(len(self))
        return np.flatnonzero(self.split == split)

    def subset(self, idx):
        idx = np.asarray(idx, dtype=np.int64)
        take = lambda a: None if a is None else a[idx]
        return replace(self, images=self.images[idx], ids=[self.ids[i] for i in idx],
                       labels=take(self.labels), masks=take(self.masks), split=take(self.split),
                       errors=[])


# -- synthetic generation ------------------------------------------------------------

def _sample_rng(seed, role, index):
    return np.random.default_rng([int(seed), _ROLE_CODES[role], int(index)])


class _Lesion:
    def __init__(self, rng, size):
        self.center = size / 2 + rng.uniform(-size / 10, size / 10, 2)
        self.a = rng.uniform(0.26, 0.36) * size
        self.b = self.a * rng.uniform(0.7, 1.0)
        self.angle = rng.uniform(0, np.pi)

    def local(self, yy, xx):
        """Pixel coordinates in the ellipse frame, scaled so the boundary is radius 1."""
        dy, dx = yy - self.center[0], xx - self.center[1]
        c, s = np.cos(self.angle), np.sin(self.angle)
        return (dx * c + dy * s) / self.a, (-dx * s + dy * c) / self.b

    def radius(self, yy, xx):
        u, v = self.local(yy, xx)
        return np.hypot(u, v)

    def point(self, rng, rho_max, rho_min=0.0):
        rho = np.sqrt(rng.uniform(rho_min ** 2, rho_max ** 2))
        return self.at(rho, rng.uniform(0, 2 * np.pi))

    def at(self, rho, phi):
        u, v = rho * np.cos(phi) * self.a, rho * np.sin(phi) * self.b
        c, s = np.cos(self.angle), np.sin(self.angle)
        return np.array([self.center[0] + u * s + v * c, self.center[1] + u * c - v * s])


def _discs(yy, xx, centers, radii):
    out = np.zeros(yy.shape, dtype=bool)
    for (cy, cx), r in zip(centers, radii):
        out |= (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
    return out


def _mesh(yy, xx, rng, spacing, width):
    """Two crossing families of parallel lines at a random orientation."""
    theta = rng.uniform(0, np.pi / 2)
    u = xx * np.cos(theta) + yy * np.sin(theta) + rng.uniform(0, spacing)
    v = -xx * np.sin(theta) + yy * np.cos(theta) + rng.uniform(0, spacing)
    return (np.mod(u, spacing) < width) | (np.mod(v, spacing) < width)


def _segments(yy, xx, starts, ends, half_width):
    out = np.zeros(yy.shape, dtype=bool)
    for p, q in zip(starts, ends):
        d = q - p
        t = np.clip(((yy - p[0]) * d[0] + (xx - p[1]) * d[1]) / (d @ d), 0, 1)
        out |= (yy - p[0] - t * d[0]) ** 2 + (xx - p[1] - t * d[1]) ** 2 <= half_width ** 2
    return out


def _paint(img, where, color, jitter=None):
    for ch in range(3):
        value = color[ch] if jitter is None else color[ch] + jitter
        img[ch] = np.where(where, value, img[ch])


def render_sample(rng, size, rates, with_masks=True):
    """Draw one synthetic image; returns (image, masks, diagnosis)."""
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    present = rng.random(len(ATTRIBUTES)) < np.asarray(rates)
    skin_color = rng.uniform([0.80, 0.60, 0.50], [0.92, 0.72, 0.62])
    texture = ndimage.gaussian_filter(rng.normal(size=(size, size)), sigma=size / 16, mode="wrap")
    texture *= 0.04 / (texture.std() + 1e-12)
    img = skin_color[:, None, None] + texture + 0.015 * rng.normal(size=(3, size, size))

    lesion = _Lesion(rng, size)
    r = lesion.radius(yy, xx)
    inside = r <= 1.0
    lesion_color = np.array([0.50, 0.33, 0.22]) * rng.uniform(0.85, 1.1)
    mottle = ndimage.gaussian_filter(rng.normal(size=(size, size)), sigma=size / 24) * 0.6
    w = np.clip((1.0 - r) / 0.15, 0, 1)
    img = img * (1 - w) + (lesion_color[:, None, None] * (1 + mottle)) * w

    masks = np.zeros((len(ATTRIBUTES), size, size), dtype=bool)
    # Pigment network: dark mesh over a lighter patch.
    if present[3]:
        c = lesion.point(rng, 0.5)
        patch = _discs(yy, xx, [c], [rng.uniform(0.15, 0.25) * size]) & inside
        mesh = _mesh(yy, xx, rng, spacing=rng.uniform(4.5, 6.0), width=1.3)
        _paint(img, patch, [0.62, 0.44, 0.32])
        _paint(img, patch & mesh, [0.22, 0.12, 0.08])
        masks[3] = patch
    # Negative network: light lines around dark holes.
    if present[2]:
        c = lesion.point(rng, 0.4)
        patch = _discs(yy, xx, [c], [rng.uniform(0.12, 0.18) * size]) & inside
        mesh = _mesh(yy, xx, rng, spacing=rng.uniform(5.0, 6.5), width=1.5)
        _paint(img, patch, [0.25, 0.15, 0.10])
        _paint(img, patch & mesh, [0.78, 0.64, 0.54])
        masks[2] = patch
    # Globules: a cluster of dark round dots.
    if present[0]:
        c = lesion.point(rng, 0.5)
        k = rng.integers(6, 12)
        centers = np.vstack([c, c + rng.normal(0, 0.06 * size, (k - 1, 2))])
        dots = _discs(yy, xx, centers, rng.uniform(1.2, 2.0, k)) & inside
        _paint(img, dots, [0.20, 0.10, 0.07])
        masks[0] = dots
    # Milia-like cysts: scattered bright dotlets.
    if present[1]:
        k = rng.integers(3, 8)
        centers = np.array([lesion.point(rng, 0.8) for _ in range(k)])
        dots = _discs(yy, xx, centers, rng.uniform(0.9, 1.4, k)) & inside
        _paint(img, dots, [0.95, 0.93, 0.80])
        masks[1] = dots
    # Streaks: radial dark segments along one arc of the border.
    if present[4]:
        k = rng.integers(4, 9)
        phi0 = rng.uniform(0, 2 * np.pi)
        phis = phi0 + rng.uniform(-np.pi / 3, np.pi / 3, k)
        starts = np.array([lesion.at(0.62, p) for p in phis])
        ends = np.array([lesion.at(0.98, p) for p in phis])
        lines = _segments(yy, xx, starts, ends, 0.8) & inside
        _paint(img, lines, [0.18, 0.10, 0.06])
        masks[4] = lines

    image = (np.rint(np.clip(img, 0, 1) * 255) / 255).astype(np.float32)
    presence = masks.reshape(len(ATTRIBUTES), -1).any(axis=1)
    diagnosis = int(presence[4] or presence[2] or presence.sum() >= 3)
    return image, (masks.astype(np.uint8) if with_masks else None), diagnosis


def gen_synthetic(n, size=64, seed=0, indicator_rates=DEFAULT_RATES, labeled=True):
    """Seeded synthetic dataset.

    ``labeled=True`` gives the Dataset A role (masks, diagnosis, stratified
    split); ``labeled=False`` gives unlabeled Dataset B images. Each sample
    draws from its own stream seeded by (seed, role, index), so any subset
    can be regenerated independently of the others.

    The diagnosis is 1 iff streaks or a negative network is present, or at
    least three indicators are.
    """
    rates = tuple(float(r) for r in indicator_rates)
    if size < 32:
        raise ContractError("synthetic images must be at least 32 pixels wide")
    if len(rates) != len(ATTRIBUTES) or not all(0 <= r <= 1 for r in rates):
        raise ContractError("indicator_rates must be five probabilities")
    if n < 1:
        raise ContractError("n must be positive")
    role = "A" if labeled else "B"
    images = np.empty((n, 3, size, size), dtype=np.float32)
    masks = np.empty((n, len(ATTRIBUTES), size, size), dtype=np.uint8) if labeled else None
    labels = np.empty(n, dtype=np.int64) if labeled else None
    for i in range(n):
        img, m, y = render_sample(_sample_rng(seed, role, i), size, rates, labeled)
        images[i] = img
        if labeled:
            masks[i], labels[i] = m, y
    prefix = "syn" if labeled else "unl"
    ids = [f"{prefix}{i:05d}" for i in range(n)]
    meta = {"generator": {"n": n, "size": size, "seed": seed, "indicator_rates": list(rates)}}
    split = stratified_split(labels, seed) if labeled else None
    return Dataset(images, ids, labels, masks, split, role=role, meta=meta)


def stratified_split(labels, seed, fractions=SPLIT_FRACTIONS):
    """Assign "train"/"val"/"test" separately within each class."""
    labels = np.asarray(labels)
    out = np.empty(len(labels), dtype="<U5")
    rng = np.random.default_rng([int(seed), 7])
    for cls in np.unique(labels):
        idx = rng.permutation(np.flatnonzero(labels == cls))
        n_train = int(round(fractions[0] * len(idx)))
        n_val = int(round(fractions[1] * len(idx)))
        out[idx[:n_train]] = "train"
        out[idx[n_train:n_train + n_val]] = "val"
        out[idx[n_train + n_val:]] = "test"
    return out


# -- disk formats --------------------------------------------------------------------

def mask_filename(sample_id, attribute):
    return f"{sample_id}_attribute_{ATTRIBUTES[attribute]}.pgm"


def export_dataset(ds, out_dir):
    """Write PPM images, PGM masks (nonempty only) and manifest.json; returns the paths."""
    if ds.normalized:
        raise StateError("export the raw dataset, not a normalized copy")
    img_dir = os.path.join(out_dir, "images")
    mask_dir = os.path.join(out_dir, "masks")
    os.makedirs(img_dir, exist_ok=True)
    os.makedirs(mask_dir, exist_ok=True)
    written = []
    for i, sid in enumerate(ds.ids):
        path = os.path.join(img_dir, f"{sid}.ppm")
        imageio.write_ppm(path, ds.images[i])
        written.append(path)
        if ds.masks is None:
            continue
        for j in range(len(ATTRIBUTES)):
            if ds.masks[i, j].any():
                path = os.path.join(mask_dir, mask_filename(sid, j))
                imageio.write_pgm(path, ds.masks[i, j] * np.uint8(255))
                written.append(path)
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w") as fh:
        json.dump(manifest_dict(ds), fh, indent=2, sort_keys=True)
        fh.write("\n")
    written.append(path)
    return written


def manifest_dict(ds):
    doc = {
        "schema": MANIFEST_SCHEMA,
        "role": ds.role,
        "size": int(ds.size),
        "attributes": list(ATTRIBUTES),
        "ids": list(ds.ids),
        "labels": None if ds.labels is None else [int(v) for v in ds.labels],
        "presence": None if ds.masks is None else ds.presence.astype(int).tolist(),
        "split": None if ds.split is None else [str(s) for s in ds.split],
        "stats": ds.stats,
    }
    doc.update(ds.meta)
    return doc


def validate_manifest(doc):
    """Check the documented manifest schema; returns a list of problems."""
    problems = []
    required = {"schema": str, "role": str, "size": int, "attributes": list, "ids": list}
    for key, kind in required.items():
        if not isinstance(doc.get(key), kind):
            problems.append(f"{key}: expected {kind.__name__}")
    if doc.get("schema") != MANIFEST_SCHEMA:
        problems.append(f"schema: expected {MANIFEST_SCHEMA!r}")
    if doc.get("role") not in _ROLE_CODES:
        problems.append("role: expected 'A' or 'B'")
    n = len(doc.get("ids") or [])
    for key in ("labels", "presence", "split"):
        value = doc.get(key)
        if value is not None and len(value) != n:
            problems.append(f"{key}: length {len(value)} != {n} ids")
    if doc.get("role") == "A" and doc.get("labels") is None:
        problems.append("labels: required for a labeled dataset")
    return problems


def _load_gray(path, size):
    g = imageio.read_pgm(path).astype(np.float64) / 255.0
    if g.shape != (size, size):
        g = imageio.resize_bilinear(g, (size, size))
    return g


def load_isic_dir(images_dir, masks_dir=None, target_size=64, labels=None):
    """Read ``<id>.ppm`` images and ``<id>_attribute_<name>.pgm`` masks.

    A missing mask file means an empty mask. Unreadable files are collected
    in ``dataset.errors`` and the affected sample is skipped; loading
    continues with the rest.
    """
    try:
        names = sorted(f for f in os.listdir(images_dir) if f.endswith(".ppm"))
    except OSError as exc:
        raise IngestionError(f"{images_dir}: {exc}") from exc
    images, masks, ids, errors = [], [], [], []
    for fname in names:
        sid = fname[:-4]
        try:
            rgb = imageio.read_ppm(os.path.join(images_dir, fname)).astype(np.float64) / 255.0
            rgb = rgb.transpose(2, 0, 1)
            if rgb.shape[1:] != (target_size, target_size):
                rgb = np.clip(imageio.resize_bilinear(rgb, (target_size, target_size)), 0, 1)
            m = np.zeros((len(ATTRIBUTES), target_size, target_size), dtype=np.uint8)
            if masks_dir is not None:
                for j in range(len(ATTRIBUTES)):
                    path = os.path.join(masks_dir, mask_filename(sid, j))
                    if os.path.exists(path):
                        m[j] = _load_gray(path, target_size) >= 0.5
        except IngestionError as exc:
            errors.append(str(exc))
            continue
        images.append(rgb.astype(np.float32))
        masks.append(m)
        ids.append(sid)
    images = np.stack(images) if images else np.zeros((0, 3, target_size, target_size), np.float32)
    masks = np.stack(masks) if masks else np.zeros((0, len(ATTRIBUTES), target_size, target_size), np.uint8)
    y = None
    if labels is not None:
        y = np.array([int(labels[sid]) for sid in ids], dtype=np.int64)
    return Dataset(images, ids, y, masks, errors=errors)


def import_dataset(root):
    """Re-read a directory written by :func:`export_dataset`."""
    try:
        with open(os.path.join(root, "manifest.json")) as fh:
            doc = json.load(fh)
    except (OSError, ValueError) as exc:
        raise IngestionError(f"{root}: cannot read manifest ({exc})") from exc
    problems = validate_manifest(doc)
    if problems:
        raise IngestionError(f"{root}: invalid manifest: {'; '.join(problems)}")
    labeled = doc["role"] == "A"
    labels = dict(zip(doc["ids"], doc["labels"])) if labeled else None
    ds = load_isic_dir(os.path.join(root, "images"), os.path.join(root, "masks"), doc["size"], labels)
    if ds.errors or ds.ids != doc["ids"]:
        raise IngestionError(f"{root}: images do not match the manifest ({len(ds.errors)} unreadable)")
    if not labeled:
        ds.masks = None
    ds.role = doc["role"]
    ds.split = None if doc.get("split") is None else np.array(doc["split"])
    ds.stats = doc.get("stats")
    ds.meta = {k: doc[k] for k in ("generator",) if k in doc}
    return ds


# -- normalization -------------------------------------------------------------------

def compute_stats(ds):
    """Per-channel mean and std over the training split (all samples if unsplit)."""
    idx = ds.indices("train")
    if len(idx) == 0:
        raise ContractError("cannot compute statistics of an empty split")
    x = ds.images[idx].astype(np.float64)
    mean = x.mean(axis=(0, 2, 3))
    std = x.std(axis=(0, 2, 3))
    if np.any(std < STD_EPS):
        warnings.warn("zero-variance channel; its standard deviation is floored at 1e-6", RuntimeWarning)
    return {"mean": mean.tolist(), "std": np.maximum(std, STD_EPS).tolist()}


def apply_stats(images, stats):
    mean = np.asarray(stats["mean"], dtype=np.float64)[:, None, None]
    std = np.asarray(stats["std"], dtype=np.float64)[:, None, None]
    return ((images - mean) / std).astype(np.float32)


def normalize(ds, stats=None):
    """Return a normalized copy; the statistics travel with it in ``stats``."""
    if ds.normalized:
        raise StateError("dataset is already normalized")
    if len(ds) == 0:
        raise ContractError("cannot normalize an empty dataset")
    stats = stats or compute_stats(ds)
    return replace(ds, images=apply_stats(ds.images, stats), stats=stats, normalized=True)


# -- augmentation ----------------------------------------------------------------------

@dataclass(frozen=True)
class AugmentSpec:
    """Ranges for each transform; a zero range (or probability) disables it."""
    rotation: float = 30.0          # max |angle| in degrees
    scale: tuple = (0.85, 1.15)
    crop: float = 0.8               # smallest kept side fraction
    brightness: float = 0.2
    contrast: float = 0.2
    saturation: float = 0.2
    hflip: float = 0.5
    vflip: float = 0.5
    seed: int = 0

    @classmethod
    def identity(cls, seed=0):
        return cls(0.0, (1.0, 1.0), 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, seed)

    @classmethod
    def flips(cls, hflip=1.0, vflip=0.0, seed=0):
        return replace(cls.identity(seed), hflip=hflip, vflip=vflip)

    @property
    def geometric(self):
        return self.rotation > 0 or tuple(self.scale) != (1.0, 1.0) or self.crop < 1.0


_LUMA = np.array([0.299, 0.587, 0.114])


class Augmenter:
    """A seeded stream of random views. Every call's draws are kept in ``history``."""

    def __init__(self, spec):
        self.spec = spec
        self.rng = np.random.default_rng([int(spec.seed), 11])
        self.history = []

    def draw(self, size):
        s, rng = self.spec, self.rng
        u = rng.random(9)
        keep = s.crop + (1 - s.crop) * u[2]
        return {
            "angle": float(s.rotation * (2 * u[0] - 1)),
            "scale": float(s.scale[0] + (s.scale[1] - s.scale[0]) * u[1]),
            "crop": float(keep),
            "shift": [float((1 - keep) * size * (u[3] - 0.5)), float((1 - keep) * size * (u[4] - 0.5))],
            "brightness": float(s.brightness * (2 * u[5] - 1)),
            "contrast": float(1 + s.contrast * (2 * u[6] - 1)),
            "saturation": float(1 + s.saturation * (2 * u[7] - 1)),
            "hflip": bool(rng.random() < s.hflip),
            "vflip": bool(rng.random() < s.vflip),
        }

    def __call__(self, image, mask=None):
        d = self.draw(image.shape[-1])
        self.history.append(d)
        return apply_augment(image, d, self.spec.geometric, mask)


def apply_augment(image, d, geometric=True, mask=None):
    """Apply recorded draws ``d`` to a (3, H, W) image and optional (H, W) mask."""
    out = np.asarray(image, dtype=np.float64)
    m = None if mask is None else np.asarray(mask)
    if geometric:
        size = out.shape[-1]
        c = (size - 1) / 2.0
        t = np.deg2rad(d["angle"])
        rot = np.array([[np.cos(t), -np.sin(t)], [np.sin(t), np.cos(t)]])
        matrix = rot * (d["crop"] / d["scale"])
        offset = c + np.asarray(d["shift"]) - matrix @ np.array([c, c])
        out = np.stack([ndimage.affine_transform(ch, matrix, offset, order=1, mode="reflect")
                        for ch in out])
        if m is not None:
            m = ndimage.affine_transform(m, matrix, offset, order=0, mode="reflect")
    if d["hflip"]:
        out = out[:, :, ::-1]
        m = None if m is None else m[:, ::-1]
    if d["vflip"]:
        out = out[:, ::-1, :]
        m = None if m is None else m[::-1, :]
    if d["brightness"]:
        out = out + d["brightness"]
    if d["contrast"] != 1:
        mean = (out * _LUMA[:, None, None]).sum(axis=0).mean()
        out = (out - mean) * d["contrast"] + mean
    if d["saturation"] != 1:
        gray = (out * _LUMA[:, None, None]).sum(axis=0, keepdims=True)
        out = gray + (out - gray) * d["saturation"]
    out = np.clip(out, 0, 1).astype(np.float32)
    if mask is None:
        return out
    return out, np.ascontiguousarray(m)


def augment_pair(x, aug1, aug2):
    """Two independent views (T1(x), T2(x)); specs are turned into fresh augmenters."""
    aug1 = aug1 if isinstance(aug1, Augmenter) else Augmenter(aug1)
    aug2 = aug2 if isinstance(aug2, Augmenter) else Augmenter(aug2)
    return aug1(x), aug2(x)
