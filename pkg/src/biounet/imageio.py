"""Binary PGM (P5) and PPM (P6) reading and writing, 8-bit only."""
import numpy as np

from biounet.errors import IngestionError


def to_uint8(values):
    """Map floats in [0, 1] to 0..255 with round-half-to-even."""
    return np.clip(np.rint(np.asarray(values, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def bilinear_matrix(src, dst):
    """(dst, src) interpolation matrix with half-pixel centres and edge clamping."""
    if src == dst:
        return np.eye(dst)
    pos = (np.arange(dst) + 0.5) * (src / dst) - 0.5
    pos = np.clip(pos, 0, src - 1)
    lo = np.floor(pos).astype(int)
    hi = np.minimum(lo + 1, src - 1)
    frac = pos - lo
    m = np.zeros((dst, src))
    m[np.arange(dst), lo] += 1 - frac
    m[np.arange(dst), hi] += frac
    return m


def resize_bilinear(maps, size):
    """Resize (..., h, w) arrays to ``size`` = (H, W)."""
    ry = bilinear_matrix(maps.shape[-2], size[0])
    rx = bilinear_matrix(maps.shape[-1], size[1])
    return ry @ maps @ rx.T


def write_pgm(path, gray):
    gray = np.asarray(gray)
    if gray.dtype != np.uint8:
        gray = to_uint8(gray)
    if gray.ndim != 2:
        raise ValueError("PGM data must be 2-D")
    h, w = gray.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(gray.tobytes())


def write_ppm(path, rgb):
    """``rgb`` is (H, W, 3) uint8 or floats in [0, 1]; (3, H, W) is accepted too."""
    rgb = np.asarray(rgb)
    if rgb.ndim == 3 and rgb.shape[0] == 3 and rgb.shape[2] != 3:
        rgb = rgb.transpose(1, 2, 0)
    if rgb.dtype != np.uint8:
        rgb = to_uint8(rgb)
    h, w, _ = rgb.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(rgb).tobytes())


def _read_netpbm(path, magic):
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise IngestionError(f"{path}: {exc}") from exc
    tokens, pos = [], 0
    while len(tokens) < 4:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            while pos < len(raw) and raw[pos:pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise IngestionError(f"{path}: truncated header")
        tokens.append(raw[start:pos])
    pos += 1
    if tokens[0] != magic:
        raise IngestionError(f"{path}: expected {magic.decode()} file, found {tokens[0][:2]!r}")
    w, h, maxval = (int(t) for t in tokens[1:])
    if maxval != 255:
        raise IngestionError(f"{path}: only 8-bit files are supported")
    channels = 3 if magic == b"P6" else 1
    if len(raw) - pos < w * h * channels:
        raise IngestionError(f"{path}: truncated pixel data")
    data = np.frombuffer(raw, dtype=np.uint8, count=w * h * channels, offset=pos)
    return data.reshape((h, w, 3) if channels == 3 else (h, w)).copy()


def read_pgm(path):
    return _read_netpbm(path, b"P5")


def read_ppm(path):
    return _read_netpbm(path, b"P6")


def overlay(image, heat, alpha=0.5):
    """Blend a [0, 1] heatmap onto an RGB image as a red-yellow ramp."""
    image = np.asarray(image, dtype=np.float64)
    if image.shape[0] == 3 and image.shape[-1] != 3:
        image = image.transpose(1, 2, 0)
    heat = np.clip(np.asarray(heat, dtype=np.float64), 0, 1)
    ramp = np.stack([np.ones_like(heat), heat, np.zeros_like(heat)], axis=-1)
    a = alpha * heat[..., None]
    return to_uint8((1 - a) * image + a * ramp)


def montage(tiles, pad=2):
    """Place equally sized (H, W, 3) uint8 tiles side by side."""
    tiles = [t if t.ndim == 3 else np.repeat(t[..., None], 3, axis=2) for t in tiles]
    h = max(t.shape[0] for t in tiles)
    width = sum(t.shape[1] for t in tiles) + pad * (len(tiles) - 1)
    out = np.full((h, width, 3), 255, dtype=np.uint8)
    x = 0
    for t in tiles:
        out[:t.shape[0], x:x + t.shape[1]] = t
        x += t.shape[1] + pad
    return out
