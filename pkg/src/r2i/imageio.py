"""Image files and the pixel <-> [-1, 1] mapping.

Binary PPM (P6, 8-bit) is always available.  PNG is read and written
through Pillow when it is installed.
"""

import os

import numpy as np

from .errors import DependencyError, InvalidArgument

IMAGE_EXTENSIONS = (".ppm", ".png")


def to_unit(pixels):
    """uint8 H x W x 3 -> float32 3 x H x W in [-1, 1]."""
    px = np.asarray(pixels)
    if px.ndim != 3 or px.shape[2] != 3:
        raise InvalidArgument(f"expected an H x W x 3 image, got {px.shape}")
    return (px.astype(np.float32) / np.float32(127.5) - 1).transpose(2, 0, 1).copy()


def to_pixels(values):
    """float 3 x H x W in [-1, 1] -> uint8 H x W x 3, rounding and clamping."""
    v = np.asarray(values, dtype=np.float64)
    px = np.clip(np.round((v + 1.0) * 127.5), 0, 255).astype(np.uint8)
    return px.transpose(1, 2, 0).copy()


def _tokens(data, count):
    # PPM header: whitespace separated fields, '#' comments to end of line
    out, pos = [], 0
    while len(out) < count:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise InvalidArgument("truncated PPM header")
        out.append(data[start:pos])
    return out, pos + 1  # a single whitespace byte ends the header


def decode_ppm(data):
    (magic, w, h, maxval), pos = _tokens(data, 4)
    if magic != b"P6":
        raise InvalidArgument(f"only binary PPM (P6) is supported, got {magic!r}")
    w, h, maxval = int(w), int(h), int(maxval)
    if w < 1 or h < 1:
        raise InvalidArgument(f"bad PPM size {w}x{h}")
    if maxval != 255:
        raise InvalidArgument(f"only 8-bit PPM is supported (maxval {maxval})")
    need = w * h * 3
    if len(data) - pos < need:
        raise InvalidArgument("PPM pixel data is truncated")
    return np.frombuffer(data, np.uint8, need, pos).reshape(h, w, 3).copy()


def encode_ppm(pixels):
    px = np.asarray(pixels, dtype=np.uint8)
    h, w = px.shape[:2]
    return f"P6\n{w} {h}\n255\n".encode("ascii") + px.tobytes()


def _pil():
    try:
        from PIL import Image
    except ImportError as exc:
        raise DependencyError("PNG support needs Pillow (pip install pillow)") from exc
    return Image


def read_image(path):
    """Read a PPM or PNG file as uint8 H x W x 3."""
    ext = os.path.splitext(path)[1].lower()
    if ext == ".png":
        with _pil().open(path) as im:
            return np.asarray(im.convert("RGB"), dtype=np.uint8).copy()
    with open(path, "rb") as f:
        return decode_ppm(f.read())


def write_image(path, pixels):
    ext = os.path.splitext(path)[1].lower()
    if ext == ".png":
        _pil().fromarray(np.asarray(pixels, dtype=np.uint8)).save(path)
        return
    with open(path, "wb") as f:
        f.write(encode_ppm(pixels))


def list_images(folder):
    """Sorted image paths directly inside ``folder``."""
    if not os.path.isdir(folder):
        raise InvalidArgument(f"not a directory: {folder}")
    names = sorted(n for n in os.listdir(folder) if n.lower().endswith(IMAGE_EXTENSIONS))
    return [os.path.join(folder, n) for n in names]
