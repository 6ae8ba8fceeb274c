"""Training data: aligned 32x32 patches with their 64x64 context windows.

A context window is placed so its bottom-right 32x32 quadrant is the patch
itself; that quadrant is zeroed and so is anything falling outside the
image.  The same rule is used by the codec when it assembles contexts from
decoded content.
"""

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgument
from .imageio import list_images, read_image, to_unit
from .models import PATCH
from .rng import stream
from .tensor import Tensor

CONTEXT = 2 * PATCH


def context_window(canvas, top, left):
    """3 x 64 x 64 context for the patch at (top, left) of a 3 x H x W canvas."""
    c, h, w = canvas.shape
    out = np.zeros((c, CONTEXT, CONTEXT), dtype=canvas.dtype)
    r0, c0 = top - PATCH, left - PATCH
    rs, cs = max(r0, 0), max(c0, 0)
    re, ce = min(top + PATCH, h), min(left + PATCH, w)
    if re > rs and ce > cs:
        out[:, rs - r0:re - r0, cs - c0:ce - c0] = canvas[:, rs:re, cs:ce]
    out[:, PATCH:, PATCH:] = 0
    return out


def patch_grid(height, width):
    """Top-left corners of the aligned patches that fit fully, raster order."""
    return [(r, c) for r in range(0, height - PATCH + 1, PATCH)
            for c in range(0, width - PATCH + 1, PATCH)]


@dataclass
class PatchSet:
    """All patches of a corpus, as [-1, 1] float32 arrays."""

    patches: np.ndarray    # M x 3 x 32 x 32
    contexts: np.ndarray   # M x 3 x 64 x 64

    def __len__(self):
        return len(self.patches)

    def subset(self, idx):
        return PatchSet(self.patches[idx], self.contexts[idx])


@dataclass
class PatchBatch:
    patches: Tensor
    contexts: Tensor = None

    def __post_init__(self):
        p = self.patches
        if p.ndim != 4 or p.shape[1:] != (3, PATCH, PATCH):
            raise InvalidArgument(f"patches must be N x 3 x 32 x 32, got {p.shape}")
        if self.contexts is not None:
            c = self.contexts
            if c.shape != (p.shape[0], 3, CONTEXT, CONTEXT):
                raise InvalidArgument(f"contexts must be N x 3 x 64 x 64, got {c.shape}")
            if np.any(c.data[:, :, PATCH:, PATCH:] != 0):
                raise InvalidArgument("context bottom-right quadrant must be zero")

    @property
    def size(self):
        return self.patches.shape[0]


def extract_patches(images):
    """Aligned patches and contexts from a list of 3 x H x W [-1, 1] arrays."""
    ps, cs = [], []
    for img in images:
        for top, left in patch_grid(img.shape[1], img.shape[2]):
            ps.append(img[:, top:top + PATCH, left:left + PATCH])
            cs.append(context_window(img, top, left))
    if not ps:
        raise InvalidArgument("corpus yields no 32x32 patches")
    return PatchSet(np.stack(ps).astype(np.float32), np.stack(cs).astype(np.float32))


def load_corpus(folder):
    paths = list_images(folder)
    if not paths:
        raise InvalidArgument(f"no images found in {folder}")
    return extract_patches([to_unit(read_image(p)) for p in paths])


def synthetic_image(height, width, rng):
    """A smooth, structured uint8 test image (gradients, blobs, edges, grain)."""
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    img = np.empty((height, width, 3))
    base = rng.uniform(60, 190, 3)
    for ch in range(3):
        acc = np.full((height, width), base[ch])
        for _ in range(3):
            fy, fx = rng.uniform(0.5, 3.0, 2) * 2 * np.pi / np.array([height, width])
            acc += rng.uniform(10, 35) * np.sin(fy * yy + fx * xx + rng.uniform(0, 2 * np.pi))
        img[:, :, ch] = acc
    for _ in range(rng.integers(2, 5)):
        cy, cx = rng.uniform(0, height), rng.uniform(0, width)
        r = rng.uniform(6, max(8.0, min(height, width) / 3))
        mask = (yy - cy) ** 2 + (xx - cx) ** 2 < r * r
        img[mask] = 0.5 * img[mask] + 0.5 * rng.uniform(0, 255, 3)
    for _ in range(rng.integers(1, 3)):
        y0, x0 = rng.integers(0, height), rng.integers(0, width)
        y1, x1 = y0 + rng.integers(8, height // 2 + 9), x0 + rng.integers(8, width // 2 + 9)
        img[y0:y1, x0:x1] = 0.6 * img[y0:y1, x0:x1] + 0.4 * rng.uniform(0, 255, 3)
    img += rng.normal(0, 3.0, img.shape)
    return np.clip(np.round(img), 0, 255).astype(np.uint8)


def synthetic_corpus(n_images, height=128, width=128, seed=0):
    """Deterministic list of uint8 synthetic images."""
    rng = stream(seed, "synthetic")
    return [synthetic_image(height, width, rng) for _ in range(n_images)]


class BatchSampler:
    """Shuffled minibatches; reshuffles after each pass over the set."""

    def __init__(self, patchset, batch_size, seed=0, with_contexts=False):
        if len(patchset) == 0:
            raise InvalidArgument("dataset is empty")
        if batch_size < 1:
            raise InvalidArgument(f"batch size must be positive, got {batch_size}")
        self.data = patchset
        self.batch_size = int(batch_size)
        self.with_contexts = with_contexts
        self._rng = stream(seed, "data")
        self._order = np.empty(0, dtype=np.int64)

    def next(self):
        n = self.batch_size
        while self._order.size < n:
            self._order = np.concatenate([self._order, self._rng.permutation(len(self.data))])
        idx, self._order = self._order[:n], self._order[n:]
        ctx = Tensor(self.data.contexts[idx]) if self.with_contexts else None
        return PatchBatch(Tensor(self.data.patches[idx]), ctx)
