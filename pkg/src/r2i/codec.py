"""Whole-image progressive coding with 32x32 patches.

Stream layout (little-endian header, 21 bytes)::

    b"R2IC" | version u8 | width u16 | height u16 | patch u8 | stages u8
    | kind tag u8 | weight digest 8B | flags u8 (bit 0: inpainting)

followed by the payload, one *unit* after another.  A unit holds 16 bytes
(128 bits, MSB first, channel-row-column order, +1 -> 1) for every patch in
raster order.  With inpainting the first unit carries stages 1 and 2 (32
bytes per patch) and later units one stage each.  Decoding up to a stage
only reads the bytes of the units that stage needs, so any prefix that ends
on a unit boundary is itself decodable.

Encoder and decoder push patches through the network in the same fixed
chunks, which keeps the floating-point reconstructions bit-identical on
both sides.
"""

import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .data import context_window
from .errors import CorruptStreamError, IntegrityError, InvalidArgument
from .imageio import to_pixels, to_unit
from .models import BITS_PER_STAGE, CODE_SHAPE, KIND_TAGS, PATCH, TAG_KINDS, model_kind
from .tensor import Tensor, add, no_grad, sub
from .weights import weights_digest

MAGIC = b"R2IC"
VERSION = 1
FLAG_INPAINT = 0x01
HEADER = struct.Struct("<4sBHHBBB8sB")
HEADER_SIZE = HEADER.size
BYTES_PER_CODE = BITS_PER_STAGE // 8
DEFAULT_CHUNK = 32


# -- bits -------------------------------------------------------------------

def pack_bits(codes):
    """{-1, +1} array -> bytes, +1 as 1, most significant bit first."""
    c = np.asarray(codes)
    pos, neg = c == 1, c == -1
    if not np.all(pos | neg):
        raise InvalidArgument("codes must be exactly -1 or +1")
    return np.packbits(pos.reshape(-1)).tobytes()


def unpack_bits(data, shape):
    """Inverse of :func:`pack_bits` for a code array of ``shape``."""
    n = int(np.prod(shape))
    if len(data) * 8 < n:
        raise CorruptStreamError(f"need {n} bits, got {len(data) * 8}")
    bits = np.unpackbits(np.frombuffer(data, np.uint8), count=n)
    return (bits.astype(np.float32) * 2 - 1).reshape(shape)


# -- geometry ----------------------------------------------------------------

def pad_image(image):
    """Replicate-pad a 3 x H x W array right/bottom to multiples of 32."""
    img = np.asarray(image)
    if img.ndim != 3 or img.shape[1] < 1 or img.shape[2] < 1:
        raise InvalidArgument(f"expected a non-empty 3 x H x W image, got {img.shape}")
    h, w = img.shape[1:]
    hp, wp = -(-h // PATCH) * PATCH, -(-w // PATCH) * PATCH
    return np.pad(img, ((0, 0), (0, hp - h), (0, wp - w)), mode="edge"), (h, w)


def to_patches(img):
    c, h, w = img.shape
    return (img.reshape(c, h // PATCH, PATCH, w // PATCH, PATCH)
            .transpose(1, 3, 0, 2, 4).reshape(-1, c, PATCH, PATCH))


def from_patches(patches, rows, cols):
    c = patches.shape[1]
    return (patches.reshape(rows, cols, c, PATCH, PATCH)
            .transpose(2, 0, 3, 1, 4).reshape(c, rows * PATCH, cols * PATCH))


class ReconCanvas:
    """Decoded values of the padded image plus which patches are final."""

    def __init__(self, rows, cols):
        self.rows, self.cols = rows, cols
        self.values = np.zeros((3, rows * PATCH, cols * PATCH), dtype=np.float32)
        self.done = np.zeros((rows, cols), dtype=bool)

    def put(self, r, c, patch):
        self.values[:, r * PATCH:(r + 1) * PATCH, c * PATCH:(c + 1) * PATCH] = patch
        self.done[r, c] = True


def assemble_context(canvas, r, c):
    """1 x 3 x 64 x 64 context for patch (r, c) from finished neighbours."""
    for dr, dc in ((-1, -1), (-1, 0), (0, -1)):
        rr, cc = r + dr, c + dc
        if rr >= 0 and cc >= 0 and not canvas.done[rr, cc]:
            raise InvalidArgument(f"patch ({r},{c}) needs patch ({rr},{cc}) first")
    return context_window(canvas.values, r * PATCH, c * PATCH)[None]


def _wavefronts(rows, cols):
    # the context reaches the left, top and top-left patches, so every patch
    # on an anti-diagonal depends only on earlier diagonals
    return [[(r, d - r) for r in range(rows) if 0 <= d - r < cols] for d in range(rows + cols - 1)]


# -- header ------------------------------------------------------------------

@dataclass
class StreamHeader:
    width: int
    height: int
    stages: int
    kind: str
    digest: bytes
    inpaint: bool
    version: int = VERSION
    patch: int = PATCH

    def pack(self):
        flags = FLAG_INPAINT if self.inpaint else 0
        return HEADER.pack(MAGIC, self.version, self.width, self.height, self.patch, self.stages,
                           KIND_TAGS[self.kind], self.digest, flags)

    @classmethod
    def unpack(cls, data):
        if len(data) < HEADER_SIZE:
            raise CorruptStreamError(f"stream shorter than its {HEADER_SIZE}-byte header")
        magic, version, w, h, patch, stages, tag, digest, flags = HEADER.unpack_from(data, 0)
        if magic != MAGIC:
            raise CorruptStreamError("not an .r2i stream (bad magic)")
        if version != VERSION:
            raise CorruptStreamError(f"unknown stream version {version}")
        if patch != PATCH or tag not in TAG_KINDS or w < 1 or h < 1 or stages < 1:
            raise CorruptStreamError("malformed stream header")
        return cls(w, h, stages, TAG_KINDS[tag], digest, bool(flags & FLAG_INPAINT), version, patch)

    @property
    def grid(self):
        return -(-self.height // PATCH), -(-self.width // PATCH)

    @property
    def n_patches(self):
        r, c = self.grid
        return r * c


def unit_of_stage(stage, inpaint):
    """1-based unit index holding ``stage``'s code."""
    return max(1, stage - 1) if inpaint else stage


def payload_bytes(n_patches, stage, inpaint):
    """Payload size needed to decode up to ``stage``."""
    if inpaint:
        stage = max(stage, 2)
    return stage * n_patches * BYTES_PER_CODE


def stream_bpp(header, stage):
    """Bits per pixel of everything up to ``stage`` (over the padded grid)."""
    rows, cols = header.grid
    return payload_bytes(header.n_patches, stage, header.inpaint) * 8 / (rows * cols * PATCH * PATCH)


# -- coding ------------------------------------------------------------------

@dataclass
class CodecResult:
    stream: bytes = b""
    header: StreamHeader = None
    recon: list = field(default_factory=list)      # per stage, 3 x H x W in [-1, 1] space
    contexts: np.ndarray = None                    # inpainting contexts, M x 3 x 64 x 64
    inpaint: np.ndarray = None                     # inpainting estimates, M x 3 x 32 x 32

    def pixels(self, stage=None):
        return to_pixels(self.recon[(stage or len(self.recon)) - 1])


def _as_unit(image):
    img = np.asarray(image)
    if img.dtype == np.uint8:
        return to_unit(img)
    return img.astype(np.float32)


def _chunks(m, size):
    return [(a, min(a + size, m)) for a in range(0, m, size)]


def _cat_carry(carries):
    merged = {}
    for half in ("enc", "dec"):
        keys = carries[0][half].keys()
        merged[half] = {k: None if carries[0][half][k] is None
                        else Tensor(np.concatenate([c[half][k].data for c in carries]))
                        for k in keys}
    return merged


class _Coder:
    """Stage loop shared by the encoder (``patches`` given) and decoder."""

    def __init__(self, model):
        self.model = model

    def run(self, s, residual, bits, carry):
        # Encoder: residual -> bits and output; decoder: bits -> output.
        m = self.model
        enc_c = carry["enc"] if carry else None
        dec_c = carry["dec"] if carry else None
        new = {"enc": {}, "dec": {}}
        if residual is not None:
            b, new["enc"] = m.encode_stage(s, residual, enc_c, "infer", binarizer="deterministic")
            bits = b.data
        out, new["dec"] = m.decode_stage(s, Tensor(bits), dec_c, "infer")
        return out, bits, new

    def stages(self, first, last, patches, codes, carry, image, inpaint):
        """Run stages first..last on one chunk; returns images, codes, carry."""
        m = self.model
        images, got = [], []
        residual = None
        if patches is not None:
            residual = patches if image is None else sub(patches, image)
        for s in range(first, last + 1):
            out, bits, carry = self.run(s, residual, None if codes is None else codes[s - first], carry)
            if m.kind == "residual":
                image = m.reconstruct(image, out)
                if residual is not None:
                    residual = sub(residual, out)
            else:
                image = out if inpaint is None else add(out, inpaint)
                if residual is not None:
                    residual = sub(patches, image)
            images.append(image.data.copy())
            got.append(bits)
        return images, got, carry, image


def _check_model(model, stages):
    if stages < 1 or stages > model.stages:
        raise InvalidArgument(f"stages must be in 1..{model.stages}, got {stages}")
    if model.inpainter is not None and stages < 2:
        raise InvalidArgument("an inpainting stream needs at least 2 stages")


def _compression_model(model):
    if model_kind(model) in ("inpaint", "vanilla"):
        raise InvalidArgument("the codec needs a compression model")
    return model


def _map(fn, items, threads):
    if threads and threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


def _inpaint_pass(coder, rows, cols, patches, codes12, threads):
    """Stages 1-2 patch by patch; contexts come from finished stage-2 images."""
    model = coder.model
    canvas = ReconCanvas(rows, cols)
    m = rows * cols
    out = {"img1": [None] * m, "img2": [None] * m, "codes": [None] * m, "carry": [None] * m,
           "ctx": [None] * m, "mi": [None] * m, "state": [None] * m}

    def one(rc):
        r, c = rc
        i = r * cols + c
        ctx = assemble_context(canvas, r, c)
        mi = model.inpainter(Tensor(ctx), "infer")
        p = None if patches is None else Tensor(patches[i:i + 1])
        r0 = None if p is None else sub(p, mi)
        codes = None if codes12 is None else codes12[i]
        images, bits, carry, image = [], [], None, None
        for s in (1, 2):
            residual = None if p is None else (r0 if s == 1 else sub(p, image))
            o, b, carry = coder.run(s, residual, None if codes is None else codes[s - 1], carry)
            image = add(o, mi)
            images.append(image.data.copy())
            bits.append(b)
        out["img1"][i], out["img2"][i] = images
        out["codes"][i], out["carry"][i] = bits, carry
        out["ctx"][i], out["mi"][i], out["state"][i] = ctx, mi.data.copy(), image
        return i

    fronts = _wavefronts(rows, cols) if threads and threads > 1 else \
        [[(r, c)] for r in range(rows) for c in range(cols)]
    for front in fronts:
        done = _map(one, front, threads)
        for i in done:
            r, c = divmod(i, cols)
            canvas.put(r, c, np.clip(out["img2"][i][0], -1, 1))
    return out


def encode_image(model, image, stages=None, digest=None, threads=1, chunk=DEFAULT_CHUNK):
    """Encode a uint8 H x W x 3 image (or 3 x H x W array in [-1, 1]).

    Returns a :class:`CodecResult` with the stream and the encoder-side
    reconstruction after every stage.
    """
    stages = _compression_model(model).stages if stages is None else int(stages)
    _check_model(model, stages)
    img = _as_unit(image)
    padded, (h, w) = pad_image(img)
    rows, cols = padded.shape[1] // PATCH, padded.shape[2] // PATCH
    patches = to_patches(padded).astype(np.float32)
    m = len(patches)
    inpaint = model.inpainter is not None
    header = StreamHeader(w, h, stages, model_kind(model),
                          digest if digest is not None else weights_digest(model), inpaint)
    coder = _Coder(model)
    codes = np.empty((stages, m) + CODE_SHAPE, dtype=np.float32)
    recon = np.empty((stages, m, 3, PATCH, PATCH), dtype=np.float32)
    result = CodecResult(header=header)
    with no_grad():
        if inpaint:
            a = _inpaint_pass(coder, rows, cols, patches, None, threads)
            for i in range(m):
                codes[0, i], codes[1, i] = a["codes"][i][0][0], a["codes"][i][1][0]
                recon[0, i], recon[1, i] = a["img1"][i][0], a["img2"][i][0]
            result.contexts = np.concatenate(a["ctx"])
            result.inpaint = np.concatenate(a["mi"])
            first = 3
        else:
            first = 1

        def work(span):
            lo, hi = span
            p = Tensor(patches[lo:hi])
            if inpaint:
                carry = _cat_carry(a["carry"][lo:hi])
                image = Tensor(np.concatenate([a["state"][i].data for i in range(lo, hi)]))
                mi = Tensor(result.inpaint[lo:hi])
            else:
                carry, image, mi = None, None, None
            return coder.stages(first, stages, p, None, carry, image, mi)[:2]

        if first <= stages:
            for (lo, hi), (imgs, bits) in zip(_chunks(m, chunk), _map(work, _chunks(m, chunk), threads)):
                for k, s in enumerate(range(first, stages + 1)):
                    recon[s - 1, lo:hi] = imgs[k]
                    codes[s - 1, lo:hi] = bits[k]
    payload = []
    if inpaint:
        payload.append(b"".join(pack_bits(codes[0, i]) + pack_bits(codes[1, i]) for i in range(m)))
        later = range(3, stages + 1)
    else:
        later = range(1, stages + 1)
    for s in later:
        payload.append(pack_bits(codes[s - 1]))
    result.stream = header.pack() + b"".join(payload)
    result.recon = [from_patches(recon[s], rows, cols)[:, :h, :w] for s in range(stages)]
    return result


def read_header(data):
    return StreamHeader.unpack(data)


def decode_image(model, data, up_to_stage=None, digest=None, threads=1, chunk=DEFAULT_CHUNK):
    """Decode a stream up to ``up_to_stage`` (default: all stored stages).

    Only the header and the bytes of the needed units are read.  Raises
    IntegrityError when the stream was made with different weights and
    CorruptStreamError when it is truncated or malformed.
    """
    _compression_model(model)
    header = StreamHeader.unpack(data)
    stage = header.stages if up_to_stage is None else int(up_to_stage)
    if stage < 1 or stage > header.stages:
        raise InvalidArgument(f"stage must be in 1..{header.stages}, got {stage}")
    kind = model_kind(model)
    if kind != header.kind or header.inpaint != (getattr(model, "inpainter", None) is not None):
        raise IntegrityError(f"stream was made by a {header.kind!r} model, not {kind!r}")
    if header.stages > model.stages:
        raise IntegrityError(f"stream has {header.stages} stages, model only {model.stages}")
    expected = digest if digest is not None else weights_digest(model)
    if expected != header.digest:
        raise IntegrityError("weight digest mismatch: stream was made with different weights")
    m = header.n_patches
    need = payload_bytes(m, stage, header.inpaint)
    body = data[HEADER_SIZE:HEADER_SIZE + need]
    if len(body) < need:
        raise CorruptStreamError(f"stream truncated: stage {stage} needs {need} payload bytes, "
                                 f"have {len(body)}")
    rows, cols = header.grid
    unit = m * BYTES_PER_CODE
    coder = _Coder(model)
    recon = np.empty((stage, m, 3, PATCH, PATCH), dtype=np.float32)
    result = CodecResult(header=header)
    with no_grad():
        if header.inpaint:
            first_unit = unpack_bits(body[:2 * unit], (m, 2) + CODE_SHAPE)
            codes12 = [[first_unit[i, 0:1], first_unit[i, 1:2]] for i in range(m)]
            a = _inpaint_pass(coder, rows, cols, None, codes12, threads)
            for i in range(m):
                recon[0, i] = a["img1"][i][0]
                if stage >= 2:
                    recon[1, i] = a["img2"][i][0]
            result.contexts = np.concatenate(a["ctx"])
            result.inpaint = np.concatenate(a["mi"])
            first, offset = 3, 2 * unit
        else:
            first, offset = 1, 0
        later = {s: unpack_bits(body[offset + k * unit: offset + (k + 1) * unit], (m,) + CODE_SHAPE)
                 for k, s in enumerate(range(first, stage + 1))}

        def work(span):
            lo, hi = span
            codes = [later[s][lo:hi] for s in range(first, stage + 1)]
            if header.inpaint:
                carry = _cat_carry(a["carry"][lo:hi])
                image = Tensor(np.concatenate([a["state"][i].data for i in range(lo, hi)]))
                mi = Tensor(result.inpaint[lo:hi])
            else:
                carry, image, mi = None, None, None
            return coder.stages(first, stage, None, codes, carry, image, mi)[0]

        if first <= stage:
            for (lo, hi), imgs in zip(_chunks(m, chunk), _map(work, _chunks(m, chunk), threads)):
                for k, s in enumerate(range(first, stage + 1)):
                    recon[s - 1, lo:hi] = imgs[k]
    h, w = header.height, header.width
    result.recon = [from_patches(recon[s], rows, cols)[:, :h, :w] for s in range(stage)]
    return result
