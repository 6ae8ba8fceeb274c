"""The ``.r2iw`` weight container.

Layout (little-endian)::

    b"R2IW" | version u8 | kind tag u8 | stages u8 | seed u64
    | arch length u32 | arch JSON (UTF-8)
    | record count u32
    | per record: name length u16 | name | ndim u8 | dims u32 * ndim | float32 data

Records are written in sorted name order, so the bytes depend only on the
parameter values and the architecture.  The arch blob lets a file be loaded
without knowing how the model was built.
"""

import hashlib
import json
import struct

import numpy as np

from .errors import CorruptStreamError, InvalidArgument
from .models import KIND_TAGS, TAG_KINDS, InpaintingNet, ModelGraph, model_kind

MAGIC = b"R2IW"
VERSION = 1
_HEAD = struct.Struct("<4sBBBQ")


def _arch(model):
    a = model.arch()
    if isinstance(model, ModelGraph) and model.inpainter is not None:
        a["inpaint"] = model.inpainter.arch()
    return a


def _all_params(model):
    if isinstance(model, ModelGraph):
        return model.all_params()
    return model.params


def serialize_weights(model):
    """Canonical bytes of ``model`` (compression model or inpainting net)."""
    kind = model_kind(model)
    stages = model.stages if isinstance(model, ModelGraph) else 0
    parts = [_HEAD.pack(MAGIC, VERSION, KIND_TAGS[kind], stages, model.seed)]
    blob = json.dumps(_arch(model), sort_keys=True).encode("utf-8")
    parts.append(struct.pack("<I", len(blob)) + blob)
    params = _all_params(model)
    parts.append(struct.pack("<I", len(params)))
    for name in sorted(params):
        data = np.ascontiguousarray(params[name].data, dtype="<f4")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack("<B", data.ndim) + struct.pack(f"<{data.ndim}I", *data.shape))
        parts.append(data.tobytes())
    return b"".join(parts)


def weights_digest(data):
    """First 8 bytes of SHA-256 over the canonical weight bytes."""
    if not isinstance(data, (bytes, bytearray)):
        data = serialize_weights(data)
    return hashlib.sha256(data).digest()[:8]


def parse_weights(data):
    """Decode a weight file into (header dict, {name: float32 array})."""
    if len(data) < _HEAD.size or data[:4] != MAGIC:
        raise CorruptStreamError("not an .r2iw weight file")
    magic, version, tag, stages, seed = _HEAD.unpack_from(data, 0)
    if version != VERSION:
        raise CorruptStreamError(f"unsupported weight file version {version}")
    if tag not in TAG_KINDS:
        raise CorruptStreamError(f"unknown model kind tag {tag}")
    pos = _HEAD.size
    try:
        (n,) = struct.unpack_from("<I", data, pos)
        pos += 4
        arch = json.loads(bytes(data[pos:pos + n]).decode("utf-8"))
        pos += n
        (count,) = struct.unpack_from("<I", data, pos)
        pos += 4
        arrays = {}
        for _ in range(count):
            (ln,) = struct.unpack_from("<H", data, pos)
            pos += 2
            name = bytes(data[pos:pos + ln]).decode("utf-8")
            pos += ln
            (ndim,) = struct.unpack_from("<B", data, pos)
            pos += 1
            shape = struct.unpack_from(f"<{ndim}I", data, pos)
            pos += 4 * ndim
            size = int(np.prod(shape, dtype=np.int64)) * 4
            if pos + size > len(data):
                raise CorruptStreamError(f"weight record {name!r} is truncated")
            arrays[name] = np.frombuffer(data, dtype="<f4", count=size // 4, offset=pos).reshape(shape).copy()
            pos += size
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptStreamError(f"malformed weight file: {exc}") from exc
    if pos != len(data):
        raise CorruptStreamError("trailing bytes after weight records")
    header = {"kind": TAG_KINDS[tag], "stages": stages, "seed": seed, "arch": arch}
    return header, arrays


def _build(header):
    arch, seed = header["arch"], header["seed"]
    if header["kind"] in ("inpaint", "vanilla"):
        return InpaintingNet(arch["layers"], seed, arch["kind"], arch["prefix"])
    model = ModelGraph(arch["kind"], arch["stages"], arch["width"], seed, arch["depthwise_deconv"])
    if "inpaint" in arch:
        ia = arch["inpaint"]
        model.inpainter = InpaintingNet(ia["layers"], seed, ia["kind"], ia["prefix"])
    return model


def load_into(model, arrays):
    """Copy ``arrays`` into the model's parameters (names and shapes must match)."""
    params = _all_params(model)
    if set(params) != set(arrays):
        missing = sorted(set(params) ^ set(arrays))[:3]
        raise InvalidArgument(f"weight names do not match the model, e.g. {missing}")
    for name, arr in arrays.items():
        if params[name].shape != arr.shape:
            raise InvalidArgument(f"shape mismatch for {name}: {arr.shape} vs {params[name].shape}")
        params[name].data = arr.astype(np.float32)
    return model


def deserialize_weights(data):
    header, arrays = parse_weights(data)
    return load_into(_build(header), arrays)


def save_weights(model, path):
    data = serialize_weights(model)
    with open(path, "wb") as f:
        f.write(data)
    return weights_digest(data)


def load_weights(path):
    """Return (model, digest) for a weight file."""
    with open(path, "rb") as f:
        data = f.read()
    return deserialize_weights(data), weights_digest(data)
