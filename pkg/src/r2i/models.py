"""Multi-stage progressive compression models and the inpainting network.

Every stage architecture is written down as a list of layer rows and
executed by a small interpreter.  Rows that name a layer of the previous
stage (``link`` rows) are the cross-stage connections; at stage 1 they
contribute zeros and carry no parameters.
"""

from collections import namedtuple
from dataclasses import dataclass, field

import numpy as np

from . import layers as L
from .errors import InvalidArgument
from .optim import ParamSet, msra_init
from .rng import stream
from .tensor import Tensor, add, crop, relu, tanh

KINDS = ("residual", "prediction", "full", "decoding")
R2I_KINDS = ("prediction", "full", "decoding")
KIND_TAGS = {"residual": 0, "prediction": 1, "full": 2, "decoding": 3, "ir2i": 4,
             "inpaint": 5, "vanilla": 6}
TAG_KINDS = {v: k for k, v in KIND_TAGS.items()}

PATCH = 32
CODE_CHANNELS = 8
CODE_SHAPE = (CODE_CHANNELS, 4, 4)
BITS_PER_STAGE = 128

# Reference totals at eight stages, in parameters.
REFERENCE_PARAMS = {"residual": 24.2e6, "prediction": 24.2e6, "full": 49.8e6, "decoding": 29.2e6}

# type, out, src, filters, stride, bn, act
Row = namedtuple("Row", "type out src filters stride bn act", defaults=(None, 1, False, None))


def _conv(out, src, filters, stride=1):
    return Row("conv", out, src, filters, stride, True, "relu")


def _link(out, src):
    # parametric connection from layer `src` of the previous stage
    return Row("link", out, src, None, 1, True, "relu")


def _add(out, a, b):
    return Row("add", out, (a, b), act="tanh")


ENCODER = [
    _conv("conv_1", "residual", 64),
    _conv("conv_2", "conv_1", 128, 2),
    _conv("conv_3", "conv_2", 128),
    _conv("conv_4", "conv_3", 256, 2),
    _conv("conv_5", "conv_4", 256),
    _conv("conv_6", "conv_5", 256, 2),
    Row("conv1x1", "conv_7", "conv_6", "code", 1, False, "tanh"),
    Row("bin", "bin_pred", "conv_7"),
]

DECODER_HEAD = [
    Row("conv", "conv_8", "bin_pred", 256, 1, False, None),
    _conv("conv_9", "conv_8", 256),
]

RESIDUAL_DECODER = DECODER_HEAD + [
    Row("deconv", "deconv_10", "conv_9"),
    _conv("conv_11", "deconv_10", 128),
    Row("deconv", "deconv_12", "conv_11"),
    _conv("conv_13", "deconv_12", 64),
    Row("deconv", "deconv_14", "conv_13"),
    Row("conv", "conv_pred", "deconv_14", "rgb", 1, False, "tanh"),
]

PREDICTION_DECODER = RESIDUAL_DECODER[:-1] + [
    Row("conv", "conv_pred", "deconv_14", "rgb", 1, False, None),
    Row("accum", "output", "conv_pred", act="tanh"),
]

FULL_ENCODER = [
    _conv("conv_1", "residual", 64), _link("conv_1'", "conv_1"), _add("conv_1c", "conv_1", "conv_1'"),
    _conv("conv_2", "conv_1c", 128, 2), _link("conv_2'", "conv_2"), _add("conv_2c", "conv_2", "conv_2'"),
    _conv("conv_3", "conv_2c", 128), _link("conv_3'", "conv_3"), _add("conv_3c", "conv_3", "conv_3'"),
    _conv("conv_4", "conv_3c", 256, 2), _link("conv_4'", "conv_4"), _add("conv_4c", "conv_4", "conv_4'"),
    _conv("conv_5", "conv_4c", 256), _link("conv_5'", "conv_5"), _add("conv_5c", "conv_5", "conv_5'"),
    _conv("conv_6", "conv_5c", 256, 2), _link("conv_6'", "conv_6"), _add("conv_6c", "conv_6", "conv_6'"),
    Row("conv1x1", "conv_7", "conv_6c", "code", 1, False, "tanh"),
    Row("bin", "bin_pred", "conv_7"),
]

FULL_DECODER = DECODER_HEAD + [
    _link("conv_9'", "conv_9"), _add("conv_9c", "conv_9", "conv_9'"),
    Row("deconv", "deconv_9", "conv_9c"),
    _link("deconv_9'", "deconv_9"), _add("deconv_9c", "deconv_9", "deconv_9'"),
    _conv("conv_10", "deconv_9c", 128), _link("conv_10'", "conv_10"), _add("conv_10c", "conv_10", "conv_10'"),
    Row("deconv", "deconv_11", "conv_10c"),
    _link("deconv_11'", "deconv_11"), _add("deconv_11c", "deconv_11", "deconv_11'"),
    _conv("conv_12", "deconv_11c", 64), _link("conv_12'", "conv_12"), _add("conv_12c", "conv_12", "conv_12'"),
    Row("deconv", "deconv_13", "conv_12c"),
    _link("deconv_13'", "deconv_13"), _add("deconv_13c", "deconv_13", "deconv_13'"),
    Row("conv", "conv_pred", "deconv_13c", "rgb", 1, False, "tanh"),
]

DECODING_DECODER = DECODER_HEAD + [
    Row("deconv", "deconv_9", "conv_9"),
    _link("deconv_9'", "deconv_9"), _add("deconv_9c", "deconv_9", "deconv_9'"),
    _conv("conv_10", "deconv_9c", 128),
    Row("deconv", "deconv_11", "conv_10"),
    _link("deconv_11'", "deconv_11"), _add("deconv_11c", "deconv_11", "deconv_11'"),
    _conv("conv_12", "deconv_11c", 64),
    Row("deconv", "deconv_13", "conv_12"),
    _link("deconv_13'", "deconv_13"), _add("deconv_13c", "deconv_13", "deconv_13'"),
    Row("conv", "conv_pred", "deconv_13c", "rgb", 1, False, "tanh"),
]

TABLES = {
    "residual": (ENCODER, RESIDUAL_DECODER),
    "prediction": (ENCODER, PREDICTION_DECODER),
    "full": (FULL_ENCODER, FULL_DECODER),
    "decoding": (ENCODER, DECODING_DECODER),
}


def _width(filters, width):
    if filters == "code":
        return CODE_CHANNELS
    if filters == "rgb":
        return 3
    return max(1, int(round(filters * width)))


@dataclass
class StageCarry:
    """Activations handed from stage ``stage`` to the next one."""

    stage: int
    enc: dict = field(default_factory=dict)
    dec: dict = field(default_factory=dict)


@dataclass
class StageOutput:
    output: Tensor      # M_s: residual estimate (baseline) or image estimate (R2I)
    bits: Tensor        # B_s, N x 8 x 4 x 4 in {-1, +1}
    carry: StageCarry


def _mode_flags(mode, binarizer):
    if mode not in ("train", "infer"):
        raise InvalidArgument(f"mode must be 'train' or 'infer', got {mode!r}")
    if binarizer is None:
        binarizer = "stochastic" if mode == "train" else "deterministic"
    return mode, binarizer


class ModelGraph:
    """An S-stage progressive encoder/decoder built from a layer table."""

    def __init__(self, kind, stages, width=1.0, seed=0, depthwise_deconv=False):
        if kind not in KINDS:
            raise InvalidArgument(f"unknown model kind {kind!r}")
        if int(stages) < 1:
            raise InvalidArgument(f"need at least one stage, got {stages}")
        self.kind = kind
        self.stages = int(stages)
        self.width = float(width)
        self.seed = int(seed)
        self.depthwise_deconv = bool(depthwise_deconv)
        self.encoder_rows, self.decoder_rows = TABLES[kind]
        self.params = ParamSet()
        self.channels = {}
        self.inpainter = None
        self._link_sources = {
            "enc": [r.src for r in self.encoder_rows if r.type == "link"],
            "dec": [r.src for r in self.decoder_rows if r.type == "link"],
        }
        for s in range(1, self.stages + 1):
            self._build_stage(s)

    # -- construction -----------------------------------------------------
    def _build_stage(self, s):
        ch = {"residual": 3}
        for row in self.encoder_rows + self.decoder_rows:
            self._build_row(s, row, ch)
        self.channels = ch

    def _new(self, name, shape, fan_in=None, value=None, trainable=True):
        if value is None:
            t = msra_init(shape, fan_in, stream(self.seed, "init", name))
        else:
            t = Tensor(np.full(shape, value, dtype=np.float32))
        return self.params.add(name, t, trainable)

    def _add_bn(self, prefix, c):
        self._new(f"{prefix}/bn_gamma", (c,), value=1.0)
        self._new(f"{prefix}/bn_beta", (c,), value=0.0)
        self._new(f"{prefix}/bn_mean", (c,), value=0.0, trainable=False)
        self._new(f"{prefix}/bn_var", (c,), value=1.0, trainable=False)

    def _build_row(self, s, row, ch):
        prefix = f"s{s}/{row.out}"
        if row.type in ("conv", "conv1x1"):
            cin = ch[row.src]
            cout = _width(row.filters, self.width)
            k = 1 if row.type == "conv1x1" else 3
            spec = L.ConvSpec(cin, cout, (k, k), row.stride)
            self._new(f"{prefix}/weight", spec.weight_shape, spec.fan_in)
            if row.bn:
                self._add_bn(prefix, cout)
            elif row.act is not None or row.out == "conv_pred":
                self._new(f"{prefix}/bias", (cout,), value=0.0)
            ch[row.out] = cout
        elif row.type == "link":
            c = ch[row.src]
            # the connection matches the channel count of the layer it feeds
            if s > 1:
                spec = L.ConvSpec(c, c, (3, 3), 1)
                self._new(f"{prefix}/weight", spec.weight_shape, spec.fan_in)
                self._add_bn(prefix, c)
            ch[row.out] = c
        elif row.type == "deconv":
            c = ch[row.src]
            shape = (c, 1, 2, 2) if self.depthwise_deconv else (c, c, 2, 2)
            fan_in = 1 if self.depthwise_deconv else c
            self._new(f"{prefix}/weight", shape, fan_in)
            ch[row.out] = c
        elif row.type == "add":
            ch[row.out] = ch[row.src[0]]
        else:  # bin, accum
            ch[row.out] = ch[row.src]

    # -- evaluation -------------------------------------------------------
    def _spec(self, s, row):
        w = self.params[f"s{s}/{row.out}/weight"]
        k = w.shape[2]
        return L.ConvSpec(w.shape[1], w.shape[0], (k, k), row.stride), w

    def _run_rows(self, s, rows, env, prev, mode, binarizer, rng):
        p = self.params
        for row in rows:
            prefix = f"s{s}/{row.out}"
            if row.type in ("conv", "conv1x1", "link"):
                if row.type == "link":
                    src = prev.get(row.src) if prev else None
                    if src is None:
                        env[row.out] = None  # zero contribution
                        continue
                else:
                    src = env[row.src]
                spec, w = self._spec(s, row)
                y = L.conv2d(src, spec, w, p.get(f"{prefix}/bias"))
                if row.bn:
                    y = L.batch_norm(y, p[f"{prefix}/bn_gamma"], p[f"{prefix}/bn_beta"],
                                     p[f"{prefix}/bn_mean"], p[f"{prefix}/bn_var"], mode)
                env[row.out] = _activate(y, row.act)
            elif row.type == "bin":
                env[row.out] = L.binarize(env[row.src], binarizer, rng)
            elif row.type == "deconv":
                w = p[f"{prefix}/weight"]
                groups = w.shape[0] if self.depthwise_deconv else 1
                env[row.out] = L.deconv2d(env[row.src], w, groups)
            elif row.type == "add":
                a, b = (env[n] for n in row.src)
                env[row.out] = _activate(a if b is None else add(a, b), row.act)
            elif row.type == "accum":
                total = env[row.src]
                acc = prev.get("__accum__") if prev else None
                if acc is not None:
                    total = add(acc, total)
                env["__accum__"] = total
                env[row.out] = _activate(total, row.act)
            else:
                raise InvalidArgument(f"unknown row type {row.type}")
        return env

    def _check_carry(self, s, carry):
        if s < 1 or s > self.stages:
            raise InvalidArgument(f"stage {s} outside 1..{self.stages}")
        if s == 1:
            return None
        if carry is None or carry.stage != s - 1:
            got = None if carry is None else carry.stage
            raise InvalidArgument(f"stage {s} needs the carry of stage {s - 1}, got {got}")
        return carry

    def encode_stage(self, s, residual, enc_carry=None, mode="infer", rng=None, binarizer=None):
        """Encoder half of stage ``s``: residual -> binary code."""
        mode, binarizer = _mode_flags(mode, binarizer)
        env = self._run_rows(s, self.encoder_rows, {"residual": residual}, enc_carry,
                             mode, binarizer, rng)
        new = {k: env[k] for k in self._link_sources["enc"]}
        return env["bin_pred"], new

    def decode_stage(self, s, bits, dec_carry=None, mode="infer"):
        """Decoder half of stage ``s``: binary code -> stage output."""
        mode, _ = _mode_flags(mode, None)
        env = self._run_rows(s, self.decoder_rows, {"bin_pred": bits}, dec_carry, mode, None, None)
        new = {k: env[k] for k in self._link_sources["dec"]}
        if self.kind == "prediction":
            new["__accum__"] = env["__accum__"]
            return env["output"], new
        return env["conv_pred"], new

    def stage_forward(self, s, residual_in, carry=None, mode="infer", rng=None, binarizer=None):
        carry = self._check_carry(s, carry)
        bits, enc = self.encode_stage(s, residual_in, carry.enc if carry else None,
                                      mode, rng, binarizer)
        out, dec = self.decode_stage(s, bits, carry.dec if carry else None, mode)
        return StageOutput(out, bits, StageCarry(s, enc, dec))

    # -- kind-specific bookkeeping ---------------------------------------
    def reconstruct(self, prev_recon, output):
        """Image estimate after a stage, from the previous one and M_s."""
        if self.kind == "residual":
            return output if prev_recon is None else add(prev_recon, output)
        return output

    def arch(self):
        return {"kind": self.kind, "stages": self.stages, "width": self.width,
                "depthwise_deconv": self.depthwise_deconv}

    def stage_param_names(self, s):
        return [k for k in self.params if k.startswith(f"s{s}/")]

    def all_params(self):
        """Compression and (if attached) inpainting parameters in one set."""
        if self.inpainter is None:
            return self.params
        merged = ParamSet()
        merged.update(self.params)
        merged.update(self.inpainter.params)
        return merged


def _activate(x, act):
    if act == "relu":
        return relu(x)
    if act == "tanh":
        return tanh(x)
    return x


def build_model(kind, stages, seed=0, width=1.0, depthwise_deconv=False, inpaint_k=24):
    """Build a model.  ``kind='ir2i'`` gives a decoding model plus inpainter."""
    if kind == "ir2i":
        model = ModelGraph("decoding", stages, width, seed, depthwise_deconv)
        model.inpainter = build_inpainting_net(seed, k=inpaint_k)
        return model
    return ModelGraph(kind, stages, width, seed, depthwise_deconv)


def count_params(model):
    """Trainable scalars (weights, biases, BN scale/shift; no running stats)."""
    return model.params.count()


def stage_forward(model, s, residual_in, carry=None, mode="infer", rng=None, binarizer=None):
    return model.stage_forward(s, residual_in, carry, mode, rng, binarizer)


def model_kind(model):
    if isinstance(model, InpaintingNet):
        return model.kind
    return "ir2i" if model.inpainter is not None else model.kind


# ---------------------------------------------------------------------------
# Inpainting network


class InpaintingNet:
    """Full-resolution conv net mapping a 64x64 context to the 32x32 patch.

    ``layers`` is a list of branch lists; each branch is (dilation, filters).
    A multi-scale layer has four branches (dilations 1, 2, 4, 8); the
    vanilla baseline has one dilation-1 branch per layer.
    """

    def __init__(self, layers, seed=0, kind="inpaint", prefix="inp"):
        self.kind = kind
        self.seed = int(seed)
        self.layer_spec = [list(map(tuple, branches)) for branches in layers]
        self.prefix = prefix
        self.params = ParamSet()
        cin = 3
        for li, branches in enumerate(self.layer_spec):
            for d, k in branches:
                name = f"{prefix}/l{li}_d{d}"
                spec = L.ConvSpec(cin, k, (3, 3), 1, dilation=d, padding=d)
                self.params.add(f"{name}/weight",
                                msra_init(spec.weight_shape, spec.fan_in, stream(seed, "init", name)))
                for role, v, tr in (("bn_gamma", 1.0, True), ("bn_beta", 0.0, True),
                                    ("bn_mean", 0.0, False), ("bn_var", 1.0, False)):
                    self.params.add(f"{name}/{role}", Tensor(np.full((k,), v, np.float32)), tr)
            cin = sum(k for _, k in branches)
        spec = L.ConvSpec(cin, 3, (3, 3), 1)
        self.params.add(f"{prefix}/conv_RGB/weight",
                        msra_init(spec.weight_shape, spec.fan_in, stream(seed, "init", f"{prefix}/conv_RGB")))
        self.params.add(f"{prefix}/conv_RGB/bias", Tensor(np.zeros(3, np.float32)))

    @property
    def n_layers(self):
        return len(self.layer_spec) + 1

    def arch(self):
        return {"kind": self.kind, "layers": self.layer_spec, "prefix": self.prefix}

    def forward(self, context, mode="infer", return_logits=False):
        """Predict the bottom-right 32x32 patch of a N x 3 x 64 x 64 context."""
        if context.ndim != 4 or context.shape[1:] != (3, 64, 64):
            raise InvalidArgument(f"context must be N x 3 x 64 x 64, got {context.shape}")
        p = self.params
        x = context
        for li, branches in enumerate(self.layer_spec):
            br = []
            for d, k in branches:
                name = f"{self.prefix}/l{li}_d{d}"
                w = p[f"{name}/weight"]
                spec = L.ConvSpec(w.shape[1], k, (3, 3), 1, dilation=d, padding=d)
                br.append((spec, w, p[f"{name}/bn_gamma"], p[f"{name}/bn_beta"],
                           p[f"{name}/bn_mean"], p[f"{name}/bn_var"]))
            x = L.multiscale_layer(x, br, mode)
        w = p[f"{self.prefix}/conv_RGB/weight"]
        rgb = L.conv2d(x, L.ConvSpec(w.shape[1], 3, (3, 3), 1), w, p[f"{self.prefix}/conv_RGB/bias"])
        logits = crop(rgb, 32, 32, 32, 32)
        pred = tanh(logits)
        return (pred, logits) if return_logits else pred

    __call__ = forward


def build_inpainting_net(seed=0, k=24, n_layers=8, dilations=(1, 2, 4, 8)):
    """Multi-scale inpainting net: ``n_layers`` layers of ``k`` filters per dilation."""
    layers = [[(d, k) for d in dilations] for _ in range(n_layers)]
    return InpaintingNet(layers, seed, "inpaint", "inp")


def _vanilla_count(width, depth):
    # depth-1 hidden 3x3 convs with BN (gamma, beta) plus the 3x3 RGB head
    first = 3 * width * 9 + 2 * width
    hidden = (depth - 2) * (width * width * 9 + 2 * width)
    head = width * 3 * 9 + 3
    return first + hidden + head


def build_vanilla_net(seed=0, match=None, depth=32, width=None):
    """Dilation-1 baseline with ``depth`` conv layers (including the head).

    Without an explicit ``width`` the channel count is chosen so the
    parameter count is as close as possible to ``match`` (an inpainting
    net, defaulting to the standard one).
    """
    if width is None:
        target = (match or build_inpainting_net(seed)).params.count()
        width = min(range(1, 512), key=lambda w: abs(_vanilla_count(w, depth) - target))
    layers = [[(1, width)] for _ in range(depth - 1)]
    return InpaintingNet(layers, seed, "vanilla", "van")


def zero_params(params, names=None):
    """Set trainable entries (optionally only ``names``) to zero."""
    for k, v in params.items():
        if v.requires_grad and (names is None or k in names):
            v.data[...] = 0

