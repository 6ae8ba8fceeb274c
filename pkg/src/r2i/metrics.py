"""SSIM, MS-SSIM, the dB transform, rate-distortion curves and BD-rate.

Images are channel-first arrays (C x H x W) or single-channel H x W.
Colour scores are computed per channel and averaged.
"""

import csv
from dataclasses import dataclass, field

import numpy as np

from .codec import decode_image, encode_image, stream_bpp
from .data import extract_patches
from .errors import InvalidArgument
from .imageio import to_pixels, to_unit
from .tensor import Tensor, no_grad
from .weights import weights_digest

WINDOW = 11
SIGMA = 1.5
K1, K2 = 0.01, 0.03
MS_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)
DB_CAP = 100.0


def gaussian_window(size=WINDOW, sigma=SIGMA):
    """Normalised 1-D Gaussian taps."""
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2
    g = np.exp(-x * x / (2 * sigma * sigma))
    return g / g.sum()


def _filter_valid(img, taps):
    # separable correlation, output only where the window fits
    k = len(taps)
    rows = np.lib.stride_tricks.sliding_window_view(img, k, axis=-2) @ taps
    return np.lib.stride_tricks.sliding_window_view(rows, k, axis=-1) @ taps


def _channels(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise InvalidArgument(f"image shapes differ: {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a, b = a[None], b[None]
    if a.ndim != 3:
        raise InvalidArgument(f"expected H x W or C x H x W, got {a.shape}")
    return a, b


def _range(a, data_range):
    if data_range is not None:
        return float(data_range)
    return 255.0 if np.asarray(a).dtype == np.uint8 else 2.0


def _ssim_maps(a, b, data_range):
    # per-channel luminance*contrast*structure map and contrast*structure map
    taps = gaussian_window()
    c1 = (K1 * data_range) ** 2
    c2 = (K2 * data_range) ** 2
    mu_a, mu_b = _filter_valid(a, taps), _filter_valid(b, taps)
    saa = _filter_valid(a * a, taps) - mu_a * mu_a
    sbb = _filter_valid(b * b, taps) - mu_b * mu_b
    sab = _filter_valid(a * b, taps) - mu_a * mu_b
    cs = (2 * sab + c2) / (saa + sbb + c2)
    lum = (2 * mu_a * mu_b + c1) / (mu_a * mu_a + mu_b * mu_b + c1)
    return lum * cs, cs


def ssim(a, b, data_range=None):
    """Mean SSIM (11x11 Gaussian window, sigma 1.5), averaged over channels.

    ``data_range`` defaults to 255 for uint8 input and 2 (values in
    [-1, 1]) otherwise.
    """
    dr = _range(a, data_range)
    a, b = _channels(a, b)
    if min(a.shape[1:]) < WINDOW:
        raise InvalidArgument(f"images must be at least {WINDOW}x{WINDOW}")
    s, _ = _ssim_maps(a, b, dr)
    return float(s.mean(axis=(1, 2)).mean())


def ms_scales(height, width, max_scales=len(MS_WEIGHTS)):
    """Number of dyadic scales whose smaller side stays >= the window size."""
    n, side = 0, min(height, width)
    while n < max_scales and side >= WINDOW:
        n += 1
        side //= 2
    return n


def _down2(x):
    h, w = x.shape[1] // 2 * 2, x.shape[2] // 2 * 2
    x = x[:, :h, :w]
    return 0.25 * (x[:, 0::2, 0::2] + x[:, 1::2, 0::2] + x[:, 0::2, 1::2] + x[:, 1::2, 1::2])


def ms_ssim(a, b, data_range=None, scales=None):
    """Multi-scale SSIM with the standard five weights.

    Smaller images use as many scales as fit, with the weight prefix
    renormalised to sum to one.  Negative contrast-structure means are
    clamped to zero before exponentiation.
    """
    dr = _range(a, data_range)
    a, b = _channels(a, b)
    n = ms_scales(*a.shape[1:]) if scales is None else int(scales)
    if n < 1:
        raise InvalidArgument(f"images must be at least {WINDOW}x{WINDOW} for MS-SSIM")
    w = np.array(MS_WEIGHTS[:n])
    w = w / w.sum()
    per_channel = np.ones(a.shape[0])
    for j in range(n):
        s, cs = _ssim_maps(a, b, dr)
        if j == n - 1:
            val = s.mean(axis=(1, 2))
        else:
            val = cs.mean(axis=(1, 2))
            a, b = _down2(a), _down2(b)
        per_channel *= np.maximum(val, 0.0) ** w[j]
    return float(per_channel.mean())


def ms_ssim_db(v):
    """-10 log10(1 - v), saturating at 100 dB."""
    v = float(v)
    if v >= 1.0:
        return DB_CAP
    return min(DB_CAP, -10.0 * np.log10(1.0 - v))


# -- rate-distortion ------------------------------------------------------------

@dataclass
class RDCurve:
    bpp: list
    distortion: list
    metric: str = "msssim"
    stages: list = field(default_factory=list)

    def __post_init__(self):
        self.bpp = [float(x) for x in self.bpp]
        self.distortion = [float(x) for x in self.distortion]
        if len(self.bpp) != len(self.distortion):
            raise InvalidArgument("bpp and distortion lengths differ")
        if any(x <= 0 for x in self.bpp):
            raise InvalidArgument("bpp values must be positive")
        if any(b <= a for a, b in zip(self.bpp, self.bpp[1:])):
            raise InvalidArgument("bpp values must be strictly increasing")

    def __len__(self):
        return len(self.bpp)

    def rows(self):
        return [(r, d, ms_ssim_db(d)) for r, d in zip(self.bpp, self.distortion)]


def _fit(curve):
    if len(curve) < 4:
        raise InvalidArgument(f"BD-rate needs at least 4 points, got {len(curve)}")
    d = np.asarray(curve.distortion)
    return np.polyfit(d, np.log10(curve.bpp), 3), d.min(), d.max()


def bd_interval(reference, test):
    _, lo_r, hi_r = _fit(reference)
    _, lo_t, hi_t = _fit(test)
    lo, hi = max(lo_r, lo_t), min(hi_r, hi_t)
    if hi <= lo:
        raise InvalidArgument("RD curves do not overlap in distortion")
    return lo, hi


def bd_rate_delta(reference, test):
    """Mean log10-rate difference (test minus reference) over the overlap."""
    if reference.metric != test.metric:
        raise InvalidArgument(f"curves use different metrics: {reference.metric} vs {test.metric}")
    p_r, _, _ = _fit(reference)
    p_t, _, _ = _fit(test)
    lo, hi = bd_interval(reference, test)
    i_r, i_t = np.polyint(p_r), np.polyint(p_t)
    area = (np.polyval(i_t, hi) - np.polyval(i_t, lo)) - (np.polyval(i_r, hi) - np.polyval(i_r, lo))
    return float(area / (hi - lo))


def bd_rate_savings(reference, test):
    """Average bit-rate reduction of ``test`` vs ``reference``, in percent."""
    return (1.0 - 10.0 ** bd_rate_delta(reference, test)) * 100.0


def write_rd_csv(path, curve):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["bpp", curve.metric, f"{curve.metric}_db"])
        for row in curve.rows():
            w.writerow([repr(x) for x in row])


def read_rd_csv(path):
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    if not rows or len(rows[0]) < 2:
        raise InvalidArgument(f"{path} is not an RD curve CSV")
    metric = rows[0][1]
    pts = [(float(r[0]), float(r[1])) for r in rows[1:] if r]
    return RDCurve([p[0] for p in pts], [p[1] for p in pts], metric)


def summary(curve, baseline=None):
    lines = [f"{curve.metric} rate-distortion ({len(curve)} points)"]
    for r, d, db in curve.rows():
        lines.append(f"  {r:.4f} bpp  {d:.6f}  ({db:.2f} dB)")
    if baseline is not None:
        lines.append(f"BD-rate savings vs baseline: {bd_rate_savings(baseline, curve):.2f}%")
    return "\n".join(lines)


def metric_fn(name):
    if name == "msssim":
        return ms_ssim
    if name == "ssim":
        return ssim
    raise InvalidArgument(f"unknown metric {name!r} (msssim or ssim)")


def rd_sweep(model, images, stages=None, metric="msssim", digest=None, threads=1):
    """One (bpp, mean metric) point per decodable stage over ``images``.

    ``images`` are uint8 H x W x 3 arrays.  Each is encoded once; the
    decoder output at every stage is compared with the original pixels.
    The bpp of a point is the stream's own byte count up to that stage.
    """
    fn = metric_fn(metric)
    digest = digest if digest is not None else weights_digest(model)
    stages = model.stages if stages is None else stages
    first = 2 if model.inpainter is not None else 1
    scores = {s: [] for s in range(first, stages + 1)}
    rates = {s: [] for s in scores}
    for img in images:
        enc = encode_image(model, img, stages, digest=digest, threads=threads)
        dec = decode_image(model, enc.stream, stages, digest=digest, threads=threads)
        ref = np.asarray(img).transpose(2, 0, 1)
        for s in scores:
            got = to_pixels(dec.recon[s - 1]).transpose(2, 0, 1)
            scores[s].append(fn(ref, got, data_range=255.0))
            rates[s].append(stream_bpp(enc.header, s))
    keys = sorted(scores)
    return RDCurve([float(np.mean(rates[s])) for s in keys],
                   [float(np.mean(scores[s])) for s in keys], metric, keys)


def inpainting_eval(net, images, batch=32):
    """Mean per-patch SSIM of inpainting every aligned patch from original context."""
    ps = extract_patches([to_unit(np.asarray(im)) for im in images])
    scores = []
    with no_grad():
        for lo in range(0, len(ps), batch):
            pred = net(Tensor(ps.contexts[lo:lo + batch]), "infer").data
            for p, q in zip(ps.patches[lo:lo + batch], pred):
                scores.append(ssim(p, q, data_range=2.0))
    return float(np.mean(scores))
