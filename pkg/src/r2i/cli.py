"""Command-line toolkit: ``r2i {train,encode,decode,eval,inpaint,paramcount}``.

Exit codes: 0 success, 1 training diverged, 2 usage or configuration
error, 3 integrity error (stream made with other weights), 4 corrupt or
truncated data.
"""

import argparse
import os
import sys

import numpy as np

from . import config as cfg
from .codec import HEADER_SIZE, decode_image, encode_image, payload_bytes, read_header, stream_bpp
from .data import extract_patches, patch_grid
from .errors import (BitstreamError, DependencyError, IntegrityError, InvalidArgument,
                     NonFiniteError)
from .imageio import list_images, read_image, to_pixels, to_unit, write_image
from .metrics import inpainting_eval, rd_sweep, read_rd_csv, summary, write_rd_csv
from .models import KINDS, REFERENCE_PARAMS, build_model, count_params
from .tensor import Tensor, no_grad
from .training import TrainConfig, train
from .weights import load_weights

EXIT_OK, EXIT_DIVERGED, EXIT_USAGE, EXIT_INTEGRITY, EXIT_CORRUPT = 0, 1, 2, 3, 4


def _show(title, settings):
    print(f"[{title}]")
    for k, v in settings.items():
        print(f"{k} = {v}")
    sys.stdout.flush()


def _threads(args):
    return 1 if args.deterministic else max(1, args.threads)


def cmd_train(args):
    parsed = cfg.load(args.config)
    tc = cfg.train_config(parsed, args.config, seed=args.seed, out_dir=args.out,
                          iterations=args.iterations)
    if tc.out_dir is None:
        tc.out_dir = "."
    _show("train", {k: getattr(tc, k) for k in TrainConfig.field_names()})
    every = max(1, tc.iterations // 20)

    def progress(row):
        it = row["iteration"]
        if it % every == 0 or it == tc.iterations - 1:
            print(f"iter {it:6d}  lr {row['lr']:.1e}  loss {row['total_loss']:.6f}", flush=True)

    result = train(tc, progress=progress)
    for path in result.checkpoints[-1:]:
        print(f"wrote {path}")
    print(f"wrote {os.path.join(tc.out_dir, 'loss.csv')}")
    return EXIT_OK


def cmd_encode(args):
    model, digest = load_weights(args.model)
    stages = args.stages or model.stages
    _show("encode", {"model": args.model, "image": args.image, "stages": stages,
                     "threads": _threads(args)})
    img = read_image(args.image)
    res = encode_image(model, img, stages, digest=digest, threads=_threads(args))
    with open(args.out, "wb") as f:
        f.write(res.stream)
    print(f"wrote {args.out}: {len(res.stream)} bytes "
          f"({len(res.stream) - HEADER_SIZE} payload, {stream_bpp(res.header, stages):.4f} bpp)")
    return EXIT_OK


def cmd_decode(args):
    model, digest = load_weights(args.model)
    with open(args.stream, "rb") as f:
        data = f.read()
    header = read_header(data)
    stage = args.stage or _available_stage(header, len(data))
    _show("decode", {"model": args.model, "stream": args.stream, "stage": stage,
                     "threads": _threads(args)})
    res = decode_image(model, data, stage, digest=digest, threads=_threads(args))
    write_image(args.out, to_pixels(res.recon[-1]))
    used = HEADER_SIZE + payload_bytes(header.n_patches, stage, header.inpaint)
    print(f"wrote {args.out}: stage {stage}, read {used} of {len(data)} bytes")
    return EXIT_OK


def _available_stage(header, size):
    # highest stage whose units are all present
    best = 0
    for s in range(1, header.stages + 1):
        if HEADER_SIZE + payload_bytes(header.n_patches, s, header.inpaint) <= size:
            best = s
    return max(best, 1)


def cmd_eval(args):
    model, digest = load_weights(args.model)
    paths = list_images(args.images)
    if not paths:
        raise InvalidArgument(f"no images in {args.images}")
    _show("eval", {"model": args.model, "images": args.images, "metric": args.metric,
                   "baseline": args.baseline, "threads": _threads(args)})
    imgs = [read_image(p) for p in paths]
    curve = rd_sweep(model, imgs, args.stages, args.metric, digest, _threads(args))
    baseline = None
    if args.baseline:
        if args.baseline.endswith(".r2iw"):
            bmodel, bdigest = load_weights(args.baseline)
            baseline = rd_sweep(bmodel, imgs, None, args.metric, bdigest, _threads(args))
        else:
            baseline = read_rd_csv(args.baseline)
    out = args.out or "rd.csv"
    write_rd_csv(out, curve)
    print(summary(curve, baseline))
    print(f"wrote {out}")
    return EXIT_OK


def cmd_inpaint(args):
    net, _ = load_weights(args.net)
    if not hasattr(net, "layer_spec"):
        if getattr(net, "inpainter", None) is None:
            raise InvalidArgument("weights hold no inpainting network")
        net = net.inpainter
    _show("inpaint", {"net": args.net, "image": args.image, "out": args.out})
    img = read_image(args.image)
    score = inpainting_eval(net, [img])
    write_image(args.out, side_by_side(net, img))
    print(f"mean SSIM {score:.4f} over aligned patches")
    print(f"wrote {args.out}")
    return EXIT_OK


def side_by_side(net, img):
    """Original on the left; every aligned patch replaced by its prediction on the right."""
    unit = to_unit(img)
    pred = unit.copy()
    ps = extract_patches([unit])
    with no_grad():
        out = np.concatenate([net(Tensor(ps.contexts[i:i + 32]), "infer").data
                              for i in range(0, len(ps), 32)])
    for (top, left), p in zip(patch_grid(*unit.shape[1:]), out):
        pred[:, top:top + 32, left:left + 32] = p
    return np.concatenate([img, to_pixels(pred)], axis=1)


def cmd_paramcount(args):
    model = build_model(args.kind, args.stages, 0, args.width)
    n = count_params(model)
    _show("paramcount", {"kind": args.kind, "stages": args.stages, "width": args.width})
    print(n)
    if args.stages == 8 and args.width == 1.0 and args.kind in REFERENCE_PARAMS:
        ref = REFERENCE_PARAMS[args.kind]
        print(f"reference {ref / 1e6:.1f}M ({(n - ref) / ref * 100:+.2f}%)")
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="r2i", description="Progressive neural image codec toolkit.")
    p.add_argument("--dump-defaults", action="store_true", help="print the default config and exit")
    p.add_argument("--deterministic", action="store_true", help="strictly sequential execution")
    p.add_argument("--threads", type=int, default=1, help="worker threads for patch-parallel work")
    sub = p.add_subparsers(dest="command")

    t = sub.add_parser("train", help="train a model from a config file")
    t.add_argument("--config", required=True)
    t.add_argument("--seed", type=int)
    t.add_argument("--out", help="output directory (default: config out_dir or .)")
    t.add_argument("--iterations", type=int)

    e = sub.add_parser("encode", help="encode an image into an .r2i stream")
    e.add_argument("model")
    e.add_argument("image")
    e.add_argument("out")
    e.add_argument("--stages", type=int)

    d = sub.add_parser("decode", help="decode an .r2i stream (or a prefix of one)")
    d.add_argument("model")
    d.add_argument("stream")
    d.add_argument("out")
    d.add_argument("--stage", type=int)

    v = sub.add_parser("eval", help="rate-distortion sweep and BD-rate report")
    v.add_argument("model")
    v.add_argument("images")
    v.add_argument("--metric", choices=("msssim", "ssim"), default="msssim")
    v.add_argument("--baseline", help="RD curve CSV or .r2iw model to compare against")
    v.add_argument("--stages", type=int)
    v.add_argument("--out", help="RD curve CSV path (default rd.csv)")

    i = sub.add_parser("inpaint", help="inpaint every aligned patch of an image")
    i.add_argument("net")
    i.add_argument("image")
    i.add_argument("out")

    c = sub.add_parser("paramcount", help="count trainable parameters")
    c.add_argument("--kind", choices=KINDS, required=True)
    c.add_argument("--stages", type=int, default=8)
    c.add_argument("--width", type=float, default=1.0)

    for sp in (t, e, d, v, i, c):
        sp.add_argument("--deterministic", action="store_true", default=argparse.SUPPRESS,
                        help=argparse.SUPPRESS)
        sp.add_argument("--threads", type=int, default=argparse.SUPPRESS, help=argparse.SUPPRESS)
    return p


COMMANDS = {"train": cmd_train, "encode": cmd_encode, "decode": cmd_decode, "eval": cmd_eval,
            "inpaint": cmd_inpaint, "paramcount": cmd_paramcount}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.dump_defaults:
        sys.stdout.write(cfg.dump_defaults())
        return EXIT_OK
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    try:
        return COMMANDS[args.command](args)
    except IntegrityError as exc:
        print(f"r2i: integrity error: {exc}", file=sys.stderr)
        return EXIT_INTEGRITY
    except BitstreamError as exc:
        print(f"r2i: corrupt data: {exc}", file=sys.stderr)
        return exc.exit_code
    except NonFiniteError as exc:
        print(f"r2i: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (InvalidArgument, DependencyError) as exc:
        print(f"r2i: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"r2i: {exc.filename or ''}: {exc.strerror}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
