"""Train a tiny R2I-decoding model, then watch quality grow with each stage.

Run from the repository root:

    python3 demos/progressive_codec.py [out_dir]

Takes two or three minutes on one core.  Writes the stream and one decoded
image per stage into ``out_dir`` (default ``demo_out``).
"""

import os
import sys

from r2i.codec import HEADER_SIZE, decode_image, encode_image, payload_bytes
from r2i.data import synthetic_corpus
from r2i.imageio import write_image
from r2i.metrics import ms_ssim, ms_ssim_db
from r2i.training import TrainConfig, train


def main(out_dir="demo_out"):
    os.makedirs(out_dir, exist_ok=True)

    # A narrow 4-stage model is enough to see the progression.
    config = TrainConfig(kind="decoding", stages=4, iterations=1500, batch_size=8, width=0.125,
                         dataset="synthetic:16", seed=0)
    print(f"training {config.kind} x{config.stages} for {config.iterations} iterations ...")
    model = train(config).model

    # An image the model has not seen: same generator, different seed.
    image = synthetic_corpus(1, 96, 128, seed=99)[0]
    write_image(os.path.join(out_dir, "original.ppm"), image)
    enc = encode_image(model, image)
    with open(os.path.join(out_dir, "image.r2i"), "wb") as f:
        f.write(enc.stream)
    print(f"stream: {len(enc.stream)} bytes ({enc.header.n_patches} patches)")

    # Every prefix of the stream is itself a valid, lower-rate stream.
    for s in range(1, model.stages + 1):
        prefix = enc.stream[:HEADER_SIZE + payload_bytes(enc.header.n_patches, s, False)]
        px = decode_image(model, prefix, s).pixels()
        q = ms_ssim(image.transpose(2, 0, 1), px.transpose(2, 0, 1), 255.0)
        write_image(os.path.join(out_dir, f"stage{s}.ppm"), px)
        print(f"stage {s}: {len(prefix):5d} bytes  {0.125 * s:.3f} bpp  "
              f"MS-SSIM {q:.4f} ({ms_ssim_db(q):.2f} dB)")


if __name__ == "__main__":
    main(*sys.argv[1:])
