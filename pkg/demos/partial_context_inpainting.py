"""Predict each 32x32 patch from the content above and to its left.

    python3 demos/partial_context_inpainting.py [out_dir]

Trains the multi-scale inpainting net and the dilation-1 "vanilla" net of
(almost) the same size for the same number of iterations, then compares
their patch SSIM on unseen images and saves a side-by-side picture.
"""

import os
import sys

from r2i.cli import side_by_side
from r2i.data import synthetic_corpus
from r2i.imageio import write_image
from r2i.metrics import inpainting_eval
from r2i.training import TrainConfig, final_loss, train


def main(out_dir="demo_out"):
    os.makedirs(out_dir, exist_ok=True)
    test = synthetic_corpus(4, 128, 128, seed=77)
    nets = {}
    for kind in ("inpaint", "vanilla"):
        config = TrainConfig(kind=kind, iterations=300, batch_size=4, inpaint_k=4,
                             dataset="synthetic:16", seed=0)
        res = train(config)
        nets[kind] = res.model
        print(f"{kind:8s} params {res.model.params.count():6d}  "
              f"final train loss {final_loss(res.series('inpaint_loss')):.4f}  "
              f"test patch SSIM {inpainting_eval(res.model, test):.4f}")
    # left half: original; right half: every aligned patch replaced by its prediction
    write_image(os.path.join(out_dir, "inpaint_side_by_side.ppm"), side_by_side(nets["inpaint"], test[0]))


if __name__ == "__main__":
    main(*sys.argv[1:])
