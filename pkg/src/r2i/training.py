"""Objectives, learning-rate schedules and the training loop.

Every objective is a sum of squared errors.  ``reduction="sum"`` gives the
literal sums; ``"mean"`` divides each term by the number of pixel values in
the batch, which is what the optimiser sees.
"""

import csv
import os
from dataclasses import dataclass, field, fields

import numpy as np

from .data import BatchSampler, PatchBatch, extract_patches, load_corpus, synthetic_corpus
from .errors import InvalidArgument, NonFiniteError
from .imageio import to_unit
from .models import (KINDS, R2I_KINDS, InpaintingNet, ModelGraph, build_inpainting_net,
                     build_model, build_vanilla_net)
from .optim import AdamState, ParamSet, adam_step
from .rng import stream
from .tensor import add, backward, sub
from .weights import save_weights

TRAIN_KINDS = KINDS + ("ir2i", "inpaint", "vanilla")

# (drop iterations, total iterations) of the full-scale schedules
SCHEDULES = {
    "r2i": ((30_000, 45_000), 60_000),
    "ir2i": ((30_000, 65_000, 90_000), 110_000),
}


@dataclass
class LossTerms:
    """Objective value plus its parts (all Tensors, same reduction)."""

    total: object
    stages: list
    inpaint: object = None
    recon: list = field(default_factory=list)

    def values(self):
        row = {"total_loss": float(self.total.data)}
        for s, t in enumerate(self.stages, 1):
            row[f"stage_{s}"] = float(t.data)
        if self.inpaint is not None:
            row["inpaint_loss"] = float(self.inpaint.data)
        return row


def _sq(diff, reduction):
    sq = diff.square()
    if reduction == "sum":
        return sq.sum()
    if reduction == "mean":
        return sq.mean()
    raise InvalidArgument(f"unknown reduction {reduction!r}")


def _total(terms):
    out = terms[0]
    for t in terms[1:]:
        out = add(out, t)
    return out


def _run(model, patches, r0, mode, rng, binarizer, inpaint, reduction):
    # Shared stage loop.  For the residual kind the target of stage s is
    # R_{s-1}; for image-predicting kinds it is P itself.
    stages, recon = [], []
    residual, carry, image = r0, None, None
    for s in range(1, model.stages + 1):
        out = model.stage_forward(s, residual, carry, mode, rng, binarizer)
        carry = out.carry
        if model.kind == "residual":
            stages.append(_sq(sub(residual, out.output), reduction))
            residual = sub(residual, out.output)
            image = model.reconstruct(image, out.output)
        else:
            image = out.output if inpaint is None else add(out.output, inpaint)
            stages.append(_sq(sub(patches, image), reduction))
            residual = sub(patches, image)
        recon.append(image)
    return stages, recon


def _batch(batch):
    if not isinstance(batch, PatchBatch):
        raise InvalidArgument("expected a PatchBatch")
    return batch.patches


def loss_residual(batch, model, mode="train", rng=None, binarizer=None, reduction="mean"):
    """Sum over stages of the error in predicting the incoming residual."""
    if model.kind != "residual":
        raise InvalidArgument(f"loss_residual needs the residual kind, got {model.kind!r}")
    p = _batch(batch)
    stages, recon = _run(model, p, p, mode, rng, binarizer, None, reduction)
    return LossTerms(_total(stages), stages, None, recon)


def loss_r2i(batch, model, mode="train", rng=None, binarizer=None, reduction="mean"):
    """Sum over stages of the error in predicting the patch itself."""
    if model.kind not in R2I_KINDS:
        raise InvalidArgument(f"loss_r2i needs an image-predicting kind, got {model.kind!r}")
    p = _batch(batch)
    stages, recon = _run(model, p, p, mode, rng, binarizer, None, reduction)
    return LossTerms(_total(stages), stages, None, recon)


def loss_inpaint(batch, net, mode="train", reduction="mean"):
    """Error of predicting each patch from its partial context."""
    p = _batch(batch)
    if batch.contexts is None:
        raise InvalidArgument("loss_inpaint needs contexts")
    term = _sq(sub(p, net(batch.contexts, mode)), reduction)
    return LossTerms(term, [], term, [])


def loss_joint(batch, net, model, mode="train", rng=None, binarizer=None, reduction="mean",
               inpaint_weight=1.0):
    """Inpainting loss plus per-stage losses with the inpainting estimate added.

    The first stage encodes P - M_I(C), and every stage's image estimate is
    its output plus M_I(C), so the inpainting net receives gradient from the
    inpainting term and from every stage.
    """
    if model.kind != "decoding":
        raise InvalidArgument(f"joint training uses the decoding kind, got {model.kind!r}")
    p = _batch(batch)
    if batch.contexts is None:
        raise InvalidArgument("loss_joint needs contexts")
    m_i = net(batch.contexts, mode)
    inp = _sq(sub(p, m_i), reduction)
    stages, recon = _run(model, p, sub(p, m_i), mode, rng, binarizer, m_i, reduction)
    weighted = inp if inpaint_weight == 1.0 else inp * float(inpaint_weight)
    return LossTerms(_total([weighted] + stages), stages, inp, recon)


def schedule_for(kind):
    return "ir2i" if kind == "ir2i" else "r2i"


def scaled_drops(kind, iterations=None):
    """Drop points of ``kind``'s schedule, scaled to ``iterations`` if given."""
    drops, full = SCHEDULES[schedule_for(kind)]
    if iterations is None or iterations == full:
        return tuple(drops)
    # very short runs: collapse drops that round onto each other or past the end
    scaled = {int(round(d * iterations / full)) for d in drops}
    return tuple(sorted(d for d in scaled if 0 < d < iterations))


def lr_schedule(kind, iteration, base_lr=1e-3, factor=10.0, drops=None, iterations=None):
    """Step schedule: ``base_lr`` divided by ``factor`` at each passed drop."""
    if drops is None:
        drops = scaled_drops(kind, iterations)
    passed = sum(1 for d in drops if iteration >= d)
    return base_lr / factor ** passed


@dataclass
class TrainConfig:
    kind: str = "decoding"
    stages: int = 8
    iterations: int = 60_000
    lr: float = 1e-3
    lr_drops: tuple = None          # None: the kind's schedule scaled to `iterations`
    lr_factor: float = 10.0
    batch_size: int = 32
    seed: int = 0
    dataset: str = "synthetic:32"   # folder of images, or synthetic:<count>
    checkpoint_every: int = 0
    out_dir: str = None
    width: float = 1.0
    inpaint_k: int = 24
    inpaint_weight: float = 1.0

    def __post_init__(self):
        if self.kind not in TRAIN_KINDS:
            raise InvalidArgument(f"unknown model kind {self.kind!r}")
        if self.iterations < 1:
            raise InvalidArgument("iterations must be positive")
        if self.batch_size < 1:
            raise InvalidArgument("batch_size must be positive")
        if self.lr_drops is None:
            self.lr_drops = scaled_drops(self.kind, self.iterations)
        self.lr_drops = tuple(int(d) for d in self.lr_drops)
        if any(b <= a for a, b in zip(self.lr_drops, self.lr_drops[1:])):
            raise InvalidArgument(f"lr drops must be strictly increasing: {self.lr_drops}")
        if any(d >= self.iterations or d < 0 for d in self.lr_drops):
            raise InvalidArgument(f"lr drops must lie in [0, iterations): {self.lr_drops}")

    def lr_at(self, iteration):
        return lr_schedule(self.kind, iteration, self.lr, self.lr_factor, self.lr_drops)

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]


def build_for(config):
    """Model (and inpainting net) for a config."""
    c = config
    if c.kind == "inpaint":
        return build_inpainting_net(c.seed, k=c.inpaint_k)
    if c.kind == "vanilla":
        return build_vanilla_net(c.seed, match=build_inpainting_net(c.seed, k=c.inpaint_k))
    return build_model(c.kind, c.stages, c.seed, c.width, inpaint_k=c.inpaint_k)


def load_dataset(spec, seed=0):
    """A folder path, or ``synthetic:<n>`` for n generated 128x128 images."""
    if spec.startswith("synthetic:"):
        n = int(spec.split(":", 1)[1])
        return extract_patches([to_unit(im) for im in synthetic_corpus(n, seed=seed)])
    if not os.path.isdir(spec):
        raise InvalidArgument(f"dataset folder not found: {spec}")
    return load_corpus(spec)


def _trainable(model):
    if isinstance(model, InpaintingNet):
        return model.params
    return model.all_params()


def compute_loss(model, batch, config, rng, mode="train"):
    if isinstance(model, InpaintingNet):
        return loss_inpaint(batch, model, mode)
    if model.inpainter is not None:
        return loss_joint(batch, model.inpainter, model, mode, rng,
                          inpaint_weight=config.inpaint_weight)
    if model.kind == "residual":
        return loss_residual(batch, model, mode, rng)
    return loss_r2i(batch, model, mode, rng)


@dataclass
class TrainResult:
    model: object
    log: list
    columns: list
    checkpoints: list

    def series(self, column):
        return np.array([row[column] for row in self.log], dtype=np.float64)


def log_columns(model):
    if isinstance(model, InpaintingNet):
        return ["iteration", "lr", "total_loss", "inpaint_loss", "total_sum"]
    cols = ["iteration", "lr", "total_loss"] + [f"stage_{s}" for s in range(1, model.stages + 1)]
    if model.inpainter is not None:
        cols.append("inpaint_loss")
    return cols + ["total_sum"]


def write_log(path, columns, rows):
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=columns)
        w.writeheader()
        for row in rows:
            w.writerow({k: (repr(row[k]) if isinstance(row[k], float) else row[k]) for k in columns})


def train(config, patchset=None, model=None, progress=None):
    """Train per ``config``; returns the model and the per-iteration log.

    Raises NonFiniteError (after writing the partial log) if the loss or a
    gradient stops being finite.
    """
    c = config
    data = patchset if patchset is not None else load_dataset(c.dataset, c.seed)
    if len(data) == 0:
        raise InvalidArgument("dataset is empty")
    model = model if model is not None else build_for(c)
    needs_ctx = isinstance(model, InpaintingNet) or model.inpainter is not None
    sampler = BatchSampler(data, c.batch_size, c.seed, with_contexts=needs_ctx)
    params = _trainable(model)
    state = AdamState.for_params(params, lr=c.lr)
    bin_rng = stream(c.seed, "binarizer")
    columns = log_columns(model)
    log, checkpoints = [], []
    pixels = c.batch_size * 3 * 32 * 32
    if c.out_dir:
        os.makedirs(c.out_dir, exist_ok=True)
    for it in range(c.iterations):
        lr = c.lr_at(it)
        batch = sampler.next()
        ParamSet.zero_grad(params)
        terms = compute_loss(model, batch, c, bin_rng)
        try:
            backward(terms.total, params)
        except NonFiniteError as exc:
            if c.out_dir:
                write_log(os.path.join(c.out_dir, "loss.csv"), columns, log)
            raise NonFiniteError(f"iteration {it}: {exc}") from exc
        adam_step(params, state, lr)
        row = {"iteration": it, "lr": lr, **terms.values()}
        row["total_sum"] = row["total_loss"] * pixels
        log.append(row)
        if progress is not None:
            progress(row)
        if c.out_dir and c.checkpoint_every and (it + 1) % c.checkpoint_every == 0:
            path = os.path.join(c.out_dir, f"model_{it + 1:06d}.r2iw")
            save_weights(model, path)
            checkpoints.append(path)
    if c.out_dir:
        path = os.path.join(c.out_dir, "model_final.r2iw")
        save_weights(model, path)
        checkpoints.append(path)
        write_log(os.path.join(c.out_dir, "loss.csv"), columns, log)
    return TrainResult(model, log, columns, checkpoints)


def final_loss(values, fraction=0.1):
    """Mean of the last ``fraction`` of a loss series (at least one value)."""
    v = np.asarray(values, dtype=np.float64)
    n = max(1, int(round(len(v) * fraction)))
    return float(v[-n:].mean())


def initial_loss(values, count=10):
    """Mean of the first ``count`` values of a loss series."""
    v = np.asarray(values, dtype=np.float64)
    return float(v[:max(1, count)].mean())
